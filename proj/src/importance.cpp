#include "exformer/importance.hpp"

#include "exformer/csv.hpp"

namespace exformer {

Reduction parse_reduction(const std::string& s) {
  if (s == "mean") return Reduction::mean;
  if (s == "max") return Reduction::max;
  throw ConfigError("importance reduction must be 'mean' or 'max', got '" + s + "'");
}

ImportanceMatrix timevarying_importance(std::span<const RowMatrix> windows, std::vector<Date> dates,
                                        std::vector<std::string> names, Reduction reduction) {
  if (windows.empty()) throw DataError("no selector weights to aggregate");
  if (!dates.empty() && dates.size() != windows.size()) throw DimensionError("importance: date count differs from window count");
  const Eigen::Index f = windows.front().cols();
  if (static_cast<std::size_t>(f) != names.size()) {
    throw DimensionError("importance: " + std::to_string(f) + " weight columns vs " + std::to_string(names.size()) + " names");
  }
  ImportanceMatrix m;
  m.dates = std::move(dates);
  m.names = std::move(names);
  m.reduction = reduction;
  m.weights.resize(static_cast<Eigen::Index>(windows.size()), f);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const RowMatrix& w = windows[i];
    if (w.cols() != f || w.rows() == 0) throw DimensionError("importance: inconsistent window weight shapes");
    const auto r = static_cast<Eigen::Index>(i);
    if (reduction == Reduction::mean) {
      m.weights.row(r) = w.colwise().mean();
    } else {
      m.weights.row(r) = w.colwise().maxCoeff();
      m.weights.row(r) /= m.weights.row(r).sum();
    }
  }
  return m;
}

std::vector<std::pair<std::string, double>> global_importance(const ImportanceMatrix& m) {
  if (m.weights.rows() == 0) throw DataError("no selector weights to aggregate");
  const Eigen::RowVectorXd g = 100.0 * m.weights.colwise().mean();
  std::vector<std::pair<std::string, double>> out;
  for (Eigen::Index j = 0; j < g.size(); ++j) out.emplace_back(m.names[static_cast<std::size_t>(j)], g[j]);
  return out;
}

void write_global_importance_csv(const std::vector<std::pair<std::string, double>>& g,
                                 const std::filesystem::path& path) {
  CsvWriter w(path);
  w.row({"name", "percent"});
  for (const auto& [name, pct] : g) {
    w.field(std::string_view(name)).field(pct);
    w.end_row();
  }
}

void write_importance_matrix_csv(const ImportanceMatrix& m, const std::filesystem::path& path) {
  CsvWriter w(path);
  w.field(std::string_view("date"));
  for (const auto& n : m.names) w.field(std::string_view(n));
  w.end_row();
  for (Eigen::Index i = 0; i < m.weights.rows(); ++i) {
    w.field(m.dates.empty() ? std::to_string(i) : format_date(m.dates[static_cast<std::size_t>(i)]));
    for (Eigen::Index j = 0; j < m.weights.cols(); ++j) w.field(m.weights(i, j));
    w.end_row();
  }
}

}  // namespace exformer
