#include "exformer/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>

#include <nlohmann/json.hpp>

#include "exformer/csv.hpp"

namespace exformer {

namespace {

double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("not a number '" + s + "' at " + where);
  }
}

RawSeries read_series(const SeriesSpec& spec) {
  if (!std::filesystem::exists(spec.path)) throw DataError("series file not found: " + spec.path.string());
  const auto rows = read_csv(spec.path);
  if (rows.empty() || rows.front().size() < 2 || rows.front()[0] != "date" || rows.front()[1] != "value") {
    throw DataError(spec.path.string() + ": expected header 'date,value'");
  }
  RawSeries s;
  s.name = spec.name;
  s.frequency = spec.frequency;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const std::string where = spec.path.string() + ":" + std::to_string(i + 1);
    if (r.size() < 2) throw DataError("short row at " + where);
    s.dates.push_back(parse_date(r[0]));
    s.values.push_back(parse_double(r[1], where));
  }
  s.validate();
  return s;
}

Eigen::VectorXd transform_column(const Eigen::VectorXd& levels, Transform t, const std::vector<Date>& dates,
                                 const std::string& name) {
  const Eigen::Index n = levels.size() - 1;
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double prev = levels[i];
    const double cur = levels[i + 1];
    switch (t) {
      case Transform::level: out[i] = cur; break;
      case Transform::difference: out[i] = cur - prev; break;
      case Transform::log_return:
        if (prev <= 0.0 || cur <= 0.0) {
          throw DataError("non-positive value in '" + name + "' near " + format_date(dates[i + 1]) +
                          "; log-return undefined");
        }
        out[i] = 100.0 * (std::log(cur) - std::log(prev));
        break;
    }
  }
  return out;
}

}  // namespace

Date parse_date(std::string_view iso) {
  int y = 0;
  unsigned m = 0, d = 0;
  char tail = 0;
  const std::string s(iso);
  if (std::sscanf(s.c_str(), "%d-%u-%u%c", &y, &m, &d, &tail) != 3) {
    throw DataError("invalid ISO-8601 date '" + s + "'");
  }
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw DataError("invalid calendar date '" + s + "'");
  return Date{ymd};
}

std::string format_date(Date d) {
  const std::chrono::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

Frequency parse_frequency(std::string_view s) {
  if (s == "daily") return Frequency::daily;
  if (s == "monthly") return Frequency::monthly;
  if (s == "quarterly") return Frequency::quarterly;
  throw ConfigError("unknown frequency '" + std::string(s) + "'");
}

Transform parse_transform(std::string_view s) {
  if (s == "level") return Transform::level;
  if (s == "log-return") return Transform::log_return;
  if (s == "difference") return Transform::difference;
  throw ConfigError("unknown transform '" + std::string(s) + "'");
}

std::string_view to_string(Frequency f) {
  switch (f) {
    case Frequency::daily: return "daily";
    case Frequency::monthly: return "monthly";
    case Frequency::quarterly: return "quarterly";
  }
  return "?";
}

std::string_view to_string(Transform t) {
  switch (t) {
    case Transform::level: return "level";
    case Transform::log_return: return "log-return";
    case Transform::difference: return "difference";
  }
  return "?";
}

std::string_view to_string(Subset s) {
  switch (s) {
    case Subset::train: return "train";
    case Subset::validation: return "validation";
    case Subset::test: return "test";
  }
  return "?";
}

void RawSeries::validate() const {
  if (dates.size() != values.size()) throw DataError("series '" + name + "': dates and values differ in length");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw DataError("series '" + name + "': non-finite value on " + format_date(dates[i]));
    }
    if (i > 0 && dates[i] <= dates[i - 1]) {
      throw DataError("series '" + name + "': dates not strictly increasing at " + format_date(dates[i]));
    }
  }
}

RawSeries compute_log_returns(const RawSeries& prices) {
  if (prices.size() < 2) throw DataError("series '" + prices.name + "' needs at least 2 prices for returns");
  RawSeries out;
  out.name = prices.name;
  out.frequency = prices.frequency;
  for (std::size_t i = 0; i < prices.size(); ++i) {
    if (!(prices.values[i] > 0.0)) {
      throw DataError("series '" + prices.name + "': non-positive price on " + format_date(prices.dates[i]));
    }
  }
  for (std::size_t i = 1; i < prices.size(); ++i) {
    out.dates.push_back(prices.dates[i]);
    out.values.push_back(100.0 * (std::log(prices.values[i]) - std::log(prices.values[i - 1])));
  }
  return out;
}

std::vector<Date> intersect_calendars(std::span<const RawSeries> series) {
  if (series.empty()) return {};
  std::vector<Date> common = series.front().dates;
  for (std::size_t i = 1; i < series.size(); ++i) {
    std::vector<Date> next;
    std::set_intersection(common.begin(), common.end(), series[i].dates.begin(), series[i].dates.end(),
                          std::back_inserter(next));
    common = std::move(next);
  }
  return common;
}

Eigen::MatrixXd forward_fill_align(std::span<const RawSeries> series, std::span<const Date> trading_dates) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(trading_dates.size()), static_cast<Eigen::Index>(series.size()));
  for (std::size_t c = 0; c < series.size(); ++c) {
    const RawSeries& s = series[c];
    std::size_t next = 0;  // first observation strictly after the current date
    for (std::size_t r = 0; r < trading_dates.size(); ++r) {
      if (r > 0 && trading_dates[r] <= trading_dates[r - 1]) {
        throw DataError("trading dates must be strictly increasing");
      }
      while (next < s.size() && s.dates[next] <= trading_dates[r]) ++next;
      if (next == 0) {
        throw DataError("trading date " + format_date(trading_dates[r]) + " precedes first observation of '" +
                        s.name + "'");
      }
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = s.values[next - 1];
    }
  }
  return out;
}

SplitSpec chronological_split(std::size_t n, double train_ratio, double val_ratio) {
  if (n < 10) throw ConfigError("need at least 10 rows to split, got " + std::to_string(n));
  if (!(train_ratio > 0.0 && val_ratio > 0.0 && train_ratio + val_ratio < 1.0)) {
    throw ConfigError("split ratios must be positive and leave room for a test block");
  }
  SplitSpec s;
  s.n = n;
  s.train_end = static_cast<std::size_t>(std::floor(train_ratio * static_cast<double>(n) + 1e-9));
  s.val_end = static_cast<std::size_t>(std::floor((train_ratio + val_ratio) * static_cast<double>(n) + 1e-9));
  if (s.train_end == 0 || s.val_end <= s.train_end || s.val_end >= n) {
    throw ConfigError("split of " + std::to_string(n) + " rows leaves an empty block");
  }
  return s;
}

Eigen::VectorXd Standardizer::invert_target(const Eigen::VectorXd& z) const {
  return (z.array() * target_std + target_mean).matrix();
}

Eigen::MatrixXd Standardizer::invert_covariates(const Eigen::MatrixXd& z) const {
  return (z.array().rowwise() * cov_std.transpose().array()).rowwise() + cov_mean.transpose().array();
}

void PanelDataset::validate() const {
  const std::size_t n = rows();
  if (dates.size() != n || static_cast<std::size_t>(covariates.rows()) != n) {
    throw DataError("panel columns differ in length");
  }
  if (covariate_names.size() != features() || features() == 0) throw DataError("panel needs >= 1 named covariate");
  if (!(split.n == n && 0 < split.train_end && split.train_end < split.val_end && split.val_end < n)) {
    throw DataError("panel split boundaries inconsistent with " + std::to_string(n) + " rows");
  }
}

PanelDataset fit_apply_standardizer(const PanelDataset& raw) {
  raw.validate();
  const auto train = static_cast<Eigen::Index>(raw.split.train_end);
  Standardizer st;
  const Eigen::MatrixXd block = raw.covariates.topRows(train);
  st.cov_mean = block.colwise().mean().transpose();
  st.cov_std = ((block.rowwise() - st.cov_mean.transpose()).array().square().colwise().sum() /
                static_cast<double>(train))
                   .sqrt()
                   .transpose();
  for (Eigen::Index c = 0; c < st.cov_std.size(); ++c) {
    if (!(st.cov_std[c] > 0.0)) {
      throw DataError("covariate '" + raw.covariate_names[static_cast<std::size_t>(c)] +
                      "' has zero variance on the training block");
    }
  }
  const Eigen::VectorXd ty = raw.target.head(train);
  st.target_mean = ty.mean();
  st.target_std = std::sqrt((ty.array() - st.target_mean).square().sum() / static_cast<double>(train));
  if (!(st.target_std > 0.0)) throw DataError("target '" + raw.target_name + "' has zero variance on the training block");

  PanelDataset out = raw;
  out.covariates = ((raw.covariates.rowwise() - st.cov_mean.transpose()).array().rowwise() /
                    st.cov_std.transpose().array())
                       .matrix();
  out.target = ((raw.target.array() - st.target_mean) / st.target_std).matrix();
  out.standardizer = st;
  return out;
}

Tensor WindowBatch::input_tensor() const { return Tensor::from({size(), window, features}, inputs); }

std::vector<std::size_t> window_targets(const PanelDataset& panel, std::size_t window, Subset subset,
                                        bool allow_history) {
  if (window == 0) throw ConfigError("window length must be positive");
  std::size_t begin = 0, end = 0;
  switch (subset) {
    case Subset::train: begin = 0; end = panel.split.train_end; break;
    case Subset::validation: begin = panel.split.train_end; end = panel.split.val_end; break;
    case Subset::test: begin = panel.split.val_end; end = panel.split.n; break;
  }
  const std::size_t first = std::max(begin + (allow_history ? 0 : window), window);
  std::vector<std::size_t> out;
  for (std::size_t j = first; j < end; ++j) out.push_back(j);
  if (out.empty()) {
    throw ConfigError(std::string(to_string(subset)) + " subset of " + std::to_string(end - begin) +
                      " rows has no complete window of length " + std::to_string(window));
  }
  return out;
}

WindowBatch make_batch(const PanelDataset& panel, std::size_t window, std::span<const std::size_t> targets) {
  const std::size_t f = panel.features();
  WindowBatch b;
  b.window = window;
  b.features = f;
  b.inputs.resize(static_cast<Eigen::Index>(targets.size() * window * f));
  b.targets.resize(static_cast<Eigen::Index>(targets.size()));
  b.origins.assign(targets.begin(), targets.end());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const std::size_t j = targets[i];
    if (j < window || j >= panel.rows()) throw DimensionError("window target " + std::to_string(j) + " out of range");
    for (std::size_t t = 0; t < window; ++t) {
      const auto row = static_cast<Eigen::Index>(j - window + t);
      for (std::size_t c = 0; c < f; ++c) {
        b.inputs[static_cast<Eigen::Index>((i * window + t) * f + c)] = panel.covariates(row, static_cast<Eigen::Index>(c));
      }
    }
    b.targets[static_cast<Eigen::Index>(i)] = panel.target[static_cast<Eigen::Index>(j)];
  }
  return b;
}

std::vector<WindowBatch> make_windows(const PanelDataset& panel, std::size_t window, Subset subset,
                                      std::size_t batch_size, bool allow_history) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  const auto targets = window_targets(panel, window, subset, allow_history);
  std::vector<WindowBatch> out;
  for (std::size_t i = 0; i < targets.size(); i += batch_size) {
    const std::size_t len = std::min(batch_size, targets.size() - i);
    out.push_back(make_batch(panel, window, std::span(targets).subspan(i, len)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

SeriesSpec parse_series_spec(const nlohmann::json& j, const std::filesystem::path& base, bool is_target) {
  SeriesSpec s;
  if (!j.contains("name") || !j.contains("path")) throw ConfigError("manifest series entries need 'name' and 'path'");
  s.name = j.at("name").get<std::string>();
  s.path = base / j.at("path").get<std::string>();
  s.frequency = parse_frequency(j.value("frequency", std::string("daily")));
  const std::string default_transform =
      is_target || s.frequency == Frequency::daily ? "log-return" : "level";
  s.transform = parse_transform(j.value("transform", default_transform));
  return s;
}

nlohmann::json series_json(const SeriesSpec& s, const std::filesystem::path& base) {
  return {{"name", s.name},
          {"path", s.path.lexically_relative(base).generic_string()},
          {"frequency", std::string(to_string(s.frequency))},
          {"transform", std::string(to_string(s.transform))}};
}

}  // namespace

DataManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("manifest not found: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest " + path.string() + ": " + e.what());
  }
  const auto base = path.parent_path();
  DataManifest m;
  try {
    m.target = parse_series_spec(j.at("target"), base, true);
    for (const auto& c : j.value("covariates", nlohmann::json::array())) {
      m.covariates.push_back(parse_series_spec(c, base, false));
    }
    m.include_target_lag = j.value("include_target_lag", true);
    if (j.contains("split")) {
      m.train_ratio = j["split"].at(0).get<double>();
      m.val_ratio = j["split"].at(1).get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest " + path.string() + ": " + e.what());
  }
  if (m.covariates.empty() && !m.include_target_lag) throw ConfigError("manifest " + path.string() + " lists no covariates");
  return m;
}

void save_manifest(const DataManifest& m, const std::filesystem::path& path) {
  const auto base = path.parent_path();
  nlohmann::json j;
  j["target"] = series_json(m.target, base);
  j["covariates"] = nlohmann::json::array();
  for (const auto& c : m.covariates) j["covariates"].push_back(series_json(c, base));
  j["include_target_lag"] = m.include_target_lag;
  j["split"] = {m.train_ratio, m.val_ratio, 1.0 - m.train_ratio - m.val_ratio};
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

PanelDataset build_panel(const DataManifest& manifest) {
  std::vector<RawSeries> all;
  std::vector<Transform> transforms;
  all.push_back(read_series(manifest.target));
  transforms.push_back(manifest.target.transform);
  for (const auto& c : manifest.covariates) {
    all.push_back(read_series(c));
    transforms.push_back(c.transform);
  }

  std::vector<RawSeries> daily;
  for (const auto& s : all) {
    if (s.frequency == Frequency::daily) daily.push_back(s);
  }
  std::vector<Date> calendar = intersect_calendars(daily);
  // Start once every series has at least one observation.
  Date start = calendar.empty() ? Date{} : calendar.front();
  for (const auto& s : all) start = std::max(start, s.dates.front());
  std::erase_if(calendar, [start](Date d) { return d < start; });
  if (calendar.size() < 12) throw DataError("aligned calendar has only " + std::to_string(calendar.size()) + " dates");

  const Eigen::MatrixXd levels = forward_fill_align(all, calendar);

  PanelDataset p;
  p.dates.assign(calendar.begin() + 1, calendar.end());
  p.target_name = manifest.target.name;
  p.target = transform_column(levels.col(0), manifest.target.transform, calendar, manifest.target.name);
  const std::size_t f = manifest.covariates.size() + (manifest.include_target_lag ? 1 : 0);
  p.covariates.resize(p.target.size(), static_cast<Eigen::Index>(f));
  Eigen::Index col = 0;
  if (manifest.include_target_lag) {
    p.covariates.col(col++) = p.target;
    p.covariate_names.push_back(manifest.target.name);
  }
  for (std::size_t i = 0; i < manifest.covariates.size(); ++i) {
    p.covariates.col(col++) =
        transform_column(levels.col(static_cast<Eigen::Index>(i + 1)), transforms[i + 1], calendar, all[i + 1].name);
    p.covariate_names.push_back(manifest.covariates[i].name);
  }
  p.split = chronological_split(p.rows(), manifest.train_ratio, manifest.val_ratio);
  p.validate();
  return p;
}

void write_panel_csv(const PanelDataset& panel, const std::filesystem::path& path) {
  CsvWriter w(path);
  w.field("date").field("target");
  for (const auto& n : panel.covariate_names) w.field(n);
  w.end_row();
  for (std::size_t r = 0; r < panel.rows(); ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    w.field(format_date(panel.dates[r])).field(panel.target[i]);
    for (Eigen::Index c = 0; c < panel.covariates.cols(); ++c) w.field(panel.covariates(i, c));
    w.end_row();
  }
}

}  // namespace exformer
