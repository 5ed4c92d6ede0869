#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "exformer/data.hpp"
#include "exformer/tensor.hpp"

namespace exformer {

// How a window's T rows of selector weights collapse to one row per date.
enum class Reduction { mean, max };

Reduction parse_reduction(const std::string& s);

struct ImportanceMatrix {
  std::vector<Date> dates;
  std::vector<std::string> names;
  Eigen::MatrixXd weights;  // dates x variables, rows on the simplex
  Reduction reduction = Reduction::mean;
};

// One row per window. With Reduction::max each row is renormalized to sum to 1.
ImportanceMatrix timevarying_importance(std::span<const RowMatrix> windows, std::vector<Date> dates,
                                        std::vector<std::string> names, Reduction reduction = Reduction::mean);

// Mean of the per-date rows, in percent.
std::vector<std::pair<std::string, double>> global_importance(const ImportanceMatrix& m);

// name,percent
void write_global_importance_csv(const std::vector<std::pair<std::string, double>>& g,
                                 const std::filesystem::path& path);
// date,<variable names...>
void write_importance_matrix_csv(const ImportanceMatrix& m, const std::filesystem::path& path);

}  // namespace exformer
