#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "exformer/errors.hpp"
#include "exformer/tensor.hpp"

namespace exformer {

using Date = std::chrono::sys_days;

Date parse_date(std::string_view iso);
std::string format_date(Date d);

enum class Frequency { daily, monthly, quarterly };
enum class Transform { level, log_return, difference };

Frequency parse_frequency(std::string_view s);
Transform parse_transform(std::string_view s);
std::string_view to_string(Frequency f);
std::string_view to_string(Transform t);

struct RawSeries {
  std::string name;
  std::vector<Date> dates;
  std::vector<double> values;
  Frequency frequency = Frequency::daily;

  std::size_t size() const { return values.size(); }
  // Dates strictly increasing, values finite, equal lengths.
  void validate() const;
};

// r_t = 100 * (ln S_t - ln S_{t-1}); one observation shorter than the input.
RawSeries compute_log_returns(const RawSeries& prices);

// Dates present in every series.
std::vector<Date> intersect_calendars(std::span<const RawSeries> series);

// Row per trading date, column per series, each cell holding the latest
// observation at or before that date.
Eigen::MatrixXd forward_fill_align(std::span<const RawSeries> series, std::span<const Date> trading_dates);

struct SplitSpec {
  std::size_t train_end = 0;
  std::size_t val_end = 0;
  std::size_t n = 0;

  std::size_t train_size() const { return train_end; }
  std::size_t val_size() const { return val_end - train_end; }
  std::size_t test_size() const { return n - val_end; }
};

SplitSpec chronological_split(std::size_t n, double train_ratio = 0.8, double val_ratio = 0.1);

struct Standardizer {
  Eigen::VectorXd cov_mean;
  Eigen::VectorXd cov_std;
  double target_mean = 0.0;
  double target_std = 1.0;

  double invert_target(double z) const { return z * target_std + target_mean; }
  Eigen::VectorXd invert_target(const Eigen::VectorXd& z) const;
  Eigen::MatrixXd invert_covariates(const Eigen::MatrixXd& z) const;
};

struct PanelDataset {
  std::vector<Date> dates;
  std::string target_name;
  Eigen::VectorXd target;      // N
  Eigen::MatrixXd covariates;  // N x F
  std::vector<std::string> covariate_names;
  SplitSpec split;
  std::optional<Standardizer> standardizer;

  std::size_t rows() const { return static_cast<std::size_t>(target.size()); }
  std::size_t features() const { return static_cast<std::size_t>(covariates.cols()); }
  void validate() const;
};

// Column-wise (x - mu_train) / sigma_train for covariates and target, fitted on
// rows [0, split.train_end). Uses the population (n-divisor) std.
PanelDataset fit_apply_standardizer(const PanelDataset& raw);

enum class Subset { train, validation, test };
std::string_view to_string(Subset s);

struct WindowBatch {
  std::size_t window = 0;
  std::size_t features = 0;
  Vector inputs;                     // B x T x F, row-major
  Eigen::VectorXd targets;           // B
  std::vector<std::size_t> origins;  // panel row of each target

  std::size_t size() const { return origins.size(); }
  Tensor input_tensor() const;
};

// Panel rows usable as forecast targets for window length T inside `subset`.
// With allow_history, windows may reach back before the subset start.
std::vector<std::size_t> window_targets(const PanelDataset& panel, std::size_t window, Subset subset,
                                        bool allow_history = true);

WindowBatch make_batch(const PanelDataset& panel, std::size_t window, std::span<const std::size_t> targets);

// Deterministic, chronologically ordered batches covering the subset.
std::vector<WindowBatch> make_windows(const PanelDataset& panel, std::size_t window, Subset subset,
                                      std::size_t batch_size, bool allow_history = true);

struct SeriesSpec {
  std::string name;
  std::filesystem::path path;
  Frequency frequency = Frequency::daily;
  Transform transform = Transform::log_return;
};

struct DataManifest {
  SeriesSpec target;
  std::vector<SeriesSpec> covariates;
  // Prepend the target's own lagged return as the first covariate.
  bool include_target_lag = true;
  double train_ratio = 0.8;
  double val_ratio = 0.1;
};

DataManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DataManifest& manifest, const std::filesystem::path& path);

// Reads every series, aligns onto the daily calendar, applies transforms and
// splits. The result is unstandardized.
PanelDataset build_panel(const DataManifest& manifest);

void write_panel_csv(const PanelDataset& panel, const std::filesystem::path& path);

}  // namespace exformer
