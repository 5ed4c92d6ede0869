#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "exformer/backtest.hpp"
#include "exformer/importance.hpp"
#include "exformer/model.hpp"
#include "exformer/trainer.hpp"

namespace exformer {

// Where evaluation forecasts come from: the trained model, the zero forecast,
// or the realized returns themselves.
enum class ForecastSource { model, zero, perfect };

struct RunConfig {
  std::filesystem::path manifest;
  std::string pair = "target";
  std::size_t window = 15;
  ModelConfig model;  // features are filled in from the panel
  TrainConfig train;
  FrictionSpec friction;
  std::size_t ma_short = 20;
  std::size_t ma_long = 50;
  double periods_per_year = 252.0;
  std::optional<std::size_t> hac_bandwidth;
  RegimeOptions regimes;
  Reduction importance_reduction = Reduction::mean;
  ForecastSource forecast_source = ForecastSource::model;
  std::filesystem::path out_dir = "out";
  std::uint64_t seed = 0;
  std::vector<std::string> ablations{"full", "no_msc", "no_se", "no_dvs", "standard_attention"};
  std::vector<std::string> benchmarks{"rw", "bh", "ma"};

  void validate() const;
};

// INI sections [run], [data], [model], [train], [backtest], [eval]. Relative
// paths resolve against the config file's directory. Unknown keys are errors.
RunConfig load_run_config(const std::filesystem::path& path);

// Model config for a named ablation variant.
ModelConfig ablation_variant(const ModelConfig& base, const std::string& variant);

}  // namespace exformer
