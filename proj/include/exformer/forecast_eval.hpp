#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "exformer/data.hpp"

namespace exformer {

using ConstVec = Eigen::Ref<const Eigen::VectorXd>;

struct ForecastSet {
  std::vector<Date> dates;
  Eigen::VectorXd realized;
  Eigen::VectorXd model;
  Eigen::VectorXd benchmark;  // random-walk return forecast, zero by default
  std::string label;
  std::size_t window = 0;

  std::size_t size() const { return static_cast<std::size_t>(realized.size()); }
  // Equal lengths, no NaN.
  void validate() const;
};

struct TestResult {
  double statistic = 0.0;
  double p_value = 0.5;
  std::size_t bandwidth = 0;
  std::size_t n = 0;
  bool one_sided = true;
};

double msfe(ConstVec realized, ConstVec forecast);
// 100 * MSFE(model) / MSFE(benchmark).
double msfe_ratio(ConstVec realized, ConstVec model, ConstVec benchmark);
double msfe_ratio(const ForecastSet& fs);

// floor(4 * (n / 100)^(2/9)).
std::size_t hac_bandwidth(std::size_t n);

// Bartlett-weighted long-run variance about the sample mean. gamma_0 uses the
// n divisor, lag-j autocovariances average their n - j products. Floored at zero.
double newey_west_lrv(ConstVec x, std::size_t bandwidth);

// Upper-tail standard normal probability.
double normal_upper_tail(double z);

// HAC t-test that the mean of `d` exceeds zero. d == 0 everywhere gives t = 0,
// p = 0.5; zero long-run variance with a nonzero mean gives t = ±inf.
TestResult mean_t_test(ConstVec d, std::optional<std::size_t> bandwidth = std::nullopt);

// Adjusted loss differential (y - b)^2 - [(y - m)^2 - (b - m)^2].
Eigen::VectorXd clark_west_differential(ConstVec realized, ConstVec model, ConstVec benchmark);
TestResult clark_west_test(ConstVec realized, ConstVec model, ConstVec benchmark,
                           std::optional<std::size_t> bandwidth = std::nullopt);
TestResult clark_west_test(const ForecastSet& fs, std::optional<std::size_t> bandwidth = std::nullopt);

// 1 where forecast * realized >= 0, else 0.
Eigen::VectorXd hit_indicators(ConstVec realized, ConstVec forecast);
double directional_accuracy(ConstVec realized, ConstVec forecast);

// Hits of the sign-persistence forecast sign(r_{t-1}); `previous` holds r_{t-1}
// aligned with `realized`.
Eigen::VectorXd random_walk_hits(ConstVec realized, ConstVec previous);

TestResult blaskowitz_herwartz_test(ConstVec model_hits, ConstVec benchmark_hits,
                                    std::optional<std::size_t> bandwidth = std::nullopt);

}  // namespace exformer
