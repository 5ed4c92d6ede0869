#include "exformer/forecast_eval.hpp"

#include <cmath>
#include <limits>

namespace exformer {

namespace {

void require_same_length(ConstVec a, ConstVec b, const char* what) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(what) + ": lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()) + " differ");
  }
}

void require_min_length(Eigen::Index n, Eigen::Index min, const char* what) {
  if (n < min) throw DataError(std::string(what) + " needs at least " + std::to_string(min) + " observations");
}

}  // namespace

void ForecastSet::validate() const {
  require_same_length(realized, model, "forecast set");
  require_same_length(realized, benchmark, "forecast set");
  if (!dates.empty() && dates.size() != size()) throw DimensionError("forecast set: date count differs");
  if (realized.hasNaN() || model.hasNaN() || benchmark.hasNaN()) throw DataError("forecast set contains NaN");
}

double msfe(ConstVec realized, ConstVec forecast) {
  require_same_length(realized, forecast, "msfe");
  require_min_length(realized.size(), 1, "msfe");
  return (realized - forecast).squaredNorm() / static_cast<double>(realized.size());
}

double msfe_ratio(ConstVec realized, ConstVec model, ConstVec benchmark) {
  const double bench = msfe(realized, benchmark);
  if (bench == 0.0) throw DataError("benchmark MSFE is zero; ratio undefined");
  return 100.0 * (msfe(realized, model) / bench);
}

double msfe_ratio(const ForecastSet& fs) {
  fs.validate();
  return msfe_ratio(fs.realized, fs.model, fs.benchmark);
}

std::size_t hac_bandwidth(std::size_t n) {
  return static_cast<std::size_t>(std::floor(4.0 * std::pow(static_cast<double>(n) / 100.0, 2.0 / 9.0)));
}

double newey_west_lrv(ConstVec x, std::size_t bandwidth) {
  const auto n = static_cast<std::size_t>(x.size());
  if (n == 0 || bandwidth >= n) {
    throw ConfigError("Newey-West bandwidth " + std::to_string(bandwidth) + " needs more than that many observations");
  }
  const Eigen::VectorXd e = x.array() - x.mean();
  const double dn = static_cast<double>(n);
  double lrv = e.squaredNorm() / dn;
  for (std::size_t j = 1; j <= bandwidth; ++j) {
    const auto len = static_cast<Eigen::Index>(n - j);
    const double gamma = e.head(len).dot(e.tail(len)) / static_cast<double>(len);
    lrv += 2.0 * (1.0 - static_cast<double>(j) / static_cast<double>(bandwidth + 1)) * gamma;
  }
  return std::max(lrv, 0.0);
}

double normal_upper_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

TestResult mean_t_test(ConstVec d, std::optional<std::size_t> bandwidth) {
  const auto n = static_cast<std::size_t>(d.size());
  TestResult r;
  r.n = n;
  r.bandwidth = bandwidth.value_or(hac_bandwidth(n));
  if ((d.array() == 0.0).all()) return r;
  const double m = d.mean();
  const double lrv = newey_west_lrv(d, r.bandwidth);
  if (lrv == 0.0) {
    r.statistic = m > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    if (m == 0.0) r.statistic = 0.0;
  } else {
    r.statistic = m / std::sqrt(lrv / static_cast<double>(n));
  }
  r.p_value = normal_upper_tail(r.statistic);
  return r;
}

Eigen::VectorXd clark_west_differential(ConstVec realized, ConstVec model, ConstVec benchmark) {
  require_same_length(realized, model, "clark_west");
  require_same_length(realized, benchmark, "clark_west");
  const auto y = realized.array();
  const auto m = model.array();
  const auto b = benchmark.array();
  return (y - b).square() - ((y - m).square() - (b - m).square());
}

TestResult clark_west_test(ConstVec realized, ConstVec model, ConstVec benchmark,
                           std::optional<std::size_t> bandwidth) {
  require_min_length(realized.size(), 10, "Clark-West test");
  return mean_t_test(clark_west_differential(realized, model, benchmark), bandwidth);
}

TestResult clark_west_test(const ForecastSet& fs, std::optional<std::size_t> bandwidth) {
  fs.validate();
  return clark_west_test(fs.realized, fs.model, fs.benchmark, bandwidth);
}

Eigen::VectorXd hit_indicators(ConstVec realized, ConstVec forecast) {
  require_same_length(realized, forecast, "directional accuracy");
  return (realized.array() * forecast.array() >= 0.0).cast<double>();
}

double directional_accuracy(ConstVec realized, ConstVec forecast) {
  require_min_length(realized.size(), 1, "directional accuracy");
  return hit_indicators(realized, forecast).mean();
}

Eigen::VectorXd random_walk_hits(ConstVec realized, ConstVec previous) {
  require_same_length(realized, previous, "random-walk hits");
  const Eigen::VectorXd signal = previous.array().sign();
  return hit_indicators(realized, signal);
}

TestResult blaskowitz_herwartz_test(ConstVec model_hits, ConstVec benchmark_hits, std::optional<std::size_t> bandwidth) {
  require_same_length(model_hits, benchmark_hits, "Blaskowitz-Herwartz test");
  require_min_length(model_hits.size(), 10, "Blaskowitz-Herwartz test");
  return mean_t_test(model_hits - benchmark_hits, bandwidth);
}

}  // namespace exformer
