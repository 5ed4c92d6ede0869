#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "exformer/data.hpp"
#include "exformer/forecast_eval.hpp"

// Daily returns are in percent throughout; compounding converts to fractions.

namespace exformer {

// sign(x) with sign(0) = 0.
Eigen::VectorXd signal_from_forecast(ConstVec forecast);

struct BenchmarkSignals {
  Eigen::VectorXd rw;  // sign(r_{t-1}), 0 on the first day
  Eigen::VectorXd bh;  // always long
  Eigen::VectorXd ma;  // short vs long moving average of the synthetic price
};

// Signals for the day-t position use returns through t-1 only. The MA signal is
// 0 until the long average is defined and on exact ties.
BenchmarkSignals benchmark_signals(ConstVec returns, std::size_t ma_short = 20, std::size_t ma_long = 50);

// Synthetic price 100 * prod(1 + r / 100).
Eigen::VectorXd synthetic_price(ConstVec returns);

Eigen::VectorXd strategy_returns(ConstVec signals, ConstVec returns);

struct FrictionSpec {
  double cost_bps = 5.0;
  double slippage_bps = 2.0;

  // Deduction per position change, in percentage points.
  double per_trade() const { return (cost_bps + slippage_bps) / 100.0; }
  void validate() const;
};

// Number of days whose signal differs from the previous day's (day 0 compares
// against a flat position).
std::size_t trade_count(ConstVec signals);
// Per-day deduction in percentage points.
Eigen::VectorXd friction_deductions(ConstVec signals, const FrictionSpec& spec);
Eigen::VectorXd apply_frictions(ConstVec signals, ConstVec gross, const FrictionSpec& spec);

struct CumulativePath {
  double total = 0.0;    // percent
  Eigen::VectorXd path;  // cumulative percent after each day
};

// 100 * (prod(1 + R / 100) - 1). A day at or below -100% raises NumericError.
CumulativePath cumulative_return(ConstVec daily);

struct BacktestReport {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  double cumulative = 0.0;
  double max_drawdown = 0.0;
  std::optional<double> sharpe;   // unset when the return std is zero
  std::optional<double> sortino;  // unset when there is no downside
  std::size_t trades = 0;
};

// Peak-to-trough decline of the wealth path starting at 1, in percent of the peak.
double max_drawdown(ConstVec daily);
BacktestReport performance_metrics(ConstVec daily, std::size_t trades = 0, double periods_per_year = 252.0);

struct StrategyLedger {
  std::string name;
  std::vector<Date> dates;
  Eigen::VectorXd signals;
  Eigen::VectorXd gross;
  Eigen::VectorXd deductions;
  Eigen::VectorXd net;
  Eigen::VectorXd cumulative;  // net, percent
};

StrategyLedger build_ledger(std::string name, std::vector<Date> dates, ConstVec signals, ConstVec returns,
                            const FrictionSpec& spec);
// date,signal,gross,net,cum
void write_ledger_csv(const StrategyLedger& ledger, const std::filesystem::path& path);

enum class Volatility { low, medium, high };
enum class Trend { bull, bear };

struct RegimeOptions {
  std::size_t vol_window = 20;
  std::size_t trend_window = 20;
  // Leading days supplied only as rolling-window history; they get no label.
  std::size_t history = 0;
  // Thresholds from the evaluation days seen so far instead of the full period.
  bool expanding = false;
};

struct RegimePartition {
  std::vector<std::optional<Volatility>> volatility;  // one per evaluation day
  std::vector<std::optional<Trend>> trend;
  Eigen::VectorXd rolling_std;  // NaN where undefined
  double p33 = 0.0;
  double p66 = 0.0;

  std::size_t size() const { return volatility.size(); }
};

// Linear-interpolation percentile, q in [0, 1].
double percentile(std::vector<double> values, double q);

// Trailing rolling std (sample, inclusive of the day) split into terciles at
// the 33rd/66th percentiles; trend from the sign of the trailing sum, zero
// counting as bear.
RegimePartition regime_partition(ConstVec returns, const RegimeOptions& options = {});

struct BucketAccuracy {
  std::string bucket;
  std::size_t days = 0;
  std::optional<double> da;  // unset for an empty bucket
};

// Buckets in order: low, medium, high, bull, bear.
std::array<BucketAccuracy, 5> stratified_da(ConstVec realized, ConstVec forecast, const RegimePartition& partition);

}  // namespace exformer
