#include "exformer/backtest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "exformer/csv.hpp"

namespace exformer {

Eigen::VectorXd signal_from_forecast(ConstVec forecast) { return forecast.array().sign(); }

Eigen::VectorXd synthetic_price(ConstVec returns) {
  Eigen::VectorXd price(returns.size());
  double level = 100.0;
  for (Eigen::Index t = 0; t < returns.size(); ++t) {
    level *= 1.0 + returns[t] / 100.0;
    price[t] = level;
  }
  return price;
}

BenchmarkSignals benchmark_signals(ConstVec returns, std::size_t ma_short, std::size_t ma_long) {
  if (ma_short == 0 || ma_short >= ma_long) throw ConfigError("moving-average windows need 0 < short < long");
  const Eigen::Index n = returns.size();
  BenchmarkSignals s;
  s.rw = Eigen::VectorXd::Zero(n);
  if (n > 1) s.rw.tail(n - 1) = returns.head(n - 1).array().sign();
  s.bh = Eigen::VectorXd::Ones(n);
  s.ma = Eigen::VectorXd::Zero(n);

  const Eigen::VectorXd price = synthetic_price(returns);
  const auto ls = static_cast<Eigen::Index>(ma_short);
  const auto ll = static_cast<Eigen::Index>(ma_long);
  for (Eigen::Index t = ll; t < n; ++t) {
    const double fast = price.segment(t - ls, ls).mean();
    const double slow = price.segment(t - ll, ll).mean();
    s.ma[t] = fast > slow ? 1.0 : (fast < slow ? -1.0 : 0.0);
  }
  return s;
}

Eigen::VectorXd strategy_returns(ConstVec signals, ConstVec returns) {
  if (signals.size() != returns.size()) {
    throw DimensionError("strategy returns: " + std::to_string(signals.size()) + " signals vs " +
                         std::to_string(returns.size()) + " returns");
  }
  return signals.cwiseProduct(returns);
}

void FrictionSpec::validate() const {
  if (!(cost_bps >= 0.0) || !(slippage_bps >= 0.0)) throw ConfigError("friction costs must be nonnegative");
}

std::size_t trade_count(ConstVec signals) {
  std::size_t trades = 0;
  double prev = 0.0;
  for (Eigen::Index t = 0; t < signals.size(); ++t) {
    if (signals[t] != prev) ++trades;
    prev = signals[t];
  }
  return trades;
}

Eigen::VectorXd friction_deductions(ConstVec signals, const FrictionSpec& spec) {
  spec.validate();
  Eigen::VectorXd d = Eigen::VectorXd::Zero(signals.size());
  double prev = 0.0;
  for (Eigen::Index t = 0; t < signals.size(); ++t) {
    if (signals[t] != prev) d[t] = spec.per_trade();
    prev = signals[t];
  }
  return d;
}

Eigen::VectorXd apply_frictions(ConstVec signals, ConstVec gross, const FrictionSpec& spec) {
  if (signals.size() != gross.size()) throw DimensionError("apply_frictions: signal and return lengths differ");
  return gross - friction_deductions(signals, spec);
}

CumulativePath cumulative_return(ConstVec daily) {
  CumulativePath out;
  out.path.resize(daily.size());
  double wealth = 1.0;
  for (Eigen::Index t = 0; t < daily.size(); ++t) {
    if (daily[t] <= -100.0) throw NumericError("return of " + format_double(daily[t]) + "% wipes out the position");
    wealth *= 1.0 + daily[t] / 100.0;
    out.path[t] = 100.0 * (wealth - 1.0);
  }
  out.total = 100.0 * (wealth - 1.0);
  return out;
}

double max_drawdown(ConstVec daily) {
  double wealth = 1.0, peak = 1.0, worst = 0.0;
  for (Eigen::Index t = 0; t < daily.size(); ++t) {
    wealth *= 1.0 + daily[t] / 100.0;
    peak = std::max(peak, wealth);
    worst = std::max(worst, (peak - wealth) / peak);
  }
  return 100.0 * worst;
}

BacktestReport performance_metrics(ConstVec daily, std::size_t trades, double periods_per_year) {
  const Eigen::Index n = daily.size();
  if (n < 2) throw DataError("performance metrics need at least 2 daily returns");
  BacktestReport r;
  r.mean = daily.mean();
  r.min = daily.minCoeff();
  r.max = daily.maxCoeff();
  r.cumulative = cumulative_return(daily).total;
  r.max_drawdown = max_drawdown(daily);
  r.trades = trades;
  const double annual = std::sqrt(periods_per_year);
  const double sd = std::sqrt((daily.array() - r.mean).square().sum() / static_cast<double>(n - 1));
  if (sd > 0.0) r.sharpe = r.mean / sd * annual;
  const double downside = std::sqrt(daily.array().min(0.0).square().mean());
  if (downside > 0.0) r.sortino = r.mean / downside * annual;
  return r;
}

StrategyLedger build_ledger(std::string name, std::vector<Date> dates, ConstVec signals, ConstVec returns,
                            const FrictionSpec& spec) {
  StrategyLedger l;
  l.name = std::move(name);
  l.dates = std::move(dates);
  if (!l.dates.empty() && l.dates.size() != static_cast<std::size_t>(returns.size())) {
    throw DimensionError("ledger dates and returns differ in length");
  }
  l.signals = signals;
  l.gross = strategy_returns(signals, returns);
  l.deductions = friction_deductions(signals, spec);
  l.net = l.gross - l.deductions;
  l.cumulative = cumulative_return(l.net).path;
  return l;
}

void write_ledger_csv(const StrategyLedger& l, const std::filesystem::path& path) {
  CsvWriter w(path);
  w.row({"date", "signal", "gross", "net", "cum"});
  for (Eigen::Index t = 0; t < l.net.size(); ++t) {
    w.field(l.dates.empty() ? std::to_string(t) : format_date(l.dates[static_cast<std::size_t>(t)]));
    w.field(static_cast<int>(l.signals[t])).field(l.gross[t]).field(l.net[t]).field(l.cumulative[t]);
    w.end_row();
  }
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw DataError("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace {

Volatility classify(double s, double p33, double p66) {
  if (s <= p33) return Volatility::low;
  if (s <= p66) return Volatility::medium;
  return Volatility::high;
}

}  // namespace

RegimePartition regime_partition(ConstVec returns, const RegimeOptions& o) {
  if (o.vol_window < 2 || o.trend_window < 1) throw ConfigError("regime windows too short");
  const auto n = static_cast<std::size_t>(returns.size());
  if (n <= o.history || n < std::max(o.vol_window, o.trend_window)) {
    throw DataError("regime partition: " + std::to_string(n) + " returns are too few for a " +
                    std::to_string(std::max(o.vol_window, o.trend_window)) + "-day window");
  }
  const std::size_t eval_n = n - o.history;
  RegimePartition p;
  p.volatility.assign(eval_n, std::nullopt);
  p.trend.assign(eval_n, std::nullopt);
  p.rolling_std = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(eval_n), std::numeric_limits<double>::quiet_NaN());

  const auto wv = static_cast<Eigen::Index>(o.vol_window);
  const auto wt = static_cast<Eigen::Index>(o.trend_window);
  std::vector<double> defined;
  for (std::size_t i = 0; i < eval_n; ++i) {
    const auto t = static_cast<Eigen::Index>(i + o.history);
    if (t + 1 >= wv) {
      const auto seg = returns.segment(t + 1 - wv, wv);
      const double m = seg.mean();
      p.rolling_std[static_cast<Eigen::Index>(i)] =
          std::sqrt((seg.array() - m).square().sum() / static_cast<double>(wv - 1));
      defined.push_back(p.rolling_std[static_cast<Eigen::Index>(i)]);
    }
    if (t + 1 >= wt) p.trend[i] = returns.segment(t + 1 - wt, wt).sum() > 0.0 ? Trend::bull : Trend::bear;
  }
  if (defined.empty()) throw DataError("regime partition: no evaluation day has a defined rolling std");

  p.p33 = percentile(defined, 0.33);
  p.p66 = percentile(defined, 0.66);
  if (!o.expanding) {
    for (std::size_t i = 0; i < eval_n; ++i) {
      const double s = p.rolling_std[static_cast<Eigen::Index>(i)];
      if (!std::isnan(s)) p.volatility[i] = classify(s, p.p33, p.p66);
    }
  } else {
    std::vector<double> seen;
    for (std::size_t i = 0; i < eval_n; ++i) {
      const double s = p.rolling_std[static_cast<Eigen::Index>(i)];
      if (std::isnan(s)) continue;
      seen.push_back(s);
      p.volatility[i] = classify(s, percentile(seen, 0.33), percentile(seen, 0.66));
    }
  }
  return p;
}

std::array<BucketAccuracy, 5> stratified_da(ConstVec realized, ConstVec forecast, const RegimePartition& partition) {
  if (static_cast<std::size_t>(realized.size()) != partition.size()) {
    throw DimensionError("stratified DA: " + std::to_string(realized.size()) + " returns vs " +
                         std::to_string(partition.size()) + " regime labels");
  }
  const Eigen::VectorXd hits = hit_indicators(realized, forecast);
  std::array<BucketAccuracy, 5> out{{{"low", 0, {}}, {"medium", 0, {}}, {"high", 0, {}}, {"bull", 0, {}}, {"bear", 0, {}}}};
  std::array<double, 5> sums{};
  for (std::size_t i = 0; i < partition.size(); ++i) {
    const double h = hits[static_cast<Eigen::Index>(i)];
    if (partition.volatility[i]) {
      const auto b = static_cast<std::size_t>(*partition.volatility[i]);
      ++out[b].days;
      sums[b] += h;
    }
    if (partition.trend[i]) {
      const std::size_t b = *partition.trend[i] == Trend::bull ? 3 : 4;
      ++out[b].days;
      sums[b] += h;
    }
  }
  for (std::size_t b = 0; b < out.size(); ++b) {
    if (out[b].days > 0) out[b].da = sums[b] / static_cast<double>(out[b].days);
  }
  return out;
}

}  // namespace exformer
