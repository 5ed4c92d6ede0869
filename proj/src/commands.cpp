#include "exformer/commands.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "exformer/backtest.hpp"
#include "exformer/csv.hpp"
#include "exformer/forecast_eval.hpp"
#include "exformer/importance.hpp"
#include "exformer/run_config.hpp"
#include "exformer/synthetic.hpp"
#include "exformer/trainer.hpp"

namespace exformer {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string checkpoint;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> window;
  std::optional<double> friction_bps;
  std::optional<double> slippage_bps;
  bool verbose = false;
};

struct SynthOptions {
  std::string out_dir;
  std::size_t n = 1000;
  std::size_t n_covariates = 4;
  std::string signal_coefs = "0.8";
  double noise_std = 0.1;
  std::uint64_t seed = 0;
};

struct Context {
  RunConfig config;
  fs::path config_path;
  fs::path out_dir;
  fs::path checkpoint;
  PanelDataset raw;
  PanelDataset panel;  // standardized
  ModelConfig model;
};

const std::set<std::size_t> kPaperWindows{5, 10, 15, 20, 30};

Context prepare(const Options& o, std::ostream& err) {
  Context c;
  c.config_path = o.config;
  c.config = load_run_config(c.config_path);
  if (o.seed) c.config.seed = c.config.train.seed = *o.seed;
  if (o.window) c.config.window = c.config.model.window = *o.window;
  if (o.friction_bps) c.config.friction.cost_bps = *o.friction_bps;
  if (o.slippage_bps) c.config.friction.slippage_bps = *o.slippage_bps;
  c.config.validate();
  if (!kPaperWindows.count(c.config.window)) {
    err << "warning: window " << c.config.window << " is outside the usual set {5,10,15,20,30}\n";
  }
  c.out_dir = o.out_dir.empty() ? c.config.out_dir : fs::path(o.out_dir);
  if (c.out_dir.is_relative() && o.out_dir.empty()) c.out_dir = c.config_path.parent_path() / c.out_dir;
  c.checkpoint = o.checkpoint.empty() ? c.out_dir / "checkpoint.json" : fs::path(o.checkpoint);

  if (!fs::exists(c.config.manifest)) throw DataError("manifest not found: " + c.config.manifest.string());
  c.raw = build_panel(load_manifest(c.config.manifest));
  c.panel = fit_apply_standardizer(c.raw);
  c.model = c.config.model;
  c.model.features = c.panel.features();
  c.model.window = c.config.window;
  c.model.validate();
  fs::create_directories(c.out_dir);
  return c;
}

void write_json(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json run_header(const Context& c, const std::string& command) {
  return {{"command", command},
          {"seed", c.config.seed},
          {"pair", c.config.pair},
          {"window", c.config.window},
          {"config", c.config_path.generic_string()},
          {"manifest", c.config.manifest.generic_string()},
          {"rows", c.panel.rows()},
          {"split", {c.panel.split.train_end, c.panel.split.val_end, c.panel.split.n}}};
}

Checkpoint load_matching_checkpoint(const Context& c) {
  Checkpoint ckpt = load_checkpoint(c.checkpoint);
  if (ckpt.config.features != c.model.features || ckpt.config.window != c.model.window) {
    throw DimensionError("checkpoint " + c.checkpoint.string() + " was trained for F=" +
                         std::to_string(ckpt.config.features) + ", T=" + std::to_string(ckpt.config.window) +
                         " but the config gives F=" + std::to_string(c.model.features) +
                         ", T=" + std::to_string(c.model.window));
  }
  return ckpt;
}

// Test-period forecasts in percent, aligned with realized returns.
struct TestForecasts {
  std::vector<Date> dates;
  std::vector<std::size_t> origins;
  Eigen::VectorXd realized;
  Eigen::VectorXd previous;  // r_{t-1}
  Eigen::VectorXd forecast;
  std::vector<RowMatrix> weights;
};

TestForecasts forecast_test(const Context& c, const ParameterStore& params, const ModelConfig& model) {
  Predictions pred = predict(params, model, c.panel, Subset::test);
  TestForecasts t;
  const auto n = static_cast<Eigen::Index>(pred.origins.size());
  t.origins = pred.origins;
  t.realized.resize(n);
  t.previous.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t row = pred.origins[static_cast<std::size_t>(i)];
    t.dates.push_back(c.raw.dates[row]);
    t.realized[i] = c.raw.target[static_cast<Eigen::Index>(row)];
    t.previous[i] = c.raw.target[static_cast<Eigen::Index>(row - 1)];
  }
  switch (c.config.forecast_source) {
    case ForecastSource::model: t.forecast = c.panel.standardizer->invert_target(pred.forecasts); break;
    case ForecastSource::zero: t.forecast = Eigen::VectorXd::Zero(n); break;
    case ForecastSource::perfect: t.forecast = t.realized; break;
  }
  t.weights = std::move(pred.weights);
  return t;
}

struct EvalRow {
  double msfe_ratio = 0.0;
  TestResult cw;
  double da = 0.0;
  double da_rw = 0.0;
  TestResult bh;
};

EvalRow evaluate_forecasts(const TestForecasts& t, const RunConfig& cfg) {
  const Eigen::VectorXd rw = Eigen::VectorXd::Zero(t.realized.size());
  EvalRow r;
  r.msfe_ratio = msfe_ratio(t.realized, t.forecast, rw);
  r.cw = clark_west_test(t.realized, t.forecast, rw, cfg.hac_bandwidth);
  const Eigen::VectorXd hits = hit_indicators(t.realized, t.forecast);
  const Eigen::VectorXd rw_hits = random_walk_hits(t.realized, t.previous);
  r.da = hits.mean();
  r.da_rw = rw_hits.mean();
  r.bh = blaskowitz_herwartz_test(hits, rw_hits, cfg.hac_bandwidth);
  return r;
}

std::string_view variant_label(const std::string& variant) {
  if (variant == "full") return "EXFormer";
  if (variant == "no_msc") return "No MSC";
  if (variant == "no_se") return "No SE";
  if (variant == "no_dvs") return "No DVS";
  return "Standard Attention";
}

// ---------------------------------------------------------------------------

int cmd_synth(const SynthOptions& o, std::ostream& out) {
  SyntheticSpec spec;
  spec.n = o.n;
  spec.n_covariates = o.n_covariates;
  spec.noise_std = o.noise_std;
  spec.seed = o.seed;
  spec.signal_coefs.clear();
  std::stringstream ss(o.signal_coefs);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      spec.signal_coefs.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--signal-coefs: cannot parse '" + item + "'");
    }
  }
  const fs::path manifest = write_synthetic(spec, o.out_dir);
  out << "wrote " << manifest.generic_string() << '\n';
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  Context c = prepare(o, err);
  EpochCallback log;
  if (o.verbose) {
    log = [&](std::size_t epoch, double tr, double va) {
      err << "epoch " << epoch << " train_mse " << format_double(tr) << " val_mse " << format_double(va) << '\n';
    };
  }
  const TrainResult res = train(c.panel, c.model, c.config.train, log);
  save_checkpoint({c.model, res.params, c.config.seed}, c.checkpoint);

  CsvWriter w(c.out_dir / "train_log.csv");
  w.row({"epoch", "train_mse", "val_mse"});
  for (std::size_t e = 0; e < res.report.epochs(); ++e) {
    w.field(e + 1).field(res.report.train_loss[e]).field(res.report.val_loss[e]);
    w.end_row();
  }
  write_panel_csv(c.panel, c.out_dir / "panel.csv");

  nlohmann::json m = run_header(c, "train");
  m["checkpoint"] = c.checkpoint.generic_string();
  m["model"] = to_json(c.model);
  m["parameters"] = res.params.count();
  m["epochs"] = res.report.epochs();
  m["best_epoch"] = res.report.best_epoch;
  m["best_val_mse"] = res.report.best_val_loss;
  m["stopped_early"] = res.report.stopped_early;
  write_json(m, c.out_dir / "train_manifest.json");

  out << "trained " << res.params.count() << " parameters for " << res.report.epochs() << " epochs; best epoch "
      << res.report.best_epoch << " val_mse " << format_double(res.report.best_val_loss) << '\n';
  return kExitOk;
}

int cmd_evaluate(const Options& o, std::ostream& out, std::ostream& err) {
  Context c = prepare(o, err);
  const Checkpoint ckpt = load_matching_checkpoint(c);
  const TestForecasts t = forecast_test(c, ckpt.params, ckpt.config);
  const EvalRow r = evaluate_forecasts(t, c.config);
  const std::string window = std::to_string(c.config.window);
  const double na = std::numeric_limits<double>::quiet_NaN();

  CsvWriter w(c.out_dir / "results.csv");
  w.row({"pair", "model", "window", "msfe_ratio", "cw_t", "cw_p", "da", "bh_t", "bh_p"});
  w.field(std::string_view(c.config.pair)).field(std::string_view("EXFormer")).field(c.config.window);
  w.field(r.msfe_ratio).field(r.cw.statistic).field(r.cw.p_value).field(r.da).field(r.bh.statistic).field(r.bh.p_value);
  w.end_row();
  w.field(std::string_view(c.config.pair)).field(std::string_view("RW")).field(c.config.window);
  w.field(100.0).field(na).field(na).field(r.da_rw).field(na).field(na);
  w.end_row();

  CsvWriter fw(c.out_dir / "forecasts.csv");
  fw.row({"date", "realized", "forecast"});
  for (Eigen::Index i = 0; i < t.realized.size(); ++i) {
    fw.field(std::string_view(format_date(t.dates[static_cast<std::size_t>(i)]))).field(t.realized[i]).field(t.forecast[i]);
    fw.end_row();
  }

  // Regime labels for test days may use earlier returns as rolling history.
  RegimeOptions ro = c.config.regimes;
  const std::size_t first = t.origins.front();
  ro.history = first;
  const RegimePartition part = regime_partition(c.raw.target.head(static_cast<Eigen::Index>(t.origins.back() + 1)), ro);
  const Eigen::VectorXd rw_signal = t.previous.array().sign();
  const auto model_da = stratified_da(t.realized, t.forecast, part);
  const auto rw_da = stratified_da(t.realized, rw_signal, part);
  CsvWriter rw(c.out_dir / "regimes.csv");
  rw.row({"bucket", "days", "da_model", "da_rw"});
  for (std::size_t b = 0; b < model_da.size(); ++b) {
    rw.field(std::string_view(model_da[b].bucket)).field(model_da[b].days);
    rw.field(model_da[b].da.value_or(na)).field(rw_da[b].da.value_or(na));
    rw.end_row();
  }

  nlohmann::json m = run_header(c, "evaluate");
  m["checkpoint"] = c.checkpoint.generic_string();
  m["test_days"] = t.realized.size();
  m["hac_bandwidth"] = r.cw.bandwidth;
  m["regime_thresholds"] = {part.p33, part.p66};
  write_json(m, c.out_dir / "evaluate_manifest.json");

  out << "window " << window << ": msfe_ratio " << format_double(r.msfe_ratio) << " cw_t " << format_double(r.cw.statistic)
      << " da " << format_double(r.da) << " (rw " << format_double(r.da_rw) << ") bh_p " << format_double(r.bh.p_value)
      << '\n';
  return kExitOk;
}

int cmd_backtest(const Options& o, std::ostream& out, std::ostream& err) {
  Context c = prepare(o, err);
  const Checkpoint ckpt = load_matching_checkpoint(c);
  const TestForecasts t = forecast_test(c, ckpt.params, ckpt.config);

  // Benchmarks see the whole return history, then the test days are cut out.
  const auto first = static_cast<Eigen::Index>(t.origins.front());
  const auto n = t.realized.size();
  const BenchmarkSignals bench =
      benchmark_signals(c.raw.target.head(first + n), c.config.ma_short, c.config.ma_long);

  std::vector<std::pair<std::string, Eigen::VectorXd>> strategies;
  strategies.emplace_back("EXFormer", signal_from_forecast(t.forecast));
  for (const auto& b : c.config.benchmarks) {
    if (b == "rw") strategies.emplace_back("RW", bench.rw.segment(first, n));
    if (b == "bh") strategies.emplace_back("B&H", bench.bh.segment(first, n));
    if (b == "ma") strategies.emplace_back("MA", bench.ma.segment(first, n));
  }

  CsvWriter w(c.out_dir / "backtest_report.csv");
  w.row({"strategy", "frictions", "mean", "min", "max", "cumulative", "max_drawdown", "sharpe", "sortino", "trades"});
  const double na = std::numeric_limits<double>::quiet_NaN();
  for (const auto& [name, signals] : strategies) {
    const StrategyLedger ledger = build_ledger(name, t.dates, signals, t.realized, c.config.friction);
    std::string file = "ledger_" + name + ".csv";
    std::replace(file.begin(), file.end(), '&', '_');
    write_ledger_csv(ledger, c.out_dir / file);
    const std::size_t trades = trade_count(signals);
    for (const bool net : {false, true}) {
      const BacktestReport rep = performance_metrics(net ? ledger.net : ledger.gross, trades, c.config.periods_per_year);
      w.field(std::string_view(name)).field(std::string_view(net ? "net" : "gross"));
      w.field(rep.mean).field(rep.min).field(rep.max).field(rep.cumulative).field(rep.max_drawdown);
      w.field(rep.sharpe.value_or(na)).field(rep.sortino.value_or(na)).field(rep.trades);
      w.end_row();
    }
  }

  nlohmann::json m = run_header(c, "backtest");
  m["checkpoint"] = c.checkpoint.generic_string();
  m["cost_bps"] = c.config.friction.cost_bps;
  m["slippage_bps"] = c.config.friction.slippage_bps;
  m["test_days"] = n;
  write_json(m, c.out_dir / "backtest_manifest.json");
  out << "backtested " << strategies.size() << " strategies over " << n << " days\n";
  return kExitOk;
}

int cmd_explain(const Options& o, std::ostream& out, std::ostream& err) {
  Context c = prepare(o, err);
  const Checkpoint ckpt = load_matching_checkpoint(c);
  const Predictions pred = predict(ckpt.params, ckpt.config, c.panel, Subset::test);
  std::vector<Date> dates;
  for (std::size_t row : pred.origins) dates.push_back(c.raw.dates[row]);
  const ImportanceMatrix m =
      timevarying_importance(pred.weights, std::move(dates), c.panel.covariate_names, c.config.importance_reduction);
  const auto g = global_importance(m);
  write_global_importance_csv(g, c.out_dir / "global_importance.csv");
  write_importance_matrix_csv(m, c.out_dir / "importance_matrix.csv");

  nlohmann::json j = run_header(c, "explain");
  j["checkpoint"] = c.checkpoint.generic_string();
  j["reduction"] = c.config.importance_reduction == Reduction::mean ? "mean" : "max";
  write_json(j, c.out_dir / "explain_manifest.json");
  for (const auto& [name, pct] : g) out << std::setw(12) << name << ' ' << format_double(pct) << "%\n";
  return kExitOk;
}

int cmd_ablate(const Options& o, std::ostream& out, std::ostream& err) {
  Context c = prepare(o, err);
  CsvWriter w(c.out_dir / "ablation.csv");
  w.row({"variant", "parameters", "msfe_ratio", "cw_t", "cw_p", "da", "bh_t", "bh_p", "best_epoch"});
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& variant : c.config.ablations) {
    const ModelConfig model = ablation_variant(c.model, variant);
    const TrainResult res = train(c.panel, model, c.config.train);
    const TestForecasts t = forecast_test(c, res.params, model);
    const EvalRow r = evaluate_forecasts(t, c.config);
    w.field(std::string_view(variant_label(variant))).field(res.params.count());
    w.field(r.msfe_ratio).field(r.cw.statistic).field(r.cw.p_value).field(r.da).field(r.bh.statistic).field(r.bh.p_value);
    w.field(res.report.best_epoch);
    w.end_row();

    std::vector<Date> dates = t.dates;
    const ImportanceMatrix m =
        timevarying_importance(t.weights, std::move(dates), c.panel.covariate_names, c.config.importance_reduction);
    write_global_importance_csv(global_importance(m), c.out_dir / ("global_importance_" + variant + ".csv"));
    runs.push_back({{"variant", variant}, {"model", to_json(model)}, {"parameters", res.params.count()},
                    {"epochs", res.report.epochs()}});
    out << std::setw(20) << std::left << variant_label(variant) << " params " << res.params.count() << " da "
        << format_double(r.da) << " bh_p " << format_double(r.bh.p_value) << '\n';
  }
  nlohmann::json j = run_header(c, "ablate");
  j["runs"] = runs;
  write_json(j, c.out_dir / "ablate_manifest.json");
  return kExitOk;
}

void add_common(CLI::App* cmd, Options& o, bool needs_checkpoint, bool frictions) {
  cmd->add_option("--config", o.config, "Run configuration (INI)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out-dir", o.out_dir, "Output directory (overrides [run] out_dir)");
  cmd->add_option("--seed", o.seed, "Root random seed");
  cmd->add_option("--window", o.window, "Look-back window length T")->check(CLI::PositiveNumber);
  if (needs_checkpoint) {
    cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint path (default <out-dir>/checkpoint.json)");
  }
  if (frictions) {
    cmd->add_option("--friction-bps", o.friction_bps, "Transaction cost per trade, bps")->check(CLI::NonNegativeNumber);
    cmd->add_option("--slippage-bps", o.slippage_bps, "Slippage per trade, bps")->check(CLI::NonNegativeNumber);
  }
  cmd->add_flag("-v,--verbose", o.verbose, "Per-epoch progress on stderr");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Exogenous-variable transformer forecasting laboratory", "exformer"};
  app.require_subcommand(1);
  Options o;
  SynthOptions s;

  CLI::App* train_cmd = app.add_subcommand("train", "Fit a model and write a checkpoint");
  add_common(train_cmd, o, true, false);
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "Forecast statistics on the test period");
  add_common(eval_cmd, o, true, false);
  CLI::App* bt_cmd = app.add_subcommand("backtest", "Trading simulation with and without frictions");
  add_common(bt_cmd, o, true, true);
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "Train the full model and each ablation");
  add_common(ablate_cmd, o, false, false);
  CLI::App* explain_cmd = app.add_subcommand("explain", "Export variable-selection importance");
  add_common(explain_cmd, o, true, false);

  CLI::App* synth_cmd = app.add_subcommand("synth-data", "Write a synthetic panel with a planted signal");
  synth_cmd->add_option("--out-dir", s.out_dir, "Destination directory")->required();
  synth_cmd->add_option("--n", s.n, "Number of return days");
  synth_cmd->add_option("--n-covariates", s.n_covariates, "Number of covariate series");
  synth_cmd->add_option("--signal-coefs", s.signal_coefs, "Comma-separated coefficients on lagged covariates");
  synth_cmd->add_option("--noise-std", s.noise_std, "Noise standard deviation (percent)");
  synth_cmd->add_option("--seed", s.seed, "Random seed");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }

  try {
    if (*synth_cmd) return cmd_synth(s, out);
    if (*train_cmd) return cmd_train(o, out, err);
    if (*eval_cmd) return cmd_evaluate(o, out, err);
    if (*bt_cmd) return cmd_backtest(o, out, err);
    if (*ablate_cmd) return cmd_ablate(o, out, err);
    if (*explain_cmd) return cmd_explain(o, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DimensionError& e) {
    err << "shape error: " << e.what() << '\n';
    return kExitShape;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace exformer
