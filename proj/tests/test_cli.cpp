#include <doctest.h>

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "exformer/backtest.hpp"
#include "exformer/commands.hpp"
#include "exformer/csv.hpp"
#include "exformer/model.hpp"
#include "exformer/run_config.hpp"
#include "support.hpp"

using namespace exformer;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "exformer");
  std::ostringstream out, err;
  Outcome o;
  o.code = run_cli(args, out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

// Synthetic data plus a small, fast run configuration.
class Workspace {
 public:
  explicit Workspace(const std::string& tag, const std::string& extra = "") : dir_(tag) {
    const Outcome s = run({"synth-data", "--out-dir", (dir_.path() / "data").string(), "--n", "400", "--n-covariates",
                           "3", "--seed", "5"});
    REQUIRE(s.code == 0);
    write_config("run.ini", extra);
  }

  fs::path write_config(const std::string& name, const std::string& extra) const {
    const fs::path p = dir_.path() / name;
    std::ofstream(p) << "[run]\npair = SYN\nwindow = 5\nseed = 3\nout_dir = out\n"
                     << "[data]\nmanifest = data/manifest.json\n"
                     << "[model]\nheads = 1\nfactor = 8\ndropout = 0.1\nkernels = 3,5,7\n"
                     << "[train]\nlearning_rate = 0.003\nbatch_size = 64\nmax_epochs = 6\npatience = 3\n"
                     << extra;
    return p;
  }

  std::string config(const std::string& name = "run.ini") const { return (dir_.path() / name).string(); }
  fs::path out() const { return dir_.path() / "out"; }
  fs::path path() const { return dir_.path(); }

 private:
  testing::TempDir dir_;
};

double num(const std::string& s) { return std::stod(s); }

}  // namespace

TEST_CASE("train writes a loadable checkpoint and a log") {
  Workspace ws("cli_train");
  const Outcome r = run({"train", "--config", ws.config()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const Checkpoint ck = load_checkpoint(ws.out() / "checkpoint.json");
  CHECK(ck.seed == 3);
  CHECK(ck.config.features == 4);  // three covariates plus the target lag
  CHECK(ck.config.window == 5);
  const auto log = read_csv(ws.out() / "train_log.csv");
  CHECK(log.front() == std::vector<std::string>{"epoch", "train_mse", "val_mse"});
  CHECK(log.size() >= 2);
  const auto manifest = nlohmann::json::parse(testing::read_file(ws.out() / "train_manifest.json"));
  CHECK(manifest["seed"] == 3);
  CHECK(manifest["parameters"] == parameter_count(ck.config));
  CHECK(manifest["epochs"] == log.size() - 1);
}

TEST_CASE("same seed, same bytes") {
  Workspace ws("cli_det");
  const std::vector<std::string> cmds{"train", "evaluate", "backtest", "explain"};
  for (const char* tag : {"a", "b"}) {
    for (const auto& cmd : cmds) {
      REQUIRE(run({cmd, "--config", ws.config(), "--out-dir", (ws.path() / tag).string()}).code == 0);
    }
  }
  std::size_t compared = 0;
  for (const auto& entry : fs::directory_iterator(ws.path() / "a")) {
    if (entry.path().extension() != ".csv") continue;
    CHECK_MESSAGE(testing::read_file(entry.path()) == testing::read_file(ws.path() / "b" / entry.path().filename()),
                  entry.path().filename().string());
    ++compared;
  }
  CHECK(compared >= 10);
  CHECK(testing::read_file(ws.path() / "a" / "checkpoint.json") == testing::read_file(ws.path() / "b" / "checkpoint.json"));
  // A different seed changes the training trajectory.
  REQUIRE(run({"train", "--config", ws.config(), "--out-dir", (ws.path() / "c").string(), "--seed", "4"}).code == 0);
  CHECK(testing::read_file(ws.path() / "a" / "train_log.csv") != testing::read_file(ws.path() / "c" / "train_log.csv"));
}

TEST_CASE("evaluate with injected forecasts") {
  Workspace ws("cli_eval", "[eval]\nforecast_source = zero\n");
  ws.write_config("perfect.ini", "[eval]\nforecast_source = perfect\n");
  REQUIRE(run({"train", "--config", ws.config()}).code == 0);

  REQUIRE(run({"evaluate", "--config", ws.config()}).code == 0);
  auto rows = read_csv(ws.out() / "results.csv");
  CHECK(rows[0] == std::vector<std::string>{"pair", "model", "window", "msfe_ratio", "cw_t", "cw_p", "da", "bh_t", "bh_p"});
  CHECK(rows[1][0] == "SYN");
  CHECK(rows[1][1] == "EXFormer");
  CHECK(num(rows[1][3]) == 100.0);
  CHECK(num(rows[1][4]) == 0.0);
  CHECK(num(rows[1][5]) == 0.5);
  CHECK(rows[2][1] == "RW");

  REQUIRE(run({"evaluate", "--config", ws.config("perfect.ini")}).code == 0);
  rows = read_csv(ws.out() / "results.csv");
  CHECK(num(rows[1][3]) == 0.0);
  CHECK(num(rows[1][6]) == 1.0);
  const auto regimes = read_csv(ws.out() / "regimes.csv");
  CHECK(regimes.size() == 6);
  for (std::size_t i = 1; i < regimes.size(); ++i) {
    if (regimes[i][1] != "0") CHECK(num(regimes[i][2]) == 1.0);
  }
}

TEST_CASE("backtest accounting") {
  Workspace ws("cli_bt", "[eval]\nforecast_source = perfect\n");
  REQUIRE(run({"train", "--config", ws.config()}).code == 0);
  REQUIRE(run({"backtest", "--config", ws.config(), "--out-dir", (ws.path() / "free").string(), "--checkpoint",
               (ws.out() / "checkpoint.json").string(), "--friction-bps", "0", "--slippage-bps", "0"})
              .code == 0);
  REQUIRE(run({"backtest", "--config", ws.config()}).code == 0);

  const auto report = read_csv(ws.out() / "backtest_report.csv");
  CHECK(report[0] == std::vector<std::string>{"strategy", "frictions", "mean", "min", "max", "cumulative",
                                              "max_drawdown", "sharpe", "sortino", "trades"});
  CHECK(report.size() == 9);
  std::map<std::string, double> gross_cum;
  for (std::size_t i = 1; i < report.size(); ++i) {
    if (report[i][1] == "gross") gross_cum[report[i][0]] = num(report[i][5]);
    else CHECK(num(report[i][5]) <= gross_cum[report[i][0]]);
  }
  // Perfect-foresight signals dominate every benchmark.
  for (const auto& [name, cum] : gross_cum) CHECK(gross_cum["EXFormer"] >= cum);

  for (const char* name : {"EXFormer", "RW", "B_H", "MA"}) {
    const auto costly = read_csv(ws.out() / (std::string("ledger_") + name + ".csv"));
    const auto free = read_csv(ws.path() / "free" / (std::string("ledger_") + name + ".csv"));
    REQUIRE(costly.size() == free.size());
    double deducted = 0.0, prev = 0.0;
    std::size_t trades = 0;
    for (std::size_t i = 1; i < costly.size(); ++i) {
      CHECK(free[i][2] == free[i][3]);  // no frictions: net == gross
      CHECK(costly[i][2] == free[i][2]);
      deducted += num(costly[i][2]) - num(costly[i][3]);
      if (num(costly[i][1]) != prev) ++trades;
      prev = num(costly[i][1]);
    }
    CHECK(deducted == doctest::Approx(0.07 * static_cast<double>(trades)).epsilon(1e-9));
  }

  // Buy-and-hold reproduces compounding of the realized test returns.
  const auto bh = read_csv(ws.out() / "ledger_B_H.csv");
  Eigen::VectorXd r(static_cast<Eigen::Index>(bh.size() - 1));
  for (std::size_t i = 1; i < bh.size(); ++i) r[static_cast<Eigen::Index>(i - 1)] = num(bh[i][2]);
  REQUIRE(report[5][0] == "B&H");
  CHECK(num(report[5][5]) == doctest::Approx(cumulative_return(r).total).epsilon(1e-12));
}

TEST_CASE("ablation sweep") {
  Workspace ws("cli_ablate");
  const Outcome r = run({"ablate", "--config", ws.config()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto rows = read_csv(ws.out() / "ablation.csv");
  REQUIRE(rows.size() == 6);
  std::set<std::string> counts;
  for (std::size_t i = 1; i < rows.size(); ++i) counts.insert(rows[i][1]);
  CHECK(counts.size() == 5);
  CHECK(rows[1][0] == "EXFormer");
  CHECK(rows[4][0] == "No DVS");
  const auto g = read_csv(ws.out() / "global_importance_no_dvs.csv");
  REQUIRE(g.size() == 5);
  for (std::size_t i = 1; i < g.size(); ++i) CHECK(num(g[i][1]) == doctest::Approx(25.0).epsilon(1e-12));
  // Counts match the closed form for each variant.
  ModelConfig base;
  base.features = 4;
  base.window = 5;
  base.factor = 8;
  const std::vector<std::string> variants{"full", "no_msc", "no_se", "no_dvs", "standard_attention"};
  for (std::size_t i = 0; i < variants.size(); ++i) {
    CHECK(std::stoull(rows[i + 1][1]) == parameter_count(ablation_variant(base, variants[i])));
  }
}

TEST_CASE("explain exports importance") {
  Workspace ws("cli_explain");
  REQUIRE(run({"train", "--config", ws.config()}).code == 0);
  const Outcome r = run({"explain", "--config", ws.config()});
  REQUIRE(r.code == 0);
  const auto g = read_csv(ws.out() / "global_importance.csv");
  CHECK(g[0] == std::vector<std::string>{"name", "percent"});
  double total = 0.0;
  for (std::size_t i = 1; i < g.size(); ++i) total += num(g[i][1]);
  CHECK(total == doctest::Approx(100.0).epsilon(1e-6));
  const auto m = read_csv(ws.out() / "importance_matrix.csv");
  CHECK(m[0].size() == 5);
  CHECK(m[0][0] == "date");
  for (std::size_t i = 1; i < m.size(); ++i) {
    double s = 0.0;
    for (std::size_t c = 1; c < m[i].size(); ++c) s += num(m[i][c]);
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("error exits") {
  Workspace ws("cli_err");
  SUBCASE("missing config file") {
    const Outcome r = run({"train", "--config", (ws.path() / "nope.ini").string()});
    CHECK(r.code == kExitConfig);
  }
  SUBCASE("missing manifest names the path") {
    std::ofstream(ws.path() / "bad.ini") << "[data]\nmanifest = missing/manifest.json\n";
    const Outcome r = run({"train", "--config", ws.config("bad.ini")});
    CHECK(r.code == kExitData);
    CHECK(r.err.find("missing/manifest.json") != std::string::npos);
  }
  SUBCASE("unknown key") {
    ws.write_config("typo.ini", "[eval]\nhac_bandwith = 4\n");
    const Outcome r = run({"train", "--config", ws.config("typo.ini")});
    CHECK(r.code == kExitConfig);
    CHECK(r.err.find("hac_bandwith") != std::string::npos);
  }
  SUBCASE("out-of-range hyperparameter") {
    std::ofstream(ws.path() / "drop.ini") << "[data]\nmanifest = data/manifest.json\n[model]\ndropout = 0.9\n";
    CHECK(run({"train", "--config", ws.config("drop.ini")}).code == kExitConfig);
    CHECK(run({"train", "--config", ws.config(), "--window", "0"}).code == kExitConfig);
  }
  SUBCASE("checkpoint trained for another window") {
    REQUIRE(run({"train", "--config", ws.config()}).code == 0);
    const Outcome r = run({"evaluate", "--config", ws.config(), "--window", "10"});
    CHECK(r.code == kExitShape);
  }
  SUBCASE("missing checkpoint") {
    CHECK(run({"evaluate", "--config", ws.config()}).code == kExitData);
  }
  SUBCASE("unusual window warns but runs") {
    const Outcome r = run({"train", "--config", ws.config(), "--window", "7"});
    CHECK(r.code == 0);
    CHECK(r.err.find("warning: window 7") != std::string::npos);
  }
  SUBCASE("no subcommand") {
    CHECK(run({}).code == kExitConfig);
  }
}
