#include "exformer/run_config.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace exformer {

namespace pt = boost::property_tree;

namespace {

const std::set<std::string> kVariants{"full", "no_msc", "no_se", "no_dvs", "standard_attention"};
const std::set<std::string> kBenchmarks{"rw", "bh", "ma"};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  boost::split(parts, s, boost::is_any_of(","));
  for (auto& p : parts) boost::trim(p);
  std::erase_if(parts, [](const std::string& p) { return p.empty(); });
  return parts;
}

// Typed access that remembers which keys were consumed.
class Section {
 public:
  Section(const pt::ptree* tree, std::string name) : tree_(tree), name_(std::move(name)) {}

  template <typename T>
  void read(const std::string& key, T& out) {
    used_.insert(key);
    if (!tree_) return;
    auto v = tree_->get_optional<std::string>(key);
    if (!v) return;
    try {
      out = parse<T>(boost::trim_copy(*v));
    } catch (const ConfigError& e) {
      throw ConfigError("[" + name_ + "] " + key + ": " + e.what());
    }
  }

  void check_unknown() const {
    if (!tree_) return;
    for (const auto& [key, _] : *tree_) {
      if (!used_.count(key)) throw ConfigError("unknown key '" + key + "' in section [" + name_ + "]");
    }
  }

 private:
  template <typename T>
  static T parse(const std::string& s) {
    if constexpr (std::is_same_v<T, bool>) {
      const std::string l = boost::to_lower_copy(s);
      if (l == "true" || l == "1" || l == "yes" || l == "on") return true;
      if (l == "false" || l == "0" || l == "no" || l == "off") return false;
      throw ConfigError("expected a boolean, got '" + s + "'");
    } else if constexpr (std::is_same_v<T, std::string>) {
      return s;
    } else {
      std::istringstream in(s);
      T v{};
      if (!(in >> v) || !(in >> std::ws).eof()) throw ConfigError("cannot parse '" + s + "'");
      if constexpr (std::is_unsigned_v<T>) {
        if (s.find('-') != std::string::npos) throw ConfigError("expected a nonnegative integer, got '" + s + "'");
      }
      return v;
    }
  }

  const pt::ptree* tree_;
  std::string name_;
  std::set<std::string> used_;
};

}  // namespace

void RunConfig::validate() const {
  if (window == 0) throw ConfigError("window must be a positive integer");
  model.validate();
  train.validate();
  friction.validate();
  if (ma_short == 0 || ma_short >= ma_long) throw ConfigError("moving-average windows need 0 < short < long");
  for (const auto& a : ablations) {
    if (!kVariants.count(a)) throw ConfigError("unknown ablation variant '" + a + "'");
  }
  for (const auto& b : benchmarks) {
    if (!kBenchmarks.count(b)) throw ConfigError("unknown benchmark '" + b + "'");
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("cannot parse config: ") + e.what());
  }
  static const std::set<std::string> sections{"run", "data", "model", "train", "backtest", "eval"};
  for (const auto& [name, _] : tree) {
    if (!sections.count(name)) throw ConfigError("unknown section [" + name + "] in " + path.string());
  }
  auto section = [&](const std::string& name) {
    auto child = tree.get_child_optional(name);
    return Section(child ? &*child : nullptr, name);
  };

  RunConfig c;
  const auto base = path.parent_path();

  Section run = section("run");
  std::string out_dir = c.out_dir.string(), source = "model";
  std::string ablations, benchmarks;
  run.read("pair", c.pair);
  run.read("window", c.window);
  run.read("seed", c.seed);
  run.read("out_dir", out_dir);
  run.read("ablations", ablations);
  run.read("benchmarks", benchmarks);
  run.check_unknown();
  c.out_dir = out_dir;
  if (!ablations.empty()) c.ablations = split_list(ablations);
  if (!benchmarks.empty()) c.benchmarks = split_list(benchmarks);

  Section data = section("data");
  std::string manifest;
  data.read("manifest", manifest);
  data.check_unknown();
  if (manifest.empty()) throw ConfigError("[data] manifest is required in " + path.string());
  c.manifest = std::filesystem::path(manifest).is_absolute() ? std::filesystem::path(manifest) : base / manifest;

  Section model = section("model");
  std::string kernels, qk = "grouped";
  model.read("heads", c.model.heads);
  model.read("factor", c.model.factor);
  model.read("embed_dim", c.model.embed_dim);
  model.read("kernels", kernels);
  model.read("se_reduction", c.model.se_reduction);
  model.read("dropout", c.model.dropout);
  model.read("use_msc", c.model.use_msc);
  model.read("use_se", c.model.use_se);
  model.read("use_dvs", c.model.use_dvs);
  model.read("trend_attention", c.model.trend_attention);
  model.read("qk_conv", qk);
  model.read("ffn_dropout", c.model.ffn_dropout);
  model.check_unknown();
  if (!kernels.empty()) {
    const auto parts = split_list(kernels);
    if (parts.size() != 3) throw ConfigError("[model] kernels must list three sizes");
    for (std::size_t i = 0; i < 3; ++i) {
      try {
        c.model.kernels[i] = std::stoul(parts[i]);
      } catch (const std::exception&) {
        throw ConfigError("[model] kernels: cannot parse '" + parts[i] + "'");
      }
    }
  }
  if (qk != "grouped" && qk != "full") throw ConfigError("[model] qk_conv must be 'grouped' or 'full'");
  c.model.qk_conv = qk == "grouped" ? QkConv::grouped : QkConv::full;

  Section train = section("train");
  double clip = 0.0;
  train.read("learning_rate", c.train.learning_rate);
  train.read("batch_size", c.train.batch_size);
  train.read("max_epochs", c.train.max_epochs);
  train.read("patience", c.train.patience);
  train.read("min_delta", c.train.min_delta);
  train.read("clip_norm", clip);
  train.check_unknown();
  if (clip > 0.0) c.train.clip_norm = clip;

  Section bt = section("backtest");
  bt.read("cost_bps", c.friction.cost_bps);
  bt.read("slippage_bps", c.friction.slippage_bps);
  bt.read("ma_short", c.ma_short);
  bt.read("ma_long", c.ma_long);
  bt.read("periods_per_year", c.periods_per_year);
  bt.check_unknown();

  Section ev = section("eval");
  std::size_t bandwidth = 0;
  std::string bandwidth_text, reduction = "mean";
  ev.read("hac_bandwidth", bandwidth_text);
  ev.read("regime_window", c.regimes.vol_window);
  ev.read("trend_window", c.regimes.trend_window);
  ev.read("expanding_thresholds", c.regimes.expanding);
  ev.read("importance_reduction", reduction);
  ev.read("forecast_source", source);
  ev.check_unknown();
  if (!bandwidth_text.empty() && bandwidth_text != "auto") {
    try {
      bandwidth = std::stoul(bandwidth_text);
    } catch (const std::exception&) {
      throw ConfigError("[eval] hac_bandwidth must be 'auto' or a nonnegative integer");
    }
    c.hac_bandwidth = bandwidth;
  }
  c.importance_reduction = parse_reduction(reduction);
  if (source == "model") c.forecast_source = ForecastSource::model;
  else if (source == "zero") c.forecast_source = ForecastSource::zero;
  else if (source == "perfect") c.forecast_source = ForecastSource::perfect;
  else throw ConfigError("[eval] forecast_source must be model, zero or perfect");

  c.model.window = c.window;
  c.train.seed = c.seed;
  c.validate();
  return c;
}

ModelConfig ablation_variant(const ModelConfig& base, const std::string& variant) {
  ModelConfig c = base;
  c.use_msc = c.use_se = c.use_dvs = c.trend_attention = true;
  if (variant == "no_msc") c.use_msc = false;
  else if (variant == "no_se") c.use_se = false;
  else if (variant == "no_dvs") c.use_dvs = false;
  else if (variant == "standard_attention") c.trend_attention = false;
  else if (variant != "full") throw ConfigError("unknown ablation variant '" + variant + "'");
  return c;
}

}  // namespace exformer
