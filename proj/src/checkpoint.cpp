#include <cmath>
#include <fstream>

#include "exformer/model.hpp"

namespace exformer {

namespace {

constexpr const char* kFormat = "exformer-checkpoint";
constexpr int kVersion = 1;

}  // namespace

nlohmann::json to_json(const ModelConfig& c) {
  return {
      {"features", c.features},
      {"window", c.window},
      {"heads", c.heads},
      {"factor", c.factor},
      {"embed_dim", c.embed_width()},
      {"kernels", {c.kernels[0], c.kernels[1], c.kernels[2]}},
      {"se_reduction", c.se_reduction},
      {"dropout", c.dropout},
      {"use_msc", c.use_msc},
      {"use_se", c.use_se},
      {"use_dvs", c.use_dvs},
      {"trend_attention", c.trend_attention},
      {"qk_conv", c.qk_conv == QkConv::grouped ? "grouped" : "full"},
      {"ffn_dropout", c.ffn_dropout},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.features = j.at("features").get<std::size_t>();
    c.window = j.at("window").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.factor = j.at("factor").get<std::size_t>();
    c.embed_dim = j.value("embed_dim", std::size_t{0});
    const auto k = j.at("kernels").get<std::vector<std::size_t>>();
    if (k.size() != 3) throw ConfigError("kernels must list three sizes");
    c.kernels = {k[0], k[1], k[2]};
    c.se_reduction = j.value("se_reduction", c.se_reduction);
    c.dropout = j.value("dropout", c.dropout);
    c.use_msc = j.value("use_msc", true);
    c.use_se = j.value("use_se", true);
    c.use_dvs = j.value("use_dvs", true);
    c.trend_attention = j.value("trend_attention", true);
    const std::string qk = j.value("qk_conv", std::string("grouped"));
    if (qk != "grouped" && qk != "full") throw ConfigError("qk_conv must be 'grouped' or 'full', got '" + qk + "'");
    c.qk_conv = qk == "grouped" ? QkConv::grouped : QkConv::full;
    c.ffn_dropout = j.value("ffn_dropout", false);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json arrays = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.params.entries()) {
    const Vector& v = t.values();
    arrays.push_back({{"name", name},
                      {"shape", t.shape()},
                      {"values", std::vector<double>(v.data(), v.data() + v.size())}});
  }
  const nlohmann::json doc = {{"format", kFormat},
                              {"version", kVersion},
                              {"seed", ckpt.seed},
                              {"config", to_json(ckpt.config)},
                              {"parameters", arrays}};
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << doc.dump(1) << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  if (doc.value("format", std::string()) != kFormat) throw DataError(path.string() + " is not a checkpoint");
  if (doc.value("version", 0) != kVersion) {
    throw DataError("unsupported checkpoint version in " + path.string());
  }

  Checkpoint ckpt;
  ckpt.config = model_config_from_json(doc.at("config"));
  ckpt.seed = doc.value("seed", std::uint64_t{0});
  try {
    for (const auto& entry : doc.at("parameters")) {
      Shape shape = entry.at("shape").get<Shape>();
      const auto values = entry.at("values").get<std::vector<double>>();
      if (values.size() != shape_size(shape)) {
        throw DataError("checkpoint array '" + entry.at("name").get<std::string>() + "' has inconsistent size");
      }
      Vector v = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
      if (!v.allFinite()) throw DataError("checkpoint array '" + entry.at("name").get<std::string>() + "' is not finite");
      ckpt.params.add(entry.at("name").get<std::string>(), Tensor::from(std::move(shape), std::move(v), true));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint " + path.string() + ": " + e.what());
  }

  // A store built from the header config must agree array for array.
  Rng probe(0);
  const ParameterStore expected = ParameterStore::initialize(ckpt.config, probe);
  if (expected.entries().size() != ckpt.params.entries().size()) {
    throw DimensionError("checkpoint " + path.string() + " does not match its config header");
  }
  for (const auto& [name, t] : expected.entries()) {
    if (!ckpt.params.contains(name) || ckpt.params.get(name).shape() != t.shape()) {
      throw DimensionError("checkpoint array '" + name + "' missing or misshapen");
    }
  }
  return ckpt;
}

}  // namespace exformer
