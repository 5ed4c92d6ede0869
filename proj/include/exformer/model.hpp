#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "exformer/tensor.hpp"

namespace exformer {

// How the query/key convolutions mix channels: within each head's block only,
// or across all D channels.
enum class QkConv { grouped, full };

struct ModelConfig {
  std::size_t features = 1;  // F
  std::size_t window = 15;   // T
  std::size_t heads = 1;     // H
  std::size_t factor = 16;   // per-head width d; model width D = H * d
  std::size_t embed_dim = 0; // per-variable embedding width; 0 means `factor`
  std::array<std::size_t, 3> kernels{3, 5, 7};
  std::size_t se_reduction = 4;
  double dropout = 0.1;
  bool use_msc = true;
  bool use_se = true;
  bool use_dvs = true;
  bool trend_attention = true;
  QkConv qk_conv = QkConv::grouped;
  bool ffn_dropout = false;

  std::size_t model_dim() const { return heads * factor; }
  std::size_t embed_width() const { return embed_dim == 0 ? factor : embed_dim; }
  std::size_t ffn_dim() const { return 2 * model_dim(); }
  std::size_t se_hidden() const { return model_dim() / se_reduction; }

  // Enforces the hyperparameter ranges (kernel ordering in [2, 9], dropout in
  // [0, 0.5], D / r >= 1).
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Named learnable arrays in a fixed enumeration order.
class ParameterStore {
 public:
  ParameterStore() = default;

  // Allocates exactly the arrays used by the configured variant. Weights are
  // uniform in ±sqrt(1 / fan_in), biases zero.
  static ParameterStore initialize(const ModelConfig& config, Rng& rng);

  void add(std::string name, Tensor value);
  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  std::size_t count() const;
  void zero_grad();
  // Independent copy of every value.
  ParameterStore clone() const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

// Learnable scalar count implied by the config.
std::size_t parameter_count(const ModelConfig& config);

struct ForwardTrace {
  Tensor prediction;  // [B], standardized-return units
  Tensor weights;     // ω, [B, T, F]
};

struct DvsOutput {
  Tensor embeddings;  // [B, T, F * D_e]
  Tensor weights;     // [B, T, F]
};

DvsOutput dvs_forward(const Tensor& x, const ParameterStore& p, const ModelConfig& c);
Tensor msc_forward(const Tensor& e, const ParameterStore& p, const ModelConfig& c, Mode mode, Rng& rng);
Tensor se_forward(const Tensor& h, const ParameterStore& p, const ModelConfig& c);
// `attention`, when given, receives every softmax map ([B, T, T] per branch and head).
Tensor trend_attention_forward(const Tensor& h, const ParameterStore& p, const ModelConfig& c,
                               std::vector<Tensor>* attention = nullptr);
Tensor standard_attention_forward(const Tensor& h, const ParameterStore& p, const ModelConfig& c,
                                  std::vector<Tensor>* attention = nullptr);
Tensor decoder_forward(const Tensor& h, const ParameterStore& p, const ModelConfig& c, Mode mode, Rng& rng);

ForwardTrace model_forward(const Tensor& x, const ParameterStore& p, const ModelConfig& c, Mode mode, Rng& rng);

struct Checkpoint {
  ModelConfig config;
  ParameterStore params;
  std::uint64_t seed = 0;
};

// JSON document: format tag, version, config header, then every array with
// name, shape and values. Doubles round-trip exactly.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace exformer
