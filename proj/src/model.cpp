#include "exformer/model.hpp"

#include <cmath>
#include <string>

namespace exformer {

namespace {

std::string branch_name(const char* prefix, std::size_t j, const char* suffix) {
  return std::string(prefix) + std::to_string(j) + suffix;
}

Tensor uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Vector v(static_cast<Eigen::Index>(shape_size(shape)));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor zeros(Shape shape) { return Tensor::zeros(std::move(shape), true); }

// Bias of a channels-first conv output, broadcast over time.
Tensor channel_bias(const Tensor& b) { return reshape(b, {b.size(), 1}); }

Tensor multi_head(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, std::size_t width,
                  std::vector<Tensor>* attention) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(width));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = heads == 1 ? q : slice(q, -1, h * width, width);
    const Tensor kh = heads == 1 ? k : slice(k, -1, h * width, width);
    const Tensor vh = heads == 1 ? v : slice(v, -1, h * width, width);
    const Tensor a = softmax(scale(bmm(qh, transpose(kh)), inv_sqrt), -1);
    if (attention) attention->push_back(a);
    outs.push_back(bmm(a, vh));
  }
  return heads == 1 ? outs.front() : concat(outs, -1);
}

void check_input(const Tensor& h, std::size_t width, const char* stage) {
  if (h.rank() != 3 || h.dim(-1) != width) {
    throw DimensionError(std::string(stage) + " expects [B,T," + std::to_string(width) + "], got " +
                         shape_string(h.shape()));
  }
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (features == 0) fail("features must be >= 1");
  if (window == 0) fail("window must be >= 1");
  if (heads == 0 || factor == 0) fail("heads and factor must be >= 1");
  if (!(2 <= kernels[0] && kernels[0] < kernels[1] && kernels[1] < kernels[2] && kernels[2] <= 9)) {
    fail("kernel sizes must satisfy 2 <= k1 < k2 < k3 <= 9");
  }
  if (se_reduction == 0 || se_hidden() < 1) fail("D / se_reduction must be >= 1");
  if (!(dropout >= 0.0 && dropout <= 0.5)) fail("dropout must lie in [0, 0.5]");
}

// ---------------------------------------------------------------------------
// ParameterStore

void ParameterStore::add(std::string name, Tensor value) {
  if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
  index_[name] = entries_.size();
  entries_.emplace_back(std::move(name), std::move(value));
}

bool ParameterStore::contains(const std::string& name) const { return index_.count(name) != 0; }

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DimensionError("parameter '" + name + "' missing from store");
  return entries_[it->second].second;
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw DimensionError("parameter '" + name + "' missing from store");
  return entries_[it->second].second;
}

std::size_t ParameterStore::count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

ParameterStore ParameterStore::clone() const {
  ParameterStore out;
  for (const auto& [name, t] : entries_) out.add(name, Tensor::from(t.shape(), t.values(), true));
  return out;
}

ParameterStore ParameterStore::initialize(const ModelConfig& c, Rng& rng) {
  const std::size_t f = c.features;
  const std::size_t de = c.embed_width();
  const std::size_t ch = f * de;
  const std::size_t d = c.model_dim();
  ParameterStore p;

  // Each variable's embedding maps a scalar, so fan_in is 1.
  p.add("dvs.embed.weight", uniform({f, de}, 1, rng));
  p.add("dvs.embed.bias", zeros({f, de}));
  if (c.use_dvs) {
    p.add("dvs.score.weight", uniform({de, 1}, de, rng));
    p.add("dvs.score.bias", zeros({1}));
  }

  if (c.use_msc) {
    for (std::size_t j = 0; j < 3; ++j) {
      p.add(branch_name("msc.conv", j, ".weight"), uniform({d, ch, c.kernels[j]}, ch * c.kernels[j], rng));
      p.add(branch_name("msc.conv", j, ".bias"), zeros({d}));
    }
    p.add("msc.proj.weight", uniform({3 * d, d}, 3 * d, rng));
    p.add("msc.proj.bias", zeros({d}));
  } else {
    p.add("msc.linear.weight", uniform({ch, d}, ch, rng));
    p.add("msc.linear.bias", zeros({d}));
  }

  if (c.use_se) {
    p.add("se.w1", uniform({d, c.se_hidden()}, d, rng));
    p.add("se.w2", uniform({c.se_hidden(), d}, c.se_hidden(), rng));
  }

  if (c.trend_attention) {
    const std::size_t in_per_group = c.qk_conv == QkConv::grouped ? c.factor : d;
    for (std::size_t j = 0; j < 3; ++j) {
      for (const char* role : {"attn.q", "attn.k"}) {
        p.add(branch_name(role, j, ".weight"), uniform({d, in_per_group, c.kernels[j]}, in_per_group * c.kernels[j], rng));
        p.add(branch_name(role, j, ".bias"), zeros({d}));
      }
    }
    p.add("attn.value.weight", uniform({d, d}, d, rng));
    p.add("attn.value.bias", zeros({d}));
    p.add("attn.fuse.weight", uniform({3 * d, d}, 3 * d, rng));
    p.add("attn.fuse.bias", zeros({d}));
  } else {
    for (const char* role : {"attn.query", "attn.key", "attn.value", "attn.out"}) {
      p.add(std::string(role) + ".weight", uniform({d, d}, d, rng));
      p.add(std::string(role) + ".bias", zeros({d}));
    }
  }

  p.add("ffn.w1", uniform({d, c.ffn_dim()}, d, rng));
  p.add("ffn.b1", zeros({c.ffn_dim()}));
  p.add("ffn.w2", uniform({c.ffn_dim(), d}, c.ffn_dim(), rng));
  p.add("ffn.b2", zeros({d}));

  for (const char* gate : {"z", "r", "h"}) {
    p.add(std::string("gru.w_") + gate, uniform({d, d}, d, rng));
    p.add(std::string("gru.u_") + gate, uniform({d, d}, d, rng));
    p.add(std::string("gru.b_") + gate, zeros({d}));
  }

  p.add("head.weight", uniform({d, 1}, d, rng));
  p.add("head.bias", zeros({1}));
  return p;
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t f = c.features;
  const std::size_t de = c.embed_width();
  const std::size_t ch = f * de;
  const std::size_t d = c.model_dim();
  const std::size_t ksum = c.kernels[0] + c.kernels[1] + c.kernels[2];
  std::size_t n = 2 * f * de;
  if (c.use_dvs) n += de + 1;
  n += c.use_msc ? d * ch * ksum + 3 * d + 3 * d * d + d : ch * d + d;
  if (c.use_se) n += 2 * d * c.se_hidden();
  if (c.trend_attention) {
    const std::size_t in_per_group = c.qk_conv == QkConv::grouped ? c.factor : d;
    n += 2 * (d * in_per_group * ksum + 3 * d);
    n += d * d + d + 3 * d * d + d;
  } else {
    n += 4 * (d * d + d);
  }
  n += 4 * d * d + 3 * d;  // FFN, width 2D
  n += 3 * (2 * d * d + d);  // GRU
  n += d + 1;
  return n;
}

// ---------------------------------------------------------------------------
// Forward stages

DvsOutput dvs_forward(const Tensor& x, const ParameterStore& p, const ModelConfig& c) {
  if (x.rank() != 3 || x.dim(2) != c.features) {
    throw DimensionError("selector expects [B,T," + std::to_string(c.features) + "], got " + shape_string(x.shape()));
  }
  const std::size_t b = x.dim(0), t = x.dim(1), f = c.features, de = c.embed_width();
  const Tensor e = reshape(x, {b, t, f, 1}) * p.get("dvs.embed.weight") + p.get("dvs.embed.bias");
  Tensor weights;
  Tensor weighted;
  if (c.use_dvs) {
    const Tensor scores = reshape(linear(e, p.get("dvs.score.weight"), p.get("dvs.score.bias")), {b, t, f});
    weights = softmax(scores, -1);
    weighted = e * reshape(weights, {b, t, f, 1});
  } else {
    weights = Tensor::full({b, t, f}, 1.0 / static_cast<double>(f));
    weighted = scale(e, 1.0 / static_cast<double>(f));
  }
  return {reshape(weighted, {b, t, f * de}), weights};
}

Tensor msc_forward(const Tensor& e, const ParameterStore& p, const ModelConfig& c, Mode mode, Rng& rng) {
  check_input(e, c.features * c.embed_width(), "multi-scale convolution");
  if (!c.use_msc) return linear(e, p.get("msc.linear.weight"), p.get("msc.linear.bias"));
  const Tensor channels_first = transpose(e);
  std::vector<Tensor> branches;
  for (std::size_t j = 0; j < 3; ++j) {
    const Tensor conv = conv1d_same(channels_first, p.get(branch_name("msc.conv", j, ".weight")));
    branches.push_back(relu(conv + channel_bias(p.get(branch_name("msc.conv", j, ".bias")))));
  }
  const Tensor h = dropout(concat(branches, 1), c.dropout, mode, rng);
  return linear(transpose(h), p.get("msc.proj.weight"), p.get("msc.proj.bias"));
}

Tensor se_forward(const Tensor& h, const ParameterStore& p, const ModelConfig& c) {
  if (!c.use_se) return h;
  check_input(h, c.model_dim(), "squeeze-excitation");
  const Tensor z = mean_pool_time(h);
  const Tensor u = sigmoid(linear(relu(linear(z, p.get("se.w1"))), p.get("se.w2")));
  return h * reshape(u, {h.dim(0), 1, c.model_dim()});
}

Tensor trend_attention_forward(const Tensor& h, const ParameterStore& p, const ModelConfig& c,
                               std::vector<Tensor>* attention) {
  check_input(h, c.model_dim(), "trend attention");
  const std::size_t groups = c.qk_conv == QkConv::grouped ? c.heads : 1;
  const Tensor channels_first = transpose(h);
  const Tensor v = linear(h, p.get("attn.value.weight"), p.get("attn.value.bias"));
  std::vector<Tensor> branches;
  for (std::size_t j = 0; j < 3; ++j) {
    auto project = [&](const char* role) {
      const Tensor conv = conv1d_same(channels_first, p.get(branch_name(role, j, ".weight")), groups);
      return transpose(conv + channel_bias(p.get(branch_name(role, j, ".bias"))));
    };
    branches.push_back(multi_head(project("attn.q"), project("attn.k"), v, c.heads, c.factor, attention));
  }
  return linear(concat(branches, -1), p.get("attn.fuse.weight"), p.get("attn.fuse.bias"));
}

Tensor standard_attention_forward(const Tensor& h, const ParameterStore& p, const ModelConfig& c,
                                  std::vector<Tensor>* attention) {
  check_input(h, c.model_dim(), "attention");
  const Tensor q = linear(h, p.get("attn.query.weight"), p.get("attn.query.bias"));
  const Tensor k = linear(h, p.get("attn.key.weight"), p.get("attn.key.bias"));
  const Tensor v = linear(h, p.get("attn.value.weight"), p.get("attn.value.bias"));
  return linear(multi_head(q, k, v, c.heads, c.factor, attention), p.get("attn.out.weight"), p.get("attn.out.bias"));
}

Tensor decoder_forward(const Tensor& h, const ParameterStore& p, const ModelConfig& c, Mode mode, Rng& rng) {
  check_input(h, c.model_dim(), "decoder");
  Tensor f = relu(linear(h, p.get("ffn.w1"), p.get("ffn.b1")));
  if (c.ffn_dropout) f = dropout(f, c.dropout, mode, rng);
  f = linear(f, p.get("ffn.w2"), p.get("ffn.b2"));

  const GruParams gru{p.get("gru.w_z"), p.get("gru.u_z"), p.get("gru.b_z"),
                      p.get("gru.w_r"), p.get("gru.u_r"), p.get("gru.b_r"),
                      p.get("gru.w_h"), p.get("gru.u_h"), p.get("gru.b_h")};
  const std::size_t batch = h.dim(0);
  Tensor state = Tensor::zeros({batch, c.model_dim()});
  for (std::size_t t = 0; t < h.dim(1); ++t) state = gru_cell(select(f, 1, t), state, gru);
  return reshape(linear(state, p.get("head.weight"), p.get("head.bias")), {batch});
}

ForwardTrace model_forward(const Tensor& x, const ParameterStore& p, const ModelConfig& c, Mode mode, Rng& rng) {
  if (x.rank() != 3 || x.dim(1) != c.window) {
    throw DimensionError("model expects [B," + std::to_string(c.window) + "," + std::to_string(c.features) +
                         "] windows, got " + shape_string(x.shape()));
  }
  const DvsOutput selected = dvs_forward(x, p, c);
  const Tensor features = se_forward(msc_forward(selected.embeddings, p, c, mode, rng), p, c);
  Tensor attended = c.trend_attention ? trend_attention_forward(features, p, c) : standard_attention_forward(features, p, c);
  attended = dropout(attended, c.dropout, mode, rng);
  return {decoder_forward(attended, p, c, mode, rng), selected.weights};
}

}  // namespace exformer
