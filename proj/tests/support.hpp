#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "exformer/model.hpp"
#include "exformer/tensor.hpp"

namespace testing {

using exformer::Rng;
using exformer::Shape;
using exformer::Tensor;
using exformer::Vector;

inline Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(static_cast<Eigen::Index>(exformer::shape_size(shape)));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = u(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Central differences on every element of `leaves` against autodiff. The
// function must rebuild its graph from the current leaf values on each call.
inline GradCheck check_gradients(const std::function<Tensor()>& f, std::vector<Tensor> leaves, double eps = 1e-5) {
  for (auto& leaf : leaves) leaf.zero_grad();
  f().backward();
  std::vector<Vector> analytic;
  for (const auto& leaf : leaves) analytic.push_back(leaf.grad());

  GradCheck out;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    Vector& v = leaves[l].mutable_values();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + eps;
      const double up = f().item();
      v[i] = orig - eps;
      const double down = f().item();
      v[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[l][i];
      const double scale = std::max({std::abs(a), std::abs(numeric), 1e-6});
      out.max_rel_error = std::max(out.max_rel_error, std::abs(a - numeric) / scale);
      ++out.checked;
    }
  }
  return out;
}

// Scalar probe sum(out * w) with fixed random weights, so every output element
// contributes a distinct gradient.
inline Tensor probe(const Tensor& out, std::uint64_t seed = 99) {
  Rng rng(seed);
  const Tensor w = random_tensor(out.shape(), rng, false);
  return exformer::sum(out * w);
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("exformer_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Builds trend-attention parameters whose Q/K convolutions act as the standard
// projections (only the center tap is nonzero) and whose fusion collapses the
// three identical branches into the standard output projection.
inline exformer::ParameterStore trend_from_standard(const exformer::ParameterStore& std_p,
                                                   const exformer::ModelConfig& c) {
  using namespace exformer;
  const std::size_t d = c.model_dim();
  const std::size_t in = c.qk_conv == QkConv::grouped ? c.factor : d;
  ParameterStore out;
  for (std::size_t j = 0; j < 3; ++j) {
    const std::size_t k = c.kernels[j];
    for (const auto& [role, src] : {std::pair{"attn.q", "attn.query"}, std::pair{"attn.k", "attn.key"}}) {
      const Tensor& w = std_p.get(std::string(src) + ".weight");
      Vector kern = Vector::Zero(static_cast<Eigen::Index>(d * in * k));
      for (std::size_t o = 0; o < d; ++o) {
        const std::size_t first = c.qk_conv == QkConv::grouped ? (o / c.factor) * c.factor : 0;
        for (std::size_t i = 0; i < in; ++i) {
          kern[static_cast<Eigen::Index>((o * in + i) * k + (k - 1) / 2)] = w.at({first + i, o});
        }
      }
      out.add(role + std::to_string(j) + ".weight", Tensor::from({d, in, k}, kern, true));
      out.add(role + std::to_string(j) + ".bias", Tensor::from({d}, std_p.get(std::string(src) + ".bias").values(), true));
    }
  }
  out.add("attn.value.weight", std_p.get("attn.value.weight").detach());
  out.add("attn.value.bias", std_p.get("attn.value.bias").detach());
  const Tensor& wo = std_p.get("attn.out.weight");
  Vector fuse(static_cast<Eigen::Index>(3 * d * d));
  // Split W_o into three blocks that sum back to it.
  for (std::size_t blk = 0; blk < 3; ++blk) {
    const double share = blk == 0 ? 0.5 : (blk == 1 ? 0.3 : 0.2);
    fuse.segment(static_cast<Eigen::Index>(blk * d * d), static_cast<Eigen::Index>(d * d)) = share * wo.values();
  }
  out.add("attn.fuse.weight", Tensor::from({3 * d, d}, fuse, true));
  out.add("attn.fuse.bias", std_p.get("attn.out.bias").detach());
  return out;
}

}  // namespace testing
