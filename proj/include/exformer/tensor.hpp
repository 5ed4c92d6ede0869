#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "exformer/errors.hpp"

// Minimal define-by-run reverse-mode autodiff over dense row-major float64
// arrays. Every op builds a node holding its value and a closure that pushes
// the output gradient into its parents; Tensor::backward() replays those
// closures in reverse topological order.

namespace exformer {

using Shape = std::vector<std::size_t>;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Rng = std::mt19937_64;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  Vector value;
  Vector grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Vector& grad_out)> backward;

  void accumulate(const Vector& g);
};

}  // namespace detail

enum class Mode { train, eval };

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, Vector values, bool requires_grad = false);
  static Tensor from(Shape shape, std::initializer_list<double> values,
                     bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  // Negative axes count from the end.
  std::size_t dim(int axis) const;
  std::size_t size() const;

  const Vector& values() const;
  // Direct mutation is reserved for leaf tensors (parameters, inputs).
  Vector& mutable_values();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  bool has_grad() const;
  // Gradient, or zeros of matching size when nothing has accumulated yet.
  Vector grad() const;
  void zero_grad();
  std::uint64_t id() const;

  // Populates grads of every requires-grad ancestor. The tensor must hold a
  // single element.
  void backward() const;

  // Same values, cut from the graph.
  Tensor detach() const;

  // Internal: used by op implementations.
  static Tensor make_result(Shape shape, Vector value, std::vector<Tensor> inputs,
                            std::function<void(const Vector&)> backward_fn);
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
// Batched product [B,m,k] x [B,k,n] -> [B,m,n].
Tensor bmm(const Tensor& a, const Tensor& b);
// Swaps the last two axes.
Tensor transpose(const Tensor& x);
// x[..., in] * w[in, out] + b[out]; leading axes are treated as rows.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor linear(const Tensor& x, const Tensor& w);

// Same-padded 1D cross-correlation. x is [C_in, T] or [B, C_in, T]; kernels are
// [C_out, C_in / groups, k]. For even k the smaller pad goes on the left.
Tensor conv1d_same(const Tensor& x, const Tensor& kernels, std::size_t groups = 1);

// Elementwise, numpy-style broadcasting for binary ops.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double c);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor square(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double c, const Tensor& x) { return scale(x, c); }

// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, int axis = -1);

// [T, D] -> [D] or [B, T, D] -> [B, D].
Tensor mean_pool_time(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Shape manipulation.
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);
// Drops `axis` after taking a single index along it.
Tensor select(const Tensor& x, int axis, std::size_t index);
Tensor concat(const std::vector<Tensor>& parts, int axis);

// Inverted dropout: in train mode each element is zeroed with probability p
// and survivors are scaled by 1/(1-p). Eval mode (or p == 0) is identity.
Tensor dropout(const Tensor& x, double p, Mode mode, Rng& rng);

struct GruParams {
  Tensor w_z, u_z, b_z;  // update gate
  Tensor w_r, u_r, b_r;  // reset gate
  Tensor w_h, u_h, b_h;  // candidate
};

// z = σ(x W_z + h U_z + b_z), r = σ(x W_r + h U_r + b_r),
// h̃ = tanh(x W_h + (r ⊙ h) U_h + b_h), h' = (1 - z) ⊙ h + z ⊙ h̃.
// x is [D_in] or [B, D_in]; h_prev matches x's batch layout with width D.
Tensor gru_cell(const Tensor& x, const Tensor& h_prev, const GruParams& p);

}  // namespace exformer
