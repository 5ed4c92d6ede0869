#include "exformer/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace exformer {

namespace {

std::atomic<std::uint64_t> next_node_id{1};

using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

std::size_t prod(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t p = 1;
  for (std::size_t i = from; i < to; ++i) p *= s[i];
  return p;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast " + shape_string(a) + " with " + shape_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Offset into `in` for every linear index of `out` under broadcasting.
std::vector<std::size_t> broadcast_offsets(const Shape& out, const Shape& in) {
  const std::size_t rank = out.size();
  const std::size_t lead = rank - in.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = rank; i-- > lead;) {
    const std::size_t d = in[i - lead];
    stride[i] = d == 1 ? 0 : s;
    s *= d;
  }
  const std::size_t n = shape_size(out);
  std::vector<std::size_t> offsets(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t off = 0;
  for (std::size_t k = 0; k < n; ++k) {
    offsets[k] = off;
    for (std::size_t i = rank; i-- > 0;) {
      ++counter[i];
      off += stride[i];
      if (counter[i] < out[i]) break;
      off -= stride[i] * counter[i];
      counter[i] = 0;
    }
  }
  return offsets;
}

template <typename F, typename DF>
Tensor unary(const Tensor& x, F f, DF df) {
  const Vector& xv = x.values();
  Vector y = xv.unaryExpr(f);
  auto xn = x.node();
  return Tensor::make_result(x.shape(), y, {x}, [xn, df](const Vector& g) {
    if (!xn->requires_grad) return;
    Vector gx(g.size());
    for (Eigen::Index i = 0; i < g.size(); ++i) gx[i] = g[i] * df(i);
    xn->accumulate(gx);
  });
}

enum class BinaryKind { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
  const Vector& av = a.values();
  const Vector& bv = b.values();
  auto an = a.node();
  auto bn = b.node();
  if (a.shape() == b.shape()) {
    Vector y;
    switch (kind) {
      case BinaryKind::add: y = av + bv; break;
      case BinaryKind::sub: y = av - bv; break;
      case BinaryKind::mul: y = av.cwiseProduct(bv); break;
    }
    return Tensor::make_result(a.shape(), std::move(y), {a, b}, [an, bn, kind](const Vector& g) {
      if (an->requires_grad) {
        an->accumulate(kind == BinaryKind::mul ? Vector(g.cwiseProduct(bn->value)) : g);
      }
      if (bn->requires_grad) {
        if (kind == BinaryKind::mul) bn->accumulate(g.cwiseProduct(an->value));
        else if (kind == BinaryKind::sub) bn->accumulate(-g);
        else bn->accumulate(g);
      }
    });
  }
  Shape out = broadcast_shape(a.shape(), b.shape());
  auto ao = std::make_shared<std::vector<std::size_t>>(broadcast_offsets(out, a.shape()));
  auto bo = std::make_shared<std::vector<std::size_t>>(broadcast_offsets(out, b.shape()));
  const std::size_t n = shape_size(out);
  Vector y(static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < n; ++k) {
    const double x1 = av[(*ao)[k]];
    const double x2 = bv[(*bo)[k]];
    y[k] = kind == BinaryKind::add ? x1 + x2 : kind == BinaryKind::sub ? x1 - x2 : x1 * x2;
  }
  return Tensor::make_result(out, std::move(y), {a, b}, [an, bn, ao, bo, kind, n](const Vector& g) {
    if (an->requires_grad) {
      Vector ga = Vector::Zero(an->value.size());
      for (std::size_t k = 0; k < n; ++k) {
        ga[(*ao)[k]] += kind == BinaryKind::mul ? g[k] * bn->value[(*bo)[k]] : g[k];
      }
      an->accumulate(ga);
    }
    if (bn->requires_grad) {
      Vector gb = Vector::Zero(bn->value.size());
      for (std::size_t k = 0; k < n; ++k) {
        const double d = kind == BinaryKind::mul ? an->value[(*ao)[k]]
                         : kind == BinaryKind::sub ? -1.0
                                                   : 1.0;
        gb[(*bo)[k]] += g[k] * d;
      }
      bn->accumulate(gb);
    }
  });
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

void detail::Node::accumulate(const Vector& g) {
  if (grad.size() == 0) grad = g;
  else grad += g;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::from(Shape shape, Vector values, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("zero-sized dimension in " + shape_string(shape));
  }
  if (static_cast<std::size_t>(values.size()) != shape_size(shape)) {
    throw DimensionError("shape " + shape_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values, bool requires_grad) {
  Vector v(static_cast<Eigen::Index>(values.size()));
  std::copy(values.begin(), values.end(), v.data());
  return from(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = static_cast<Eigen::Index>(shape_size(shape));
  return from(std::move(shape), Vector::Constant(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from(Shape{}, Vector::Constant(1, value), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(int axis) const { return shape()[normalize_axis(axis, rank())]; }

std::size_t Tensor::size() const { return static_cast<std::size_t>(node_->value.size()); }

const Vector& Tensor::values() const { return node_->value; }

Vector& Tensor::mutable_values() { return node_->value; }

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw DimensionError("index rank mismatch");
  std::size_t off = 0;
  std::size_t i = 0;
  for (std::size_t idx : index) {
    if (idx >= shape()[i]) throw DimensionError("index out of range");
    off = off * shape()[i] + idx;
    ++i;
  }
  return node_->value[static_cast<Eigen::Index>(off)];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

bool Tensor::has_grad() const { return node_->grad.size() != 0; }

Vector Tensor::grad() const {
  if (node_->grad.size() == 0) return Vector::Zero(node_->value.size());
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.resize(0); }

std::uint64_t Tensor::id() const { return node_->id; }

Tensor Tensor::detach() const { return from(shape(), values(), false); }

Tensor Tensor::make_result(Shape shape, Vector value, std::vector<Tensor> inputs,
                           std::function<void(const Vector&)> backward_fn) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (auto& t : inputs) node->parents.push_back(t.node_);
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void Tensor::backward() const {
  if (size() != 1) {
    throw DimensionError("backward() needs a scalar loss, got shape " + shape_string(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node*> order;
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  // Interior gradients are rebuilt on every call; leaves keep accumulating.
  for (auto* n : order) {
    if (n->backward) n->grad.resize(0);
  }
  node_->accumulate(Vector::Ones(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(n->grad);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul shape mismatch: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.shape()[0]);
  const auto k = static_cast<Eigen::Index>(a.shape()[1]);
  const auto n = static_cast<Eigen::Index>(b.shape()[1]);
  Vector y(m * n);
  RowMap(y.data(), m, n).noalias() =
      ConstRowMap(a.values().data(), m, k) * ConstRowMap(b.values().data(), k, n);
  auto an = a.node();
  auto bn = b.node();
  return Tensor::make_result({a.shape()[0], b.shape()[1]}, std::move(y), {a, b},
                             [an, bn, m, k, n](const Vector& g) {
                               ConstRowMap gm(g.data(), m, n);
                               if (an->requires_grad) {
                                 Vector ga(m * k);
                                 RowMap(ga.data(), m, k).noalias() =
                                     gm * ConstRowMap(bn->value.data(), k, n).transpose();
                                 an->accumulate(ga);
                               }
                               if (bn->requires_grad) {
                                 Vector gb(k * n);
                                 RowMap(gb.data(), k, n).noalias() =
                                     ConstRowMap(an->value.data(), m, k).transpose() * gm;
                                 bn->accumulate(gb);
                               }
                             });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() == 2 && b.rank() == 2) return matmul(a, b);
  if (a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] ||
      a.shape()[2] != b.shape()[1]) {
    throw DimensionError("bmm shape mismatch: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const std::size_t batch = a.shape()[0];
  const auto m = static_cast<Eigen::Index>(a.shape()[1]);
  const auto k = static_cast<Eigen::Index>(a.shape()[2]);
  const auto n = static_cast<Eigen::Index>(b.shape()[2]);
  Vector y(static_cast<Eigen::Index>(batch) * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    RowMap(y.data() + i * m * n, m, n).noalias() =
        ConstRowMap(a.values().data() + i * m * k, m, k) *
        ConstRowMap(b.values().data() + i * k * n, k, n);
  }
  auto an = a.node();
  auto bn = b.node();
  return Tensor::make_result(
      {batch, a.shape()[1], b.shape()[2]}, std::move(y), {a, b},
      [an, bn, batch, m, k, n](const Vector& g) {
        Vector ga, gb;
        if (an->requires_grad) ga.resize(an->value.size());
        if (bn->requires_grad) gb.resize(bn->value.size());
        for (std::size_t i = 0; i < batch; ++i) {
          ConstRowMap gm(g.data() + i * m * n, m, n);
          if (an->requires_grad) {
            RowMap(ga.data() + i * m * k, m, k).noalias() =
                gm * ConstRowMap(bn->value.data() + i * k * n, k, n).transpose();
          }
          if (bn->requires_grad) {
            RowMap(gb.data() + i * k * n, k, n).noalias() =
                ConstRowMap(an->value.data() + i * m * k, m, k).transpose() * gm;
          }
        }
        if (an->requires_grad) an->accumulate(ga);
        if (bn->requires_grad) bn->accumulate(gb);
      });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose needs rank >= 2, got " + shape_string(x.shape()));
  Shape out = x.shape();
  const std::size_t r = out.size();
  std::swap(out[r - 1], out[r - 2]);
  const auto rows = static_cast<Eigen::Index>(x.shape()[r - 2]);
  const auto cols = static_cast<Eigen::Index>(x.shape()[r - 1]);
  const std::size_t batch = prod(x.shape(), 0, r - 2);
  Vector y(x.values().size());
  for (std::size_t i = 0; i < batch; ++i) {
    RowMap(y.data() + i * rows * cols, cols, rows) =
        ConstRowMap(x.values().data() + i * rows * cols, rows, cols).transpose();
  }
  auto xn = x.node();
  return Tensor::make_result(std::move(out), std::move(y), {x},
                             [xn, batch, rows, cols](const Vector& g) {
                               if (!xn->requires_grad) return;
                               Vector gx(g.size());
                               for (std::size_t i = 0; i < batch; ++i) {
                                 RowMap(gx.data() + i * rows * cols, rows, cols) =
                                     ConstRowMap(g.data() + i * rows * cols, cols, rows).transpose();
                               }
                               xn->accumulate(gx);
                             });
}

Tensor linear(const Tensor& x, const Tensor& w) {
  if (w.rank() != 2 || x.rank() == 0 || x.shape().back() != w.shape()[0]) {
    throw DimensionError("linear shape mismatch: " + shape_string(x.shape()) + " x " +
                         shape_string(w.shape()));
  }
  const std::size_t in = w.shape()[0];
  const std::size_t rows = x.size() / in;
  Tensor y = matmul(reshape(x, {rows, in}), w);
  Shape out = x.shape();
  out.back() = w.shape()[1];
  return reshape(y, std::move(out));
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add(linear(x, w), b); }

Tensor conv1d_same(const Tensor& x, const Tensor& kernels, std::size_t groups) {
  const bool batched = x.rank() == 3;
  if ((x.rank() != 2 && !batched) || kernels.rank() != 3) {
    throw DimensionError("conv1d_same expects x [C_in,T] or [B,C_in,T] and kernels [C_out,C_in/g,k]; got " +
                         shape_string(x.shape()) + " and " + shape_string(kernels.shape()));
  }
  const std::size_t batch = batched ? x.shape()[0] : 1;
  const std::size_t c_in = x.dim(-2);
  const std::size_t steps = x.dim(-1);
  const std::size_t c_out = kernels.shape()[0];
  const std::size_t cin_g = kernels.shape()[1];
  const std::size_t k = kernels.shape()[2];
  if (groups == 0 || c_in % groups != 0 || c_out % groups != 0 || cin_g * groups != c_in) {
    throw DimensionError("conv1d_same channel mismatch: input " + shape_string(x.shape()) +
                         ", kernels " + shape_string(kernels.shape()) + ", groups " +
                         std::to_string(groups));
  }
  const std::size_t cout_g = c_out / groups;
  const std::size_t pad_left = (k - 1) / 2;
  const auto rows = static_cast<Eigen::Index>(batch * steps);
  const auto width = static_cast<Eigen::Index>(cin_g * k);

  // One im2col buffer per group: rows are (b, t), columns (c', j).
  auto cols = std::make_shared<std::vector<RowMatrix>>(groups);
  const Vector& xv = x.values();
  for (std::size_t g = 0; g < groups; ++g) {
    RowMatrix& col = (*cols)[g];
    col.setZero(rows, width);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < cin_g; ++c) {
        const double* src = xv.data() + (b * c_in + g * cin_g + c) * steps;
        for (std::size_t t = 0; t < steps; ++t) {
          double* dst = col.data() + (b * steps + t) * width + c * k;
          for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(pad_left);
            if (s >= 0 && s < static_cast<std::ptrdiff_t>(steps)) dst[j] = src[s];
          }
        }
      }
    }
  }

  Vector y(static_cast<Eigen::Index>(batch * c_out * steps));
  const double* wv = kernels.values().data();
  for (std::size_t g = 0; g < groups; ++g) {
    ConstRowMap wg(wv + g * cout_g * cin_g * k, static_cast<Eigen::Index>(cout_g), width);
    RowMatrix yg = (*cols)[g] * wg.transpose();  // [B*T, cout_g]
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t o = 0; o < cout_g; ++o) {
        double* dst = y.data() + (b * c_out + g * cout_g + o) * steps;
        for (std::size_t t = 0; t < steps; ++t) dst[t] = yg(static_cast<Eigen::Index>(b * steps + t), static_cast<Eigen::Index>(o));
      }
    }
  }

  Shape out = batched ? Shape{batch, c_out, steps} : Shape{c_out, steps};
  auto xn = x.node();
  auto wn = kernels.node();
  return Tensor::make_result(
      std::move(out), std::move(y), {x, kernels},
      [xn, wn, cols, batch, c_in, steps, c_out, cin_g, cout_g, k, groups, pad_left, rows,
       width](const Vector& gout) {
        Vector gx, gw;
        if (xn->requires_grad) gx = Vector::Zero(xn->value.size());
        if (wn->requires_grad) gw = Vector::Zero(wn->value.size());
        for (std::size_t g = 0; g < groups; ++g) {
          RowMatrix gy(rows, static_cast<Eigen::Index>(cout_g));
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t o = 0; o < cout_g; ++o) {
              const double* src = gout.data() + (b * c_out + g * cout_g + o) * steps;
              for (std::size_t t = 0; t < steps; ++t) gy(static_cast<Eigen::Index>(b * steps + t), static_cast<Eigen::Index>(o)) = src[t];
            }
          }
          if (wn->requires_grad) {
            RowMap(gw.data() + g * cout_g * cin_g * k, static_cast<Eigen::Index>(cout_g), width).noalias() =
                gy.transpose() * (*cols)[g];
          }
          if (xn->requires_grad) {
            ConstRowMap wg(wn->value.data() + g * cout_g * cin_g * k, static_cast<Eigen::Index>(cout_g), width);
            RowMatrix gcol = gy * wg;  // [B*T, cin_g*k]
            for (std::size_t b = 0; b < batch; ++b) {
              for (std::size_t c = 0; c < cin_g; ++c) {
                double* dst = gx.data() + (b * c_in + g * cin_g + c) * steps;
                for (std::size_t t = 0; t < steps; ++t) {
                  const double* src = gcol.data() + (b * steps + t) * width + c * k;
                  for (std::size_t j = 0; j < k; ++j) {
                    const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(pad_left);
                    if (s >= 0 && s < static_cast<std::ptrdiff_t>(steps)) dst[s] += src[j];
                  }
                }
              }
            }
          }
        }
        if (xn->requires_grad) xn->accumulate(gx);
        if (wn->requires_grad) wn->accumulate(gw);
      });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::mul); }

Tensor scale(const Tensor& x, double factor) {
  auto xn = x.node();
  return Tensor::make_result(x.shape(), x.values() * factor, {x}, [xn, factor](const Vector& g) {
    if (xn->requires_grad) xn->accumulate(g * factor);
  });
}

Tensor add_scalar(const Tensor& x, double c) {
  auto xn = x.node();
  return Tensor::make_result(x.shape(), x.values().array() + c, {x}, [xn](const Vector& g) {
    if (xn->requires_grad) xn->accumulate(g);
  });
}

Tensor relu(const Tensor& x) {
  auto xn = x.node();
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
               [xn](Eigen::Index i) { return xn->value[i] > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  Vector y = x.values().unaryExpr([](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  auto xn = x.node();
  auto yv = std::make_shared<Vector>(y);
  return Tensor::make_result(x.shape(), std::move(y), {x}, [xn, yv](const Vector& g) {
    if (!xn->requires_grad) return;
    xn->accumulate(g.cwiseProduct(yv->cwiseProduct((1.0 - yv->array()).matrix())));
  });
}

Tensor tanh(const Tensor& x) {
  Vector y = x.values().array().tanh().matrix();
  auto xn = x.node();
  auto yv = std::make_shared<Vector>(y);
  return Tensor::make_result(x.shape(), std::move(y), {x}, [xn, yv](const Vector& g) {
    if (!xn->requires_grad) return;
    xn->accumulate(g.cwiseProduct((1.0 - yv->array().square()).matrix()));
  });
}

Tensor square(const Tensor& x) {
  auto xn = x.node();
  return unary(x, [](double v) { return v * v; }, [xn](Eigen::Index i) { return 2.0 * xn->value[i]; });
}

Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const std::size_t outer = prod(x.shape(), 0, ax);
  const std::size_t len = x.shape()[ax];
  const std::size_t inner = prod(x.shape(), ax + 1, x.rank());
  const Vector& xv = x.values();
  if (xv.hasNaN()) throw NumericError("softmax input contains NaN");
  Vector y(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double mx = xv[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(xv[base + j * inner] - mx);
        y[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) y[base + j * inner] /= total;
    }
  }
  auto xn = x.node();
  auto yv = std::make_shared<Vector>(y);
  return Tensor::make_result(x.shape(), std::move(y), {x}, [xn, yv, outer, len, inner](const Vector& g) {
    if (!xn->requires_grad) return;
    Vector gx(g.size());
    const Vector& s = *yv;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * len * inner + i;
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * s[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t p = base + j * inner;
          gx[p] = s[p] * (g[p] - dot);
        }
      }
    }
    xn->accumulate(gx);
  });
}

Tensor mean_pool_time(const Tensor& x) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw DimensionError("mean_pool_time expects [T,D] or [B,T,D], got " + shape_string(x.shape()));
  }
  const std::size_t batch = x.rank() == 3 ? x.shape()[0] : 1;
  const std::size_t steps = x.dim(-2);
  const std::size_t d = x.dim(-1);
  Vector y = Vector::Zero(static_cast<Eigen::Index>(batch * d));
  const Vector& xv = x.values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      y.segment(b * d, d) += xv.segment((b * steps + t) * d, d);
    }
  }
  y /= static_cast<double>(steps);
  Shape out = x.rank() == 3 ? Shape{batch, d} : Shape{d};
  auto xn = x.node();
  return Tensor::make_result(std::move(out), std::move(y), {x}, [xn, batch, steps, d](const Vector& g) {
    if (!xn->requires_grad) return;
    Vector gx(xn->value.size());
    const double w = 1.0 / static_cast<double>(steps);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t t = 0; t < steps; ++t) gx.segment((b * steps + t) * d, d) = g.segment(b * d, d) * w;
    }
    xn->accumulate(gx);
  });
}

Tensor sum(const Tensor& x) {
  auto xn = x.node();
  return Tensor::make_result(Shape{}, Vector::Constant(1, x.values().sum()), {x}, [xn](const Vector& g) {
    if (xn->requires_grad) xn->accumulate(Vector::Constant(xn->value.size(), g[0]));
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

// ---------------------------------------------------------------------------
// Shapes

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw DimensionError("cannot reshape " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  auto xn = x.node();
  return Tensor::make_result(std::move(shape), x.values(), {x}, [xn](const Vector& g) {
    if (xn->requires_grad) xn->accumulate(g);
  });
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const std::size_t len = x.shape()[ax];
  if (length == 0 || start + length > len) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range for axis of size " + std::to_string(len));
  }
  const std::size_t outer = prod(x.shape(), 0, ax);
  const std::size_t inner = prod(x.shape(), ax + 1, x.rank());
  Shape out = x.shape();
  out[ax] = length;
  Vector y(static_cast<Eigen::Index>(outer * length * inner));
  const Vector& xv = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    y.segment(o * length * inner, length * inner) = xv.segment((o * len + start) * inner, length * inner);
  }
  auto xn = x.node();
  return Tensor::make_result(std::move(out), std::move(y), {x},
                             [xn, outer, len, inner, start, length](const Vector& g) {
                               if (!xn->requires_grad) return;
                               Vector gx = Vector::Zero(xn->value.size());
                               for (std::size_t o = 0; o < outer; ++o) {
                                 gx.segment((o * len + start) * inner, length * inner) =
                                     g.segment(o * length * inner, length * inner);
                               }
                               xn->accumulate(gx);
                             });
}

Tensor select(const Tensor& x, int axis, std::size_t index) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  Shape out = x.shape();
  out.erase(out.begin() + static_cast<std::ptrdiff_t>(ax));
  return reshape(slice(x, static_cast<int>(ax), index, 1), std::move(out));
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of empty list");
  const std::size_t ax = normalize_axis(axis, parts.front().rank());
  Shape out = parts.front().shape();
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != out.size()) throw DimensionError("concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != ax && s[i] != out[i]) {
        throw DimensionError("concat shape mismatch: " + shape_string(out) + " vs " + shape_string(s));
      }
    }
    lens.push_back(s[ax]);
    total += s[ax];
  }
  out[ax] = total;
  const std::size_t outer = prod(out, 0, ax);
  const std::size_t inner = prod(out, ax + 1, out.size());
  Vector y(static_cast<Eigen::Index>(shape_size(out)));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Vector& pv = parts[p].values();
    for (std::size_t o = 0; o < outer; ++o) {
      y.segment((o * total + offset) * inner, lens[p] * inner) = pv.segment(o * lens[p] * inner, lens[p] * inner);
    }
    offset += lens[p];
  }
  std::vector<std::shared_ptr<detail::Node>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return Tensor::make_result(std::move(out), std::move(y), parts,
                             [nodes, lens, outer, inner, total](const Vector& g) {
                               std::size_t offset = 0;
                               for (std::size_t p = 0; p < nodes.size(); ++p) {
                                 if (nodes[p]->requires_grad) {
                                   Vector gp(nodes[p]->value.size());
                                   for (std::size_t o = 0; o < outer; ++o) {
                                     gp.segment(o * lens[p] * inner, lens[p] * inner) =
                                         g.segment((o * total + offset) * inner, lens[p] * inner);
                                   }
                                   nodes[p]->accumulate(gp);
                                 }
                                 offset += lens[p];
                               }
                             });
}

Tensor dropout(const Tensor& x, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(p));
  if (mode == Mode::eval || p == 0.0) return x;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto mask = std::make_shared<Vector>(x.values().size());
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask->size(); ++i) (*mask)[i] = unif(rng) < p ? 0.0 : keep;
  auto xn = x.node();
  return Tensor::make_result(x.shape(), x.values().cwiseProduct(*mask), {x}, [xn, mask](const Vector& g) {
    if (xn->requires_grad) xn->accumulate(g.cwiseProduct(*mask));
  });
}

Tensor gru_cell(const Tensor& x, const Tensor& h_prev, const GruParams& p) {
  const bool single = x.rank() == 1;
  const Tensor xb = single ? reshape(x, {1, x.size()}) : x;
  const Tensor hb = single ? reshape(h_prev, {1, h_prev.size()}) : h_prev;
  if (xb.rank() != 2 || hb.rank() != 2 || xb.shape()[0] != hb.shape()[0]) {
    throw DimensionError("gru_cell batch mismatch: x " + shape_string(x.shape()) + ", h " +
                         shape_string(h_prev.shape()));
  }
  const Tensor z = sigmoid(linear(xb, p.w_z) + linear(hb, p.u_z) + p.b_z);
  const Tensor r = sigmoid(linear(xb, p.w_r) + linear(hb, p.u_r) + p.b_r);
  const Tensor candidate = tanh(linear(xb, p.w_h) + linear(r * hb, p.u_h) + p.b_h);
  const Tensor h = hb + z * (candidate - hb);
  return single ? reshape(h, {h.size()}) : h;
}

}  // namespace exformer
