#include <doctest.h>

#include <cmath>

#include "exformer/tensor.hpp"
#include "support.hpp"

using namespace exformer;
using testing::check_gradients;
using testing::probe;
using testing::random_tensor;

namespace {

void expect_values(const Tensor& t, std::initializer_list<double> expected, double tol = 1e-12) {
  REQUIRE(t.size() == expected.size());
  std::size_t i = 0;
  for (double e : expected) CHECK(t.values()[static_cast<Eigen::Index>(i++)] == doctest::Approx(e).epsilon(tol));
}

}  // namespace

TEST_CASE("matmul examples") {
  const Tensor id = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  expect_values(matmul(id, a), {1, 2, 3, 4});
  expect_values(matmul(a, Tensor::from({2, 1}, {5, 6})), {17, 39});
  Rng rng(1);
  const Tensor z = matmul(Tensor::zeros({2, 3}), random_tensor({3, 4}, rng));
  CHECK(z.shape() == Shape{2, 4});
  CHECK(z.values().isZero(0.0));
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("conv1d_same examples") {
  const Tensor x = Tensor::from({1, 4}, {1, 2, 3, 4});
  expect_values(conv1d_same(x, Tensor::from({1, 1, 1}, {1})), {1, 2, 3, 4});
  const double third = 1.0 / 3.0;
  expect_values(conv1d_same(Tensor::from({1, 4}, {3, 3, 3, 3}), Tensor::from({1, 1, 3}, {third, third, third})),
                {2, 3, 3, 2});
  CHECK(conv1d_same(x, Tensor::zeros({1, 1, 3})).values().isZero(0.0));
}

TEST_CASE("conv1d_same even kernel puts the smaller pad on the left") {
  // k = 2: pad 0 left, 1 right, so y_t = w0 x_t + w1 x_{t+1}.
  const Tensor y = conv1d_same(Tensor::from({1, 3}, {1, 2, 3}), Tensor::from({1, 1, 2}, {10, 1}));
  expect_values(y, {12, 23, 30});
  // k = 4: pad 1 left, 2 right.
  const Tensor y4 = conv1d_same(Tensor::from({1, 3}, {1, 2, 3}), Tensor::from({1, 1, 4}, {1000, 100, 10, 1}));
  expect_values(y4, {100 * 1 + 10 * 2 + 3, 1000 * 1 + 100 * 2 + 10 * 3, 1000 * 2 + 100 * 3});
}

TEST_CASE("conv1d_same preserves temporal length for every k in [1, T]") {
  Rng rng(3);
  for (std::size_t t = 1; t <= 9; ++t) {
    for (std::size_t k = 1; k <= t; ++k) {
      const Tensor y = conv1d_same(random_tensor({2, 3, t}, rng), random_tensor({4, 3, k}, rng));
      CHECK(y.shape() == Shape{2, 4, t});
    }
  }
}

TEST_CASE("conv1d_same channel mismatch") {
  CHECK_THROWS_AS(conv1d_same(Tensor::zeros({3, 5}), Tensor::zeros({2, 2, 3})), DimensionError);
  CHECK_THROWS_AS(conv1d_same(Tensor::zeros({4, 5}), Tensor::zeros({4, 3, 3}), 2), DimensionError);
}

TEST_CASE("grouped conv1d equals block-diagonal full conv") {
  Rng rng(4);
  const Tensor x = random_tensor({2, 4, 6}, rng, false);
  const Tensor kg = random_tensor({4, 2, 3}, rng, false);
  Vector full = Vector::Zero(4 * 4 * 3);
  for (std::size_t o = 0; o < 4; ++o) {
    const std::size_t g = o / 2;
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t k = 0; k < 3; ++k) {
        full[static_cast<Eigen::Index>((o * 4 + g * 2 + i) * 3 + k)] = kg.values()[static_cast<Eigen::Index>((o * 2 + i) * 3 + k)];
      }
    }
  }
  const Tensor a = conv1d_same(x, kg, 2);
  const Tensor b = conv1d_same(x, Tensor::from({4, 4, 3}, full));
  CHECK((a.values() - b.values()).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("softmax examples and properties") {
  expect_values(softmax(Tensor::from({3}, {0, 0, 0})), {1.0 / 3, 1.0 / 3, 1.0 / 3});
  expect_values(softmax(Tensor::from({2}, {0, std::log(2.0)})), {1.0 / 3, 2.0 / 3});

  Rng rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    const Tensor x = random_tensor({4, 7}, rng, false, -20, 20);
    const Tensor s = softmax(x, -1);
    const Tensor shifted = softmax(add_scalar(x, 123.456), -1);
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        const double v = s.at({r, c});
        CHECK(v > 0.0);
        CHECK(v < 1.0);
        total += v;
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
    CHECK((s.values() - shifted.values()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("softmax is stable for large logits and rejects NaN") {
  const Tensor s = softmax(Tensor::from({2}, {1000, 1000}));
  expect_values(s, {0.5, 0.5});
  CHECK_THROWS_AS(softmax(Tensor::from({2}, {0, std::nan("")})), NumericError);
}

TEST_CASE("elementwise examples") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  expect_values(relu(Tensor::from({2}, {-1, 2})), {0, 2});
  CHECK(tanh(Tensor::scalar(0.0)).item() == 0.0);
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({2, 4})), DimensionError);
  expect_values(add(Tensor::from({2, 2}, {1, 2, 3, 4}), Tensor::from({2}, {10, 20})), {11, 22, 13, 24});
  expect_values(mul(Tensor::from({2, 1}, {2, 3}), Tensor::from({1, 2}, {5, 7})), {10, 14, 15, 21});
}

TEST_CASE("mean_pool_time examples") {
  expect_values(mean_pool_time(Tensor::from({2, 2}, {1, 2, 3, 4})), {2, 3});
  expect_values(mean_pool_time(Tensor::from({3, 2}, {5, -1, 5, -1, 5, -1})), {5, -1});
  expect_values(mean_pool_time(Tensor::from({1, 3}, {7, 8, 9})), {7, 8, 9});
}

TEST_CASE("gru_cell examples") {
  const std::size_t d = 3;
  GruParams p{Tensor::zeros({d, d}), Tensor::zeros({d, d}), Tensor::zeros({d}),
              Tensor::zeros({d, d}), Tensor::zeros({d, d}), Tensor::zeros({d}),
              Tensor::zeros({d, d}), Tensor::zeros({d, d}), Tensor::zeros({d})};
  const Tensor h = Tensor::from({d}, {1, -2, 4});
  expect_values(gru_cell(Tensor::from({d}, {3, 3, 3}), h, p), {0.5, -1, 2});
  CHECK(gru_cell(Tensor::from({d}, {3, 3, 3}), Tensor::zeros({d}), p).values().isZero(0.0));
}

TEST_CASE("gru_cell hand-stepped oracle") {
  // One input, one hidden unit: every gate is a scalar expression.
  const double wz = 0.3, uz = -0.2, bz = 0.1, wr = -0.4, ur = 0.5, br = 0.2, wh = 0.7, uh = -0.6, bh = 0.05;
  const double x = 0.8, h = -0.3;
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const double z = sig(wz * x + uz * h + bz);
  const double r = sig(wr * x + ur * h + br);
  const double cand = std::tanh(wh * x + uh * r * h + bh);
  const double expected = (1 - z) * h + z * cand;
  auto s = [](double v) { return Tensor::from({1, 1}, {v}); };
  auto b = [](double v) { return Tensor::from({1}, {v}); };
  GruParams p{s(wz), s(uz), b(bz), s(wr), s(ur), b(br), s(wh), s(uh), b(bh)};
  CHECK(gru_cell(Tensor::from({1}, {x}), Tensor::from({1}, {h}), p).item() == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("dropout") {
  Rng rng(6);
  const Tensor x = random_tensor({10}, rng, false);
  CHECK(dropout(x, 0.0, Mode::train, rng).values() == x.values());
  CHECK(dropout(x, 0.7, Mode::eval, rng).values() == x.values());
  CHECK_THROWS_AS(dropout(x, 1.0, Mode::train, rng), ConfigError);
  CHECK_THROWS_AS(dropout(x, -0.1, Mode::train, rng), ConfigError);

  // E[output] = input: the mean of 1e5 inverted-dropout draws stays within 3σ.
  const int trials = 100000;
  const Tensor ones = Tensor::full({8}, 1.0);
  Vector acc = Vector::Zero(8);
  for (int i = 0; i < trials; ++i) acc += dropout(ones, 0.5, Mode::train, rng).values();
  const double sigma = 1.0 / std::sqrt(static_cast<double>(trials));  // per-draw std is 1 at p = 0.5
  for (Eigen::Index i = 0; i < 8; ++i) CHECK(std::abs(acc[i] / trials - 1.0) < 3 * sigma);
}

TEST_CASE("backward examples") {
  const Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  sum(x).backward();
  CHECK(x.grad() == Vector::Ones(3));

  Tensor y = Tensor::from({2}, {1, 2}, true);
  sum(y * y).backward();
  CHECK(y.grad()[0] == 2.0);
  CHECK(y.grad()[1] == 4.0);

  // Repeated calls accumulate into leaves.
  sum(y * y).backward();
  CHECK(y.grad()[1] == 8.0);
  y.zero_grad();
  CHECK(y.grad().isZero(0.0));

  CHECK_THROWS_AS(Tensor::from({2}, {1, 2}, true).backward(), DimensionError);
}

TEST_CASE("backward through a shared subexpression") {
  const Tensor x = Tensor::from({2}, {3, -1}, true);
  const Tensor s = sigmoid(x);
  sum(s * s + s).backward();
  for (Eigen::Index i = 0; i < 2; ++i) {
    const double v = 1.0 / (1.0 + std::exp(-x.values()[i]));
    CHECK(x.grad()[i] == doctest::Approx((2 * v + 1) * v * (1 - v)).epsilon(1e-14));
  }
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS(Tensor::from({2, 3}, Vector::Zero(5)));
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({2, 3});
  CHECK(a.id() != b.id());
  CHECK(reshape(a, {3, 2}).size() == 6);
  CHECK_THROWS_AS(reshape(a, {4, 2}), DimensionError);
}

TEST_CASE("central-difference gradients of every operation") {
  Rng rng(2024);
  auto t = [&](Shape s) { return random_tensor(std::move(s), rng); };
  const double tol = 1e-4;

  SUBCASE("matmul / bmm / transpose / linear") {
    Tensor a = t({3, 4}), b = t({4, 2});
    CHECK(check_gradients([&] { return probe(matmul(a, b)); }, {a, b}).max_rel_error < tol);
    Tensor p = t({2, 3, 4}), q = t({2, 4, 5});
    CHECK(check_gradients([&] { return probe(bmm(p, q)); }, {p, q}).max_rel_error < tol);
    CHECK(check_gradients([&] { return probe(transpose(p)); }, {p}).max_rel_error < tol);
    Tensor x = t({2, 3, 4}), w = t({4, 5}), bias = t({5});
    CHECK(check_gradients([&] { return probe(linear(x, w, bias)); }, {x, w, bias}).max_rel_error < tol);
  }
  SUBCASE("conv1d_same") {
    for (std::size_t k : {1, 2, 3, 4, 7}) {
      Tensor x = t({2, 4, 6}), kern = t({3, 4, k});
      CHECK(check_gradients([&] { return probe(conv1d_same(x, kern)); }, {x, kern}).max_rel_error < tol);
    }
    Tensor x = t({4, 5}), kg = t({4, 2, 3});
    CHECK(check_gradients([&] { return probe(conv1d_same(x, kg, 2)); }, {x, kg}).max_rel_error < tol);
  }
  SUBCASE("broadcasting binary ops") {
    Tensor a = t({2, 3, 4}), b = t({3, 1}), c = t({4});
    CHECK(check_gradients([&] { return probe(add(a, b)); }, {a, b}).max_rel_error < tol);
    CHECK(check_gradients([&] { return probe(sub(c, a)); }, {a, c}).max_rel_error < tol);
    CHECK(check_gradients([&] { return probe(mul(a, b) * c); }, {a, b, c}).max_rel_error < tol);
  }
  SUBCASE("unary ops") {
    Tensor x = t({3, 5});
    CHECK(check_gradients([&] { return probe(scale(x, -2.5)); }, {x}).max_rel_error < tol);
    CHECK(check_gradients([&] { return probe(add_scalar(x, 0.7)); }, {x}).max_rel_error < tol);
    CHECK(check_gradients([&] { return probe(relu(x)); }, {x}).max_rel_error < tol);
    CHECK(check_gradients([&] { return probe(sigmoid(x)); }, {x}).max_rel_error < tol);
    CHECK(check_gradients([&] { return probe(tanh(x)); }, {x}).max_rel_error < tol);
    CHECK(check_gradients([&] { return probe(square(x)); }, {x}).max_rel_error < tol);
  }
  SUBCASE("softmax on each axis") {
    Tensor x = t({2, 3, 4});
    for (int axis : {0, 1, 2, -1}) {
      CHECK(check_gradients([&] { return probe(softmax(x, axis)); }, {x}).max_rel_error < tol);
    }
  }
  SUBCASE("reductions and shape ops") {
    Tensor x = t({2, 3, 4});
    CHECK(check_gradients([&] { return probe(mean_pool_time(x)); }, {x}).max_rel_error < tol);
    Tensor x2 = t({3, 4});
    CHECK(check_gradients([&] { return probe(mean_pool_time(x2)); }, {x2}).max_rel_error < tol);
    CHECK(check_gradients([&] { return sum(square(x)); }, {x}).max_rel_error < tol);
    CHECK(check_gradients([&] { return mean(square(x)); }, {x}).max_rel_error < tol);
    CHECK(check_gradients([&] { return probe(reshape(x, {4, 6})); }, {x}).max_rel_error < tol);
    CHECK(check_gradients([&] { return probe(slice(x, 2, 1, 2)); }, {x}).max_rel_error < tol);
    CHECK(check_gradients([&] { return probe(slice(x, 0, 1, 1)); }, {x}).max_rel_error < tol);
    CHECK(check_gradients([&] { return probe(select(x, 1, 2)); }, {x}).max_rel_error < tol);
    Tensor y = t({2, 2, 4});
    CHECK(check_gradients([&] { return probe(concat({x, y, x}, 1)); }, {x, y}).max_rel_error < tol);
    Tensor z = t({2, 3, 1});
    CHECK(check_gradients([&] { return probe(concat({x, z}, -1)); }, {x, z}).max_rel_error < tol);
  }
  SUBCASE("dropout with a replayed mask") {
    Tensor x = t({4, 5});
    CHECK(check_gradients(
              [&] {
                Rng local(17);
                return probe(dropout(x, 0.4, Mode::train, local));
              },
              {x})
              .max_rel_error < tol);
  }
  SUBCASE("gru_cell") {
    const std::size_t d = 4;
    GruParams p{t({d, d}), t({d, d}), t({d}), t({d, d}), t({d, d}), t({d}), t({d, d}), t({d, d}), t({d})};
    Tensor x = t({d}), h = t({d});
    std::vector<Tensor> leaves{x, h, p.w_z, p.u_z, p.b_z, p.w_r, p.u_r, p.b_r, p.w_h, p.u_h, p.b_h};
    CHECK(check_gradients([&] { return probe(gru_cell(x, h, p)); }, leaves).max_rel_error < tol);
    Tensor xb = t({3, d}), hb = t({3, d});
    CHECK(check_gradients([&] { return probe(gru_cell(xb, hb, p)); }, {xb, hb, p.w_h, p.u_r}).max_rel_error < tol);
  }
}

TEST_CASE("deterministic replay") {
  auto run = [] {
    Rng rng(77);
    Tensor w = random_tensor({5, 3}, rng);
    Tensor x = random_tensor({4, 5}, rng);
    Tensor y = dropout(tanh(matmul(x, w)), 0.3, Mode::train, rng);
    probe(softmax(y, -1)).backward();
    return std::make_pair(y.values(), w.grad());
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}
