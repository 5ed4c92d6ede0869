#include <doctest.h>

#include "exformer/synthetic.hpp"
#include "exformer/trainer.hpp"
#include "support.hpp"

using namespace exformer;

namespace {

// Standardized panel from the synthetic generator through the real loader.
PanelDataset planted_panel(std::size_t n, std::uint64_t seed, double noise = 0.1) {
  SyntheticSpec spec;
  spec.n = n;
  spec.n_covariates = 3;
  spec.noise_std = noise;
  spec.seed = seed;
  testing::TempDir dir("trainer_panel");
  return fit_apply_standardizer(build_panel(load_manifest(write_synthetic(spec, dir.path()))));
}

ModelConfig small_model(std::size_t features) {
  ModelConfig c;
  c.features = features;
  c.window = 5;
  c.heads = 1;
  c.factor = 8;
  c.dropout = 0.1;
  return c;
}

}  // namespace

TEST_CASE("mse loss examples") {
  CHECK(mse_loss(Tensor::from({2}, {1, 2}), Tensor::from({2}, {1, 4})).item() == 2.0);
  CHECK(mse_loss(Tensor::from({3}, {0.5, -1, 2}), Tensor::from({3}, {0.5, -1, 2})).item() == 0.0);
  Tensor p = Tensor::from({2}, {3, 0}, true);
  mse_loss(p, Tensor::from({2}, {1, 0})).backward();
  CHECK(p.grad()[0] == 2.0);  // 2 (3 - 1) / 2
  CHECK(p.grad()[1] == 0.0);
  CHECK_THROWS_AS(mse_loss(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
}

TEST_CASE("Adam update rule") {
  ParameterStore store;
  store.add("w", Tensor::from({2}, {1.0, -2.0}, true));
  Adam opt(0.1);
  SUBCASE("bias-corrected first steps move by about lr against the gradient sign") {
    for (int step = 1; step <= 3; ++step) {
      store.zero_grad();
      store.get("w").node()->accumulate((Vector(2) << 0.5, -4.0).finished());
      opt.step(store);
      CHECK(store.get("w").values()[0] == doctest::Approx(1.0 - 0.1 * step).epsilon(1e-6));
      CHECK(store.get("w").values()[1] == doctest::Approx(-2.0 + 0.1 * step).epsilon(1e-6));
    }
    CHECK(opt.steps() == 3);
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    store.get("w").node()->accumulate(Vector::Zero(2));
    opt.step(store);
    CHECK(store.get("w").values()[0] == 1.0);
    CHECK(store.get("w").values()[1] == -2.0);
  }
  SUBCASE("zero learning rate is a no-op") {
    Adam still(0.0);
    store.get("w").node()->accumulate((Vector(2) << 3.0, 1.0).finished());
    still.step(store);
    CHECK(store.get("w").values()[0] == 1.0);
  }
}

TEST_CASE("gradient clipping rescales the global norm") {
  ParameterStore store;
  store.add("a", Tensor::zeros({1}, true));
  store.add("b", Tensor::zeros({1}, true));
  store.get("a").node()->accumulate(Vector::Constant(1, 3.0));
  store.get("b").node()->accumulate(Vector::Constant(1, 4.0));
  CHECK(clip_gradients(store, 1.0) == 5.0);
  CHECK(store.get("a").grad()[0] == doctest::Approx(0.6));
  CHECK(store.get("b").grad()[0] == doctest::Approx(0.8));
  CHECK(clip_gradients(store, 10.0) == doctest::Approx(1.0));
  CHECK(store.get("b").grad()[0] == doctest::Approx(0.8));
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.learning_rate = -1e-3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.max_epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("zero learning rate keeps every epoch's losses identical") {
  const PanelDataset panel = planted_panel(200, 3);
  TrainConfig tc;
  tc.learning_rate = 0.0;
  tc.max_epochs = 4;
  tc.patience = 100;
  tc.seed = 5;
  const TrainResult r = train(panel, small_model(panel.features()), tc);
  REQUIRE(r.report.epochs() == 4);
  for (std::size_t e = 1; e < 4; ++e) {
    CHECK(r.report.train_loss[e] == r.report.train_loss[0]);
    CHECK(r.report.val_loss[e] == r.report.val_loss[0]);
  }
  CHECK(r.report.best_epoch == 1);
}

TEST_CASE("training is reproducible from the seed") {
  const PanelDataset panel = planted_panel(200, 4);
  TrainConfig tc;
  tc.max_epochs = 3;
  tc.seed = 11;
  const ModelConfig m = small_model(panel.features());
  const TrainResult a = train(panel, m, tc);
  const TrainResult b = train(panel, m, tc);
  CHECK(a.report.train_loss == b.report.train_loss);
  CHECK(a.report.val_loss == b.report.val_loss);
  for (std::size_t i = 0; i < a.params.entries().size(); ++i) {
    CHECK(a.params.entries()[i].second.values() == b.params.entries()[i].second.values());
  }
  tc.seed = 12;
  CHECK(train(panel, m, tc).report.val_loss != a.report.val_loss);
}

TEST_CASE("early stopping keeps the best validation parameters") {
  const PanelDataset panel = planted_panel(250, 6);
  TrainConfig tc;
  tc.learning_rate = 0.01;
  tc.max_epochs = 60;
  tc.patience = 3;
  tc.seed = 2;
  const ModelConfig m = small_model(panel.features());
  std::size_t callbacks = 0;
  const TrainResult r = train(panel, m, tc, [&](std::size_t epoch, double, double) { CHECK(epoch == ++callbacks); });
  const TrainReport& rep = r.report;
  CHECK(callbacks == rep.epochs());
  REQUIRE(rep.best_epoch >= 1);
  CHECK(rep.best_epoch <= rep.epochs());
  CHECK(rep.best_val_loss == *std::min_element(rep.val_loss.begin(), rep.val_loss.end()));
  CHECK(rep.val_loss[rep.best_epoch - 1] == rep.best_val_loss);
  if (rep.stopped_early) CHECK(rep.epochs() == rep.best_epoch + tc.patience);
  for (std::size_t e = rep.best_epoch; e < rep.epochs(); ++e) CHECK(rep.val_loss[e] >= rep.best_val_loss - tc.min_delta);
  CHECK(evaluate_mse(r.params, m, panel, Subset::validation) == doctest::Approx(rep.best_val_loss).epsilon(1e-12));
}

TEST_CASE("training from given parameters leaves them untouched") {
  const PanelDataset panel = planted_panel(150, 8);
  const ModelConfig m = small_model(panel.features());
  Rng rng(1);
  const ParameterStore init = ParameterStore::initialize(m, rng);
  const Vector before = init.get("head.weight").values();
  TrainConfig tc;
  tc.max_epochs = 2;
  train(panel, m, tc, init);
  CHECK(init.get("head.weight").values() == before);
}

TEST_CASE("the model learns a planted lagged signal") {
  const PanelDataset panel = planted_panel(600, 9);
  TrainConfig tc;
  tc.learning_rate = 0.003;
  tc.max_epochs = 60;
  tc.patience = 10;
  tc.seed = 1;
  const ModelConfig m = small_model(panel.features());
  const TrainResult r = train(panel, m, tc);
  // The target is almost fully explained by one lagged covariate, so the
  // standardized MSE should fall far below the unit variance.
  CHECK(r.report.val_loss.front() > r.report.best_val_loss);
  CHECK(r.report.best_val_loss < 0.3);
  CHECK(evaluate_mse(r.params, m, panel, Subset::test) < 0.3);
}

TEST_CASE("predictions line up with the window targets") {
  const PanelDataset panel = planted_panel(150, 10);
  const ModelConfig m = small_model(panel.features());
  Rng rng(2);
  const ParameterStore p = ParameterStore::initialize(m, rng);
  const Predictions pr = predict(p, m, panel, Subset::test, 7);
  CHECK(pr.origins == window_targets(panel, m.window, Subset::test));
  CHECK(static_cast<std::size_t>(pr.forecasts.size()) == pr.origins.size());
  REQUIRE(pr.weights.size() == pr.origins.size());
  for (const auto& w : pr.weights) {
    CHECK(w.rows() == 5);
    CHECK(w.cols() == static_cast<Eigen::Index>(panel.features()));
    CHECK((w.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
  }
  // Batch size does not change results.
  CHECK((predict(p, m, panel, Subset::test, 256).forecasts - pr.forecasts).cwiseAbs().maxCoeff() < 1e-12);
  const double mse = (pr.forecasts - Eigen::VectorXd(panel.target(Eigen::seqN(pr.origins.front(), pr.origins.size())))).squaredNorm() /
                     static_cast<double>(pr.origins.size());
  CHECK(evaluate_mse(p, m, panel, Subset::test) == doctest::Approx(mse).epsilon(1e-12));
}

TEST_CASE("feature mismatch is a dimension error") {
  const PanelDataset panel = planted_panel(150, 12);
  TrainConfig tc;
  tc.max_epochs = 1;
  CHECK_THROWS_AS(train(panel, small_model(panel.features() + 1), tc), DimensionError);
}
