#include "exformer/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace exformer {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be >= 0");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (max_epochs == 0) throw ConfigError("max epochs must be >= 1");
  if (patience == 0) throw ConfigError("patience must be >= 1");
  if (!(min_delta >= 0.0)) throw ConfigError("min delta must be >= 0");
  if (clip_norm && !(*clip_norm > 0.0)) throw ConfigError("clip norm must be positive");
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) {
    throw DimensionError("mse_loss: prediction " + shape_string(prediction.shape()) + " vs target " +
                         shape_string(target.shape()));
  }
  return mean(square(prediction - target));
}

void Adam::step(ParameterStore& params) {
  auto& entries = params.entries();
  if (m_.empty()) {
    for (const auto& [_, t] : entries) {
      m_.push_back(Vector::Zero(static_cast<Eigen::Index>(t.size())));
      v_.push_back(Vector::Zero(static_cast<Eigen::Index>(t.size())));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor& p = entries[i].second;
    if (!p.has_grad()) continue;
    const Vector g = p.grad();
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    const Vector m_hat = m_[i] / c1;
    const Vector v_hat = v_[i] / c2;
    p.mutable_values().array() -= lr_ * m_hat.array() / (v_hat.array().sqrt() + eps_);
  }
}

double clip_gradients(ParameterStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, t] : params.entries()) {
    if (t.has_grad()) sq += t.grad().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [_, t] : params.entries()) {
      if (!t.has_grad()) continue;
      const Vector g = t.grad() * s;
      t.zero_grad();
      t.node()->accumulate(g);
    }
  }
  return norm;
}

namespace {

double batch_sse(const ParameterStore& params, const ModelConfig& model, const WindowBatch& batch, Rng& rng) {
  const ForwardTrace trace = model_forward(batch.input_tensor(), params, model, Mode::eval, rng);
  return (trace.prediction.values() - batch.targets).squaredNorm();
}

}  // namespace

double evaluate_mse(const ParameterStore& params, const ModelConfig& model, const PanelDataset& panel, Subset subset,
                    std::size_t batch_size, bool allow_history) {
  Rng unused(0);
  double sse = 0.0;
  std::size_t n = 0;
  for (const auto& batch : make_windows(panel, model.window, subset, batch_size, allow_history)) {
    sse += batch_sse(params, model, batch, unused);
    n += batch.size();
  }
  return sse / static_cast<double>(n);
}

Predictions predict(const ParameterStore& params, const ModelConfig& model, const PanelDataset& panel, Subset subset,
                    std::size_t batch_size, bool allow_history) {
  Rng unused(0);
  Predictions out;
  std::vector<double> values;
  const std::size_t t = model.window, f = model.features;
  for (const auto& batch : make_windows(panel, t, subset, batch_size, allow_history)) {
    const ForwardTrace trace = model_forward(batch.input_tensor(), params, model, Mode::eval, unused);
    const Vector& y = trace.prediction.values();
    const Vector& w = trace.weights.values();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      out.origins.push_back(batch.origins[b]);
      values.push_back(y[static_cast<Eigen::Index>(b)]);
      out.weights.push_back(
          Eigen::Map<const RowMatrix>(w.data() + b * t * f, static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(f)));
    }
  }
  out.forecasts = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  return out;
}

namespace {

TrainResult run_training(const PanelDataset& panel, const ModelConfig& model, const TrainConfig& config,
                         ParameterStore params, Rng& rng, const EpochCallback& on_epoch) {
  config.validate();
  model.validate();
  if (panel.features() != model.features) {
    throw DimensionError("panel has " + std::to_string(panel.features()) + " covariates but the model expects " +
                         std::to_string(model.features));
  }
  const std::size_t n_train_eval = std::max<std::size_t>(config.batch_size, 256);
  std::vector<std::size_t> targets = window_targets(panel, model.window, Subset::train, false);
  window_targets(panel, model.window, Subset::validation, config.allow_history);

  Adam optimizer(config.learning_rate);
  TrainResult result;
  TrainReport& report = result.report;
  ParameterStore best = params.clone();
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(targets.begin(), targets.end(), rng);
    for (std::size_t i = 0; i < targets.size(); i += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, targets.size() - i);
      const WindowBatch batch = make_batch(panel, model.window, std::span(targets).subspan(i, len));
      params.zero_grad();
      const ForwardTrace trace = model_forward(batch.input_tensor(), params, model, Mode::train, rng);
      const Tensor loss = mse_loss(trace.prediction, Tensor::from({len}, batch.targets));
      if (!std::isfinite(loss.item())) {
        throw DivergenceError("training loss became non-finite at epoch " + std::to_string(epoch));
      }
      loss.backward();
      if (config.clip_norm) clip_gradients(params, *config.clip_norm);
      optimizer.step(params);
    }

    const double train_mse = evaluate_mse(params, model, panel, Subset::train, n_train_eval, false);
    const double val_mse = evaluate_mse(params, model, panel, Subset::validation, n_train_eval, config.allow_history);
    if (!std::isfinite(train_mse) || !std::isfinite(val_mse)) {
      throw DivergenceError("loss became non-finite at epoch " + std::to_string(epoch));
    }
    report.train_loss.push_back(train_mse);
    report.val_loss.push_back(val_mse);
    report.epoch_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    if (on_epoch) on_epoch(epoch, train_mse, val_mse);

    if (val_mse < best_val - config.min_delta) {
      best_val = val_mse;
      report.best_epoch = epoch;
      best = params.clone();
      since_best = 0;
    } else if (++since_best >= config.patience) {
      report.stopped_early = epoch < config.max_epochs;
      break;
    }
  }
  report.best_val_loss = best_val;
  result.params = std::move(best);
  return result;
}

}  // namespace

TrainResult train(const PanelDataset& panel, const ModelConfig& model, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  Rng rng(config.seed);
  ParameterStore params = ParameterStore::initialize(model, rng);
  return run_training(panel, model, config, std::move(params), rng, on_epoch);
}

TrainResult train(const PanelDataset& panel, const ModelConfig& model, const TrainConfig& config,
                  const ParameterStore& initial, const EpochCallback& on_epoch) {
  Rng rng(config.seed);
  return run_training(panel, model, config, initial.clone(), rng, on_epoch);
}

}  // namespace exformer
