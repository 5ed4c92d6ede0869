#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "exformer/data.hpp"
#include "exformer/model.hpp"
#include "exformer/tensor.hpp"

namespace exformer {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 500;
  std::size_t patience = 20;
  double min_delta = 1e-6;
  std::uint64_t seed = 0;
  // Global gradient-norm clip; disabled when unset.
  std::optional<double> clip_norm;
  // Validation windows may draw their history from the training block.
  bool allow_history = true;

  void validate() const;
};

struct TrainReport {
  std::vector<double> train_loss;  // eval-mode MSE over training windows
  std::vector<double> val_loss;
  std::vector<double> epoch_seconds;
  std::size_t best_epoch = 0;  // 1-based
  double best_val_loss = 0.0;
  bool stopped_early = false;

  std::size_t epochs() const { return train_loss.size(); }
};

struct TrainResult {
  ParameterStore params;
  TrainReport report;
};

// (1/B) * sum (yhat - y)^2.
Tensor mse_loss(const Tensor& prediction, const Tensor& target);

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParameterStore& params);
  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Vector> m_, v_;
};

// Rescales every gradient so the global L2 norm is at most `max_norm`.
// Returns the norm before clipping.
double clip_gradients(ParameterStore& params, double max_norm);

using EpochCallback = std::function<void(std::size_t epoch, double train_mse, double val_mse)>;

// Trains from a fresh initialization drawn from the run seed.
TrainResult train(const PanelDataset& panel, const ModelConfig& model, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});
// Trains from the given starting parameters (left untouched).
TrainResult train(const PanelDataset& panel, const ModelConfig& model, const TrainConfig& config,
                  const ParameterStore& initial, const EpochCallback& on_epoch = {});

struct Predictions {
  std::vector<std::size_t> origins;       // panel row of each forecast target
  Eigen::VectorXd forecasts;              // standardized units
  std::vector<RowMatrix> weights;         // ω per window, T x F
};

// Eval-mode forward pass over every window of `subset`.
Predictions predict(const ParameterStore& params, const ModelConfig& model, const PanelDataset& panel,
                    Subset subset, std::size_t batch_size = 256, bool allow_history = true);

// Eval-mode MSE over every window of `subset`.
double evaluate_mse(const ParameterStore& params, const ModelConfig& model, const PanelDataset& panel,
                    Subset subset, std::size_t batch_size = 256, bool allow_history = true);

}  // namespace exformer
