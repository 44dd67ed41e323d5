#pragma once

// Quantile-loss training with Adam, global-norm gradient clipping and early
// stopping on validation loss. Losses are computed in scaled space.

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "wwf/forecaster.hpp"

namespace wwf {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  double clip_norm = 1.0;
  std::size_t steps_per_epoch = 0;  // 0: one full pass over the training set
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> validation_loss;
  std::size_t best_epoch = 0;
  std::size_t stopped_epoch = 0;  // last epoch run
  double best_validation_loss = 0.0;

  nlohmann::json to_json() const;
};

// Mean over elements and quantiles of max(q (y - yhat), (q - 1)(y - yhat)).
// y has B*tau entries, prediction is [B, tau, |Q|].
ad::Tensor pinball_loss(const ad::Tensor& prediction, std::span<const double> y, const std::vector<double>& quantiles);
double pinball_loss_value(std::span<const double> prediction, std::span<const double> y,
                          const std::vector<double>& quantiles);

class Adam {
 public:
  Adam(std::vector<ad::Tensor> params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  // Uses the gradients currently stored on the parameters; a parameter
  // without a gradient is treated as having a zero gradient.
  void step();
  void zero_grad();
  std::size_t steps() const { return t_; }
  const std::vector<ad::Tensor>& params() const { return params_; }

 private:
  std::vector<ad::Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

// Rescales all gradients so their joint L2 norm is at most max_norm. Returns
// the norm before clipping.
double clip_grad_norm(std::span<ad::Tensor> params, double max_norm);

std::vector<ad::Tensor> trainable_tensors(const Forecaster& model);

// Mean pinball loss over a dataset, eval mode, no graph.
double evaluate_loss(Forecaster& model, const GlobalDataset& data, std::size_t batch_size = 256);

struct TrainResult {
  TrainHistory history;
  std::vector<std::vector<double>> best_parameters;
};

// Trains in place. On return the model holds the parameters of the epoch
// with the lowest validation loss. Throws DivergenceError on a non-finite
// training loss.
TrainResult train(Forecaster& model, const GlobalDataset& train_data, const GlobalDataset& validation_data,
                  const TrainConfig& config);

}  // namespace wwf
