#include "wwf/trainer.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "wwf/error.hpp"

namespace wwf {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (max_epochs == 0) throw ConfigError("train.max_epochs must be positive");
  if (patience == 0 || patience >= max_epochs) throw ConfigError("train.patience must lie in [1, max_epochs)");
  if (!(clip_norm > 0.0)) throw ConfigError("train.clip_norm must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate}, {"batch_size", batch_size}, {"max_epochs", max_epochs},
          {"patience", patience},           {"clip_norm", clip_norm},   {"steps_per_epoch", steps_per_epoch},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
  c.seed = j.value("seed", c.seed);
  return c;
}

nlohmann::json TrainHistory::to_json() const {
  return {{"train_loss", train_loss},
          {"validation_loss", validation_loss},
          {"best_epoch", best_epoch},
          {"stopped_epoch", stopped_epoch},
          {"best_validation_loss", best_validation_loss}};
}

ad::Tensor pinball_loss(const ad::Tensor& prediction, std::span<const double> y, const std::vector<double>& quantiles) {
  validate_quantiles(quantiles);
  const std::size_t nq = quantiles.size();
  if (prediction.rank() != 3 || prediction.dim(2) != nq || prediction.dim(0) * prediction.dim(1) != y.size())
    throw ShapeError("pinball_loss: prediction " + ad::shape_str(prediction.shape()) + " does not match " +
                     std::to_string(y.size()) + " targets and " + std::to_string(nq) + " quantiles");
  std::vector<double> target(prediction.size());
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t q = 0; q < nq; ++q) target[i * nq + q] = y[i];
  auto err = ad::sub(ad::Tensor::from_values(prediction.shape(), std::move(target)), prediction);
  auto q = ad::Tensor::from_values({nq}, quantiles);
  std::vector<double> one_minus(nq);
  for (std::size_t i = 0; i < nq; ++i) one_minus[i] = 1.0 - quantiles[i];
  auto under = ad::mul(ad::relu(err), q);
  auto over = ad::mul(ad::relu(ad::scale(err, -1.0)), ad::Tensor::from_values({nq}, std::move(one_minus)));
  return ad::mean(ad::add(under, over));
}

double pinball_loss_value(std::span<const double> prediction, std::span<const double> y,
                          const std::vector<double>& quantiles) {
  validate_quantiles(quantiles);
  const std::size_t nq = quantiles.size();
  if (prediction.size() != y.size() * nq) throw ShapeError("pinball_loss: size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t q = 0; q < nq; ++q) {
      const double e = y[i] - prediction[i * nq + q];
      total += std::max(quantiles[q] * e, (quantiles[q] - 1.0) * e);
    }
  return total / static_cast<double>(prediction.size());
}

Adam::Adam(std::vector<ad::Tensor> params, double learning_rate, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) {
      // Zero gradient: moments decay, the update uses the decayed moments.
      for (auto& m : m_[i]) m *= beta1_;
      for (auto& v : v_[i]) v *= beta2_;
    }
    auto values = p.values_mut();
    auto grad = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      if (p.has_grad()) {
        const double g = grad[j];
        m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
        v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
      }
      values[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double clip_grad_norm(std::span<ad::Tensor> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& p : params)
      if (p.has_grad())
        for (auto& g : p.grad_mut()) g *= s;
  }
  return norm;
}

std::vector<ad::Tensor> trainable_tensors(const Forecaster& model) {
  std::vector<ad::Tensor> out;
  for (const auto& p : model.parameters())
    if (p.trainable) out.push_back(p.tensor);
  return out;
}

double evaluate_loss(Forecaster& model, const GlobalDataset& data, std::size_t batch_size) {
  if (data.empty()) throw DataError("evaluate_loss: empty dataset");
  ad::NoGradGuard no_grad;
  double total = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.samples.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.samples.size(), start + batch_size); ++i) idx.push_back(i);
    auto batch = Batch::collate(data, idx);
    if (batch.future_target.empty()) throw DataError("evaluate_loss: samples lack future targets");
    auto out = model.forward(batch, nn::Mode::eval());
    total += pinball_loss_value(out.quantiles.values(), batch.future_target, model.quantiles()) *
             static_cast<double>(idx.size());
  }
  return total / static_cast<double>(data.samples.size());
}

TrainResult train(Forecaster& model, const GlobalDataset& train_data, const GlobalDataset& validation_data,
                  const TrainConfig& config) {
  config.validate();
  if (train_data.empty()) throw DataError("train: empty training set");
  if (validation_data.empty()) throw DataError("train: empty validation set");

  auto params = trainable_tensors(model);
  Adam adam(params, config.learning_rate);
  std::mt19937_64 dropout_rng(config.seed ^ 0x5bd1e995ULL);
  TrainResult result;
  auto& h = result.history;
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    auto batches = batch_iter(train_data.samples.size(), config.batch_size, config.seed + epoch);
    if (config.steps_per_epoch > 0 && batches.size() > config.steps_per_epoch) batches.resize(config.steps_per_epoch);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto batch = Batch::collate(train_data, batches[bi]);
      adam.zero_grad();
      auto out = model.forward(batch, nn::Mode::training(dropout_rng));
      auto loss = pinball_loss(out.quantiles, batch.future_target, model.quantiles());
      const double lv = loss.item();
      if (!std::isfinite(lv))
        throw DivergenceError("training loss became non-finite at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(bi));
      ad::backward(loss);
      clip_grad_norm(params, config.clip_norm);
      adam.step();
      epoch_loss += lv * static_cast<double>(batch.size);
      seen += batch.size;
    }
    h.train_loss.push_back(epoch_loss / static_cast<double>(seen));
    const double val = evaluate_loss(model, validation_data);
    if (!std::isfinite(val))
      throw DivergenceError("validation loss became non-finite at epoch " + std::to_string(epoch));
    h.validation_loss.push_back(val);
    h.stopped_epoch = epoch;
    if (val < best) {
      best = val;
      h.best_epoch = epoch;
      since_best = 0;
      result.best_parameters = snapshot_parameters(model);
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  adam.zero_grad();
  h.best_validation_loss = best;
  restore_parameters(model, result.best_parameters);
  return result;
}

}  // namespace wwf
