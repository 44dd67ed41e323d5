#include <cmath>
#include <limits>

#include "../common/trials.hpp"
#include "doctest.h"
#include "wwf/error.hpp"
#include "wwf/deeptcn.hpp"
#include "wwf/trainer.hpp"

using namespace wwf;
using testing::random_dataset;

namespace {

// Learns one value per quantile in train mode. Eval-mode outputs grow by one
// on every call, so validation loss worsens every epoch.
class MockForecaster final : public Forecaster {
 public:
  explicit MockForecaster(bool diverge = false)
      : bias_(ad::Tensor::from_values({3}, {0.1, 0.2, 0.3}, true)), diverge_(diverge) {}

  std::string family() const override { return "mock"; }
  ForecastOutput forward(const Batch& batch, const nn::Mode& mode) override {
    const ad::Shape shape{batch.size, batch.horizon, 3};
    if (mode.train) {
      if (diverge_) return {ad::Tensor::full(shape, std::numeric_limits<double>::quiet_NaN()), {}, {}, {}};
      return {ad::add(ad::Tensor::zeros(shape), bias_), {}, {}, {}};
    }
    return {ad::Tensor::full(shape, 1.0 + static_cast<double>(evals_++)), {}, {}, {}};
  }
  nn::ParamList parameters() const override { return {{"bias", bias_, true}}; }
  const std::vector<double>& quantiles() const override { return q_; }
  std::size_t lookback() const override { return 4; }
  std::size_t horizon() const override { return 2; }
  const FeatureLayout& layout() const override { return layout_; }
  nlohmann::json config_json() const override { return {{"family", "mock"}}; }

 private:
  ad::Tensor bias_;
  bool diverge_;
  std::size_t evals_ = 0;
  std::vector<double> q_{0.05, 0.5, 0.95};
  FeatureLayout layout_;
};

GlobalDataset constant_dataset(std::size_t n, std::size_t k, std::size_t tau, double level, std::mt19937_64& rng) {
  auto ds = random_dataset(n, k, tau, FeatureLayout{}, rng);
  for (auto& s : ds.samples) {
    std::fill(s.past_target.begin(), s.past_target.end(), level);
    std::fill(s.future_target.begin(), s.future_target.end(), level);
  }
  return ds;
}

DeepTCNConfig tiny_tcn(std::size_t k, std::size_t tau) {
  DeepTCNConfig c;
  c.kernel_size = 2;
  c.dilations = {1, 2, 4};
  c.channels = 4;
  c.decoder_hidden = 8;
  c.horizon_embedding = 2;
  c.lookback = k;
  c.horizon = tau;
  c.seed = 1;
  return c;
}

}  // namespace

TEST_CASE("pinball loss examples") {
  std::vector<double> y1{1.0}, p0{0.0}, y0{0.0}, p1{1.0};
  CHECK(pinball_loss_value(p0, y1, {0.9}) == doctest::Approx(0.9));
  CHECK(pinball_loss_value(p1, y0, {0.9}) == doctest::Approx(0.1));
  std::vector<double> y{0.3, 0.7}, p{0.3, 0.3, 0.3, 0.7, 0.7, 0.7};
  CHECK(pinball_loss_value(p, y, {0.05, 0.5, 0.95}) == 0.0);
  CHECK_THROWS_AS(pinball_loss_value(p0, y1, {1.0}), ConfigError);
  CHECK_THROWS_AS(pinball_loss_value(p0, y1, {0.0}), ConfigError);
}

TEST_CASE("pinball loss graph matches the plain form and is nonnegative") {
  std::mt19937_64 rng(1);
  const std::vector<double> q{0.05, 0.5, 0.95};
  for (int trial = 0; trial < 50; ++trial) {
    auto pred = testing::random_tensor({2, 3, 3}, rng);
    std::vector<double> y(6);
    std::uniform_real_distribution<double> u(-2, 2);
    for (auto& v : y) v = u(rng);
    const double a = pinball_loss(pred, y, q).item();
    const double b = pinball_loss_value(pred.values(), y, q);
    CHECK(a == doctest::Approx(b).epsilon(1e-13));
    CHECK(a > 0.0);
  }
}

TEST_CASE("Adam first step moves by about lr times the gradient sign") {
  auto p = ad::Tensor::from_values({3}, {1.0, -2.0, 0.5}, true);
  Adam adam({p}, 0.01);
  auto g = p.grad_mut();
  g[0] = 3.0;
  g[1] = -0.002;
  g[2] = 40.0;
  adam.step();
  CHECK(p.value(0) == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(p.value(1) == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
  CHECK(p.value(2) == doctest::Approx(0.5 - 0.01).epsilon(1e-6));
}

TEST_CASE("Adam leaves parameters alone under zero gradient") {
  auto p = ad::Tensor::from_values({2}, {0.7, -0.3}, true);
  Adam adam({p}, 0.1);
  for (int i = 0; i < 20; ++i) {
    adam.zero_grad();
    p.grad_mut();
    adam.step();
  }
  CHECK(p.value(0) == 0.7);
  CHECK(p.value(1) == -0.3);
}

TEST_CASE("gradient clipping") {
  auto a = ad::Tensor::from_values({2}, {0, 0}, true), b = ad::Tensor::from_values({1}, {0}, true);
  a.grad_mut()[0] = 6.0;
  a.grad_mut()[1] = 0.0;
  b.grad_mut()[0] = 8.0;
  std::vector<ad::Tensor> ps{a, b};
  CHECK(clip_grad_norm(ps, 1.0) == doctest::Approx(10.0));
  double sq = 0;
  for (auto& p : ps)
    for (double g : p.grad()) sq += g * g;
  CHECK(std::sqrt(sq) <= 1.0 + 1e-12);
  CHECK(a.grad()[0] == doctest::Approx(0.6));
  CHECK(clip_grad_norm(ps, 5.0) == doctest::Approx(1.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6));
}

TEST_CASE("early stopping and best checkpoint") {
  MockForecaster model;
  std::mt19937_64 rng(2);
  auto train_ds = random_dataset(8, 4, 2, FeatureLayout{}, rng);
  auto val_ds = random_dataset(4, 4, 2, FeatureLayout{}, rng);
  TrainConfig cfg;
  cfg.patience = 2;
  cfg.max_epochs = 10;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.05;
  auto result = train(model, train_ds, val_ds, cfg);
  const auto& h = result.history;
  CHECK(h.validation_loss.size() == 3);
  CHECK(h.best_epoch == 0);
  CHECK(h.stopped_epoch == 2);
  for (std::size_t i = 1; i < h.validation_loss.size(); ++i) CHECK(h.validation_loss[i] > h.validation_loss[i - 1]);
  CHECK(h.best_validation_loss == *std::min_element(h.validation_loss.begin(), h.validation_loss.end()));
  // The model is restored to the snapshot taken at the best epoch.
  CHECK(snapshot_parameters(model) == result.best_parameters);
}

TEST_CASE("non-finite loss aborts") {
  MockForecaster model(true);
  std::mt19937_64 rng(3);
  auto ds = random_dataset(4, 4, 2, FeatureLayout{}, rng);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.patience = 1;
  CHECK_THROWS_AS(train(model, ds, ds, cfg), DivergenceError);
}

TEST_CASE("training rejects empty datasets and bad configs") {
  MockForecaster model;
  std::mt19937_64 rng(4);
  auto ds = random_dataset(4, 4, 2, FeatureLayout{}, rng);
  GlobalDataset empty = ds;
  empty.samples.clear();
  CHECK_THROWS_AS(train(model, empty, ds, {}), DataError);
  CHECK_THROWS_AS(train(model, ds, empty, {}), DataError);
  TrainConfig bad;
  bad.patience = bad.max_epochs;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("constant target converges") {
  std::mt19937_64 rng(5);
  auto ds = constant_dataset(32, 6, 3, 0.4, rng);
  DeepTCN model(tiny_tcn(6, 3));
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 8;
  cfg.max_epochs = 50;
  cfg.patience = 49;
  auto result = train(model, ds, ds, cfg);
  const double best_train = *std::min_element(result.history.train_loss.begin(), result.history.train_loss.end());
  CHECK(best_train < 1e-3);
}

TEST_CASE("training is deterministic") {
  auto run = [] {
    std::mt19937_64 rng(6);
    auto ds = random_dataset(24, 6, 3, FeatureLayout{}, rng);
    DeepTCN model(tiny_tcn(6, 3));
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.max_epochs = 3;
    cfg.patience = 2;
    cfg.seed = 42;
    auto result = train(model, ds, ds, cfg);
    return std::make_pair(snapshot_parameters(model), result.history.train_loss);
  };
  CHECK(run() == run());
}
