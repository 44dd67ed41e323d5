#pragma once

// DeepTCN: a stack of dilated causal convolution blocks encodes the past
// target and past-only covariates; a dense decoder transforms each horizon
// step's known covariates; both are combined residually and a linear head
// emits one value per quantile.

#include <random>
#include <vector>

#include "wwf/forecaster.hpp"

namespace wwf {

struct DeepTCNConfig {
  std::size_t kernel_size = 3;
  std::vector<std::size_t> dilations{1, 2, 4, 8, 16};
  std::size_t channels = 32;
  std::size_t decoder_hidden = 64;
  std::size_t horizon_embedding = 8;
  std::vector<double> quantiles{0.05, 0.5, 0.95};
  std::size_t lookback = 30;
  std::size_t horizon = 10;
  FeatureLayout layout;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static DeepTCNConfig from_json(const nlohmann::json& j);
};

// 1 + (kernel_size - 1) * sum(dilations)
std::size_t receptive_field(const DeepTCNConfig& config);

class DeepTCN final : public Forecaster {
 public:
  explicit DeepTCN(DeepTCNConfig config);

  std::string family() const override { return "deeptcn"; }
  ForecastOutput forward(const Batch& batch, const nn::Mode& mode) override;
  nn::ParamList parameters() const override;
  const std::vector<double>& quantiles() const override { return config_.quantiles; }
  std::size_t lookback() const override { return config_.lookback; }
  std::size_t horizon() const override { return config_.horizon; }
  const FeatureLayout& layout() const override { return config_.layout; }
  nlohmann::json config_json() const override;

  const DeepTCNConfig& config() const { return config_; }

  // Encoder output [B, channels, k] for inspection.
  ad::Tensor encode(const Batch& batch, const nn::Mode& mode);

 private:
  DeepTCNConfig config_;
  std::vector<nn::DilatedCausalConvBlock> blocks_;
  ad::Tensor horizon_table_;  // [tau, horizon_embedding]
  nn::Dense decoder_in_;
  nn::Dense decoder_out_;
  nn::Dense head_;
};

}  // namespace wwf
