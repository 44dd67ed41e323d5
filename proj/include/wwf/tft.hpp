#pragma once

// Temporal Fusion Transformer.
//
// Per-variable GRN transforms and softmax variable selection on the encoder
// (look-back) and decoder (horizon) sides, an LSTM encoder/decoder acting as
// positional encoding, static enrichment, interpretable multi-head attention
// with a causal mask over all k+tau positions, and per-step quantile heads.
// The county identity is the only static input; an id absent from training
// maps to the mean of the trained county embeddings.

#include <map>
#include <string>
#include <vector>

#include "wwf/forecaster.hpp"

namespace wwf {

struct TFTConfig {
  std::size_t hidden = 32;
  std::size_t heads = 4;
  std::size_t lstm_layers = 1;
  double dropout = 0.1;
  std::vector<double> quantiles{0.05, 0.5, 0.95};
  std::size_t static_embedding = 8;
  bool use_static = true;
  nn::AttentionSharing attention_sharing = nn::AttentionSharing::values;
  std::size_t lookback = 30;
  std::size_t horizon = 10;
  FeatureLayout layout;
  std::vector<std::string> counties;  // embedding vocabulary
  std::uint64_t seed = 0;

  std::size_t n_encoder_vars() const { return 1 + layout.unknown.size() + layout.known.size(); }
  std::size_t n_decoder_vars() const { return layout.known.size(); }
  std::vector<std::string> encoder_var_names() const;
  std::vector<std::string> decoder_var_names() const;

  void validate() const;
  nlohmann::json to_json() const;
  static TFTConfig from_json(const nlohmann::json& j);
};

class TemporalFusionTransformer final : public Forecaster {
 public:
  explicit TemporalFusionTransformer(TFTConfig config);

  std::string family() const override { return "tft"; }
  ForecastOutput forward(const Batch& batch, const nn::Mode& mode) override;
  nn::ParamList parameters() const override;
  const std::vector<double>& quantiles() const override { return config_.quantiles; }
  std::size_t lookback() const override { return config_.lookback; }
  std::size_t horizon() const override { return config_.horizon; }
  const FeatureLayout& layout() const override { return config_.layout; }
  nlohmann::json config_json() const override;

  const TFTConfig& config() const { return config_; }
  // Vocabulary index, or the vocabulary size for an unseen county.
  std::size_t county_index(const std::string& county_id) const;

 private:
  ad::Tensor static_vectors(const Batch& batch) const;

  TFTConfig config_;
  std::map<std::string, std::size_t> vocab_;
  ad::Tensor county_table_;  // [V, static_embedding]
  nn::GatedResidualNetwork static_encoder_;
  nn::GatedResidualNetwork ctx_selection_, ctx_enrichment_, ctx_state_h_, ctx_state_c_;
  nn::VariableSelectionUnit encoder_vsn_, decoder_vsn_;
  std::vector<nn::LSTMCell> encoder_lstm_, decoder_lstm_;
  nn::GateAddNorm lstm_gate_;
  nn::GatedResidualNetwork enrichment_;
  nn::InterpretableMultiHeadAttention attention_;
  nn::GateAddNorm attention_gate_;
  nn::GatedResidualNetwork positionwise_;
  nn::GateAddNorm output_gate_;
  nn::Dense head_;
};

struct VariableImportance {
  std::vector<std::string> encoder_names;
  std::vector<double> encoder_percent;  // sums to 100
  std::vector<std::string> decoder_names;
  std::vector<double> decoder_percent;  // sums to 100
};

// Mean selection weight of each variable over all positions and samples,
// expressed in percent per side.
VariableImportance explain(TemporalFusionTransformer& model, const GlobalDataset& samples,
                           std::size_t batch_size = 256);

}  // namespace wwf
