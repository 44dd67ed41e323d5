#pragma once

// Layers shared by the two forecaster families: dense layers, dilated causal
// convolution blocks, gating units, the gated residual network, variable
// selection, an LSTM cell and interpretable multi-head attention.
//
// Blocks are plain parameter containers. Parameters are Tensor handles, so a
// block must not be copied if independent weights are wanted; copying shares
// the underlying nodes.

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "wwf/tensor.hpp"

namespace wwf::nn {

using ad::Tensor;

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable = true;  // false for running statistics
};
using ParamList = std::vector<NamedTensor>;

struct Mode {
  bool train = false;
  std::mt19937_64* rng = nullptr;  // required when train and dropout > 0

  static Mode eval() { return {}; }
  static Mode training(std::mt19937_64& rng) { return {true, &rng}; }
};

Tensor uniform_tensor(ad::Shape shape, double bound, std::mt19937_64& rng);
// Applies `x` through a [in,out] matrix on its last axis, whatever the rank.
Tensor apply_last_axis(const Tensor& x, const Tensor& weight);
Tensor dropout(const Tensor& x, double p, const Mode& mode);

class Dense {
 public:
  Dense() = default;
  Dense(std::size_t in, std::size_t out, std::mt19937_64& rng, bool bias = true);

  // x [..., in] -> [..., out]
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;

  std::size_t in_width() const { return in_; }
  std::size_t out_width() const { return out_; }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  Tensor weight_;
  Tensor bias_;  // undefined when bias-free
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t width);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
  Tensor& gain() { return gain_; }
  Tensor& bias() { return bias_; }

 private:
  Tensor gain_;
  Tensor bias_;
};

class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels);
  Tensor forward(const Tensor& x, const Mode& mode);
  void collect(const std::string& prefix, ParamList& out) const;

 private:
  Tensor gamma_;
  Tensor beta_;
  Tensor running_mean_;
  Tensor running_var_;
};

// conv -> batchnorm -> ReLU, twice, with a residual add before the final
// ReLU. The residual path is a 1x1 convolution when channel counts differ.
class DilatedCausalConvBlock {
 public:
  DilatedCausalConvBlock() = default;
  DilatedCausalConvBlock(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_size,
                         std::size_t dilation, std::mt19937_64& rng);

  // x [B, in_channels, T] -> [B, out_channels, T]
  Tensor forward(const Tensor& x, const Mode& mode);
  void collect(const std::string& prefix, ParamList& out) const;

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  std::size_t kernel_size() const { return kernel_; }
  std::size_t dilation() const { return dilation_; }

 private:
  std::size_t in_ = 0, out_ = 0, kernel_ = 0, dilation_ = 1;
  Tensor w1_, b1_, w2_, b2_;
  BatchNorm bn1_, bn2_;
  Tensor w_res_, b_res_;  // undefined when in == out
};

// sigmoid(W_g x + b_g) * (W_v x + b_v)
class GatedLinearUnit {
 public:
  GatedLinearUnit() = default;
  GatedLinearUnit(std::size_t in, std::size_t out, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;

 private:
  Dense gate_;
  Dense value_;
};

// LayerNorm(residual + GLU(dropout(x)))
class GateAddNorm {
 public:
  GateAddNorm() = default;
  GateAddNorm(std::size_t width, double dropout, std::mt19937_64& rng);
  Tensor forward(const Tensor& x, const Tensor& residual, const Mode& mode) const;
  void collect(const std::string& prefix, ParamList& out) const;

 private:
  double dropout_ = 0.0;
  GatedLinearUnit glu_;
  LayerNorm norm_;
};

// output = LayerNorm(skip(x) + GLU(W1 ELU(W2 x + W3 c + b2) + b1))
class GatedResidualNetwork {
 public:
  GatedResidualNetwork() = default;
  GatedResidualNetwork(std::size_t in, std::size_t hidden, std::size_t out, std::size_t context_width,
                       double dropout, std::mt19937_64& rng);

  // x [N, in], context [N, context_width] -> [N, out]
  Tensor forward(const Tensor& x, const std::optional<Tensor>& context, const Mode& mode) const;
  void collect(const std::string& prefix, ParamList& out) const;

  std::size_t in_width() const { return in_; }
  std::size_t out_width() const { return out_; }
  std::size_t context_width() const { return context_; }

 private:
  std::size_t in_ = 0, hidden_ = 0, out_ = 0, context_ = 0;
  double dropout_ = 0.0;
  Dense fc_in_;
  Dense fc_context_;
  Dense fc_hidden_;
  GatedLinearUnit glu_;
  std::optional<Dense> skip_;
  LayerNorm norm_;
};

struct SelectionOutput {
  Tensor combined;  // [N, hidden]
  Tensor weights;   // [N, n_vars], rows sum to 1
};

class VariableSelectionUnit {
 public:
  VariableSelectionUnit() = default;
  VariableSelectionUnit(std::size_t n_vars, std::size_t var_width, std::size_t hidden, std::size_t context_width,
                        double dropout, std::mt19937_64& rng);

  // Each variable is [N, var_width].
  SelectionOutput forward(const std::vector<Tensor>& vars, const std::optional<Tensor>& context,
                          const Mode& mode) const;
  void collect(const std::string& prefix, ParamList& out) const;

  std::size_t n_vars() const { return per_var_.size(); }
  GatedResidualNetwork& selector() { return selector_; }

 private:
  std::size_t var_width_ = 1;
  std::size_t hidden_ = 0;
  std::vector<GatedResidualNetwork> per_var_;
  GatedResidualNetwork selector_;
};

struct LSTMState {
  Tensor h;  // [B, hidden]
  Tensor c;  // [B, hidden]
};

class LSTMCell {
 public:
  LSTMCell() = default;
  LSTMCell(std::size_t in, std::size_t hidden, std::mt19937_64& rng);

  LSTMState forward(const Tensor& x, const LSTMState& state) const;
  // Runs the cell over a sequence of [B, in] steps.
  std::vector<Tensor> run(const std::vector<Tensor>& xs, LSTMState& state) const;
  LSTMState zero_state(std::size_t batch) const;
  void collect(const std::string& prefix, ParamList& out) const;

  std::size_t hidden_width() const { return hidden_; }
  Tensor& w_input() { return w_ih_; }
  Tensor& w_hidden() { return w_hh_; }
  Tensor& bias() { return b_; }

 private:
  std::size_t in_ = 0, hidden_ = 0;
  Tensor w_ih_;  // [in, 4h], gate order i, f, g, o
  Tensor w_hh_;  // [h, 4h]
  Tensor b_;     // [4h]
};

enum class AttentionSharing {
  values,  // per-head queries and keys, one value projection
  keys,    // per-head queries and values, one key projection
};

struct AttentionOutput {
  Tensor output;        // [B, Tq, d_model]
  Tensor mean_weights;  // [B, Tq, Tk], averaged over heads
};

class InterpretableMultiHeadAttention {
 public:
  InterpretableMultiHeadAttention() = default;
  InterpretableMultiHeadAttention(std::size_t d_model, std::size_t heads, AttentionSharing sharing, double dropout,
                                  std::mt19937_64& rng);

  // When `mask` is given it overrides `causal`.
  AttentionOutput forward(const Tensor& queries, const Tensor& keys, const Tensor& values, bool causal,
                          const Mode& mode, const ad::Mask* mask = nullptr) const;
  void collect(const std::string& prefix, ParamList& out) const;

  std::size_t heads() const { return heads_; }
  AttentionSharing sharing() const { return sharing_; }

 private:
  std::size_t d_model_ = 0, heads_ = 1, d_head_ = 0;
  AttentionSharing sharing_ = AttentionSharing::values;
  double dropout_ = 0.0;
  std::vector<Dense> q_;
  std::vector<Dense> k_;  // one entry when keys are shared
  std::vector<Dense> v_;  // one entry when values are shared
  Dense out_;
};

}  // namespace wwf::nn
