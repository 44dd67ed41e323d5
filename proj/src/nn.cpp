#include "wwf/nn.hpp"

#include <cmath>

namespace wwf::nn {

namespace ad = wwf::ad;

Tensor uniform_tensor(ad::Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from_values(std::move(shape), std::move(v), true);
}

Tensor apply_last_axis(const Tensor& x, const Tensor& weight) {
  if (x.rank() == 2) return ad::matmul(x, weight);
  const std::size_t in = x.shape().back();
  ad::Shape out_shape = x.shape();
  out_shape.back() = weight.dim(1);
  auto flat = ad::reshape(x, {x.size() / in, in});
  return ad::reshape(ad::matmul(flat, weight), std::move(out_shape));
}

Tensor dropout(const Tensor& x, double p, const Mode& mode) {
  if (!mode.train || p <= 0.0) return x;
  if (mode.rng == nullptr) throw ConfigError("dropout: train mode requires an RNG");
  return ad::dropout(x, p, true, *mode.rng);
}

// ---------------------------------------------------------------- Dense

Dense::Dense(std::size_t in, std::size_t out, std::mt19937_64& rng, bool bias) : in_(in), out_(out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = uniform_tensor({in, out}, bound, rng);
  if (bias) bias_ = Tensor::zeros({out}, true);
}

Tensor Dense::forward(const Tensor& x) const {
  if (x.rank() == 0 || x.shape().back() != in_)
    throw ShapeError("dense: input " + ad::shape_str(x.shape()) + " does not end in width " + std::to_string(in_));
  auto y = apply_last_axis(x, weight_);
  return bias_.defined() ? ad::add(y, bias_) : y;
}

void Dense::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight_, true});
  if (bias_.defined()) out.push_back({prefix + ".bias", bias_, true});
}

// ---------------------------------------------------------------- norms

LayerNorm::LayerNorm(std::size_t width)
    : gain_(Tensor::full({width}, 1.0, true)), bias_(Tensor::zeros({width}, true)) {}

Tensor LayerNorm::forward(const Tensor& x) const { return ad::layer_norm(x, gain_, bias_); }

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gain", gain_, true});
  out.push_back({prefix + ".bias", bias_, true});
}

BatchNorm::BatchNorm(std::size_t channels)
    : gamma_(Tensor::full({channels}, 1.0, true)),
      beta_(Tensor::zeros({channels}, true)),
      running_mean_(Tensor::zeros({channels})),
      running_var_(Tensor::full({channels}, 1.0)) {}

Tensor BatchNorm::forward(const Tensor& x, const Mode& mode) {
  return ad::batch_norm(x, gamma_, beta_, running_mean_, running_var_, mode.train);
}

void BatchNorm::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma_, true});
  out.push_back({prefix + ".beta", beta_, true});
  out.push_back({prefix + ".running_mean", running_mean_, false});
  out.push_back({prefix + ".running_var", running_var_, false});
}

// ---------------------------------------------------------------- conv block

DilatedCausalConvBlock::DilatedCausalConvBlock(std::size_t in_channels, std::size_t out_channels,
                                               std::size_t kernel_size, std::size_t dilation, std::mt19937_64& rng)
    : in_(in_channels), out_(out_channels), kernel_(kernel_size), dilation_(dilation) {
  if (in_ == 0 || out_ == 0 || kernel_ == 0 || dilation_ == 0)
    throw ConfigError("conv block: channels, kernel size and dilation must be positive");
  const double b1 = 1.0 / std::sqrt(static_cast<double>(in_ * kernel_));
  const double b2 = 1.0 / std::sqrt(static_cast<double>(out_ * kernel_));
  w1_ = uniform_tensor({out_, in_, kernel_}, b1, rng);
  b1_ = Tensor::zeros({out_}, true);
  w2_ = uniform_tensor({out_, out_, kernel_}, b2, rng);
  b2_ = Tensor::zeros({out_}, true);
  bn1_ = BatchNorm(out_);
  bn2_ = BatchNorm(out_);
  if (in_ != out_) {
    w_res_ = uniform_tensor({out_, in_, 1}, 1.0 / std::sqrt(static_cast<double>(in_)), rng);
    b_res_ = Tensor::zeros({out_}, true);
  }
}

Tensor DilatedCausalConvBlock::forward(const Tensor& x, const Mode& mode) {
  if (x.rank() != 3 || x.shape()[1] != in_)
    throw ShapeError("conv block: expected " + std::to_string(in_) + " input channels, got input " +
                     ad::shape_str(x.shape()));
  auto h = ad::relu(bn1_.forward(ad::conv1d(x, w1_, b1_, dilation_), mode));
  h = bn2_.forward(ad::conv1d(h, w2_, b2_, dilation_), mode);
  auto residual = w_res_.defined() ? ad::conv1d(x, w_res_, b_res_, 1) : x;
  return ad::relu(ad::add(h, residual));
}

void DilatedCausalConvBlock::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".conv1.weight", w1_, true});
  out.push_back({prefix + ".conv1.bias", b1_, true});
  bn1_.collect(prefix + ".bn1", out);
  out.push_back({prefix + ".conv2.weight", w2_, true});
  out.push_back({prefix + ".conv2.bias", b2_, true});
  bn2_.collect(prefix + ".bn2", out);
  if (w_res_.defined()) {
    out.push_back({prefix + ".residual.weight", w_res_, true});
    out.push_back({prefix + ".residual.bias", b_res_, true});
  }
}

// ---------------------------------------------------------------- gating

GatedLinearUnit::GatedLinearUnit(std::size_t in, std::size_t out, std::mt19937_64& rng)
    : gate_(in, out, rng), value_(in, out, rng) {}

Tensor GatedLinearUnit::forward(const Tensor& x) const {
  return ad::mul(ad::sigmoid(gate_.forward(x)), value_.forward(x));
}

void GatedLinearUnit::collect(const std::string& prefix, ParamList& out) const {
  gate_.collect(prefix + ".gate", out);
  value_.collect(prefix + ".value", out);
}

GateAddNorm::GateAddNorm(std::size_t width, double dropout, std::mt19937_64& rng)
    : dropout_(dropout), glu_(width, width, rng), norm_(width) {}

Tensor GateAddNorm::forward(const Tensor& x, const Tensor& residual, const Mode& mode) const {
  return norm_.forward(ad::add(residual, glu_.forward(dropout(x, dropout_, mode))));
}

void GateAddNorm::collect(const std::string& prefix, ParamList& out) const {
  glu_.collect(prefix + ".glu", out);
  norm_.collect(prefix + ".norm", out);
}

// ---------------------------------------------------------------- GRN

GatedResidualNetwork::GatedResidualNetwork(std::size_t in, std::size_t hidden, std::size_t out,
                                           std::size_t context_width, double dropout, std::mt19937_64& rng)
    : in_(in), hidden_(hidden), out_(out), context_(context_width), dropout_(dropout) {
  if (in == 0 || hidden == 0 || out == 0) throw ConfigError("grn: widths must be positive");
  fc_in_ = Dense(in, hidden, rng);
  if (context_ > 0) fc_context_ = Dense(context_, hidden, rng, false);
  fc_hidden_ = Dense(hidden, out, rng);
  glu_ = GatedLinearUnit(out, out, rng);
  if (in != out) skip_ = Dense(in, out, rng);
  norm_ = LayerNorm(out);
}

Tensor GatedResidualNetwork::forward(const Tensor& x, const std::optional<Tensor>& context,
                                     const Mode& mode) const {
  if (x.rank() != 2 || x.shape()[1] != in_)
    throw ShapeError("grn: expected input [N," + std::to_string(in_) + "], got " + ad::shape_str(x.shape()));
  auto pre = fc_in_.forward(x);
  if (context) {
    if (context_ == 0) throw ConfigError("grn: context supplied to a context-free network");
    if (context->rank() != 2 || context->shape()[0] != x.shape()[0] || context->shape()[1] != context_)
      throw ShapeError("grn: context " + ad::shape_str(context->shape()) + " incompatible with input " +
                       ad::shape_str(x.shape()));
    pre = ad::add(pre, fc_context_.forward(*context));
  }
  auto hidden = fc_hidden_.forward(ad::elu(pre));
  hidden = dropout(hidden, dropout_, mode);
  auto skip = skip_ ? skip_->forward(x) : x;
  return norm_.forward(ad::add(skip, glu_.forward(hidden)));
}

void GatedResidualNetwork::collect(const std::string& prefix, ParamList& out) const {
  fc_in_.collect(prefix + ".fc_in", out);
  if (context_ > 0) fc_context_.collect(prefix + ".fc_context", out);
  fc_hidden_.collect(prefix + ".fc_hidden", out);
  glu_.collect(prefix + ".glu", out);
  if (skip_) skip_->collect(prefix + ".skip", out);
  norm_.collect(prefix + ".norm", out);
}

// ---------------------------------------------------------------- variable selection

VariableSelectionUnit::VariableSelectionUnit(std::size_t n_vars, std::size_t var_width, std::size_t hidden,
                                             std::size_t context_width, double dropout, std::mt19937_64& rng)
    : var_width_(var_width), hidden_(hidden) {
  if (n_vars == 0) throw ConfigError("variable selection: at least one variable required");
  per_var_.reserve(n_vars);
  for (std::size_t i = 0; i < n_vars; ++i)
    per_var_.emplace_back(var_width, hidden, hidden, 0, dropout, rng);
  selector_ = GatedResidualNetwork(n_vars * var_width, hidden, n_vars, context_width, dropout, rng);
}

SelectionOutput VariableSelectionUnit::forward(const std::vector<Tensor>& vars, const std::optional<Tensor>& context,
                                               const Mode& mode) const {
  if (vars.empty()) throw ConfigError("variable selection: empty variable list");
  if (vars.size() != per_var_.size())
    throw ShapeError("variable selection: expected " + std::to_string(per_var_.size()) + " variables, got " +
                     std::to_string(vars.size()));
  const std::size_t rows = vars[0].dim(0);
  for (const auto& v : vars)
    if (v.rank() != 2 || v.shape()[0] != rows || v.shape()[1] != var_width_)
      throw ShapeError("variable selection: inconsistent variable shape " + ad::shape_str(v.shape()));

  auto flat = vars.size() == 1 ? vars[0] : ad::concat(vars, 1);
  auto weights = ad::softmax(selector_.forward(flat, context, mode), 1);

  std::vector<Tensor> transformed;
  transformed.reserve(vars.size());
  for (std::size_t i = 0; i < vars.size(); ++i)
    transformed.push_back(ad::reshape(per_var_[i].forward(vars[i], std::nullopt, mode), {rows, 1, hidden_}));
  auto stacked = transformed.size() == 1 ? transformed[0] : ad::concat(transformed, 1);  // [N, n, hidden]
  auto combined = ad::bmm(ad::reshape(weights, {rows, 1, vars.size()}), stacked);
  return {ad::reshape(combined, {rows, hidden_}), weights};
}

void VariableSelectionUnit::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < per_var_.size(); ++i) per_var_[i].collect(prefix + ".var" + std::to_string(i), out);
  selector_.collect(prefix + ".selector", out);
}

// ---------------------------------------------------------------- LSTM

LSTMCell::LSTMCell(std::size_t in, std::size_t hidden, std::mt19937_64& rng) : in_(in), hidden_(hidden) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  w_ih_ = uniform_tensor({in, 4 * hidden}, bound, rng);
  w_hh_ = uniform_tensor({hidden, 4 * hidden}, bound, rng);
  std::vector<double> b(4 * hidden);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : b) v = dist(rng);
  for (std::size_t j = hidden; j < 2 * hidden; ++j) b[j] = 1.0;  // forget gate
  b_ = Tensor::from_values({4 * hidden}, std::move(b), true);
}

LSTMState LSTMCell::forward(const Tensor& x, const LSTMState& state) const {
  if (x.rank() != 2 || x.shape()[1] != in_)
    throw ShapeError("lstm: expected input [B," + std::to_string(in_) + "], got " + ad::shape_str(x.shape()));
  auto gates = ad::add(ad::add(ad::matmul(x, w_ih_), ad::matmul(state.h, w_hh_)), b_);
  auto i = ad::sigmoid(ad::slice(gates, 1, 0, hidden_));
  auto f = ad::sigmoid(ad::slice(gates, 1, hidden_, hidden_));
  auto g = ad::tanh(ad::slice(gates, 1, 2 * hidden_, hidden_));
  auto o = ad::sigmoid(ad::slice(gates, 1, 3 * hidden_, hidden_));
  auto c = ad::add(ad::mul(f, state.c), ad::mul(i, g));
  auto h = ad::mul(o, ad::tanh(c));
  return {h, c};
}

std::vector<Tensor> LSTMCell::run(const std::vector<Tensor>& xs, LSTMState& state) const {
  std::vector<Tensor> out;
  out.reserve(xs.size());
  for (const auto& x : xs) {
    state = forward(x, state);
    out.push_back(state.h);
  }
  return out;
}

LSTMState LSTMCell::zero_state(std::size_t batch) const {
  return {Tensor::zeros({batch, hidden_}), Tensor::zeros({batch, hidden_})};
}

void LSTMCell::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".w_ih", w_ih_, true});
  out.push_back({prefix + ".w_hh", w_hh_, true});
  out.push_back({prefix + ".bias", b_, true});
}

// ---------------------------------------------------------------- attention

InterpretableMultiHeadAttention::InterpretableMultiHeadAttention(std::size_t d_model, std::size_t heads,
                                                                 AttentionSharing sharing, double dropout,
                                                                 std::mt19937_64& rng)
    : d_model_(d_model), heads_(heads), sharing_(sharing), dropout_(dropout) {
  if (heads == 0 || d_model % heads != 0)
    throw ConfigError("attention: model width " + std::to_string(d_model) + " not divisible by " +
                      std::to_string(heads) + " heads");
  d_head_ = d_model / heads;
  const std::size_t n_k = sharing == AttentionSharing::keys ? 1 : heads;
  const std::size_t n_v = sharing == AttentionSharing::values ? 1 : heads;
  for (std::size_t h = 0; h < heads; ++h) q_.emplace_back(d_model, d_head_, rng);
  for (std::size_t h = 0; h < n_k; ++h) k_.emplace_back(d_model, d_head_, rng);
  for (std::size_t h = 0; h < n_v; ++h) v_.emplace_back(d_model, d_head_, rng);
  out_ = Dense(d_head_, d_model, rng);
}

AttentionOutput InterpretableMultiHeadAttention::forward(const Tensor& queries, const Tensor& keys,
                                                         const Tensor& values, bool causal, const Mode& mode,
                                                         const ad::Mask* mask) const {
  if (queries.rank() != 3 || keys.rank() != 3 || values.rank() != 3 || keys.shape() != values.shape() ||
      queries.shape()[0] != keys.shape()[0] || queries.shape()[2] != d_model_ || keys.shape()[2] != d_model_)
    throw ShapeError("attention: incompatible shapes " + ad::shape_str(queries.shape()) + ", " +
                     ad::shape_str(keys.shape()) + ", " + ad::shape_str(values.shape()));
  const std::size_t tq = queries.shape()[1], tk = keys.shape()[1];
  ad::Mask active = mask ? *mask : (causal ? ad::Mask::causal(tq, tk) : ad::Mask{tq, tk, std::vector<std::uint8_t>(tq * tk, 1)});
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_head_));

  std::vector<Tensor> shared_k, shared_v;
  for (const auto& k : k_) shared_k.push_back(ad::transpose(k.forward(keys)));
  for (const auto& v : v_) shared_v.push_back(v.forward(values));

  Tensor head_sum, weight_sum;
  for (std::size_t h = 0; h < heads_; ++h) {
    auto q = q_[h].forward(queries);
    const auto& kt = shared_k[shared_k.size() == 1 ? 0 : h];
    const auto& v = shared_v[shared_v.size() == 1 ? 0 : h];
    auto weights = ad::masked_softmax(ad::scale(ad::bmm(q, kt), inv_sqrt), active);
    auto head = ad::bmm(dropout(weights, dropout_, mode), v);
    head_sum = h == 0 ? head : ad::add(head_sum, head);
    weight_sum = h == 0 ? weights : ad::add(weight_sum, weights);
  }
  const double inv_heads = 1.0 / static_cast<double>(heads_);
  auto output = out_.forward(ad::scale(head_sum, inv_heads));
  return {dropout(output, dropout_, mode), ad::scale(weight_sum, inv_heads)};
}

void InterpretableMultiHeadAttention::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t h = 0; h < q_.size(); ++h) q_[h].collect(prefix + ".q" + std::to_string(h), out);
  for (std::size_t h = 0; h < k_.size(); ++h) k_[h].collect(prefix + ".k" + std::to_string(h), out);
  for (std::size_t h = 0; h < v_.size(); ++h) v_[h].collect(prefix + ".v" + std::to_string(h), out);
  out_.collect(prefix + ".out", out);
}

}  // namespace wwf::nn
