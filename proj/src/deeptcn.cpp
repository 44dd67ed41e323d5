#include "wwf/deeptcn.hpp"

#include <numeric>

#include "wwf/error.hpp"

namespace wwf {

namespace {

nlohmann::json layout_json(const FeatureLayout& l) { return {{"unknown", l.unknown}, {"known", l.known}}; }

FeatureLayout layout_from(const nlohmann::json& j) {
  FeatureLayout l;
  if (j.contains("layout")) {
    l.unknown = j["layout"].at("unknown").get<std::vector<std::string>>();
    l.known = j["layout"].at("known").get<std::vector<std::string>>();
  }
  return l;
}

}  // namespace

std::size_t receptive_field(const DeepTCNConfig& config) {
  const std::size_t total = std::accumulate(config.dilations.begin(), config.dilations.end(), std::size_t{0});
  return 1 + (config.kernel_size - 1) * total;
}

void DeepTCNConfig::validate() const {
  if (kernel_size == 0 || channels == 0 || decoder_hidden == 0 || horizon_embedding == 0 || dilations.empty())
    throw ConfigError("deeptcn: kernel size, channels, widths and dilations must be positive");
  for (auto d : dilations)
    if (d == 0) throw ConfigError("deeptcn: dilations must be positive");
  if (lookback == 0 || horizon == 0) throw ConfigError("deeptcn: lookback and horizon must be positive");
  validate_quantiles(quantiles);
  const auto rf = receptive_field(*this);
  if (rf < lookback)
    throw ConfigError("deeptcn: receptive field " + std::to_string(rf) + " is smaller than the look-back window " +
                      std::to_string(lookback));
}

nlohmann::json DeepTCNConfig::to_json() const {
  return {{"kernel_size", kernel_size}, {"dilations", dilations},     {"channels", channels},
          {"decoder_hidden", decoder_hidden}, {"horizon_embedding", horizon_embedding},
          {"quantiles", quantiles},   {"lookback", lookback},       {"horizon", horizon},
          {"layout", layout_json(layout)}, {"seed", seed}};
}

DeepTCNConfig DeepTCNConfig::from_json(const nlohmann::json& j) {
  DeepTCNConfig c;
  c.kernel_size = j.value("kernel_size", c.kernel_size);
  c.dilations = j.value("dilations", c.dilations);
  c.channels = j.value("channels", c.channels);
  c.decoder_hidden = j.value("decoder_hidden", c.decoder_hidden);
  c.horizon_embedding = j.value("horizon_embedding", c.horizon_embedding);
  c.quantiles = j.value("quantiles", c.quantiles);
  c.lookback = j.value("lookback", c.lookback);
  c.horizon = j.value("horizon", c.horizon);
  c.layout = layout_from(j);
  c.seed = j.value("seed", c.seed);
  return c;
}

DeepTCN::DeepTCN(DeepTCNConfig config) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  std::size_t in = 1 + config_.layout.unknown.size();
  for (auto d : config_.dilations) {
    blocks_.emplace_back(in, config_.channels, config_.kernel_size, d, rng);
    in = config_.channels;
  }
  horizon_table_ = nn::uniform_tensor({config_.horizon, config_.horizon_embedding}, 0.1, rng);
  decoder_in_ = nn::Dense(config_.layout.known.size() + config_.horizon_embedding, config_.decoder_hidden, rng);
  decoder_out_ = nn::Dense(config_.decoder_hidden, config_.channels, rng);
  head_ = nn::Dense(config_.channels, config_.quantiles.size(), rng);
}

nlohmann::json DeepTCN::config_json() const {
  auto j = config_.to_json();
  j["family"] = family();
  return j;
}

ad::Tensor DeepTCN::encode(const Batch& batch, const nn::Mode& mode) {
  const std::size_t b = batch.size, k = config_.lookback, u = config_.layout.unknown.size();
  if (batch.lookback != k || batch.n_unknown != u || batch.n_known != config_.layout.known.size() ||
      batch.horizon != config_.horizon)
    throw ShapeError("deeptcn: batch geometry does not match the model configuration");
  const std::size_t ch = 1 + u;
  std::vector<double> x(b * ch * k);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t t = 0; t < k; ++t) {
      x[(i * ch) * k + t] = batch.past_target[i * k + t];
      for (std::size_t j = 0; j < u; ++j) x[(i * ch + 1 + j) * k + t] = batch.past_unknown[(i * k + t) * u + j];
    }
  auto h = ad::Tensor::from_values({b, ch, k}, std::move(x));
  for (auto& block : blocks_) h = block.forward(h, mode);
  return h;
}

ForecastOutput DeepTCN::forward(const Batch& batch, const nn::Mode& mode) {
  const std::size_t b = batch.size, k = config_.lookback, tau = config_.horizon;
  const std::size_t n = config_.layout.known.size();
  auto encoded = encode(batch, mode);
  auto last = ad::reshape(ad::slice(encoded, 2, k - 1, 1), {b, config_.channels});

  std::vector<double> future(b * tau * n);
  std::vector<std::size_t> step_index(b * tau), sample_index(b * tau);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t h = 0; h < tau; ++h) {
      for (std::size_t j = 0; j < n; ++j) future[(i * tau + h) * n + j] = batch.known[(i * (k + tau) + k + h) * n + j];
      step_index[i * tau + h] = h;
      sample_index[i * tau + h] = i;
    }
  auto dec_in = ad::concat({ad::Tensor::from_values({b * tau, n}, std::move(future)),
                            ad::gather_rows(horizon_table_, step_index)},
                           1);
  auto decoded = decoder_out_.forward(ad::relu(decoder_in_.forward(dec_in)));
  auto combined = ad::relu(ad::add(ad::gather_rows(last, sample_index), decoded));
  auto out = head_.forward(combined);
  return {ad::reshape(out, {b, tau, config_.quantiles.size()}), {}, {}, {}};
}

nn::ParamList DeepTCN::parameters() const {
  nn::ParamList out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect("encoder.block" + std::to_string(i), out);
  out.push_back({"decoder.horizon_embedding", horizon_table_, true});
  decoder_in_.collect("decoder.fc_in", out);
  decoder_out_.collect("decoder.fc_out", out);
  head_.collect("head", out);
  return out;
}

}  // namespace wwf
