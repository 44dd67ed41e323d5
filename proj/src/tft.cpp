#include "wwf/tft.hpp"

#include <numeric>

#include "wwf/error.hpp"

namespace wwf {

namespace {

const char* sharing_name(nn::AttentionSharing s) { return s == nn::AttentionSharing::keys ? "keys" : "values"; }

nn::AttentionSharing sharing_from(const std::string& s) {
  if (s == "values") return nn::AttentionSharing::values;
  if (s == "keys") return nn::AttentionSharing::keys;
  throw ConfigError("tft: attention_sharing must be 'values' or 'keys', got '" + s + "'");
}

// Splits [B*T, w] batch-major rows into T tensors of [B, w].
std::vector<ad::Tensor> split_time(const ad::Tensor& rows, std::size_t batch, std::size_t steps) {
  std::vector<ad::Tensor> out;
  std::vector<std::size_t> idx(batch);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t b = 0; b < batch; ++b) idx[b] = b * steps + t;
    out.push_back(ad::gather_rows(rows, idx));
  }
  return out;
}

// Inverse of split_time.
ad::Tensor join_time(const std::vector<ad::Tensor>& steps, std::size_t batch) {
  auto time_major = ad::concat(steps, 0);
  const std::size_t n = steps.size();
  std::vector<std::size_t> idx(batch * n);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < n; ++t) idx[b * n + t] = t * batch + b;
  return ad::gather_rows(time_major, idx);
}

ad::Tensor repeat_rows(const ad::Tensor& per_sample, std::size_t batch, std::size_t steps) {
  std::vector<std::size_t> idx(batch * steps);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < steps; ++t) idx[b * steps + t] = b;
  return ad::gather_rows(per_sample, idx);
}

ad::Tensor column(std::size_t rows, std::vector<double> values) {
  return ad::Tensor::from_values({rows, 1}, std::move(values));
}

}  // namespace

std::vector<std::string> TFTConfig::encoder_var_names() const {
  std::vector<std::string> names{"target"};
  names.insert(names.end(), layout.unknown.begin(), layout.unknown.end());
  names.insert(names.end(), layout.known.begin(), layout.known.end());
  return names;
}

std::vector<std::string> TFTConfig::decoder_var_names() const { return layout.known; }

void TFTConfig::validate() const {
  if (hidden == 0 || heads == 0 || hidden % heads != 0)
    throw ConfigError("tft: hidden width " + std::to_string(hidden) + " must be divisible by head count " +
                      std::to_string(heads));
  if (lstm_layers == 0) throw ConfigError("tft: at least one LSTM layer required");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("tft: dropout must lie in [0,1)");
  if (lookback == 0 || horizon == 0) throw ConfigError("tft: lookback and horizon must be positive");
  if (layout.known.empty()) throw ConfigError("tft: decoder needs at least one known covariate");
  if (use_static && (counties.empty() || static_embedding == 0))
    throw ConfigError("tft: static county input needs a non-empty county vocabulary");
  validate_quantiles(quantiles);
}

nlohmann::json TFTConfig::to_json() const {
  return {{"hidden", hidden},
          {"heads", heads},
          {"lstm_layers", lstm_layers},
          {"dropout", dropout},
          {"quantiles", quantiles},
          {"static_embedding", static_embedding},
          {"use_static", use_static},
          {"attention_sharing", sharing_name(attention_sharing)},
          {"lookback", lookback},
          {"horizon", horizon},
          {"layout", {{"unknown", layout.unknown}, {"known", layout.known}}},
          {"counties", counties},
          {"seed", seed}};
}

TFTConfig TFTConfig::from_json(const nlohmann::json& j) {
  TFTConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.heads = j.value("heads", c.heads);
  c.lstm_layers = j.value("lstm_layers", c.lstm_layers);
  c.dropout = j.value("dropout", c.dropout);
  c.quantiles = j.value("quantiles", c.quantiles);
  c.static_embedding = j.value("static_embedding", c.static_embedding);
  c.use_static = j.value("use_static", c.use_static);
  c.attention_sharing = sharing_from(j.value("attention_sharing", std::string("values")));
  c.lookback = j.value("lookback", c.lookback);
  c.horizon = j.value("horizon", c.horizon);
  if (j.contains("layout")) {
    c.layout.unknown = j["layout"].at("unknown").get<std::vector<std::string>>();
    c.layout.known = j["layout"].at("known").get<std::vector<std::string>>();
  }
  c.counties = j.value("counties", c.counties);
  c.seed = j.value("seed", c.seed);
  return c;
}

TemporalFusionTransformer::TemporalFusionTransformer(TFTConfig config) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  const std::size_t d = config_.hidden;
  const double p = config_.dropout;
  const std::size_t ctx = config_.use_static ? d : 0;
  if (config_.use_static) {
    for (std::size_t i = 0; i < config_.counties.size(); ++i) vocab_[config_.counties[i]] = i;
    county_table_ = nn::uniform_tensor({config_.counties.size(), config_.static_embedding}, 1.0, rng);
    static_encoder_ = nn::GatedResidualNetwork(config_.static_embedding, d, d, 0, p, rng);
    ctx_selection_ = nn::GatedResidualNetwork(d, d, d, 0, p, rng);
    ctx_enrichment_ = nn::GatedResidualNetwork(d, d, d, 0, p, rng);
    ctx_state_h_ = nn::GatedResidualNetwork(d, d, d, 0, p, rng);
    ctx_state_c_ = nn::GatedResidualNetwork(d, d, d, 0, p, rng);
  }
  encoder_vsn_ = nn::VariableSelectionUnit(config_.n_encoder_vars(), 1, d, ctx, p, rng);
  decoder_vsn_ = nn::VariableSelectionUnit(config_.n_decoder_vars(), 1, d, ctx, p, rng);
  for (std::size_t l = 0; l < config_.lstm_layers; ++l) {
    encoder_lstm_.emplace_back(d, d, rng);
    decoder_lstm_.emplace_back(d, d, rng);
  }
  lstm_gate_ = nn::GateAddNorm(d, p, rng);
  enrichment_ = nn::GatedResidualNetwork(d, d, d, ctx, p, rng);
  attention_ = nn::InterpretableMultiHeadAttention(d, config_.heads, config_.attention_sharing, p, rng);
  attention_gate_ = nn::GateAddNorm(d, p, rng);
  positionwise_ = nn::GatedResidualNetwork(d, d, d, 0, p, rng);
  output_gate_ = nn::GateAddNorm(d, 0.0, rng);
  head_ = nn::Dense(d, config_.quantiles.size(), rng);
}

nlohmann::json TemporalFusionTransformer::config_json() const {
  auto j = config_.to_json();
  j["family"] = family();
  return j;
}

std::size_t TemporalFusionTransformer::county_index(const std::string& county_id) const {
  auto it = vocab_.find(county_id);
  return it == vocab_.end() ? vocab_.size() : it->second;
}

ad::Tensor TemporalFusionTransformer::static_vectors(const Batch& batch) const {
  const std::size_t v = config_.counties.size();
  std::vector<std::size_t> idx;
  bool any_unseen = false;
  for (const auto& id : batch.county_ids) {
    idx.push_back(county_index(id));
    any_unseen = any_unseen || idx.back() == v;
  }
  if (!any_unseen) return ad::gather_rows(county_table_, idx);
  // Reserved row: mean of all trained county embeddings.
  auto averager = ad::Tensor::full({1, v}, 1.0 / static_cast<double>(v));
  auto extended = ad::concat({county_table_, ad::matmul(averager, county_table_)}, 0);
  return ad::gather_rows(extended, idx);
}

ForecastOutput TemporalFusionTransformer::forward(const Batch& batch, const nn::Mode& mode) {
  const std::size_t b = batch.size, k = config_.lookback, tau = config_.horizon, steps = k + tau;
  const std::size_t u = config_.layout.unknown.size(), n = config_.layout.known.size();
  const std::size_t d = config_.hidden;
  if (batch.lookback != k || batch.horizon != tau || batch.n_unknown != u || batch.n_known != n)
    throw ShapeError("tft: batch geometry does not match the model configuration");

  // Static contexts.
  std::optional<ad::Tensor> sel_enc, sel_dec, enrich_all;
  nn::LSTMState init;
  if (config_.use_static) {
    auto s = static_encoder_.forward(static_vectors(batch), std::nullopt, mode);
    auto c_sel = ctx_selection_.forward(s, std::nullopt, mode);
    sel_enc = repeat_rows(c_sel, b, k);
    sel_dec = repeat_rows(c_sel, b, tau);
    enrich_all = repeat_rows(ctx_enrichment_.forward(s, std::nullopt, mode), b, steps);
    init = {ctx_state_h_.forward(s, std::nullopt, mode), ctx_state_c_.forward(s, std::nullopt, mode)};
  } else {
    init = encoder_lstm_[0].zero_state(b);
  }

  // Encoder variables, rows b*k + t.
  std::vector<ad::Tensor> enc_vars;
  enc_vars.push_back(column(b * k, batch.past_target));
  for (std::size_t j = 0; j < u; ++j) {
    std::vector<double> v(b * k);
    for (std::size_t r = 0; r < b * k; ++r) v[r] = batch.past_unknown[r * u + j];
    enc_vars.push_back(column(b * k, std::move(v)));
  }
  std::vector<ad::Tensor> dec_vars;
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> past(b * k), future(b * tau);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t t = 0; t < k; ++t) past[i * k + t] = batch.known[(i * steps + t) * n + j];
      for (std::size_t h = 0; h < tau; ++h) future[i * tau + h] = batch.known[(i * steps + k + h) * n + j];
    }
    enc_vars.push_back(column(b * k, std::move(past)));
    dec_vars.push_back(column(b * tau, std::move(future)));
  }
  auto enc_sel = encoder_vsn_.forward(enc_vars, sel_enc, mode);
  auto dec_sel = decoder_vsn_.forward(dec_vars, sel_dec, mode);

  // LSTM encoder/decoder.
  auto enc_seq = split_time(enc_sel.combined, b, k);
  auto dec_seq = split_time(dec_sel.combined, b, tau);
  for (std::size_t l = 0; l < config_.lstm_layers; ++l) {
    nn::LSTMState state = init;
    enc_seq = encoder_lstm_[l].run(enc_seq, state);
    dec_seq = decoder_lstm_[l].run(dec_seq, state);
  }
  auto lstm_steps = enc_seq;
  lstm_steps.insert(lstm_steps.end(), dec_seq.begin(), dec_seq.end());
  auto lstm_out = join_time(lstm_steps, b);  // [B*T, d]

  // Selected inputs in the same batch-major order.
  std::vector<std::size_t> order(b * steps);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t t = 0; t < steps; ++t) order[i * steps + t] = t < k ? i * k + t : b * k + i * tau + (t - k);
  auto selected = ad::gather_rows(ad::concat({enc_sel.combined, dec_sel.combined}, 0), order);

  auto temporal = lstm_gate_.forward(lstm_out, selected, mode);
  auto enriched = enrichment_.forward(temporal, enrich_all, mode);

  // Decoder positions attend causally over all k+tau positions.
  auto enriched_seq = ad::reshape(enriched, {b, steps, d});
  auto queries = ad::slice(enriched_seq, 1, k, tau);
  auto att = attention_.forward(queries, enriched_seq, enriched_seq, true, mode);
  auto dec_enriched = ad::reshape(queries, {b * tau, d});
  auto gated = attention_gate_.forward(ad::reshape(att.output, {b * tau, d}), dec_enriched, mode);
  auto pw = positionwise_.forward(gated, std::nullopt, mode);
  auto dec_temporal = ad::reshape(ad::slice(ad::reshape(temporal, {b, steps, d}), 1, k, tau), {b * tau, d});
  auto final_rows = output_gate_.forward(pw, dec_temporal, mode);
  auto out = head_.forward(final_rows);

  return {ad::reshape(out, {b, tau, config_.quantiles.size()}),
          ad::reshape(enc_sel.weights, {b, k, config_.n_encoder_vars()}),
          ad::reshape(dec_sel.weights, {b, tau, config_.n_decoder_vars()}), att.mean_weights};
}

nn::ParamList TemporalFusionTransformer::parameters() const {
  nn::ParamList out;
  if (config_.use_static) {
    out.push_back({"static.county_embedding", county_table_, true});
    static_encoder_.collect("static.encoder", out);
    ctx_selection_.collect("static.ctx_selection", out);
    ctx_enrichment_.collect("static.ctx_enrichment", out);
    ctx_state_h_.collect("static.ctx_state_h", out);
    ctx_state_c_.collect("static.ctx_state_c", out);
  }
  encoder_vsn_.collect("encoder_vsn", out);
  decoder_vsn_.collect("decoder_vsn", out);
  for (std::size_t l = 0; l < encoder_lstm_.size(); ++l) {
    encoder_lstm_[l].collect("encoder_lstm" + std::to_string(l), out);
    decoder_lstm_[l].collect("decoder_lstm" + std::to_string(l), out);
  }
  lstm_gate_.collect("lstm_gate", out);
  enrichment_.collect("enrichment", out);
  attention_.collect("attention", out);
  attention_gate_.collect("attention_gate", out);
  positionwise_.collect("positionwise", out);
  output_gate_.collect("output_gate", out);
  head_.collect("head", out);
  return out;
}

VariableImportance explain(TemporalFusionTransformer& model, const GlobalDataset& samples, std::size_t batch_size) {
  if (samples.samples.empty()) throw DataError("explain: no samples");
  const auto& cfg = model.config();
  std::vector<double> enc(cfg.n_encoder_vars(), 0.0), dec(cfg.n_decoder_vars(), 0.0);
  std::size_t enc_rows = 0, dec_rows = 0;
  ad::NoGradGuard no_grad;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples.samples.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(samples.samples.size(), start + batch_size); ++i) idx.push_back(i);
    auto out = model.forward(Batch::collate(samples, idx), nn::Mode::eval());
    const auto ew = out.encoder_weights.values();
    for (std::size_t r = 0; r < ew.size() / enc.size(); ++r, ++enc_rows)
      for (std::size_t j = 0; j < enc.size(); ++j) enc[j] += ew[r * enc.size() + j];
    const auto dw = out.decoder_weights.values();
    for (std::size_t r = 0; r < dw.size() / dec.size(); ++r, ++dec_rows)
      for (std::size_t j = 0; j < dec.size(); ++j) dec[j] += dw[r * dec.size() + j];
  }
  VariableImportance vi{cfg.encoder_var_names(), {}, cfg.decoder_var_names(), {}};
  for (double v : enc) vi.encoder_percent.push_back(100.0 * v / static_cast<double>(enc_rows));
  for (double v : dec) vi.decoder_percent.push_back(100.0 * v / static_cast<double>(dec_rows));
  return vi;
}

}  // namespace wwf
