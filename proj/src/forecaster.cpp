#include "wwf/forecaster.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "wwf/deeptcn.hpp"
#include "wwf/error.hpp"
#include "wwf/tft.hpp"

namespace wwf {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

constexpr int kCheckpointVersion = 1;

}  // namespace

std::vector<double> predict_sorted(Forecaster& model, const Batch& batch) {
  ad::NoGradGuard no_grad;
  auto out = model.forward(batch, nn::Mode::eval());
  std::vector<double> q(out.quantiles.values().begin(), out.quantiles.values().end());
  const std::size_t nq = model.quantiles().size();
  for (std::size_t i = 0; i + nq <= q.size(); i += nq) std::sort(q.begin() + i, q.begin() + i + nq);
  return q;
}

std::uint64_t parameter_hash(const Forecaster& model) {
  std::uint64_t h = kFnvOffset;
  for (const auto& p : model.parameters()) {
    fnv(h, p.name.data(), p.name.size());
    for (auto d : p.tensor.shape()) {
      const std::uint64_t v = d;
      fnv(h, &v, sizeof v);
    }
    const auto vals = p.tensor.values();
    fnv(h, vals.data(), vals.size() * sizeof(double));
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::vector<std::vector<double>> snapshot_parameters(const Forecaster& model) {
  std::vector<std::vector<double>> out;
  for (const auto& p : model.parameters()) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

void restore_parameters(Forecaster& model, const std::vector<std::vector<double>>& values) {
  auto params = model.parameters();
  if (params.size() != values.size()) throw ShapeError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor.values_mut();
    if (dst.size() != values[i].size())
      throw ShapeError("restore: size mismatch for parameter '" + params[i].name + "'");
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

void validate_quantiles(const std::vector<double>& quantiles) {
  if (quantiles.empty()) throw ConfigError("quantile set must not be empty");
  for (std::size_t i = 0; i < quantiles.size(); ++i) {
    if (!(quantiles[i] > 0.0 && quantiles[i] < 1.0))
      throw ConfigError("quantile " + std::to_string(quantiles[i]) + " outside (0,1)");
    if (i > 0 && !(quantiles[i] > quantiles[i - 1])) throw ConfigError("quantiles must be strictly increasing");
  }
}

nlohmann::json checkpoint_json(const Forecaster& model, const std::string& data_fingerprint) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : model.parameters())
    params.push_back({{"name", p.name},
                      {"shape", p.tensor.shape()},
                      {"trainable", p.trainable},
                      {"values", std::vector<double>(p.tensor.values().begin(), p.tensor.values().end())}});
  return {{"version", kCheckpointVersion},
          {"family", model.family()},
          {"config", model.config_json()},
          {"data_fingerprint", data_fingerprint},
          {"parameter_hash", hex64(parameter_hash(model))},
          {"parameters", params}};
}

std::unique_ptr<Forecaster> model_from_checkpoint(const nlohmann::json& checkpoint) {
  if (checkpoint.value("version", 0) != kCheckpointVersion) throw ConfigError("checkpoint: unsupported version");
  auto model = make_model(checkpoint.at("config"));
  if (model->family() != checkpoint.at("family").get<std::string>())
    throw ConfigError("checkpoint: family does not match its config");
  auto params = model->parameters();
  const auto& stored = checkpoint.at("parameters");
  if (stored.size() != params.size())
    throw ShapeError("checkpoint: expected " + std::to_string(params.size()) + " parameters, found " +
                     std::to_string(stored.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& s = stored[i];
    if (s.at("name").get<std::string>() != params[i].name)
      throw ShapeError("checkpoint: parameter '" + s.at("name").get<std::string>() + "' where '" + params[i].name +
                       "' was expected");
    if (s.at("shape").get<ad::Shape>() != params[i].tensor.shape())
      throw ShapeError("checkpoint: shape mismatch for '" + params[i].name + "'");
    auto values = s.at("values").get<std::vector<double>>();
    auto dst = params[i].tensor.values_mut();
    if (values.size() != dst.size()) throw ShapeError("checkpoint: size mismatch for '" + params[i].name + "'");
    std::copy(values.begin(), values.end(), dst.begin());
  }
  if (checkpoint.contains("parameter_hash") &&
      checkpoint["parameter_hash"].get<std::string>() != hex64(parameter_hash(*model)))
    throw ConfigError("checkpoint: parameter hash mismatch");
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const Forecaster& model, const std::string& data_fingerprint) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << checkpoint_json(model, data_fingerprint).dump();
}

std::unique_ptr<Forecaster> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint " + path.string() + ": " + e.what());
  }
  return model_from_checkpoint(j);
}

std::unique_ptr<Forecaster> make_model(const nlohmann::json& config) {
  const auto family = config.value("family", std::string());
  if (family == "tft") return std::make_unique<TemporalFusionTransformer>(TFTConfig::from_json(config));
  if (family == "deeptcn") return std::make_unique<DeepTCN>(DeepTCNConfig::from_json(config));
  throw ConfigError("unknown model family '" + family + "'");
}

}  // namespace wwf
