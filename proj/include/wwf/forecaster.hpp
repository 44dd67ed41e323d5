#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "wwf/nn.hpp"
#include "wwf/windowing.hpp"

namespace wwf {

struct ForecastOutput {
  ad::Tensor quantiles;        // [B, tau, |Q|], unsorted
  ad::Tensor encoder_weights;  // [B, k, n_enc]   (TFT only)
  ad::Tensor decoder_weights;  // [B, tau, n_dec] (TFT only)
  ad::Tensor attention;        // [B, tau, k+tau], decoder queries (TFT only)
};

// Common surface of the two model families: batched forward, parameter
// enumeration and a JSON-serialisable config.
class Forecaster {
 public:
  virtual ~Forecaster() = default;

  virtual std::string family() const = 0;
  virtual ForecastOutput forward(const Batch& batch, const nn::Mode& mode) = 0;
  virtual nn::ParamList parameters() const = 0;
  virtual const std::vector<double>& quantiles() const = 0;
  virtual std::size_t lookback() const = 0;
  virtual std::size_t horizon() const = 0;
  virtual const FeatureLayout& layout() const = 0;
  virtual nlohmann::json config_json() const = 0;
};

// Quantile crossings resolved by sorting each horizon step. Eval mode, no
// graph is recorded. Result is [B][tau][|Q|] flattened.
std::vector<double> predict_sorted(Forecaster& model, const Batch& batch);

// FNV-1a over parameter names, shapes and value bytes (including buffers).
std::uint64_t parameter_hash(const Forecaster& model);
std::string hex64(std::uint64_t value);

std::vector<std::vector<double>> snapshot_parameters(const Forecaster& model);
void restore_parameters(Forecaster& model, const std::vector<std::vector<double>>& values);

void validate_quantiles(const std::vector<double>& quantiles);

// Self-describing checkpoint: family, config echo, parameter blobs and the
// scale-params fingerprint of the training data.
nlohmann::json checkpoint_json(const Forecaster& model, const std::string& data_fingerprint);
std::unique_ptr<Forecaster> model_from_checkpoint(const nlohmann::json& checkpoint);
void save_checkpoint(const std::filesystem::path& path, const Forecaster& model, const std::string& data_fingerprint);
std::unique_ptr<Forecaster> load_checkpoint(const std::filesystem::path& path);

// Builds a fresh model of the family named in `config["family"]`.
std::unique_ptr<Forecaster> make_model(const nlohmann::json& config);

}  // namespace wwf
