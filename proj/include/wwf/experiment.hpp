#pragma once

// End-to-end experiment orchestration driven by one JSON config: data
// preparation, training, backtesting, the four-variant ablation and
// variable-importance reports.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wwf/evaluation.hpp"
#include "wwf/synth.hpp"
#include "wwf/tft.hpp"
#include "wwf/trainer.hpp"

namespace wwf {

struct ExperimentConfig {
  std::optional<DataPaths> data;
  std::optional<SynthConfig> synth;
  std::vector<std::string> holdout;
  std::map<std::string, Date> trim_dates;
  std::string family = "tft";
  nlohmann::json tft = nlohmann::json::object();
  nlohmann::json deeptcn = nlohmann::json::object();
  TrainConfig train;
  std::size_t lookback = 30;
  std::size_t horizon = 10;
  std::size_t train_stride = 1;
  SplitSpec split;
  BacktestPlan backtest;
  std::vector<double> quantiles{0.05, 0.5, 0.95};
  bool use_viral = true;
  bool add_noise_covariate = false;
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 0;

  // Parses and validates; relative paths resolve against base_dir. Throws
  // ConfigError naming the offending field.
  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path);
  void validate() const;
  nlohmann::json to_json() const;
  // FNV-1a of the canonical JSON form.
  std::string hash() const;
  std::string provenance() const;  // "config_hash=<h>,seed=<s>"
};

struct PreparedData {
  std::vector<CountyPanel> panels;  // all counties, sorted by id
  std::vector<std::string> training;
  std::vector<std::string> holdout;
  std::vector<std::pair<std::string, std::string>> excluded;
  std::string fingerprint;  // hash of split boundaries and scale params

  std::vector<CountyPanel> training_panels() const;
  std::vector<SplitBoundaries> splits() const;
};

RawRecords load_raw(const ExperimentConfig& config);
PreparedData prepare_data(const ExperimentConfig& config);
PreparedData prepare_data(const ExperimentConfig& config, const RawRecords& raw);

FeatureLayout feature_layout(const ExperimentConfig& config, bool use_viral);

std::unique_ptr<Forecaster> build_model(const ExperimentConfig& config, const std::string& family,
                                        const FeatureLayout& layout, const std::vector<std::string>& counties);

struct TrainedModel {
  std::unique_ptr<Forecaster> model;
  TrainHistory history;
};

TrainedModel train_model(const ExperimentConfig& config, const PreparedData& data, const std::string& family,
                         bool use_viral);

VariantRun evaluate_variant(const std::string& name, Forecaster& model, const PreparedData& data,
                            const BacktestPlan& plan);

CountySets county_sets(const PreparedData& data);

// Importance on the training counties' windows over their full length.
VariableImportance explain_training(TemporalFusionTransformer& model, const PreparedData& data);
nlohmann::json importance_json(const VariableImportance& vi);

struct AblationOutput {
  std::vector<VariantRun> variants;
  std::vector<TrainHistory> histories;
  AblationTable table;
  nlohmann::json metrics;
  VariableImportance importance;  // from the TFT with viral load
};

AblationOutput run_ablation(const ExperimentConfig& config, const PreparedData& data);

// CLI subcommand dispatcher; writes artifacts under out_dir. Returns the
// process exit status.
int run_subcommand(const std::string& subcommand, const ExperimentConfig& config,
                   const std::filesystem::path& out_dir);

}  // namespace wwf
