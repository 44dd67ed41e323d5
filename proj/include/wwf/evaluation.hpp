#pragma once

// Backtesting without retraining and the three accuracy metrics (MAE, SMAPE,
// CV), plus the four-variant ablation table.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "wwf/forecaster.hpp"

namespace wwf {

struct Metrics {
  double mae = 0.0;
  double smape = 0.0;
  std::optional<double> cv;  // absent when mean(y) == 0
  std::size_t count = 0;

  nlohmann::json to_json() const;
};

// MAE = mean|y - f|; SMAPE = 200 mean(|y - f| / (|y| + |f|)), 0/0 terms are 0;
// CV = 100 RMSE / mean(y).
Metrics compute_metrics(std::span<const double> actual, std::span<const double> forecast);

struct BacktestPlan {
  std::size_t horizon = 10;
  std::size_t stride = 10;
  bool retrain = false;

  void validate() const;
  nlohmann::json to_json() const;
  static BacktestPlan from_json(const nlohmann::json& j);
  bool operator==(const BacktestPlan&) const = default;
};

struct QuantileForecast {
  std::string county_id;
  Date origin_date;            // first forecast day
  std::size_t origin = 0;      // panel index of origin_date
  std::vector<double> values;  // [tau, |Q|], original units, sorted per step, >= 0
  std::vector<double> actual;  // [tau], original units
};

struct BacktestResult {
  std::vector<double> quantiles;
  std::vector<QuantileForecast> forecasts;
  std::map<std::string, Metrics> per_county;
  std::vector<std::pair<std::string, std::string>> skipped;  // county, reason
  std::string hash_before;
  std::string hash_after;

  std::size_t median_index() const;
  // Pooled over every forecast point of the listed counties.
  Metrics pooled(const std::vector<std::string>& counties) const;
  std::size_t blocks_for(const std::string& county_id) const;
};

// Forecast origins at the test start, then every `stride` days while a full
// horizon fits. Point forecast is the median quantile, inverse-scaled and
// clamped at 0. Parameters are never modified.
BacktestResult backtest(Forecaster& model, const std::vector<CountyPanel>& panels, const BacktestPlan& plan);

void write_forecasts_csv(const std::filesystem::path& path, const BacktestResult& result,
                         const std::string& header_comment);

// County-set label -> counties, e.g. {"training": [...], "holdout": [...]}.
using CountySets = std::vector<std::pair<std::string, std::vector<std::string>>>;

struct VariantRun {
  std::string name;  // e.g. "TFT - no viral load"
  BacktestPlan plan;
  std::vector<SplitBoundaries> splits;  // per panel, for plan-identity checks
  BacktestResult result;
};

// {county_set -> variant -> {MAE, SMAPE, CV, per_county}}
nlohmann::json metrics_json(const std::vector<VariantRun>& variants, const CountySets& sets);

struct AblationTable {
  std::vector<std::string> sets;                   // table titles
  std::vector<std::string> variants;               // row labels
  std::vector<std::vector<Metrics>> cells;         // [set][variant]

  std::string render() const;
};

// Rows are the variants in the given order, one table per county set. All
// variants must share the same backtest plan and split boundaries.
AblationTable ablation_report(const std::vector<VariantRun>& variants, const CountySets& sets);

}  // namespace wwf
