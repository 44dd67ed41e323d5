#pragma once

// Synthetic epidemic panels: a stochastic SEIRS process per county whose
// wastewater signal leads reported cases by a configurable delay. Emits the
// raw CSV schemas of the data pipeline.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "wwf/data.hpp"

namespace wwf {

struct SynthConfig {
  std::size_t counties = 10;
  std::size_t days = 400;
  std::size_t burn_in = 60;
  std::string start_date = "2021-01-04";
  double population = 100000.0;
  double beta0 = 0.5;
  double containment_effect = 0.6;  // beta = beta0 (1 - effect * containment / 100)
  double containment_offset = 0.0;  // added to the containment index, clamped to [0,100]
  double sigma = 1.0 / 3.0;         // incubation rate
  double gamma = 1.0 / 5.0;         // recovery rate
  double waning = 1.0 / 90.0;       // R -> S rate
  double importations = 1.0;        // expected imported exposures per day
  std::size_t reporting_delay = 7;  // D
  double reporting_fraction = 0.5;  // rho
  double shedding_log_mean = -0.5;  // log-normal kernel over days since infection
  double shedding_log_sd = 0.5;
  std::size_t shedding_days = 4;    // 1: instantaneous shedding
  double viral_scale = 1000.0;      // gc/mL per daily infection per 100k
  double case_noise = 0.1;          // log-normal sd
  double viral_noise = 0.1;         // log-normal sd
  double beta_noise = 0.05;         // sd of the OU log-beta perturbation
  bool stochastic = true;           // false: expected-value transitions
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

struct CountyTruth {
  std::string county_id;
  std::vector<double> incidence;      // new infections per day
  std::vector<double> reported;       // daily reported cases per 100k, before accumulation
  std::vector<double> viral_daily;    // noise-free daily wastewater signal
  std::vector<double> containment;    // [0,100]
  std::vector<double> compartment_sum;  // S+E+I+R per day
};

struct SynthTruth {
  std::size_t reporting_delay = 0;
  long lead_days = 0;  // delay minus the shedding kernel's peak offset
  std::vector<CountyTruth> counties;

  nlohmann::json to_json() const;
};

struct SynthOutput {
  RawRecords raw;
  SynthTruth truth;
};

std::vector<double> shedding_kernel(const SynthConfig& config);

SynthOutput generate_panel(const SynthConfig& config);

// cases.csv, viral.csv, oxford.csv, county_map.csv and truth.json.
DataPaths write_synth(const std::filesystem::path& dir, const SynthOutput& output, const std::string& header_comment);

}  // namespace wwf
