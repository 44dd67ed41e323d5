#pragma once

// Raw CSV ingestion and preprocessing into aligned per-county panels.
//
// Pipeline per county: cumulative cases -> clamped daily differences ->
// trailing 7-day mean; weekly viral-load samples -> daily linear
// interpolation; policy indices joined through the county->region map;
// calendar covariates; min-max scaling fit on the training block only.

#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wwf/date.hpp"

namespace wwf {

inline constexpr std::array<const char*, 4> kOxfordColumns = {"gov_response", "containment_health", "stringency",
                                                              "economic_support"};
inline constexpr std::array<const char*, 4> kCalendarNames = {"year", "month", "week_of_year", "day_of_week"};
inline constexpr const char* kViralName = "viral_load";
inline constexpr const char* kNoiseName = "noise";

struct CaseRow {
  std::string county_id;
  Date date;
  double cumulative_per_100k = 0.0;
};

struct ViralRow {
  std::string county_id;
  Date date;
  double concentration = 0.0;  // genome copies per mL
};

struct OxfordRow {
  std::string region_id;
  Date date;
  std::array<double, 4> indices{};  // order of kOxfordColumns, each in [0,100]
};

struct CountyRegion {
  std::string county_id;
  std::string region_id;
};

struct RawRecords {
  std::vector<CaseRow> cases;
  std::vector<ViralRow> viral;
  std::vector<OxfordRow> oxford;
  std::vector<CountyRegion> county_map;
};

struct DataPaths {
  std::filesystem::path cases;
  std::filesystem::path viral;
  std::filesystem::path oxford;
  std::filesystem::path county_map;
};

std::vector<CaseRow> read_cases(std::istream& in, const std::string& source = "cases.csv");
std::vector<ViralRow> read_viral(std::istream& in, const std::string& source = "viral.csv");
std::vector<OxfordRow> read_oxford(std::istream& in, const std::string& source = "oxford.csv");
std::vector<CountyRegion> read_county_map(std::istream& in, const std::string& source = "county_map.csv");

// Reads and validates all four files. Throws DataError with the offending
// column or row.
RawRecords load_panel(const DataPaths& paths);

// c[i+1]-c[i] with negatives clamped to 0; length n-1.
std::vector<double> daily_differences(std::span<const double> cumulative);

// Clamped daily differences followed by a trailing 7-day mean. Output element
// j covers the differences ending at input index j+7; length n-7.
std::vector<double> diff_and_smooth(std::span<const double> cumulative);

struct DailySeries {
  Date start;
  std::vector<double> values;

  Date end() const { return start + static_cast<long>(values.size()) - 1; }
};

// Linear interpolation between consecutive samples, covering exactly
// [first sample, last sample]. Samples on the same date are averaged first.
DailySeries interpolate_weekly(std::vector<std::pair<Date, double>> samples);

struct ScaleParams {
  double min = 0.0;
  double max = 1.0;

  double apply(double x) const { return max > min ? (x - min) / (max - min) : 0.0; }
  double invert(double s) const { return max > min ? s * (max - min) + min : min; }
};

// Scales with min/max taken from values[fit_begin, fit_end) only.
std::pair<std::vector<double>, ScaleParams> scale_minmax(std::span<const double> values, std::size_t fit_begin,
                                                         std::size_t fit_end);

// year, month/12, ISO-week/53, ISO-weekday/7, each in (0,1]. Year is scaled
// as (y - min + 1) / (max - min + 1) over the axis.
std::array<std::vector<double>, 4> calendar_covariates(std::span<const Date> dates);

struct SplitSpec {
  double train_fraction = 0.8;
  double validation_fraction = 0.1;  // of the training block
};

// Chronological regions [0,train_end) [train_end,val_end) [val_end,length).
struct SplitBoundaries {
  std::size_t length = 0;
  std::size_t train_end = 0;
  std::size_t val_end = 0;

  std::size_t train_length() const { return train_end; }
  std::size_t validation_length() const { return val_end - train_end; }
  std::size_t test_length() const { return length - val_end; }
  bool operator==(const SplitBoundaries&) const = default;
};

// Training must hold a full window (lookback + horizon); validation and test
// must each hold at least one horizon, their look-back coming from earlier
// dates. Throws DataError naming the county and region otherwise.
SplitBoundaries split_chronological(std::size_t length, const SplitSpec& spec, std::size_t lookback,
                                    std::size_t horizon, const std::string& county_id = {});

struct NamedSeries {
  std::string name;
  std::vector<double> values;
};

struct CountyPanel {
  std::string county_id;
  std::string region_id;
  std::vector<Date> dates;         // contiguous daily axis
  std::vector<double> target_raw;  // smoothed daily cases per 100k
  std::vector<double> target;      // scaled
  std::vector<NamedSeries> unknown;  // scaled past-only covariates
  std::vector<NamedSeries> known;    // scaled known covariates
  std::map<std::string, ScaleParams> scale_params;
  SplitBoundaries split;

  std::size_t length() const { return dates.size(); }
  const ScaleParams& target_scale() const { return scale_params.at("target"); }
  const NamedSeries* find_unknown(const std::string& name) const;
  const NamedSeries* find_known(const std::string& name) const;
};

struct PreprocessOptions {
  SplitSpec split;
  std::size_t lookback = 30;
  std::size_t horizon = 10;
  std::map<std::string, Date> trim_dates;  // drop a county's data after this date
};

struct PanelBuild {
  std::vector<CountyPanel> panels;  // sorted by county id
  std::vector<std::pair<std::string, std::string>> excluded;  // county, reason
};

PanelBuild build_panels(const RawRecords& raw, const PreprocessOptions& options);

// Appends an i.i.d. uniform [0,1) past-only covariate named "noise".
void add_noise_covariate(std::vector<CountyPanel>& panels, std::uint64_t seed);

// One CSV per county plus panels.json with scale params and split boundaries.
void write_panel_cache(const std::filesystem::path& dir, const std::vector<CountyPanel>& panels,
                       const std::string& config_hash, std::uint64_t seed);

}  // namespace wwf
