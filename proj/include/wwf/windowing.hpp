#pragma once

// Turns aligned panels into the global set of look-back/horizon windows used
// for training and inference.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "wwf/data.hpp"

namespace wwf {

// Which panel series feed the models. Past-only covariates come first in the
// encoder input, followed by the known covariates.
struct FeatureLayout {
  std::vector<std::string> unknown{kViralName};
  std::vector<std::string> known{kOxfordColumns[0], kOxfordColumns[1], kOxfordColumns[2], kOxfordColumns[3],
                                 kCalendarNames[0], kCalendarNames[1], kCalendarNames[2], kCalendarNames[3]};

  bool operator==(const FeatureLayout&) const = default;
};

struct WindowSample {
  std::string county_id;
  std::size_t origin = 0;              // panel index of the first forecast day
  std::vector<double> past_target;     // [k]      indices origin-k .. origin-1
  std::vector<double> past_unknown;    // [k, u]   row-major
  std::vector<double> known;           // [k+tau, n]
  std::vector<double> future_target;   // [tau], empty when beyond the data
};

struct GlobalDataset {
  std::size_t lookback = 0;
  std::size_t horizon = 0;
  FeatureLayout layout;
  std::vector<std::string> counties;  // declared county set
  std::vector<WindowSample> samples;

  std::size_t n_unknown() const { return layout.unknown.size(); }
  std::size_t n_known() const { return layout.known.size(); }
  bool empty() const { return samples.empty(); }
};

enum class Region { train, validation, test, all };

// Closed-form count of windows of length k+tau in a series of length L.
std::size_t window_count(std::size_t length, std::size_t lookback, std::size_t horizon, std::size_t stride);

// Windows lying entirely inside `region` (past and future), stepping by stride.
GlobalDataset make_windows(const std::vector<CountyPanel>& panels, Region region, std::size_t lookback,
                           std::size_t horizon, std::size_t stride, const FeatureLayout& layout = {});

// Windows whose forecast slice lies inside `region`; the look-back may reach
// into earlier regions. The first origin is the region start.
GlobalDataset make_forecast_windows(const std::vector<CountyPanel>& panels, Region region, std::size_t lookback,
                                    std::size_t horizon, std::size_t stride, const FeatureLayout& layout = {});

// Single window ending its look-back just before `origin`.
WindowSample make_sample(const CountyPanel& panel, std::size_t origin, std::size_t lookback, std::size_t horizon,
                         const FeatureLayout& layout);

// Shuffled partition of [0, n) into batches; the last one may be short.
std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size, std::uint64_t seed);

// Dense views of a set of samples for the models.
struct Batch {
  std::size_t size = 0;
  std::size_t lookback = 0;
  std::size_t horizon = 0;
  std::size_t n_unknown = 0;
  std::size_t n_known = 0;
  std::vector<double> past_target;    // [B, k]
  std::vector<double> past_unknown;   // [B, k, u]
  std::vector<double> known;          // [B, k+tau, n]
  std::vector<double> future_target;  // [B, tau] or empty
  std::vector<std::string> county_ids;

  static Batch collate(const GlobalDataset& data, std::span<const std::size_t> indices);
  static Batch collate(const GlobalDataset& data);
};

}  // namespace wwf
