#include "wwf/windowing.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "wwf/error.hpp"

namespace wwf {

namespace {

void check_geometry(std::size_t lookback, std::size_t horizon, std::size_t stride) {
  if (lookback == 0 || horizon == 0 || stride == 0)
    throw ConfigError("windowing: lookback, horizon and stride must be positive");
}

std::pair<std::size_t, std::size_t> region_range(const CountyPanel& p, Region region) {
  switch (region) {
    case Region::train: return {0, p.split.train_end};
    case Region::validation: return {p.split.train_end, p.split.val_end};
    case Region::test: return {p.split.val_end, p.length()};
    case Region::all: return {0, p.length()};
  }
  return {0, 0};
}

std::vector<const std::vector<double>*> resolve(const CountyPanel& p, const FeatureLayout& layout) {
  std::vector<const std::vector<double>*> out;
  for (const auto& name : layout.unknown) {
    const auto* s = p.find_unknown(name);
    if (!s) throw ConfigError("county '" + p.county_id + "' has no past-only covariate '" + name + "'");
    out.push_back(&s->values);
  }
  for (const auto& name : layout.known) {
    const auto* s = p.find_known(name);
    if (!s) throw ConfigError("county '" + p.county_id + "' has no known covariate '" + name + "'");
    out.push_back(&s->values);
  }
  return out;
}

GlobalDataset empty_dataset(const std::vector<CountyPanel>& panels, std::size_t lookback, std::size_t horizon,
                            const FeatureLayout& layout) {
  GlobalDataset d;
  d.lookback = lookback;
  d.horizon = horizon;
  d.layout = layout;
  for (const auto& p : panels) d.counties.push_back(p.county_id);
  return d;
}

}  // namespace

std::size_t window_count(std::size_t length, std::size_t lookback, std::size_t horizon, std::size_t stride) {
  check_geometry(lookback, horizon, stride);
  if (length < lookback + horizon) return 0;
  return (length - lookback - horizon) / stride + 1;
}

WindowSample make_sample(const CountyPanel& panel, std::size_t origin, std::size_t lookback, std::size_t horizon,
                         const FeatureLayout& layout) {
  if (origin < lookback || origin > panel.length())
    throw DataError("window origin " + std::to_string(origin) + " out of range for county '" + panel.county_id + "'");
  const auto series = resolve(panel, layout);
  const std::size_t u = layout.unknown.size(), n = layout.known.size();
  WindowSample s;
  s.county_id = panel.county_id;
  s.origin = origin;
  const std::size_t begin = origin - lookback;
  s.past_target.assign(panel.target.begin() + static_cast<std::ptrdiff_t>(begin),
                       panel.target.begin() + static_cast<std::ptrdiff_t>(origin));
  s.past_unknown.resize(lookback * u);
  for (std::size_t t = 0; t < lookback; ++t)
    for (std::size_t j = 0; j < u; ++j) s.past_unknown[t * u + j] = (*series[j])[begin + t];
  if (origin + horizon > panel.length())
    throw DataError("known covariates for county '" + panel.county_id + "' end before the forecast horizon");
  s.known.resize((lookback + horizon) * n);
  for (std::size_t t = 0; t < lookback + horizon; ++t)
    for (std::size_t j = 0; j < n; ++j) s.known[t * n + j] = (*series[u + j])[begin + t];
  s.future_target.assign(panel.target.begin() + static_cast<std::ptrdiff_t>(origin),
                         panel.target.begin() + static_cast<std::ptrdiff_t>(origin + horizon));
  return s;
}

GlobalDataset make_windows(const std::vector<CountyPanel>& panels, Region region, std::size_t lookback,
                           std::size_t horizon, std::size_t stride, const FeatureLayout& layout) {
  check_geometry(lookback, horizon, stride);
  auto d = empty_dataset(panels, lookback, horizon, layout);
  for (const auto& p : panels) {
    const auto [lo, hi] = region_range(p, region);
    const std::size_t count = window_count(hi - lo, lookback, horizon, stride);
    for (std::size_t w = 0; w < count; ++w)
      d.samples.push_back(make_sample(p, lo + w * stride + lookback, lookback, horizon, layout));
  }
  return d;
}

GlobalDataset make_forecast_windows(const std::vector<CountyPanel>& panels, Region region, std::size_t lookback,
                                    std::size_t horizon, std::size_t stride, const FeatureLayout& layout) {
  check_geometry(lookback, horizon, stride);
  auto d = empty_dataset(panels, lookback, horizon, layout);
  for (const auto& p : panels) {
    const auto [lo, hi] = region_range(p, region);
    if (lo < lookback)
      throw DataError("county '" + p.county_id + "': not enough history before the forecast region");
    for (std::size_t origin = lo; origin + horizon <= hi; origin += stride)
      d.samples.push_back(make_sample(p, origin, lookback, horizon, layout));
  }
  return d;
}

std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size, std::uint64_t seed) {
  if (n == 0) throw DataError("batch_iter: empty dataset");
  if (batch_size == 0) throw ConfigError("batch_iter: batch size must be at least 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(order[i], order[j]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch_size)));
  return batches;
}

Batch Batch::collate(const GlobalDataset& data, std::span<const std::size_t> indices) {
  Batch b;
  b.size = indices.size();
  b.lookback = data.lookback;
  b.horizon = data.horizon;
  b.n_unknown = data.n_unknown();
  b.n_known = data.n_known();
  bool has_future = true;
  for (auto i : indices) has_future = has_future && data.samples.at(i).future_target.size() == data.horizon;
  for (auto i : indices) {
    const auto& s = data.samples[i];
    b.past_target.insert(b.past_target.end(), s.past_target.begin(), s.past_target.end());
    b.past_unknown.insert(b.past_unknown.end(), s.past_unknown.begin(), s.past_unknown.end());
    b.known.insert(b.known.end(), s.known.begin(), s.known.end());
    if (has_future) b.future_target.insert(b.future_target.end(), s.future_target.begin(), s.future_target.end());
    b.county_ids.push_back(s.county_id);
  }
  return b;
}

Batch Batch::collate(const GlobalDataset& data) {
  std::vector<std::size_t> all(data.samples.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return collate(data, all);
}

}  // namespace wwf
