#include <algorithm>
#include <random>
#include <set>

#include "doctest.h"
#include "wwf/error.hpp"
#include "wwf/synth.hpp"
#include "wwf/windowing.hpp"

using namespace wwf;

namespace {

std::size_t brute_count(std::size_t L, std::size_t k, std::size_t tau, std::size_t stride) {
  std::size_t n = 0;
  for (std::size_t start = 0; start + k + tau <= L; start += stride) ++n;
  return n;
}

std::vector<CountyPanel> synth_panels(std::size_t counties, std::size_t days) {
  SynthConfig cfg;
  cfg.counties = counties;
  cfg.days = days;
  cfg.seed = 3;
  return build_panels(generate_panel(cfg).raw, {}).panels;
}

}  // namespace

TEST_CASE("closed-form window count") {
  CHECK(window_count(100, 30, 10, 1) == 61);
  CHECK(window_count(40, 30, 10, 1) == 1);
  CHECK(window_count(39, 30, 10, 1) == 0);
  CHECK_THROWS_AS(window_count(100, 0, 10, 1), ConfigError);
  CHECK_THROWS_AS(window_count(100, 30, 10, 0), ConfigError);
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> L(1, 300), k(1, 60), tau(1, 20), s(1, 15);
  for (int i = 0; i < 1000; ++i) {
    const auto a = L(rng), b = k(rng), c = tau(rng), d = s(rng);
    CHECK(window_count(a, b, c, d) == brute_count(a, b, c, d));
  }
}

TEST_CASE("two counties of length 100") {
  auto panels = synth_panels(2, 140);
  for (auto& p : panels) REQUIRE(p.length() >= 100);
  // Restrict to exactly 100 days through the region boundary.
  for (auto& p : panels) p.split = {p.length(), 100, 100};
  auto ds = make_windows(panels, Region::train, 30, 10, 1);
  CHECK(ds.samples.size() == 122);
}

TEST_CASE("windows have no leakage and match the panel") {
  auto panels = synth_panels(2, 200);
  const FeatureLayout layout;
  for (auto region : {Region::train, Region::validation, Region::test, Region::all})
    for (std::size_t stride : {1u, 3u, 10u}) {
      GlobalDataset ds;
      if (region == Region::train || region == Region::all)
        ds = make_windows(panels, region, 30, 10, stride, layout);
      else
        ds = make_forecast_windows(panels, region, 30, 10, stride, layout);
      REQUIRE_FALSE(ds.empty());
      const std::set<std::string> declared(ds.counties.begin(), ds.counties.end());
      for (const auto& s : ds.samples) {
        CHECK(declared.count(s.county_id) == 1);
        const auto& p = *std::find_if(panels.begin(), panels.end(),
                                      [&](const CountyPanel& c) { return c.county_id == s.county_id; });
        REQUIRE(s.origin >= 30);
        REQUIRE(s.origin + 10 <= p.length());
        // Past slice ends strictly before the future slice begins.
        CHECK(s.past_target.size() == 30);
        CHECK(s.future_target.size() == 10);
        for (std::size_t t = 0; t < 30; ++t) CHECK(s.past_target[t] == p.target[s.origin - 30 + t]);
        for (std::size_t t = 0; t < 10; ++t) CHECK(s.future_target[t] == p.target[s.origin + t]);
        const auto* viral = p.find_unknown(kViralName);
        for (std::size_t t = 0; t < 30; ++t) CHECK(s.past_unknown[t] == viral->values[s.origin - 30 + t]);
        CHECK(s.known.size() == 40 * layout.known.size());
        if (region == Region::train) CHECK(s.origin + 10 <= p.split.train_end);
        if (region == Region::validation) {
          CHECK(s.origin >= p.split.train_end);
          CHECK(s.origin + 10 <= p.split.val_end);
        }
        if (region == Region::test) CHECK(s.origin >= p.split.val_end);
      }
    }
}

TEST_CASE("batch iteration") {
  auto b = batch_iter(10, 4, 7);
  REQUIRE(b.size() == 3);
  CHECK(b[0].size() == 4);
  CHECK(b[1].size() == 4);
  CHECK(b[2].size() == 2);
  std::vector<std::size_t> all;
  for (auto& x : b) all.insert(all.end(), x.begin(), x.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(all[i] == i);
  CHECK(batch_iter(10, 4, 7) == b);
  CHECK(batch_iter(100, 100, 1) != batch_iter(100, 100, 2));
  CHECK_THROWS_AS(batch_iter(0, 4, 1), DataError);
  CHECK_THROWS_AS(batch_iter(5, 0, 1), ConfigError);
}

TEST_CASE("collate lays out samples row-major") {
  auto panels = synth_panels(1, 160);
  auto ds = make_windows(panels, Region::train, 5, 2, 20);
  REQUIRE(ds.samples.size() >= 2);
  std::vector<std::size_t> idx{1, 0};
  auto batch = Batch::collate(ds, idx);
  CHECK(batch.size == 2);
  CHECK(batch.past_target[0] == ds.samples[1].past_target[0]);
  CHECK(batch.past_target[5] == ds.samples[0].past_target[0]);
  CHECK(batch.future_target[2] == ds.samples[0].future_target[0]);
  CHECK(batch.county_ids[0] == ds.samples[1].county_id);
}
