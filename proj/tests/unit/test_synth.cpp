#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>

#include "doctest.h"
#include "wwf/error.hpp"
#include "wwf/synth.hpp"

using namespace wwf;

namespace {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Lag (days) at which viral(t) best correlates with cases(t + lag).
long xcorr_argmax(const std::vector<double>& viral, const std::vector<double>& cases, long max_lag) {
  long best = 0;
  double best_r = -2.0;
  const std::size_t n = std::min(viral.size(), cases.size());
  for (long lag = 0; lag <= max_lag; ++lag) {
    std::vector<double> a(viral.begin(), viral.begin() + static_cast<long>(n) - lag);
    std::vector<double> b(cases.begin() + lag, cases.begin() + static_cast<long>(n));
    const double r = pearson(a, b);
    if (r > best_r) {
      best_r = r;
      best = lag;
    }
  }
  return best;
}

// Observable series of one county: daily reported cases from the cumulative
// counts and the viral samples interpolated to days, on a shared axis.
std::pair<std::vector<double>, std::vector<double>> observed(const RawRecords& raw, const std::string& county) {
  std::map<Date, double> cum;
  for (const auto& r : raw.cases)
    if (r.county_id == county) cum[r.date] = r.cumulative_per_100k;
  std::vector<std::pair<Date, double>> samples;
  for (const auto& r : raw.viral)
    if (r.county_id == county) samples.emplace_back(r.date, r.concentration);
  auto viral = interpolate_weekly(samples);
  std::vector<double> cases, v;
  for (std::size_t i = 0; i < viral.values.size(); ++i) {
    const Date d = viral.start + static_cast<long>(i);
    auto it = cum.find(d), prev = cum.find(d - 1);
    if (it == cum.end() || prev == cum.end()) continue;
    cases.push_back(it->second - prev->second);
    v.push_back(viral.values[i]);
  }
  return {v, cases};
}

}  // namespace

TEST_CASE("compartments are conserved") {
  SynthConfig cfg;
  cfg.counties = 3;
  cfg.days = 200;
  auto out = generate_panel(cfg);
  REQUIRE(out.truth.counties.size() == 3);
  for (const auto& c : out.truth.counties)
    for (double s : c.compartment_sum) CHECK(std::abs(s - cfg.population) <= 1e-6 * cfg.population);
}

TEST_CASE("same seed gives identical panels") {
  SynthConfig cfg;
  cfg.counties = 2;
  cfg.days = 150;
  cfg.seed = 99;
  auto a = generate_panel(cfg), b = generate_panel(cfg);
  REQUIRE(a.raw.cases.size() == b.raw.cases.size());
  for (std::size_t i = 0; i < a.raw.cases.size(); ++i)
    CHECK(a.raw.cases[i].cumulative_per_100k == b.raw.cases[i].cumulative_per_100k);
  REQUIRE(a.raw.viral.size() == b.raw.viral.size());
  for (std::size_t i = 0; i < a.raw.viral.size(); ++i) CHECK(a.raw.viral[i].concentration == b.raw.viral[i].concentration);
  cfg.seed = 100;
  CHECK(generate_panel(cfg).raw.cases.back().cumulative_per_100k != a.raw.cases.back().cumulative_per_100k);
}

TEST_CASE("deterministic limit leads by exactly the reporting delay") {
  SynthConfig cfg;
  cfg.counties = 1;
  cfg.days = 300;
  cfg.stochastic = false;
  cfg.case_noise = 0.0;
  cfg.viral_noise = 0.0;
  cfg.beta_noise = 0.0;
  cfg.reporting_fraction = 1.0;
  cfg.reporting_delay = 3;
  cfg.shedding_days = 1;
  auto out = generate_panel(cfg);
  const auto& t = out.truth.counties[0];
  CHECK(xcorr_argmax(t.viral_daily, t.reported, 15) == 3);
  auto [viral, cases] = observed(out.raw, t.county_id);
  CHECK(xcorr_argmax(viral, cases, 15) == 3);
  CHECK(out.truth.lead_days == 3);
}

TEST_CASE("lead stays near the reporting delay across seeds") {
  SynthConfig cfg;
  cfg.counties = 1;
  cfg.days = 300;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    cfg.seed = seed;
    auto out = generate_panel(cfg);
    auto [viral, cases] = observed(out.raw, out.truth.counties[0].county_id);
    const long lag = xcorr_argmax(viral, cases, 20);
    const long d = static_cast<long>(cfg.reporting_delay);
    INFO("seed " << seed << " lag " << lag);
    CHECK(lag >= d - 2);
    CHECK(lag <= d + 2);
  }
}

TEST_CASE("emitted files re-ingest cleanly") {
  SynthConfig cfg;
  cfg.counties = 3;
  cfg.days = 150;
  auto out = generate_panel(cfg);
  const auto dir = std::filesystem::temp_directory_path() / "wwf_unit_synth";
  std::filesystem::remove_all(dir);
  auto paths = write_synth(dir, out, "config_hash=0,seed=0");
  CHECK(std::filesystem::exists(dir / "truth.json"));
  auto raw = load_panel(paths);
  CHECK(raw.cases.size() == out.raw.cases.size());
  CHECK(raw.viral.size() == out.raw.viral.size());
  auto build = build_panels(raw, {});
  CHECK(build.panels.size() == 3);
  CHECK(build.excluded.empty());
  std::filesystem::remove_all(dir);
}

// Growth of the initial outbreak over its first month; later waves rebound
// from the larger susceptible pool left by stronger containment.
TEST_CASE("more containment slows the outbreak") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    double previous = std::numeric_limits<double>::infinity();
    for (double offset : {0.0, 20.0, 40.0}) {
      SynthConfig cfg;
      cfg.counties = 1;
      cfg.days = 30;
      cfg.burn_in = 0;
      cfg.seed = seed;
      cfg.containment_offset = offset;
      const auto& inc = generate_panel(cfg).truth.counties[0].incidence;
      const double total = std::accumulate(inc.begin(), inc.end(), 0.0);
      INFO("seed " << seed << " offset " << offset);
      CHECK(total < previous);
      previous = total;
    }
  }
}

TEST_CASE("config validation") {
  SynthConfig cfg;
  cfg.reporting_fraction = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.reporting_delay = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.gamma = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  CHECK(SynthConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
}
