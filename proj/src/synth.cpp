#include "wwf/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "wwf/error.hpp"

namespace wwf {

namespace {

double clamp100(double v) { return std::clamp(v, 0.0, 100.0); }

std::string num(double v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

// Draw of a transition count out of `n` with per-day probability p.
double transition(double n, double p, bool stochastic, std::mt19937_64& rng) {
  if (!stochastic) return n * p;
  const auto count = static_cast<long long>(std::llround(n));
  if (count <= 0 || p <= 0.0) return 0.0;
  std::binomial_distribution<long long> dist(count, std::min(p, 1.0));
  return static_cast<double>(dist(rng));
}

// Smooth policy path: two slow sinusoids plus occasional level shifts.
std::vector<double> containment_path(std::size_t n, double offset, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double p1 = 60.0 + 60.0 * u(rng), p2 = 150.0 + 100.0 * u(rng);
  const double ph1 = 2.0 * std::numbers::pi * u(rng), ph2 = 2.0 * std::numbers::pi * u(rng);
  const double a1 = 15.0 + 15.0 * u(rng), a2 = 10.0 + 10.0 * u(rng);
  double level = 40.0 + 20.0 * u(rng);
  std::vector<double> out(n);
  for (std::size_t t = 0; t < n; ++t) {
    if (u(rng) < 1.0 / 45.0) level = 30.0 + 40.0 * u(rng);
    const double x = static_cast<double>(t);
    out[t] = clamp100(level + a1 * std::sin(2.0 * std::numbers::pi * x / p1 + ph1) +
                      a2 * std::sin(2.0 * std::numbers::pi * x / p2 + ph2) + offset);
  }
  return out;
}

std::vector<double> economic_path(std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> level(0, 4);
  std::vector<double> out(n);
  double current = 25.0 * level(rng);
  for (std::size_t t = 0; t < n; ++t) {
    if (t % 60 == 59) current = 25.0 * level(rng);
    out[t] = current;
  }
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  if (counties == 0 || days < 30) throw ConfigError("synth: need at least one county and 30 days");
  if (!Date::try_parse(start_date)) throw ConfigError("synth: start_date must be YYYY-MM-DD");
  if (!(population > 0.0 && beta0 > 0.0 && sigma > 0.0 && gamma > 0.0 && waning >= 0.0 && importations >= 0.0))
    throw ConfigError("synth: population and rates must be positive");
  if (!(reporting_fraction > 0.0 && reporting_fraction <= 1.0))
    throw ConfigError("synth: reporting_fraction must lie in (0,1]");
  if (reporting_delay < 1) throw ConfigError("synth: reporting_delay must be at least 1");
  if (shedding_days < 1) throw ConfigError("synth: shedding_days must be at least 1");
  if (case_noise < 0.0 || viral_noise < 0.0 || beta_noise < 0.0) throw ConfigError("synth: noise levels must be >= 0");
}

nlohmann::json SynthConfig::to_json() const {
  return {{"counties", counties},
          {"days", days},
          {"burn_in", burn_in},
          {"start_date", start_date},
          {"population", population},
          {"beta0", beta0},
          {"containment_effect", containment_effect},
          {"containment_offset", containment_offset},
          {"sigma", sigma},
          {"gamma", gamma},
          {"waning", waning},
          {"importations", importations},
          {"reporting_delay", reporting_delay},
          {"reporting_fraction", reporting_fraction},
          {"shedding_log_mean", shedding_log_mean},
          {"shedding_log_sd", shedding_log_sd},
          {"shedding_days", shedding_days},
          {"viral_scale", viral_scale},
          {"case_noise", case_noise},
          {"viral_noise", viral_noise},
          {"beta_noise", beta_noise},
          {"stochastic", stochastic},
          {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.counties = j.value("counties", c.counties);
  c.days = j.value("days", c.days);
  c.burn_in = j.value("burn_in", c.burn_in);
  c.start_date = j.value("start_date", c.start_date);
  c.population = j.value("population", c.population);
  c.beta0 = j.value("beta0", c.beta0);
  c.containment_effect = j.value("containment_effect", c.containment_effect);
  c.containment_offset = j.value("containment_offset", c.containment_offset);
  c.sigma = j.value("sigma", c.sigma);
  c.gamma = j.value("gamma", c.gamma);
  c.waning = j.value("waning", c.waning);
  c.importations = j.value("importations", c.importations);
  c.reporting_delay = j.value("reporting_delay", c.reporting_delay);
  c.reporting_fraction = j.value("reporting_fraction", c.reporting_fraction);
  c.shedding_log_mean = j.value("shedding_log_mean", c.shedding_log_mean);
  c.shedding_log_sd = j.value("shedding_log_sd", c.shedding_log_sd);
  c.shedding_days = j.value("shedding_days", c.shedding_days);
  c.viral_scale = j.value("viral_scale", c.viral_scale);
  c.case_noise = j.value("case_noise", c.case_noise);
  c.viral_noise = j.value("viral_noise", c.viral_noise);
  c.beta_noise = j.value("beta_noise", c.beta_noise);
  c.stochastic = j.value("stochastic", c.stochastic);
  c.seed = j.value("seed", c.seed);
  return c;
}

nlohmann::json SynthTruth::to_json() const {
  nlohmann::json cs = nlohmann::json::array();
  for (const auto& c : counties)
    cs.push_back({{"county_id", c.county_id},
                  {"incidence", c.incidence},
                  {"reported_daily_per_100k", c.reported},
                  {"viral_daily", c.viral_daily},
                  {"containment", c.containment}});
  return {{"reporting_delay", reporting_delay}, {"lead_days", lead_days}, {"counties", cs}};
}

std::vector<double> shedding_kernel(const SynthConfig& config) {
  std::vector<double> w(config.shedding_days, 1.0);
  if (config.shedding_days > 1) {
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double x = static_cast<double>(j) + 0.5;
      const double z = (std::log(x) - config.shedding_log_mean) / config.shedding_log_sd;
      w[j] = std::exp(-0.5 * z * z) / x;
    }
  }
  double total = 0.0;
  for (double v : w) total += v;
  for (double& v : w) v /= total;
  return w;
}

SynthOutput generate_panel(const SynthConfig& config) {
  config.validate();
  const Date start = Date::parse(config.start_date);
  const auto kernel = shedding_kernel(config);
  const std::size_t total_days = config.burn_in + config.days;
  const double per100k = 1e5 / config.population;

  SynthOutput out;
  out.truth.reporting_delay = config.reporting_delay;
  out.truth.lead_days = static_cast<long>(config.reporting_delay) -
                        static_cast<long>(std::max_element(kernel.begin(), kernel.end()) - kernel.begin());

  for (std::size_t c = 0; c < config.counties; ++c) {
    char id[16];
    std::snprintf(id, sizeof id, "C%02zu", c + 1);
    const std::string county = id;
    const std::string region = "R" + county.substr(1);
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(c)};
    std::mt19937_64 rng(seq);
    // Separate streams so the policy path does not depend on the offset or
    // on how many epidemic draws were taken.
    std::mt19937_64 policy_rng(rng()), noise_rng(rng());

    const auto containment = containment_path(total_days, config.containment_offset, policy_rng);
    const auto economic = economic_path(total_days, policy_rng);

    std::normal_distribution<double> normal(0.0, 1.0);
    std::poisson_distribution<long long> imports(config.importations);
    double s = config.population * 0.98, e = config.population * 0.01, i = config.population * 0.01, r = 0.0;
    if (config.stochastic) {
      s = std::round(s);
      e = std::round(e);
      i = std::round(i);
    }
    double ou = 0.0;
    const double ou_theta = 0.1;
    CountyTruth truth{county, {}, {}, {}, {}, {}};
    std::vector<double> incidence(total_days);
    for (std::size_t t = 0; t < total_days; ++t) {
      ou += -ou_theta * ou + config.beta_noise * std::sqrt(2.0 * ou_theta) * normal(rng);
      const double beta = config.beta0 * (1.0 - config.containment_effect * containment[t] / 100.0) *
                          std::exp(config.stochastic ? ou : 0.0);
      const double p_inf = 1.0 - std::exp(-beta * i / config.population);
      double new_e = transition(s, p_inf, config.stochastic, rng);
      const double imported = config.stochastic ? static_cast<double>(imports(rng)) : config.importations;
      new_e = std::min(s, new_e + imported);
      const double new_i = transition(e, 1.0 - std::exp(-config.sigma), config.stochastic, rng);
      const double new_r = transition(i, 1.0 - std::exp(-config.gamma), config.stochastic, rng);
      const double new_s = transition(r, 1.0 - std::exp(-config.waning), config.stochastic, rng);
      s += new_s - new_e;
      e += new_e - new_i;
      i += new_i - new_r;
      r += new_r - new_s;
      incidence[t] = new_e;
      if (t >= config.burn_in) truth.compartment_sum.push_back(s + e + i + r);
    }

    // Observation channels over the emitted days.
    std::vector<double> reported(config.days), viral(config.days);
    for (std::size_t d = 0; d < config.days; ++d) {
      const std::size_t t = config.burn_in + d;
      const double lagged = t >= config.reporting_delay ? incidence[t - config.reporting_delay] : incidence[0];
      const double case_eps = config.case_noise > 0.0 ? std::exp(config.case_noise * normal(noise_rng)) : 1.0;
      reported[d] = config.reporting_fraction * lagged * per100k * case_eps;
      double shed = 0.0;
      for (std::size_t j = 0; j < kernel.size(); ++j) shed += kernel[j] * incidence[t >= j ? t - j : 0];
      viral[d] = config.viral_scale * shed * per100k;
    }

    double cumulative = 0.0;
    for (std::size_t d = 0; d < config.days; ++d) {
      const Date date = start + static_cast<long>(d);
      cumulative += reported[d];
      out.raw.cases.push_back({county, date, cumulative});
      if (d % 7 == 0 || d + 1 == config.days) {
        const double eps = config.viral_noise > 0.0 ? std::exp(config.viral_noise * normal(noise_rng)) : 1.0;
        out.raw.viral.push_back({county, date, viral[d] * eps});
      }
      OxfordRow ox{region, date, {}};
      const std::size_t t = config.burn_in + d;
      ox.indices[1] = containment[t];
      ox.indices[2] = clamp100(0.9 * containment[t] + 5.0);
      ox.indices[3] = economic[t];
      ox.indices[0] = clamp100(0.8 * containment[t] + 0.2 * economic[t]);
      out.raw.oxford.push_back(ox);
    }
    out.raw.county_map.push_back({county, region});

    truth.incidence.assign(incidence.begin() + static_cast<long>(config.burn_in), incidence.end());
    truth.reported = reported;
    truth.viral_daily = viral;
    truth.containment.assign(containment.begin() + static_cast<long>(config.burn_in), containment.end());
    out.truth.counties.push_back(std::move(truth));
  }
  return out;
}

DataPaths write_synth(const std::filesystem::path& dir, const SynthOutput& output, const std::string& header_comment) {
  std::filesystem::create_directories(dir);
  DataPaths paths{dir / "cases.csv", dir / "viral.csv", dir / "oxford.csv", dir / "county_map.csv"};
  auto open = [&](const std::filesystem::path& p) {
    std::ofstream f(p);
    if (!f) throw Error("cannot write " + p.string());
    if (!header_comment.empty()) f << "# " << header_comment << '\n';
    return f;
  };
  {
    auto f = open(paths.cases);
    f << "county_id,date,cumulative_cases_per_100k\n";
    for (const auto& r : output.raw.cases)
      f << r.county_id << ',' << r.date.iso() << ',' << num(r.cumulative_per_100k) << '\n';
  }
  {
    auto f = open(paths.viral);
    f << "county_id,date,effective_concentration_gc_per_ml\n";
    for (const auto& r : output.raw.viral) f << r.county_id << ',' << r.date.iso() << ',' << num(r.concentration) << '\n';
  }
  {
    auto f = open(paths.oxford);
    f << "region_id,date";
    for (const char* c : kOxfordColumns) f << ',' << c;
    f << '\n';
    for (const auto& r : output.raw.oxford) {
      f << r.region_id << ',' << r.date.iso();
      for (double v : r.indices) f << ',' << num(v, 4);
      f << '\n';
    }
  }
  {
    auto f = open(paths.county_map);
    f << "county_id,region_id\n";
    for (const auto& r : output.raw.county_map) f << r.county_id << ',' << r.region_id << '\n';
  }
  std::ofstream t(dir / "truth.json");
  auto j = output.truth.to_json();
  if (!header_comment.empty()) j["provenance"] = header_comment;
  t << j.dump(1) << '\n';
  return paths;
}

}  // namespace wwf
