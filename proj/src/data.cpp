#include "wwf/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "json.hpp"
#include "wwf/csv.hpp"
#include "wwf/error.hpp"

namespace wwf {

namespace {

Date parse_date_field(const CsvTable& t, std::size_t r, std::size_t col) {
  auto d = Date::try_parse(t.rows[r][col]);
  if (!d)
    throw DataError(t.source + ": malformed date '" + t.rows[r][col] + "' in column '" + t.header[col] + "'",
                    t.line_numbers[r]);
  return *d;
}

void require_nonempty_id(const CsvTable& t, std::size_t r, std::size_t col) {
  if (t.rows[r][col].empty())
    throw DataError(t.source + ": empty '" + t.header[col] + "'", t.line_numbers[r]);
}

}  // namespace

std::vector<CaseRow> read_cases(std::istream& in, const std::string& source) {
  const auto t = read_csv(in, source);
  const auto c_id = t.column("county_id"), c_date = t.column("date"), c_cum = t.column("cumulative_cases_per_100k");
  std::vector<CaseRow> out;
  out.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    require_nonempty_id(t, r, c_id);
    CaseRow row{t.rows[r][c_id], parse_date_field(t, r, c_date),
                parse_double(t.rows[r][c_cum], t, r, "cumulative_cases_per_100k")};
    if (row.cumulative_per_100k < 0.0)
      throw DataError(source + ": negative cumulative case count", t.line_numbers[r]);
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<ViralRow> read_viral(std::istream& in, const std::string& source) {
  const auto t = read_csv(in, source);
  const auto c_id = t.column("county_id"), c_date = t.column("date"),
             c_conc = t.column("effective_concentration_gc_per_ml");
  std::vector<ViralRow> out;
  out.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    require_nonempty_id(t, r, c_id);
    ViralRow row{t.rows[r][c_id], parse_date_field(t, r, c_date),
                 parse_double(t.rows[r][c_conc], t, r, "effective_concentration_gc_per_ml")};
    if (row.concentration < 0.0) throw DataError(source + ": negative concentration", t.line_numbers[r]);
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<OxfordRow> read_oxford(std::istream& in, const std::string& source) {
  const auto t = read_csv(in, source);
  const auto c_id = t.column("region_id"), c_date = t.column("date");
  std::array<std::size_t, 4> cols{};
  for (std::size_t i = 0; i < 4; ++i) cols[i] = t.column(kOxfordColumns[i]);
  std::vector<OxfordRow> out;
  out.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    require_nonempty_id(t, r, c_id);
    OxfordRow row{t.rows[r][c_id], parse_date_field(t, r, c_date), {}};
    for (std::size_t i = 0; i < 4; ++i) {
      row.indices[i] = parse_double(t.rows[r][cols[i]], t, r, kOxfordColumns[i]);
      if (row.indices[i] < 0.0 || row.indices[i] > 100.0)
        throw DataError(source + ": " + kOxfordColumns[i] + " outside [0,100]", t.line_numbers[r]);
    }
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<CountyRegion> read_county_map(std::istream& in, const std::string& source) {
  const auto t = read_csv(in, source);
  const auto c_county = t.column("county_id"), c_region = t.column("region_id");
  std::vector<CountyRegion> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    require_nonempty_id(t, r, c_county);
    require_nonempty_id(t, r, c_region);
    out.push_back({t.rows[r][c_county], t.rows[r][c_region]});
  }
  return out;
}

RawRecords load_panel(const DataPaths& paths) {
  auto open = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw DataError("cannot open '" + p.string() + "'");
    return in;
  };
  RawRecords raw;
  {
    auto in = open(paths.cases);
    raw.cases = read_cases(in, paths.cases.string());
  }
  {
    auto in = open(paths.viral);
    raw.viral = read_viral(in, paths.viral.string());
  }
  {
    auto in = open(paths.oxford);
    raw.oxford = read_oxford(in, paths.oxford.string());
  }
  {
    auto in = open(paths.county_map);
    raw.county_map = read_county_map(in, paths.county_map.string());
  }
  return raw;
}

std::vector<double> daily_differences(std::span<const double> cumulative) {
  std::vector<double> out;
  if (cumulative.size() < 2) return out;
  out.reserve(cumulative.size() - 1);
  for (std::size_t i = 1; i < cumulative.size(); ++i) out.push_back(std::max(0.0, cumulative[i] - cumulative[i - 1]));
  return out;
}

std::vector<double> diff_and_smooth(std::span<const double> cumulative) {
  constexpr std::size_t window = 7;
  if (cumulative.size() < window + 1)
    throw DataError("diff_and_smooth: series of length " + std::to_string(cumulative.size()) +
                    " is shorter than 8");
  const auto diffs = daily_differences(cumulative);
  std::vector<double> out(diffs.size() - window + 1);
  for (std::size_t j = 0; j < out.size(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < window; ++i) s += diffs[j + i];
    out[j] = s / static_cast<double>(window);
  }
  return out;
}

DailySeries interpolate_weekly(std::vector<std::pair<Date, double>> samples) {
  std::stable_sort(samples.begin(), samples.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::pair<Date, double>> merged;
  std::size_t run = 0;
  for (const auto& [date, value] : samples) {
    if (!merged.empty() && merged.back().first == date) {
      ++run;
      merged.back().second += (value - merged.back().second) / static_cast<double>(run);
    } else {
      merged.emplace_back(date, value);
      run = 1;
    }
  }
  if (merged.size() < 2)
    throw DataError("interpolate_weekly: need at least 2 distinct sample dates, got " +
                    std::to_string(merged.size()));
  DailySeries out{merged.front().first, {}};
  out.values.reserve(static_cast<std::size_t>(merged.back().first - merged.front().first) + 1);
  for (std::size_t s = 0; s + 1 < merged.size(); ++s) {
    const auto [d0, v0] = merged[s];
    const auto [d1, v1] = merged[s + 1];
    const long span = d1 - d0;
    for (long i = 0; i < span; ++i)
      out.values.push_back(v0 + (v1 - v0) * static_cast<double>(i) / static_cast<double>(span));
  }
  out.values.push_back(merged.back().second);
  return out;
}

std::pair<std::vector<double>, ScaleParams> scale_minmax(std::span<const double> values, std::size_t fit_begin,
                                                         std::size_t fit_end) {
  if (fit_begin >= fit_end || fit_end > values.size()) throw DataError("scale_minmax: empty fit region");
  const auto [lo, hi] = std::minmax_element(values.begin() + static_cast<std::ptrdiff_t>(fit_begin),
                                            values.begin() + static_cast<std::ptrdiff_t>(fit_end));
  ScaleParams p{*lo, *hi};
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = p.apply(values[i]);
  return {std::move(out), p};
}

std::array<std::vector<double>, 4> calendar_covariates(std::span<const Date> dates) {
  std::array<std::vector<double>, 4> out;
  if (dates.empty()) return out;
  int y_min = dates.front().year(), y_max = y_min;
  for (const auto& d : dates) {
    y_min = std::min(y_min, d.year());
    y_max = std::max(y_max, d.year());
  }
  const double y_span = static_cast<double>(y_max - y_min + 1);
  for (auto& v : out) v.reserve(dates.size());
  for (const auto& d : dates) {
    out[0].push_back(static_cast<double>(d.year() - y_min + 1) / y_span);
    out[1].push_back(static_cast<double>(d.month()) / 12.0);
    out[2].push_back(static_cast<double>(d.iso_week()) / 53.0);
    out[3].push_back(static_cast<double>(d.iso_weekday()) / 7.0);
  }
  return out;
}

SplitBoundaries split_chronological(std::size_t length, const SplitSpec& spec, std::size_t lookback,
                                    std::size_t horizon, const std::string& county_id) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) ||
      !(spec.validation_fraction >= 0.0 && spec.validation_fraction < 1.0))
    throw ConfigError("split: fractions must lie in (0,1)");
  const double n = static_cast<double>(length);
  // The small epsilon keeps exact products such as 0.72 * 100 from flooring low.
  SplitBoundaries b;
  b.length = length;
  b.val_end = static_cast<std::size_t>(std::floor(spec.train_fraction * n + 1e-9));
  b.train_end = static_cast<std::size_t>(
      std::floor((1.0 - spec.validation_fraction) * spec.train_fraction * n + 1e-9));
  const std::string who = county_id.empty() ? std::string("series") : "county '" + county_id + "'";
  auto fail = [&](const char* region, std::size_t got, std::size_t need) {
    throw DataError(who + ": " + region + " region has " + std::to_string(got) + " days, needs at least " +
                    std::to_string(need));
  };
  if (b.test_length() < horizon) fail("test", b.test_length(), horizon);
  if (b.train_length() < lookback + horizon) fail("training", b.train_length(), lookback + horizon);
  if (spec.validation_fraction > 0.0 && b.validation_length() < horizon)
    fail("validation", b.validation_length(), horizon);
  return b;
}

const NamedSeries* CountyPanel::find_unknown(const std::string& name) const {
  for (const auto& s : unknown)
    if (s.name == name) return &s;
  return nullptr;
}

const NamedSeries* CountyPanel::find_known(const std::string& name) const {
  for (const auto& s : known)
    if (s.name == name) return &s;
  return nullptr;
}

PanelBuild build_panels(const RawRecords& raw, const PreprocessOptions& options) {
  PanelBuild result;
  std::map<std::string, std::string> region_of;
  for (const auto& m : raw.county_map) region_of[m.county_id] = m.region_id;

  std::map<std::string, std::vector<const CaseRow*>> cases_by_county;
  for (const auto& c : raw.cases) cases_by_county[c.county_id].push_back(&c);
  std::map<std::string, std::vector<std::pair<Date, double>>> viral_by_county;
  for (const auto& v : raw.viral) viral_by_county[v.county_id].emplace_back(v.date, v.concentration);
  std::map<std::pair<std::string, long>, const OxfordRow*> oxford_at;
  for (const auto& o : raw.oxford) oxford_at[{o.region_id, o.date.serial()}] = &o;

  for (auto& [county, rows] : cases_by_county) {
    auto exclude = [&, &county = county](std::string reason) { result.excluded.emplace_back(county, std::move(reason)); };
    try {
      std::sort(rows.begin(), rows.end(), [](const auto* a, const auto* b) { return a->date < b->date; });
      for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i]->date == rows[i - 1]->date) throw DataError("duplicate case date " + rows[i]->date.iso());
        if (rows[i]->date - rows[i - 1]->date != 1) throw DataError("gap in case dates after " + rows[i - 1]->date.iso());
      }
      auto region = region_of.find(county);
      if (region == region_of.end()) throw DataError("no region in county map");
      auto viral_it = viral_by_county.find(county);
      if (viral_it == viral_by_county.end()) throw DataError("no viral-load samples");

      std::vector<double> cumulative;
      for (const auto* r : rows) cumulative.push_back(r->cumulative_per_100k);
      const auto smoothed = diff_and_smooth(cumulative);
      const Date smooth_start = rows.front()->date + 7;
      const auto viral = interpolate_weekly(viral_it->second);

      Date start = std::max(smooth_start, viral.start);
      Date end = std::min(rows.back()->date, viral.end());
      if (auto trim = options.trim_dates.find(county); trim != options.trim_dates.end())
        end = std::min(end, trim->second);
      if (end < start) throw DataError("case and viral-load date ranges do not overlap");

      CountyPanel p;
      p.county_id = county;
      p.region_id = region->second;
      const auto length = static_cast<std::size_t>(end - start) + 1;
      std::array<std::vector<double>, 4> oxford_raw;
      std::vector<double> viral_raw;
      for (std::size_t i = 0; i < length; ++i) {
        const Date d = start + static_cast<long>(i);
        p.dates.push_back(d);
        p.target_raw.push_back(smoothed[static_cast<std::size_t>(d - smooth_start)]);
        viral_raw.push_back(viral.values[static_cast<std::size_t>(d - viral.start)]);
        auto ox = oxford_at.find({p.region_id, d.serial()});
        if (ox == oxford_at.end())
          throw DataError("policy indices missing for region '" + p.region_id + "' on " + d.iso());
        for (std::size_t k = 0; k < 4; ++k) oxford_raw[k].push_back(ox->second->indices[k]);
      }

      p.split = split_chronological(length, options.split, options.lookback, options.horizon, county);
      const std::size_t fit_end = p.split.val_end;
      auto [target, target_params] = scale_minmax(p.target_raw, 0, fit_end);
      p.target = std::move(target);
      p.scale_params["target"] = target_params;
      auto [v_scaled, v_params] = scale_minmax(viral_raw, 0, fit_end);
      p.unknown.push_back({kViralName, std::move(v_scaled)});
      p.scale_params[kViralName] = v_params;
      for (std::size_t k = 0; k < 4; ++k) {
        auto [scaled, params] = scale_minmax(oxford_raw[k], 0, fit_end);
        p.known.push_back({kOxfordColumns[k], std::move(scaled)});
        p.scale_params[kOxfordColumns[k]] = params;
      }
      auto calendar = calendar_covariates(p.dates);
      for (std::size_t k = 0; k < 4; ++k) p.known.push_back({kCalendarNames[k], std::move(calendar[k])});
      result.panels.push_back(std::move(p));
    } catch (const Error& e) {
      exclude(e.what());
    }
  }
  return result;
}

void add_noise_covariate(std::vector<CountyPanel>& panels, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x6e6f697365ULL);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& p : panels) {
    NamedSeries s{kNoiseName, std::vector<double>(p.length())};
    for (auto& v : s.values) v = u(rng);
    p.unknown.push_back(std::move(s));
    p.scale_params[kNoiseName] = ScaleParams{0.0, 1.0};
  }
}

void write_panel_cache(const std::filesystem::path& dir, const std::vector<CountyPanel>& panels,
                       const std::string& config_hash, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["config_hash"] = config_hash;
  meta["seed"] = seed;
  meta["counties"] = nlohmann::json::object();
  for (const auto& p : panels) {
    const auto file = dir / ("panel_" + p.county_id + ".csv");
    std::ofstream out(file);
    if (!out) throw DataError("cannot write '" + file.string() + "'");
    out << "# config_hash=" << config_hash << ",seed=" << seed << "\n";
    out << "date,cases_per_100k,target";
    for (const auto& s : p.unknown) out << "," << s.name;
    for (const auto& s : p.known) out << "," << s.name;
    out << "\n" << std::setprecision(17);
    for (std::size_t i = 0; i < p.length(); ++i) {
      out << p.dates[i].iso() << "," << p.target_raw[i] << "," << p.target[i];
      for (const auto& s : p.unknown) out << "," << s.values[i];
      for (const auto& s : p.known) out << "," << s.values[i];
      out << "\n";
    }
    nlohmann::json c;
    c["region_id"] = p.region_id;
    c["start"] = p.dates.front().iso();
    c["end"] = p.dates.back().iso();
    c["split"] = {{"length", p.split.length}, {"train_end", p.split.train_end}, {"val_end", p.split.val_end}};
    for (const auto& [name, sp] : p.scale_params) c["scale_params"][name] = {{"min", sp.min}, {"max", sp.max}};
    meta["counties"][p.county_id] = c;
  }
  std::ofstream out(dir / "panels.json");
  out << meta.dump(2) << "\n";
}

}  // namespace wwf
