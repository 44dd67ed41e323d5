#include "wwf/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "wwf/error.hpp"

namespace wwf {

namespace {

std::string quantile_label(double q) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "q%02d", static_cast<int>(std::lround(q * 100.0)));
  return buf;
}

std::string fixed(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

}  // namespace

nlohmann::json Metrics::to_json() const {
  nlohmann::json j{{"MAE", mae}, {"SMAPE", smape}, {"n", count}};
  j["CV"] = cv ? nlohmann::json(*cv) : nlohmann::json(nullptr);
  j["CV_defined"] = cv.has_value();
  return j;
}

Metrics compute_metrics(std::span<const double> actual, std::span<const double> forecast) {
  if (actual.empty() || actual.size() != forecast.size())
    throw ShapeError("compute_metrics: need equal nonzero lengths, got " + std::to_string(actual.size()) + " and " +
                     std::to_string(forecast.size()));
  double abs_sum = 0.0, sq_sum = 0.0, smape_sum = 0.0, y_sum = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (forecast[i] < 0.0) throw DataError("compute_metrics: negative forecast", i);
    const double e = std::abs(actual[i] - forecast[i]);
    const double denom = std::abs(actual[i]) + std::abs(forecast[i]);
    abs_sum += e;
    sq_sum += e * e;
    smape_sum += denom > 0.0 ? e / denom : 0.0;
    y_sum += actual[i];
  }
  const double n = static_cast<double>(actual.size());
  Metrics m;
  m.count = actual.size();
  m.mae = abs_sum / n;
  m.smape = 200.0 * smape_sum / n;
  const double y_mean = y_sum / n;
  if (y_mean != 0.0) m.cv = 100.0 * std::sqrt(sq_sum / n) / y_mean;
  return m;
}

void BacktestPlan::validate() const {
  if (horizon == 0) throw ConfigError("backtest.horizon must be positive");
  if (stride == 0) throw ConfigError("backtest.stride must be positive");
  if (retrain) throw ConfigError("backtest.retrain is not supported; backtests never retrain");
}

nlohmann::json BacktestPlan::to_json() const {
  return {{"horizon", horizon}, {"stride", stride}, {"retrain", retrain}};
}

BacktestPlan BacktestPlan::from_json(const nlohmann::json& j) {
  BacktestPlan p;
  p.horizon = j.value("horizon", p.horizon);
  p.stride = j.value("stride", p.stride);
  p.retrain = j.value("retrain", p.retrain);
  return p;
}

std::size_t BacktestResult::median_index() const {
  for (std::size_t i = 0; i < quantiles.size(); ++i)
    if (std::abs(quantiles[i] - 0.5) < 1e-12) return i;
  throw ConfigError("backtest: quantile set has no 0.5 entry for the point forecast");
}

Metrics BacktestResult::pooled(const std::vector<std::string>& counties) const {
  const std::size_t nq = quantiles.size(), med = median_index();
  std::vector<double> y, f;
  for (const auto& fc : forecasts) {
    if (std::find(counties.begin(), counties.end(), fc.county_id) == counties.end()) continue;
    for (std::size_t h = 0; h < fc.actual.size(); ++h) {
      y.push_back(fc.actual[h]);
      f.push_back(fc.values[h * nq + med]);
    }
  }
  if (y.empty()) throw DataError("backtest: no forecasts for the requested county set");
  return compute_metrics(y, f);
}

std::size_t BacktestResult::blocks_for(const std::string& county_id) const {
  return static_cast<std::size_t>(
      std::count_if(forecasts.begin(), forecasts.end(), [&](const auto& f) { return f.county_id == county_id; }));
}

BacktestResult backtest(Forecaster& model, const std::vector<CountyPanel>& panels, const BacktestPlan& plan) {
  plan.validate();
  if (plan.horizon != model.horizon())
    throw ConfigError("backtest: plan horizon " + std::to_string(plan.horizon) + " differs from model horizon " +
                      std::to_string(model.horizon()));
  BacktestResult r;
  r.quantiles = model.quantiles();
  const std::size_t med = r.median_index();
  const std::size_t nq = r.quantiles.size(), k = model.lookback(), tau = plan.horizon;
  r.hash_before = hex64(parameter_hash(model));

  for (const auto& panel : panels) {
    const auto& split = panel.split;
    if (split.test_length() < tau) {
      r.skipped.emplace_back(panel.county_id, "test region shorter than the horizon");
      continue;
    }
    if (split.val_end < k) {
      r.skipped.emplace_back(panel.county_id, "not enough history before the test region");
      continue;
    }
    GlobalDataset ds{k, tau, model.layout(), {panel.county_id}, {}};
    for (std::size_t origin = split.val_end; origin + tau <= panel.length(); origin += plan.stride)
      ds.samples.push_back(make_sample(panel, origin, k, tau, model.layout()));
    auto pred = predict_sorted(model, Batch::collate(ds));
    const auto& scale = panel.target_scale();
    std::vector<double> ys, fs;
    for (std::size_t s = 0; s < ds.samples.size(); ++s) {
      QuantileForecast fc{panel.county_id, panel.dates[ds.samples[s].origin], ds.samples[s].origin, {}, {}};
      for (std::size_t h = 0; h < tau; ++h) {
        for (std::size_t q = 0; q < nq; ++q)
          fc.values.push_back(std::max(0.0, scale.invert(pred[(s * tau + h) * nq + q])));
        fc.actual.push_back(panel.target_raw[fc.origin + h]);
        ys.push_back(fc.actual.back());
        fs.push_back(fc.values[h * nq + med]);
      }
      r.forecasts.push_back(std::move(fc));
    }
    r.per_county[panel.county_id] = compute_metrics(ys, fs);
  }
  r.hash_after = hex64(parameter_hash(model));
  if (r.hash_after != r.hash_before) throw Error("backtest modified model parameters");
  return r;
}

void write_forecasts_csv(const std::filesystem::path& path, const BacktestResult& result,
                         const std::string& header_comment) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  out << "county_id,origin_date,horizon_step";
  for (double q : result.quantiles) out << ',' << quantile_label(q);
  out << ",actual\n";
  const std::size_t nq = result.quantiles.size();
  for (const auto& f : result.forecasts)
    for (std::size_t h = 0; h < f.actual.size(); ++h) {
      out << f.county_id << ',' << f.origin_date.iso() << ',' << (h + 1);
      for (std::size_t q = 0; q < nq; ++q) out << ',' << fixed(f.values[h * nq + q], 6);
      out << ',' << fixed(f.actual[h], 6) << '\n';
    }
}

nlohmann::json metrics_json(const std::vector<VariantRun>& variants, const CountySets& sets) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [set, counties] : sets) {
    auto& js = j[set];
    for (const auto& v : variants) {
      auto entry = v.result.pooled(counties).to_json();
      nlohmann::json per = nlohmann::json::object();
      for (const auto& c : counties) {
        auto it = v.result.per_county.find(c);
        if (it != v.result.per_county.end()) per[c] = it->second.to_json();
      }
      entry["per_county"] = per;
      js[v.name] = entry;
    }
  }
  return j;
}

AblationTable ablation_report(const std::vector<VariantRun>& variants, const CountySets& sets) {
  if (variants.empty()) throw ConfigError("ablation: no variants");
  for (const auto& v : variants) {
    if (!(v.plan == variants.front().plan))
      throw ConfigError("ablation: variant '" + v.name + "' used a different backtest plan");
    if (v.splits != variants.front().splits)
      throw ConfigError("ablation: variant '" + v.name + "' used different split boundaries");
  }
  AblationTable t;
  for (const auto& v : variants) t.variants.push_back(v.name);
  for (const auto& [set, counties] : sets) {
    t.sets.push_back(set);
    auto& row = t.cells.emplace_back();
    for (const auto& v : variants) row.push_back(v.result.pooled(counties));
  }
  return t;
}

std::string AblationTable::render() const {
  std::size_t w = 5;
  for (const auto& v : variants) w = std::max(w, v.size());
  std::ostringstream os;
  auto pad = [](const std::string& s, std::size_t n, bool right) {
    return s.size() >= n ? s : (right ? std::string(n - s.size(), ' ') + s : s + std::string(n - s.size(), ' '));
  };
  for (std::size_t s = 0; s < sets.size(); ++s) {
    if (s > 0) os << '\n';
    os << sets[s] << " counties\n";
    os << pad("Model", w, false) << "  " << pad("MAE", 10, true) << "  " << pad("SMAPE", 10, true) << "  "
       << pad("CV", 10, true) << '\n';
    os << std::string(w + 36, '-') << '\n';
    for (std::size_t v = 0; v < variants.size(); ++v) {
      const auto& m = cells[s][v];
      os << pad(variants[v], w, false) << "  " << pad(fixed(m.mae, 3), 10, true) << "  "
         << pad(fixed(m.smape, 3), 10, true) << "  " << pad(m.cv ? fixed(*m.cv, 3) : "n/a", 10, true) << '\n';
    }
  }
  return os.str();
}

}  // namespace wwf
