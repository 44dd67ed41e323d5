#include "wwf/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>
#include <iostream>
#include <set>

#include "wwf/deeptcn.hpp"
#include "wwf/error.hpp"
#include "wwf/svg.hpp"

namespace wwf {

namespace fs = std::filesystem;

namespace {

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename T>
T field(const nlohmann::json& j, const char* key, T fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config field '" + path + key + "': wrong type (" + j.at(key).dump() + ")");
  }
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& path) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("config field '" + path + key + "': unknown field");
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

std::string slug(const std::string& name) {
  std::string out;
  for (char c : name) {
    if (std::isalnum(static_cast<unsigned char>(c)))
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    else if (!out.empty() && out.back() != '_')
      out += '_';
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

std::string variant_name(const std::string& family, bool use_viral) {
  std::string base = family == "tft" ? "TFT" : "DeepTCN";
  return use_viral ? base : base + " - no viral load";
}

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(j,
                 {"data", "synth", "holdout", "trim_dates", "model", "tft", "deeptcn", "train", "window", "split",
                  "backtest", "quantiles", "use_viral", "add_noise_covariate", "output_dir", "seed"},
                 "");
  ExperimentConfig c;
  c.seed = field<std::uint64_t>(j, "seed", c.seed, "");
  if (j.contains("data")) {
    const auto& d = j["data"];
    if (!d.is_object()) throw ConfigError("config field 'data': expected an object");
    reject_unknown(d, {"cases", "viral", "oxford", "county_map"}, "data.");
    DataPaths p;
    for (auto [key, dst] : {std::pair{"cases", &p.cases}, std::pair{"viral", &p.viral},
                            std::pair{"oxford", &p.oxford}, std::pair{"county_map", &p.county_map}}) {
      if (!d.contains(key)) throw ConfigError(std::string("config field 'data.") + key + "': missing");
      *dst = resolve(base_dir, field<std::string>(d, key, "", "data."));
    }
    c.data = p;
  }
  if (j.contains("synth")) {
    if (!j["synth"].is_object()) throw ConfigError("config field 'synth': expected an object");
    try {
      c.synth = SynthConfig::from_json(j["synth"]);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config field 'synth': ") + e.what());
    }
    if (!j["synth"].contains("seed")) c.synth->seed = c.seed;
  }
  c.holdout = field<std::vector<std::string>>(j, "holdout", {}, "");
  for (const auto& [county, date] : field<std::map<std::string, std::string>>(j, "trim_dates", {}, "")) {
    auto d = Date::try_parse(date);
    if (!d) throw ConfigError("config field 'trim_dates." + county + "': malformed date '" + date + "'");
    c.trim_dates[county] = *d;
  }
  c.family = field<std::string>(j, "model", c.family, "");
  c.tft = j.value("tft", nlohmann::json::object());
  c.deeptcn = j.value("deeptcn", nlohmann::json::object());
  if (j.contains("train")) {
    reject_unknown(j["train"],
                   {"learning_rate", "batch_size", "max_epochs", "patience", "clip_norm", "steps_per_epoch", "seed"},
                   "train.");
    try {
      c.train = TrainConfig::from_json(j["train"]);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config field 'train': ") + e.what());
    }
  }
  c.train.seed = j.contains("train") && j["train"].contains("seed") ? c.train.seed : c.seed;
  if (j.contains("window")) {
    const auto& w = j["window"];
    reject_unknown(w, {"lookback", "horizon", "train_stride"}, "window.");
    c.lookback = field<std::size_t>(w, "lookback", c.lookback, "window.");
    c.horizon = field<std::size_t>(w, "horizon", c.horizon, "window.");
    c.train_stride = field<std::size_t>(w, "train_stride", c.train_stride, "window.");
  }
  if (j.contains("split")) {
    const auto& s = j["split"];
    reject_unknown(s, {"train_fraction", "validation_fraction"}, "split.");
    c.split.train_fraction = field<double>(s, "train_fraction", c.split.train_fraction, "split.");
    c.split.validation_fraction = field<double>(s, "validation_fraction", c.split.validation_fraction, "split.");
  }
  c.backtest.horizon = c.horizon;
  if (j.contains("backtest")) {
    const auto& b = j["backtest"];
    reject_unknown(b, {"horizon", "stride", "retrain"}, "backtest.");
    c.backtest.horizon = field<std::size_t>(b, "horizon", c.horizon, "backtest.");
    c.backtest.stride = field<std::size_t>(b, "stride", c.backtest.stride, "backtest.");
    c.backtest.retrain = field<bool>(b, "retrain", false, "backtest.");
  }
  c.quantiles = field<std::vector<double>>(j, "quantiles", c.quantiles, "");
  c.use_viral = field<bool>(j, "use_viral", c.use_viral, "");
  c.add_noise_covariate = field<bool>(j, "add_noise_covariate", c.add_noise_covariate, "");
  c.output_dir = resolve(base_dir, field<std::string>(j, "output_dir", "out", ""));
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

void ExperimentConfig::validate() const {
  if (data.has_value() == synth.has_value()) throw ConfigError("config: exactly one of 'data' and 'synth' is required");
  if (data) {
    for (const auto* p : {&data->cases, &data->viral, &data->oxford, &data->county_map})
      if (!fs::exists(*p)) throw ConfigError("config field 'data': file not found: " + p->string());
  }
  if (synth) {
    try {
      synth->validate();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("config field 'synth': ") + e.what());
    }
  }
  std::set<std::string> seen;
  for (const auto& h : holdout)
    if (!seen.insert(h).second) throw ConfigError("config field 'holdout': duplicate county '" + h + "'");
  if (family != "tft" && family != "deeptcn")
    throw ConfigError("config field 'model': expected 'tft' or 'deeptcn', got '" + family + "'");
  if (lookback == 0) throw ConfigError("config field 'window.lookback': must be positive");
  if (horizon == 0) throw ConfigError("config field 'window.horizon': must be positive");
  if (train_stride == 0) throw ConfigError("config field 'window.train_stride': must be positive");
  if (!(split.train_fraction > 0.0 && split.train_fraction < 1.0))
    throw ConfigError("config field 'split.train_fraction': must lie in (0,1)");
  if (!(split.validation_fraction > 0.0 && split.validation_fraction < 1.0))
    throw ConfigError("config field 'split.validation_fraction': must lie in (0,1)");
  if (backtest.horizon != horizon)
    throw ConfigError("config field 'backtest.horizon': must equal window.horizon (" + std::to_string(horizon) + ")");
  try {
    backtest.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config field 'backtest': ") + e.what());
  }
  try {
    validate_quantiles(quantiles);
    train.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (std::none_of(quantiles.begin(), quantiles.end(), [](double q) { return std::abs(q - 0.5) < 1e-12; }))
    throw ConfigError("config field 'quantiles': must include 0.5 for the point forecast");
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  if (data)
    j["data"] = {{"cases", data->cases.string()},
                 {"viral", data->viral.string()},
                 {"oxford", data->oxford.string()},
                 {"county_map", data->county_map.string()}};
  if (synth) j["synth"] = synth->to_json();
  j["holdout"] = holdout;
  nlohmann::json trims = nlohmann::json::object();
  for (const auto& [c, d] : trim_dates) trims[c] = d.iso();
  j["trim_dates"] = trims;
  j["model"] = family;
  j["tft"] = tft;
  j["deeptcn"] = deeptcn;
  j["train"] = train.to_json();
  j["window"] = {{"lookback", lookback}, {"horizon", horizon}, {"train_stride", train_stride}};
  j["split"] = {{"train_fraction", split.train_fraction}, {"validation_fraction", split.validation_fraction}};
  j["backtest"] = backtest.to_json();
  j["quantiles"] = quantiles;
  j["use_viral"] = use_viral;
  j["add_noise_covariate"] = add_noise_covariate;
  j["seed"] = seed;
  return j;
}

std::string ExperimentConfig::hash() const {
  const auto s = to_json().dump();
  return hex64(fnv1a(s.data(), s.size()));
}

std::string ExperimentConfig::provenance() const { return "config_hash=" + hash() + ",seed=" + std::to_string(seed); }

std::vector<CountyPanel> PreparedData::training_panels() const {
  std::vector<CountyPanel> out;
  for (const auto& p : panels)
    if (std::find(training.begin(), training.end(), p.county_id) != training.end()) out.push_back(p);
  return out;
}

std::vector<SplitBoundaries> PreparedData::splits() const {
  std::vector<SplitBoundaries> out;
  for (const auto& p : panels) out.push_back(p.split);
  return out;
}

RawRecords load_raw(const ExperimentConfig& config) {
  if (config.data) return load_panel(*config.data);
  return generate_panel(*config.synth).raw;
}

PreparedData prepare_data(const ExperimentConfig& config) { return prepare_data(config, load_raw(config)); }

PreparedData prepare_data(const ExperimentConfig& config, const RawRecords& raw) {
  PreprocessOptions opts{config.split, config.lookback, config.horizon, config.trim_dates};
  auto build = build_panels(raw, opts);
  PreparedData d;
  d.panels = std::move(build.panels);
  d.excluded = std::move(build.excluded);
  if (config.add_noise_covariate) add_noise_covariate(d.panels, config.seed);
  std::set<std::string> present;
  for (const auto& p : d.panels) present.insert(p.county_id);
  for (const auto& h : config.holdout) {
    if (!present.count(h)) throw ConfigError("config field 'holdout': county '" + h + "' not present in the data");
    d.holdout.push_back(h);
  }
  for (const auto& p : d.panels)
    if (std::find(d.holdout.begin(), d.holdout.end(), p.county_id) == d.holdout.end()) d.training.push_back(p.county_id);
  if (d.training.empty()) throw ConfigError("config: no training counties remain after holdout and exclusions");

  std::uint64_t h = fnv1a("", 0);
  for (const auto& p : d.panels) {
    h = fnv1a(p.county_id.data(), p.county_id.size(), h);
    const std::size_t b[3] = {p.split.length, p.split.train_end, p.split.val_end};
    h = fnv1a(b, sizeof b, h);
    for (const auto& [name, sp] : p.scale_params) {
      h = fnv1a(name.data(), name.size(), h);
      const double mm[2] = {sp.min, sp.max};
      h = fnv1a(mm, sizeof mm, h);
    }
  }
  d.fingerprint = hex64(h);
  return d;
}

FeatureLayout feature_layout(const ExperimentConfig& config, bool use_viral) {
  FeatureLayout l;
  if (!use_viral) l.unknown.clear();
  if (config.add_noise_covariate) l.unknown.push_back(kNoiseName);
  return l;
}

std::unique_ptr<Forecaster> build_model(const ExperimentConfig& config, const std::string& family,
                                        const FeatureLayout& layout, const std::vector<std::string>& counties) {
  try {
    if (family == "tft") {
      auto c = TFTConfig::from_json(config.tft);
      c.lookback = config.lookback;
      c.horizon = config.horizon;
      c.quantiles = config.quantiles;
      c.layout = layout;
      c.counties = counties;
      c.seed = config.seed;
      return std::make_unique<TemporalFusionTransformer>(c);
    }
    if (family == "deeptcn") {
      auto c = DeepTCNConfig::from_json(config.deeptcn);
      c.lookback = config.lookback;
      c.horizon = config.horizon;
      c.quantiles = config.quantiles;
      c.layout = layout;
      c.seed = config.seed;
      return std::make_unique<DeepTCN>(c);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config field '" + family + "': " + e.what());
  }
  throw ConfigError("unknown model family '" + family + "'");
}

TrainedModel train_model(const ExperimentConfig& config, const PreparedData& data, const std::string& family,
                         bool use_viral) {
  const auto layout = feature_layout(config, use_viral);
  const auto panels = data.training_panels();
  auto train_ds = make_windows(panels, Region::train, config.lookback, config.horizon, config.train_stride, layout);
  auto val_ds = make_forecast_windows(panels, Region::validation, config.lookback, config.horizon, 1, layout);
  TrainedModel t{build_model(config, family, layout, data.training), {}};
  t.history = train(*t.model, train_ds, val_ds, config.train).history;
  return t;
}

VariantRun evaluate_variant(const std::string& name, Forecaster& model, const PreparedData& data,
                            const BacktestPlan& plan) {
  return {name, plan, data.splits(), backtest(model, data.panels, plan)};
}

CountySets county_sets(const PreparedData& data) {
  CountySets sets{{"training", data.training}};
  if (!data.holdout.empty()) sets.emplace_back("holdout", data.holdout);
  return sets;
}

VariableImportance explain_training(TemporalFusionTransformer& model, const PreparedData& data) {
  const auto& cfg = model.config();
  auto ds = make_windows(data.training_panels(), Region::all, cfg.lookback, cfg.horizon, cfg.horizon, cfg.layout);
  return explain(model, ds);
}

nlohmann::json importance_json(const VariableImportance& vi) {
  nlohmann::json enc = nlohmann::json::object(), dec = nlohmann::json::object();
  for (std::size_t i = 0; i < vi.encoder_names.size(); ++i) enc[vi.encoder_names[i]] = vi.encoder_percent[i];
  for (std::size_t i = 0; i < vi.decoder_names.size(); ++i) dec[vi.decoder_names[i]] = vi.decoder_percent[i];
  return {{"encoder", enc}, {"decoder", dec}};
}

AblationOutput run_ablation(const ExperimentConfig& config, const PreparedData& data) {
  AblationOutput out;
  std::optional<VariableImportance> importance;
  for (const std::string family : {"tft", "deeptcn"}) {
    for (bool viral : {true, false}) {
      const auto name = variant_name(family, viral);
      std::cerr << "[ablate] training " << name << "\n";
      auto trained = train_model(config, data, family, viral);
      out.histories.push_back(trained.history);
      out.variants.push_back(evaluate_variant(name, *trained.model, data, config.backtest));
      if (family == "tft" && viral)
        importance = explain_training(dynamic_cast<TemporalFusionTransformer&>(*trained.model), data);
    }
  }
  const auto sets = county_sets(data);
  out.table = ablation_report(out.variants, sets);
  out.metrics = metrics_json(out.variants, sets);
  out.importance = *importance;
  return out;
}

namespace {

nlohmann::json stamped(nlohmann::json body, const ExperimentConfig& config) {
  nlohmann::json j{{"config_hash", config.hash()}, {"seed", config.seed}};
  for (auto& [k, v] : body.items()) j[k] = v;
  return j;
}

std::unique_ptr<Forecaster> load_trained(const fs::path& out_dir, const PreparedData& data) {
  const auto path = out_dir / "checkpoint.json";
  if (!fs::exists(path)) throw ConfigError("no checkpoint at " + path.string() + "; run 'train' first");
  std::ifstream in(path);
  nlohmann::json j;
  in >> j;
  if (j.value("data_fingerprint", std::string()) != data.fingerprint)
    throw ConfigError("checkpoint " + path.string() + " was trained on different data (scale fingerprint mismatch)");
  return model_from_checkpoint(j);
}

}  // namespace

int run_subcommand(const std::string& sub, const ExperimentConfig& config, const fs::path& out_dir) {
  Stopwatch clock;
  nlohmann::json timings = nlohmann::json::object();
  std::vector<std::string> artifacts;
  const auto prov = config.provenance();
  fs::create_directories(out_dir);
  auto emit = [&](const fs::path& rel) { artifacts.push_back(rel.generic_string()); };

  if (sub == "synth") {
    if (!config.synth) throw ConfigError("'synth' requires a 'synth' section in the config");
    auto output = generate_panel(*config.synth);
    timings["generate"] = clock.lap();
    write_synth(out_dir / "data", output, prov);
    for (const char* f : {"cases.csv", "viral.csv", "oxford.csv", "county_map.csv", "truth.json"})
      emit(fs::path("data") / f);
  } else {
    auto data = prepare_data(config);
    timings["prepare"] = clock.lap();
    for (const auto& [c, why] : data.excluded) std::cerr << "warning: county " << c << " excluded: " << why << "\n";

    if (sub == "preprocess") {
      write_panel_cache(out_dir / "panels", data.panels, config.hash(), config.seed);
      emit("panels/panels.json");
      for (const auto& p : data.panels) emit("panels/panel_" + p.county_id + ".csv");
    } else if (sub == "train") {
      auto trained = train_model(config, data, config.family, config.use_viral);
      timings["train"] = clock.lap();
      save_checkpoint(out_dir / "checkpoint.json", *trained.model, data.fingerprint);
      write_json(out_dir / "history.json", stamped(trained.history.to_json(), config));
      emit("checkpoint.json");
      emit("history.json");
    } else if (sub == "backtest" || sub == "plot") {
      auto model = load_trained(out_dir, data);
      auto run = evaluate_variant(variant_name(model->family(), !model->layout().unknown.empty() &&
                                                                   model->layout().unknown.front() == kViralName),
                                  *model, data, config.backtest);
      timings["backtest"] = clock.lap();
      for (const auto& [c, why] : run.result.skipped) std::cerr << "warning: county " << c << " skipped: " << why << "\n";
      if (sub == "backtest") {
        write_forecasts_csv(out_dir / "forecasts.csv", run.result, prov);
        write_json(out_dir / "metrics.json", stamped(metrics_json({run}, county_sets(data)), config));
        emit("forecasts.csv");
        emit("metrics.json");
      } else {
        for (const auto& p : data.panels) {
          if (run.result.blocks_for(p.county_id) == 0) continue;
          const auto rel = fs::path("plots") / ("forecast_" + p.county_id + ".svg");
          write_text(out_dir / rel, svg::forecast_chart(p.county_id + ": " + run.name + " backtest, 90% interval",
                                                        p, run.result, prov));
          emit(rel);
        }
      }
    } else if (sub == "explain") {
      auto model = load_trained(out_dir, data);
      auto* tft = dynamic_cast<TemporalFusionTransformer*>(model.get());
      if (!tft) throw ConfigError("'explain' needs a TFT checkpoint, found " + model->family());
      auto vi = explain_training(*tft, data);
      timings["explain"] = clock.lap();
      write_json(out_dir / "importance.json", stamped(importance_json(vi), config));
      write_text(out_dir / "importance_encoder.svg",
                 svg::bar_chart("Encoder variable importance", vi.encoder_names, vi.encoder_percent, prov));
      write_text(out_dir / "importance_decoder.svg",
                 svg::bar_chart("Decoder variable importance", vi.decoder_names, vi.decoder_percent, prov));
      emit("importance.json");
      emit("importance_encoder.svg");
      emit("importance_decoder.svg");
    } else if (sub == "ablate") {
      auto out = run_ablation(config, data);
      timings["ablate"] = clock.lap();
      write_json(out_dir / "metrics.json", stamped(out.metrics, config));
      write_text(out_dir / "ablation.txt", "# " + prov + "\n" + out.table.render());
      write_json(out_dir / "importance.json", stamped(importance_json(out.importance), config));
      write_text(out_dir / "importance_encoder.svg", svg::bar_chart("Encoder variable importance",
                                                                    out.importance.encoder_names,
                                                                    out.importance.encoder_percent, prov));
      write_text(out_dir / "importance_decoder.svg", svg::bar_chart("Decoder variable importance",
                                                                    out.importance.decoder_names,
                                                                    out.importance.decoder_percent, prov));
      for (const char* f : {"metrics.json", "ablation.txt", "importance.json", "importance_encoder.svg",
                            "importance_decoder.svg"})
        emit(f);
      for (std::size_t i = 0; i < out.variants.size(); ++i) {
        const auto s = slug(out.variants[i].name);
        write_forecasts_csv(out_dir / ("forecasts_" + s + ".csv"), out.variants[i].result, prov);
        write_json(out_dir / ("history_" + s + ".json"), stamped(out.histories[i].to_json(), config));
        emit("forecasts_" + s + ".csv");
        emit("history_" + s + ".json");
      }
      std::cout << out.table.render();
    } else {
      throw ConfigError("unknown subcommand '" + sub + "'");
    }
  }
  timings["write"] = clock.lap();
  write_json(out_dir / "run-manifest.json",
             stamped({{"subcommand", sub}, {"timings_seconds", timings}, {"artifacts", artifacts},
                      {"config", config.to_json()}},
                     config));
  return 0;
}

}  // namespace wwf
