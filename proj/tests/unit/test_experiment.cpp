#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "wwf/error.hpp"
#include "wwf/experiment.hpp"

using namespace wwf;
using nlohmann::json;

namespace {

json tiny_config() {
  return json::parse(R"({
    "synth": {"counties": 4, "days": 160},
    "holdout": ["C04"],
    "tft": {"hidden": 4, "heads": 1, "static_embedding": 2},
    "deeptcn": {"channels": 3, "decoder_hidden": 4, "horizon_embedding": 2},
    "train": {"max_epochs": 2, "patience": 1, "batch_size": 32, "steps_per_epoch": 2},
    "window": {"train_stride": 5},
    "seed": 3
  })");
}

std::string config_error(const json& j) {
  try {
    ExperimentConfig::from_json(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config errors name the field") {
  auto j = tiny_config();
  j["bogus"] = 1;
  CHECK(config_error(j).find("'bogus'") != std::string::npos);

  j = tiny_config();
  j["train"]["learning_rate"] = "fast";
  CHECK(config_error(j).find("train") != std::string::npos);

  j = tiny_config();
  j["window"]["lookbak"] = 3;
  CHECK(config_error(j).find("window.lookbak") != std::string::npos);

  j = tiny_config();
  j["model"] = "arima";
  CHECK(config_error(j).find("'model'") != std::string::npos);

  j = tiny_config();
  j["backtest"] = {{"retrain", true}};
  CHECK(config_error(j).find("backtest") != std::string::npos);

  j = tiny_config();
  j["holdout"] = {"C01", "C01"};
  CHECK(config_error(j).find("holdout") != std::string::npos);

  j = tiny_config();
  j["data"] = {{"cases", "a.csv"}, {"viral", "b.csv"}, {"oxford", "c.csv"}, {"county_map", "d.csv"}};
  CHECK(config_error(j).find("exactly one") != std::string::npos);
  j.erase("synth");
  CHECK(config_error(j).find("file not found") != std::string::npos);

  j = tiny_config();
  j["quantiles"] = {0.1, 0.9};
  CHECK(config_error(j).find("quantiles") != std::string::npos);

  j = tiny_config();
  j["holdout"] = {"C99"};
  auto cfg = ExperimentConfig::from_json(j);
  CHECK_THROWS_AS(prepare_data(cfg), ConfigError);
}

TEST_CASE("config hash") {
  auto a = ExperimentConfig::from_json(tiny_config());
  auto b = ExperimentConfig::from_json(tiny_config());
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 16);
  CHECK(ExperimentConfig::from_json(a.to_json()).hash() == a.hash());
  auto j = tiny_config();
  j["seed"] = 4;
  CHECK(ExperimentConfig::from_json(j).hash() != a.hash());
  CHECK(a.provenance() == "config_hash=" + a.hash() + ",seed=3");
  // The seed feeds the synthetic data and the trainer unless they set their own.
  CHECK(a.synth->seed == 3);
  CHECK(a.train.seed == 3);
}

TEST_CASE("prepared data separates holdout counties") {
  auto cfg = ExperimentConfig::from_json(tiny_config());
  auto data = prepare_data(cfg);
  CHECK(data.panels.size() == 4);
  CHECK(data.holdout == std::vector<std::string>{"C04"});
  CHECK(data.training.size() == 3);
  CHECK(data.training_panels().size() == 3);
  auto sets = county_sets(data);
  REQUIRE(sets.size() == 2);
  CHECK(sets[0].first == "training");
  CHECK(sets[1].first == "holdout");
  auto j = tiny_config();
  j["add_noise_covariate"] = true;
  auto noisy = prepare_data(ExperimentConfig::from_json(j));
  CHECK(noisy.panels[0].find_unknown(kNoiseName) != nullptr);
  CHECK(feature_layout(ExperimentConfig::from_json(j), false).unknown == std::vector<std::string>{kNoiseName});
}

TEST_CASE("ablate is deterministic and writes stamped artifacts") {
  auto cfg = ExperimentConfig::from_json(tiny_config());
  const auto root = std::filesystem::temp_directory_path() / "wwf_unit_ablate";
  std::filesystem::remove_all(root);
  CHECK(run_subcommand("ablate", cfg, root / "a") == 0);
  CHECK(run_subcommand("ablate", cfg, root / "b") == 0);
  for (const char* f : {"metrics.json", "importance.json", "ablation.txt"}) {
    INFO(f);
    CHECK(slurp(root / "a" / f) == slurp(root / "b" / f));
  }
  auto metrics = json::parse(slurp(root / "a" / "metrics.json"));
  CHECK(metrics["config_hash"] == cfg.hash());
  CHECK(metrics["seed"] == 3);
  for (const char* set : {"training", "holdout"})
    for (const char* v : {"TFT", "TFT - no viral load", "DeepTCN", "DeepTCN - no viral load"}) {
      INFO(set << " / " << v);
      CHECK(metrics[set].contains(v));
    }
  auto importance = json::parse(slurp(root / "a" / "importance.json"));
  double total = 0;
  for (const auto& [name, pct] : importance["encoder"].items()) total += pct.get<double>();
  CHECK(total == doctest::Approx(100.0).epsilon(1e-4));
  CHECK(slurp(root / "a" / "ablation.txt").rfind("# " + cfg.provenance(), 0) == 0);
  CHECK(slurp(root / "a" / "forecasts_tft.csv").rfind("# " + cfg.provenance(), 0) == 0);
  std::filesystem::remove_all(root);
}

TEST_CASE("subcommands chain through the checkpoint") {
  auto cfg = ExperimentConfig::from_json(tiny_config());
  const auto out = std::filesystem::temp_directory_path() / "wwf_unit_chain";
  std::filesystem::remove_all(out);
  CHECK_THROWS_AS(run_subcommand("backtest", cfg, out), ConfigError);
  for (const char* sub : {"synth", "preprocess", "train", "backtest", "explain", "plot"}) {
    INFO(sub);
    CHECK(run_subcommand(sub, cfg, out) == 0);
  }
  for (const char* f : {"data/cases.csv", "data/truth.json", "panels/panels.json", "checkpoint.json", "history.json",
                        "forecasts.csv", "metrics.json", "importance.json", "importance_encoder.svg",
                        "run-manifest.json"}) {
    INFO(f);
    CHECK(std::filesystem::exists(out / f));
  }
  CHECK(std::filesystem::exists(out / "plots" / "forecast_C04.svg"));
  CHECK(slurp(out / "plots" / "forecast_C01.svg").find(cfg.provenance()) != std::string::npos);
  CHECK_THROWS_AS(run_subcommand("dance", cfg, out), ConfigError);
  std::filesystem::remove_all(out);
}
