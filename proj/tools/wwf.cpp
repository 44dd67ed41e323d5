#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "wwf/error.hpp"
#include "wwf/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Global probabilistic multi-horizon case forecasting with wastewater covariates"};
  std::string subcommand;
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  app.add_option("subcommand", subcommand, "preprocess | train | backtest | ablate | explain | synth | plot")
      ->required()
      ->check(CLI::IsMember({"preprocess", "train", "backtest", "ablate", "explain", "synth", "plot"}));
  app.add_option("--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  app.add_option("--out-dir", out_dir, "output directory (overrides the config)");
  app.add_option("--seed", seed, "random seed (overrides the config)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    std::ifstream in(config_path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw wwf::ConfigError("config " + config_path + ": " + e.what());
    }
    if (seed) j["seed"] = *seed;
    auto config = wwf::ExperimentConfig::from_json(j, std::filesystem::path(config_path).parent_path());
    const std::filesystem::path dir = out_dir.empty() ? config.output_dir : std::filesystem::path(out_dir);
    return wwf::run_subcommand(subcommand, config, dir);
  } catch (const wwf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
