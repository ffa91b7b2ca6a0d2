// Command-line runner: `fedbilevel run cfg.json` and `fedbilevel validate cfg.json`.
#include <iostream>

#include "CLI11.hpp"
#include "fedbilevel/experiment.hpp"

namespace fb = fedbilevel;

int main(int argc, char** argv) {
  CLI::App app{"Federated simple bilevel experiments"};
  app.require_subcommand(1);

  std::string runPath;
  std::size_t workers = 0;
  auto* run = app.add_subcommand("run", "Execute the experiment(s) in a config");
  run->add_option("config", runPath, "JSON config")->required();
  run->add_option("--workers", workers, "Override method.workers (results do not depend on it)")
      ->check(CLI::PositiveNumber);

  std::string validatePath;
  auto* validate = app.add_subcommand("validate", "Resolve schedules without running");
  validate->add_option("config", validatePath, "JSON config")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? fb::kExitOk : fb::kExitConfig;
  }

  try {
    if (*run) {
      const fb::ExperimentConfig cfg = fb::load_config(runPath);
      fb::RunOptions opts;
      if (workers > 0) opts.workers = workers;
      const auto runs = fb::run_experiment(cfg, opts);
      for (const auto& p : fb::write_artifacts(cfg, runs)) std::cout << p << "\n";
    } else {
      std::cout << fb::validate_experiment(fb::load_config(validatePath));
    }
  } catch (const fb::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return fb::kExitConfig;
  } catch (const fb::DivergenceError& e) {
    std::cerr << "diverged (round " << e.round() << "): " << e.what() << "\n";
    return fb::kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return fb::kExitFailure;
  }
  return fb::kExitOk;
}
