#include <iostream>

#include <CLI11.hpp>

#include "stochpersist/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Simulation and persistence diagnostics for stochastic difference equations"};
  app.require_subcommand(1);

  stochpersist::cli::RunOptions opts;
  std::string out_dir;
  std::uint64_t seed = 0;
  auto* run = app.add_subcommand("run", "Run the experiment described by a JSON config");
  run->add_option("--config", opts.config_path, "Experiment config (JSON)")->required();
  run->add_option("--set", opts.overrides, "Override a config value: dotted.key=value (JSON value)");
  auto* out_opt = run->add_option("--out", out_dir, "Output directory (overrides output_dir)");
  auto* seed_opt = run->add_option("--seed", seed, "Override sim.seed");
  run->add_option("--threads", opts.threads, "Worker threads; results do not depend on it")->check(CLI::PositiveNumber);

  run->add_flag("--explore", opts.explore, "Also report raw simulation statistics without verdicts");

  app.add_subcommand("list-models", "Print the model catalog");

  CLI11_PARSE(app, argc, argv);

  if (app.got_subcommand("list-models")) {
    std::cout << stochpersist::cli::list_models();
    return 0;
  }
  if (*out_opt) opts.out_dir = out_dir;
  if (*seed_opt) opts.seed = seed;
  return stochpersist::cli::run(opts, std::cerr);
}
