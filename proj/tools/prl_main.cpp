// SPDX-License-Identifier: Apache-2.0
//
// prl: command-line front end. See `prl --help`.

#include <iostream>

#include <CLI11.hpp>

#include "prl/cli.hpp"

namespace {

void add_common(CLI::App* cmd, prl::CommandOptions& opts, bool needs_config) {
  auto* cfg = cmd->add_option("-c,--config", opts.config, "JSON config file");
  if (needs_config) cfg->required()->check(CLI::ExistingFile);
  cmd->add_option("--override", opts.overrides, "Set a config field, e.g. adapt.epochs=3 (repeatable)");
  cmd->add_option("--out-dir", opts.out_dir, "Output directory (overrides out_dir)");
  cmd->add_option("--seed", opts.seed, "Run seed (for grids: run this single seed)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parameter reference loss for unsupervised domain adaptation"};
  app.require_subcommand(1);
  prl::CommandOptions opts;

  auto* run = app.add_subcommand("run", "Pretrain, adapt and report one configuration");
  add_common(run, opts, true);

  auto* grid = app.add_subcommand("grid", "Run every task x method x seed cell of a grid config");
  add_common(grid, opts, true);
  grid->add_option("-j,--jobs", opts.jobs, "Worker threads for grid cells")->check(CLI::PositiveNumber);

  auto* selftest = app.add_subcommand("selftest", "Gradient checks, MMD oracles and schedule tables");
  selftest->add_option("--inject-fault", opts.inject_fault)->group("");

  auto* gen = app.add_subcommand("gen-data", "Write the configured source and target datasets as CSV");
  add_common(gen, opts, true);

  auto* width = app.add_subcommand("select-width", "Choose the gaussian kernel width without target labels");
  add_common(width, opts, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : prl::kExitConfigError;
  }

  if (*run) return prl::cmd_run(opts, std::cout, std::cerr);
  if (*grid) return prl::cmd_grid(opts, std::cout, std::cerr);
  if (*selftest) return prl::cmd_selftest(opts, std::cout, std::cerr);
  if (*gen) return prl::cmd_gen_data(opts, std::cout, std::cerr);
  if (*width) return prl::cmd_select_width(opts, std::cout, std::cerr);
  return prl::kExitConfigError;
}
