// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "loopmoe/cli/commands.hpp"
#include "loopmoe/util/error.hpp"

int main(int argc, char** argv) {
  using namespace loopmoe;
  CLI::App app{"Looped mixture-of-experts transformer experiments"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  CommandOptions options;
  app.add_option("-c,--config", config_path, "JSON experiment config");
  app.add_option("--set", overrides, "Override a config field, e.g. --set train.peak_lr=0.003");
  app.add_option("-j,--jobs", options.jobs, "Worker threads for sweep sub-runs")->check(CLI::PositiveNumber);
  app.fallthrough();

  std::vector<CLI::App*> subs;
  subs.push_back(app.add_subcommand("train", "Train one model; writes a checkpoint and loss_curve.csv"));
  subs.push_back(app.add_subcommand("isoflop", "isoFLOP sweep; writes isoflop.csv and fit_summary_<arch>.csv"));
  subs.push_back(app.add_subcommand("early-exit", "Entropy early-exit sweep; writes pareto.csv"));
  subs.push_back(app.add_subcommand("analyze", "Routing overlap and JSD convergence; writes overlap/convergence CSVs"));
  subs.push_back(app.add_subcommand("mup-check", "Coordinate check and lr transfer; writes coord_check CSVs"));
  CLI::App* ingest_cmd = app.add_subcommand("ingest", "Convert paths.corpus to a binary token file");
  ingest_cmd->add_option("-o,--output", options.output, "Token file to write")->required();
  subs.push_back(ingest_cmd);
  CLI::App* make_corpus_cmd = app.add_subcommand("make-corpus", "Write a synthetic text corpus");
  make_corpus_cmd->add_option("-o,--output", options.output, "Text file to write")->required();
  make_corpus_cmd->add_option("--bytes", options.bytes, "Corpus size in bytes");
  subs.push_back(make_corpus_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfigError;
  }

  ExperimentConfig config;
  try {
    config = load_experiment(config_path, overrides);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  }
  for (CLI::App* sub : subs) {
    if (sub->parsed()) return run_command(sub->get_name(), config, options, std::cout, std::cerr);
  }
  return kExitConfigError;
}
