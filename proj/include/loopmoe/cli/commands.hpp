// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include "loopmoe/cli/experiment.hpp"

namespace loopmoe {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 1;
inline constexpr int kExitRuntimeError = 2;

struct CommandOptions {
  std::size_t jobs = 1;
  std::filesystem::path output;  // ingest / make-corpus target file
  std::size_t bytes = 1 << 20;   // make-corpus size
};

// Subcommand names accepted by run_command.
inline constexpr std::string_view kCommands[] = {"train",     "isoflop", "early-exit", "analyze",
                                                 "mup-check", "ingest",  "make-corpus"};

// Loads the corpus named by paths.corpus; throws ConfigError naming the field
// when it is missing or unreadable, or when its vocabulary exceeds the model's.
CorpusStore load_corpus(const ExperimentConfig& config);

int cmd_train(const ExperimentConfig& config, const CommandOptions& options, std::ostream& out);
int cmd_isoflop(const ExperimentConfig& config, const CommandOptions& options, std::ostream& out);
int cmd_early_exit(const ExperimentConfig& config, const CommandOptions& options, std::ostream& out);
int cmd_analyze(const ExperimentConfig& config, const CommandOptions& options, std::ostream& out);
int cmd_mup_check(const ExperimentConfig& config, const CommandOptions& options, std::ostream& out);
int cmd_ingest(const ExperimentConfig& config, const CommandOptions& options, std::ostream& out);
int cmd_make_corpus(const ExperimentConfig& config, const CommandOptions& options, std::ostream& out);

// Dispatches by name and maps exceptions to exit codes: ConfigError gives 1
// and any other failure gives 2, each with one diagnostic line on `err`.
int run_command(std::string_view name, const ExperimentConfig& config, const CommandOptions& options,
                std::ostream& out, std::ostream& err);

}  // namespace loopmoe
