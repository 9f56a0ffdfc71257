// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "loopmoe/budget/ledger.hpp"
#include "loopmoe/model/config.hpp"
#include "loopmoe/mup/mup.hpp"
#include "loopmoe/train/corpus.hpp"
#include "loopmoe/train/trainer.hpp"

namespace loopmoe {

struct PathsConfig {
  std::string corpus;
  std::string corpus_format = "text";
  std::string checkpoint;  // empty means <output_dir>/model.ckpt
  std::string output_dir = "out";
};

struct IsoflopConfig {
  std::vector<double> budgets = {3e12, 1e13};
  std::vector<std::size_t> widths = {32, 48, 64, 96};
  std::vector<std::string> architectures = {"base", "looped", "moe", "looped_moe"};
  std::size_t effective_depth = 8;
  std::size_t n_loops = 2;
  std::size_t d_head = 16;
  std::size_t ffn_multiple = 8;
};

struct EarlyExitConfig {
  std::vector<double> taus;  // empty selects the geometric default grid
  std::size_t tau_points = 32;
  double tau_min = 1e-3;
  std::vector<double> savings_levels = {0.05, 0.10, 0.20, 0.30};
  std::size_t max_tokens = 0;
};

struct AnalysisConfig {
  bool overlap = true;
  bool convergence = true;
  std::size_t max_tokens = 0;
  double converged_threshold = 0.5;
};

struct MupCheckConfig {
  std::vector<std::size_t> widths = {64, 128, 256};
  std::size_t steps = 5;
  std::size_t d_head = 16;
  std::size_t probe_sequences = 4;
  std::size_t seeds = 3;
  bool control = true;
  std::vector<double> transfer_lrs;  // empty skips the transfer sweep
  std::vector<std::size_t> transfer_widths = {64, 128};
  std::size_t transfer_token_budget = 1 << 18;
};

// Every field has a default; the JSON form mirrors the field names exactly.
// The width-ratio base comes from model.d_base for every command.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  MupConfig mup;
  TrainConfig train;
  PathsConfig paths;
  IsoflopConfig isoflop;
  EarlyExitConfig early_exit;
  AnalysisConfig analysis;
  MupCheckConfig mup_check;

  // mup with d_base taken from the model block.
  MupConfig mup_for(const ModelConfig& config) const;
  std::filesystem::path output_dir() const;
  std::filesystem::path checkpoint_path() const;
  GridOptions grid() const;
  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Parses a JSON document; absent fields keep defaults, unknown keys throw
// ConfigError. train.peak_lr defaults to mup.eta_base when not given, and
// train.seed always mirrors the top-level seed.
ExperimentConfig parse_experiment(const nlohmann::json& document);
ExperimentConfig load_experiment(const std::filesystem::path& path,
                                 const std::vector<std::string>& overrides = {});

// Applies "dotted.key=value" to a JSON document; the value is read as JSON
// when it parses and as a string otherwise.
void apply_override(nlohmann::json& document, std::string_view assignment);

nlohmann::json to_json(const ExperimentConfig& config);
// FNV-1a of the canonical JSON dump.
std::uint64_t config_hash(const ExperimentConfig& config);
// "config_hash=<16 hex digits> seed=<seed>"
std::string provenance_comment(const ExperimentConfig& config);

// Output root: LOOPMOE_OUT when set and output_dir is relative.
std::filesystem::path resolve_output_dir(const std::string& output_dir);

}  // namespace loopmoe
