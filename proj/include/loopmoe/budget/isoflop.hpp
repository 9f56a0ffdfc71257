// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "loopmoe/budget/ledger.hpp"

namespace loopmoe {

// Tokens a budget of C FLOPs buys at n_active parameters under C = 6 N D.
double tokens_for_budget(double flops, std::size_t n_active);

struct PlannedRun {
  ModelConfig config;
  ParamLedger ledger;
  std::size_t tokens = 0;  // D rounded to whole batches
};

struct IsoflopPlan {
  double budget = 0.0;
  Architecture architecture = Architecture::base;
  std::vector<PlannedRun> runs;
  std::vector<std::string> warnings;  // one per excluded width
};

// One run per width at compute budget `flops`; widths whose budget buys less
// than one batch are dropped with a warning.
IsoflopPlan plan_isoflop(double flops, std::span<const std::size_t> widths, Architecture arch,
                         const GridOptions& grid, std::size_t batch_tokens);

struct IsoflopPoint {
  double budget = 0.0;
  Architecture architecture = Architecture::base;
  std::size_t d_model = 0;
  std::size_t n_active = 0;
  std::size_t n_unique = 0;
  std::size_t tokens = 0;
  double final_loss = 0.0;  // NaN when the run diverged
};

// Columns: budget, architecture, d_model, n_active, n_unique, D, final_loss.
void write_isoflop_csv(const std::filesystem::path& path, std::span<const IsoflopPoint> points,
                       std::string_view comment = {});

}  // namespace loopmoe
