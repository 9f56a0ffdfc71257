// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loopmoe/budget/isoflop.hpp"

#include <cmath>

#include "loopmoe/util/csv.hpp"
#include "loopmoe/util/error.hpp"

namespace loopmoe {

double tokens_for_budget(double flops, std::size_t n_active) {
  if (!(flops > 0.0)) throw ConfigError("compute budget must be positive");
  if (n_active == 0) throw ConfigError("n_active must be positive");
  return flops / (6.0 * static_cast<double>(n_active));
}

IsoflopPlan plan_isoflop(double flops, std::span<const std::size_t> widths, Architecture arch,
                         const GridOptions& grid, std::size_t batch_tokens) {
  if (batch_tokens == 0) throw ConfigError("batch_tokens must be positive");
  IsoflopPlan plan;
  plan.budget = flops;
  plan.architecture = arch;
  for (std::size_t d : widths) {
    PlannedRun run;
    run.config = grid_config(d, arch, grid);
    run.ledger = count_params(run.config);
    const double exact = tokens_for_budget(flops, run.ledger.n_active);
    const auto batches = static_cast<std::size_t>(std::llround(exact / static_cast<double>(batch_tokens)));
    if (batches == 0) {
      plan.warnings.push_back("width " + std::to_string(d) + " (" + std::string(to_string(arch)) + ") skipped: budget " +
                              format_number(flops) + " buys " + format_number(exact) + " tokens, under one batch of " +
                              std::to_string(batch_tokens));
      continue;
    }
    run.tokens = batches * batch_tokens;
    plan.runs.push_back(std::move(run));
  }
  return plan;
}

void write_isoflop_csv(const std::filesystem::path& path, std::span<const IsoflopPoint> points,
                       std::string_view comment) {
  CsvWriter w(path, {"budget", "architecture", "d_model", "n_active", "n_unique", "D", "final_loss"}, comment);
  for (const IsoflopPoint& p : points) {
    w.row({p.budget, std::string(to_string(p.architecture)), static_cast<std::int64_t>(p.d_model),
           static_cast<std::int64_t>(p.n_active), static_cast<std::int64_t>(p.n_unique),
           static_cast<std::int64_t>(p.tokens), p.final_loss});
  }
}

}  // namespace loopmoe
