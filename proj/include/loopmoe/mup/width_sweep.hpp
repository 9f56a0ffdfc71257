// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "loopmoe/model/config.hpp"
#include "loopmoe/mup/mup.hpp"
#include "loopmoe/train/corpus.hpp"
#include "loopmoe/train/trainer.hpp"

namespace loopmoe {

// Shared setup for experiments that vary only the model width.
struct WidthSweepSpec {
  ModelConfig model;  // d_model, n_heads and d_ff are replaced per width
  std::size_t d_head = 16;
  std::size_t ffn_multiple = 8;
  MupConfig mup;
  TrainConfig train;
  std::uint64_t seed = 0;
  // coord_check reports the RMS averaged over init and data seeds seed + i, i < seeds.
  std::size_t seeds = 1;
  std::size_t jobs = 1;
};

// `base` with d_model = width, n_heads = width / d_head and d_ff the rounded
// 8/3 multiple. Throws ConfigError when width is not a multiple of d_head.
ModelConfig config_at_width(const ModelConfig& base, std::size_t width, std::size_t d_head,
                            std::size_t ffn_multiple);

struct CoordCheckRow {
  std::size_t width = 0;
  std::size_t step = 0;             // 0 is the initialization
  std::size_t effective_layer = 0;  // 1-based
  double rms = 0.0;                 // residual-stream RMS on the probe batch
};

struct CoordCheckResult {
  std::vector<std::size_t> widths;
  std::size_t steps = 0;
  std::size_t effective_depth = 0;
  std::vector<CoordCheckRow> rows;      // ordered by width, step, layer
  std::vector<std::string> divergence;  // per width; empty when the run finished

  // max/min RMS across widths at one (step, layer); infinite when any width
  // diverged before that step.
  double ratio(std::size_t step, std::size_t effective_layer) const;
  // Largest ratio over every step and layer.
  double max_ratio() const;
};

// Trains every width for `steps` optimizer steps on the same data order and
// records per-layer activation RMS on a fixed probe batch from the test split
// before training and after each step.
CoordCheckResult coord_check(const WidthSweepSpec& spec, std::span<const std::size_t> widths, std::size_t steps,
                             const CorpusStore& corpus, std::size_t probe_sequences = 4);

// Columns: width, step, effective_layer, rms.
void write_coord_check_csv(const std::filesystem::path& path, const CoordCheckResult& result,
                           std::string_view comment = {});

struct TransferRun {
  std::size_t width = 0;
  double lr = 0.0;
  double final_loss = 0.0;  // NaN when diverged
  bool diverged = false;
};

// One training run per (width, lr) under identical data order; spec.train.peak_lr
// is replaced by each grid value.
std::vector<TransferRun> lr_transfer_sweep(const WidthSweepSpec& spec, std::span<const std::size_t> widths,
                                           std::span<const double> lrs, const CorpusStore& corpus);

struct TransferSummary {
  std::size_t width = 0;
  double best_lr = 0.0;
  double best_loss = 0.0;
  // Signed distance in grid steps from the base width's best lr.
  long grid_steps_from_base = 0;
  // Loss at the base width's best lr relative to this width's best loss.
  double relative_gap = 0.0;
};

// Summaries in width order; the first width of the sweep is the base. Widths
// whose every run diverged get NaN losses. Throws std::invalid_argument when
// the runs do not form a full grid.
std::vector<TransferSummary> summarize_transfer(std::span<const TransferRun> runs);

// Columns: width, lr, final_loss, diverged.
void write_transfer_csv(const std::filesystem::path& path, std::span<const TransferRun> runs,
                        std::string_view comment = {});

// Columns: width, best_lr, best_loss, grid_steps_from_base, relative_gap.
void write_transfer_summary_csv(const std::filesystem::path& path, std::span<const TransferSummary> rows,
                                std::string_view comment = {});

}  // namespace loopmoe
