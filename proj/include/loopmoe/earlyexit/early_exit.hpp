// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "loopmoe/model/transformer.hpp"

namespace loopmoe {

// -sum p ln p in nats with 0 ln 0 = 0. Throws std::invalid_argument on
// negative mass or a total that is not 1 within 1e-6.
double entropy(std::span<const double> dist);

// Effective layers (1-based, ascending) where a token may stop: the R - 1 loop
// boundaries for looped models, every layer below the top otherwise, and
// always the final depth.
std::vector<std::size_t> candidate_points(const ModelConfig& config);

// Per-token entropy and target log-probability of the logit-lens distribution
// at every candidate point, from one teacher-forced full-depth pass.
struct ExitTable {
  std::vector<std::size_t> candidates;
  std::size_t effective_depth = 0;
  std::size_t vocab_size = 0;
  std::size_t tokens = 0;
  std::vector<double> entropies;    // [tokens x candidates]
  std::vector<double> target_nll;   // [tokens x candidates], -ln p(target)
};

struct ExitEvalOptions {
  std::size_t seq_len = 256;
  std::size_t max_tokens = 0;  // 0 scores the whole stream
  std::size_t micro_batch_tokens = 2048;
};

template <typename T>
ExitTable build_exit_table(const Transformer<T>& model, std::span<const std::int32_t> stream,
                           const ExitEvalOptions& options);

struct ExitResult {
  double tau = 0.0;
  double mean_nll = 0.0;
  double perplexity = 0.0;
  double flops_saved = 0.0;              // mean over tokens of (L_eff - exit) / L_eff
  std::vector<std::size_t> histogram;    // tokens exiting at each candidate point
};

// Each token leaves at the first candidate whose entropy is below tau; a
// threshold at or above ln V releases every token at the first candidate.
ExitResult evaluate_exit(const ExitTable& table, double tau);

template <typename T>
ExitResult evaluate_early_exit(const Transformer<T>& model, std::span<const std::int32_t> stream, double tau,
                               const ExitEvalOptions& options);

// One evaluation per tau; the grid must be ascending.
std::vector<ExitResult> pareto_sweep(const ExitTable& table, std::span<const double> taus);

// `points` geometric thresholds from tau_min to ln(vocab_size).
std::vector<double> default_tau_grid(std::size_t vocab_size, std::size_t points = 32, double tau_min = 1e-3);

// Perplexity at a given flops_saved level, linear in flops_saved between the
// bracketing sweep points; NaN when the sweep never reaches that level.
double perplexity_at_savings(std::span<const ExitResult> curve, double level);

// Columns: tau, flops_saved, perplexity, exit_<layer> per candidate point.
void write_pareto_csv(const std::filesystem::path& path, std::span<const ExitResult> curve,
                      std::span<const std::size_t> candidates, std::string_view comment = {});

// Columns: flops_saved, perplexity at each requested level.
void write_savings_csv(const std::filesystem::path& path, std::span<const ExitResult> curve,
                       std::span<const double> levels, std::string_view comment = {});

}  // namespace loopmoe
