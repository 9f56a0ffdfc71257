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
#include "loopmoe/moe/moe.hpp"

namespace loopmoe {

// Jensen-Shannon divergence in nats divided by ln 2, so it lies in [0, 1].
// Throws std::invalid_argument on negative mass, a size mismatch, or inputs
// that do not sum to 1 within 1e-6.
double jsd(std::span<const double> p, std::span<const double> q);

struct ConvergenceRow {
  std::size_t effective_layer = 0;
  double mean_jsd = 0.0;
  double std_jsd = 0.0;          // population std of per-sequence mean JSD
  double std_jsd_tokens = 0.0;   // population std over individual tokens
  double converged_fraction = 0.0;
};

struct ConvergenceOptions {
  std::size_t seq_len = 256;
  std::size_t max_tokens = 0;  // 0 analyzes the whole stream
  std::size_t micro_batch_tokens = 2048;
  double threshold = 0.5;
};

inline constexpr double kConvergedThreshold = 0.5;

// One row per effective layer comparing its logit-lens distribution to the
// final output distribution.
template <typename T>
std::vector<ConvergenceRow> convergence_profile(const Transformer<T>& model, std::span<const std::int32_t> stream,
                                                const ConvergenceOptions& options);

// Tallies how the expert set of each (token, physical layer) changes between
// consecutive loop passes. Counts are integers so fractions are exact
// rationals over the token count.
struct OverlapCounts {
  std::size_t physical_layer = 0;
  std::size_t pass_from = 1;
  std::size_t pass_to = 2;
  std::size_t exact = 0;
  std::size_t partial = 0;
  std::size_t disjoint = 0;
  std::size_t union_total = 0;  // sum over tokens of |S_from ∪ S_to|

  std::size_t tokens() const { return exact + partial + disjoint; }
  double frac_exact() const;
  double frac_partial() const;
  double frac_disjoint() const;
  double mean_unique_experts() const;
};

enum class OverlapCategory { exact, partial, disjoint };

// Classifies two k-sets of experts. Throws std::invalid_argument when their
// sizes differ or either is empty.
OverlapCategory classify_overlap(std::span<const std::size_t> a, std::span<const std::size_t> b);

class OverlapAccumulator {
 public:
  OverlapAccumulator(std::size_t n_physical_layers, std::size_t n_loops);

  // Records from one forward pass over a batch. Every (batch, position,
  // physical layer) must appear once for each pass; otherwise throws
  // std::invalid_argument naming the missing record.
  void add(std::span<const RoutingRecord> records);

  // Ordered by physical layer, then pass pair.
  const std::vector<OverlapCounts>& counts() const { return counts_; }

 private:
  std::size_t layers_;
  std::size_t loops_;
  std::vector<OverlapCounts> counts_;
};

std::vector<OverlapCounts> routing_overlap(std::span<const RoutingRecord> records, std::size_t n_physical_layers,
                                           std::size_t n_loops);

// Runs the model over the stream capturing routing and accumulates overlap.
// Throws std::invalid_argument for dense or non-looped models.
template <typename T>
std::vector<OverlapCounts> overlap_profile(const Transformer<T>& model, std::span<const std::int32_t> stream,
                                           const ConvergenceOptions& options);

// Columns: physical_layer, frac_exact, frac_partial, frac_disjoint,
// mean_unique_experts; pass_from and pass_to follow when n_loops > 2.
void write_overlap_csv(const std::filesystem::path& path, std::span<const OverlapCounts> counts,
                       std::size_t n_loops, std::string_view comment = {});

// Columns: effective_layer, mean_jsd, std_jsd, converged_fraction,
// std_jsd_tokens.
void write_convergence_csv(const std::filesystem::path& path, std::span<const ConvergenceRow> rows,
                           std::string_view comment = {});

}  // namespace loopmoe
