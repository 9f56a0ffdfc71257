// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>

#include "loopmoe/numerics/graph.hpp"

namespace loopmoe {

class NondeterministicError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradCheckOptions {
  double eps = 1e-4;
  // Coordinates sampled per parameter; parameters at or below this size are checked exhaustively.
  std::size_t coords_per_param = 24;
  std::uint64_t seed = 0;
  // Denominator floor for the relative error, so near-zero gradients compare absolutely.
  double abs_floor = 1e-6;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
};

// Builds a scalar loss from parameters registered via Graph::param.
using ScalarFn = std::function<Var(Graph<double>&)>;

// Compares reverse-mode gradients with centered differences
// (f(x + eps) - f(x - eps)) / (2 eps) on sampled coordinates. The relative
// error of one coordinate is |a - n| / max(|a|, |n|, abs_floor).
GradCheckResult grad_check(const ScalarFn& f, std::span<Parameter<double>* const> params,
                           const GradCheckOptions& options = {});

}  // namespace loopmoe
