// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace loopmoe {

class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FitSample {
  double n = 0.0;     // parameter count
  double loss = 0.0;
};

// loss ~ a x^2 + b x + c with x = log10(n).
struct QuadraticFit {
  double a = 0.0, b = 0.0, c = 0.0;
  double log10_n_opt = 0.0;
  double n_opt = 0.0;
  double loss_min = 0.0;
  bool extrapolated = false;  // vertex lies outside the sampled x range
};

// Least squares in log10(n). Throws FitError with fewer than three distinct
// sizes or when the parabola does not open upward.
QuadraticFit fit_quadratic(std::span<const FitSample> points);

// loss = coefficient * n^(-alpha), fit by least squares in log-log space.
struct PowerLawFit {
  double alpha = 0.0;
  double coefficient = 0.0;
};

// Throws FitError with fewer than two distinct sizes or non-positive values.
PowerLawFit fit_power_law(std::span<const FitSample> optima);

struct FitSummaryRow {
  double budget = 0.0;
  double n_opt = 0.0;
  double loss_min = 0.0;
  double alpha = 0.0;
};

// Columns: budget, n_opt, loss_min, alpha.
void write_fit_csv(const std::filesystem::path& path, std::span<const FitSummaryRow> rows,
                   std::string_view comment = {});

}  // namespace loopmoe
