// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loopmoe/budget/fit.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "loopmoe/util/csv.hpp"

namespace loopmoe {

namespace {

void require_positive(std::span<const FitSample> points) {
  for (const FitSample& p : points) {
    if (!(p.n > 0.0) || !(p.loss > 0.0) || !std::isfinite(p.n) || !std::isfinite(p.loss)) {
      throw FitError("fit: sizes and losses must be positive and finite (got n=" + format_number(p.n) +
                     ", loss=" + format_number(p.loss) + ")");
    }
  }
}

std::size_t distinct_sizes(std::span<const FitSample> points) {
  std::set<double> xs;
  for (const FitSample& p : points) xs.insert(p.n);
  return xs.size();
}

}  // namespace

QuadraticFit fit_quadratic(std::span<const FitSample> points) {
  require_positive(points);
  if (distinct_sizes(points) < 3) throw FitError("fit_quadratic: need at least three distinct model sizes");

  const double n = static_cast<double>(points.size());
  double mean_x = 0.0;
  double lo = INFINITY, hi = -INFINITY;
  for (const FitSample& p : points) {
    const double x = std::log10(p.n);
    mean_x += x / n;
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  // Normal equations on centered u = x - mean_x.
  double s1 = 0, s2 = 0, s3 = 0, s4 = 0, t0 = 0, t1 = 0, t2 = 0;
  for (const FitSample& p : points) {
    const double u = std::log10(p.n) - mean_x;
    s1 += u;
    s2 += u * u;
    s3 += u * u * u;
    s4 += u * u * u * u;
    t0 += p.loss;
    t1 += u * p.loss;
    t2 += u * u * p.loss;
  }
  // | s4 s3 s2 | |qa|   |t2|
  // | s3 s2 s1 | |qb| = |t1|
  // | s2 s1 n  | |qc|   |t0|
  auto det3 = [](double a, double b, double c, double d, double e, double f, double g, double h, double i) {
    return a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g);
  };
  const double det = det3(s4, s3, s2, s3, s2, s1, s2, s1, n);
  if (std::abs(det) < 1e-300) throw FitError("fit_quadratic: degenerate design");
  const double qa = det3(t2, s3, s2, t1, s2, s1, t0, s1, n) / det;
  const double qb = det3(s4, t2, s2, s3, t1, s1, s2, t0, n) / det;
  const double qc = det3(s4, s3, t2, s3, s2, t1, s2, s1, t0) / det;
  if (!(qa > 0.0)) {
    throw FitError("fit_quadratic: fitted parabola opens downward (a = " + format_number(qa) + "), no minimum");
  }

  QuadraticFit fit;
  fit.a = qa;
  fit.b = qb - 2.0 * qa * mean_x;
  fit.c = qc - qb * mean_x + qa * mean_x * mean_x;
  const double u_opt = -qb / (2.0 * qa);
  fit.log10_n_opt = u_opt + mean_x;
  fit.n_opt = std::pow(10.0, fit.log10_n_opt);
  fit.loss_min = qc - qb * qb / (4.0 * qa);
  fit.extrapolated = fit.log10_n_opt < lo || fit.log10_n_opt > hi;
  return fit;
}

PowerLawFit fit_power_law(std::span<const FitSample> optima) {
  require_positive(optima);
  if (distinct_sizes(optima) < 2) throw FitError("fit_power_law: need at least two distinct model sizes");
  const double n = static_cast<double>(optima.size());
  double mx = 0.0, my = 0.0;
  for (const FitSample& p : optima) {
    mx += std::log(p.n) / n;
    my += std::log(p.loss) / n;
  }
  double sxy = 0.0, sxx = 0.0;
  for (const FitSample& p : optima) {
    const double dx = std::log(p.n) - mx;
    sxy += dx * (std::log(p.loss) - my);
    sxx += dx * dx;
  }
  const double slope = sxy / sxx;
  return {-slope, std::exp(my - slope * mx)};
}

void write_fit_csv(const std::filesystem::path& path, std::span<const FitSummaryRow> rows, std::string_view comment) {
  CsvWriter w(path, {"budget", "n_opt", "loss_min", "alpha"}, comment);
  for (const FitSummaryRow& r : rows) w.row({r.budget, r.n_opt, r.loss_min, r.alpha});
}

}  // namespace loopmoe
