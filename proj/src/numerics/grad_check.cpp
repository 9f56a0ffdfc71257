// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loopmoe/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace loopmoe {

namespace {

double evaluate(const ScalarFn& f) {
  Graph<double> g(false);
  return g.value(f(g))[0];
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, std::span<Parameter<double>* const> params,
                           const GradCheckOptions& options) {
  if (options.eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");
  for (Parameter<double>* p : params) {
    p->grad = Tensor<double>(p->value.shape());
  }
  Graph<double> g;
  const Var loss = f(g);
  const double base = g.value(loss)[0];
  g.backward(loss);

  const double again = evaluate(f);
  if (again != base) {
    throw NondeterministicError("grad_check: repeated evaluation differs (" + std::to_string(base) + " vs " +
                                std::to_string(again) + ")");
  }

  std::mt19937_64 rng(options.seed);
  GradCheckResult result;
  for (Parameter<double>* p : params) {
    std::vector<std::size_t> coords(p->value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > options.coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.coords_per_param);
    }
    for (std::size_t i : coords) {
      const double saved = p->value[i];
      p->value[i] = saved + options.eps;
      const double plus = evaluate(f);
      p->value[i] = saved - options.eps;
      const double minus = evaluate(f);
      p->value[i] = saved;

      const double numeric = (plus - minus) / (2.0 * options.eps);
      const double analytic = p->grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), options.abs_floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++result.coords_checked;
      if (rel > result.max_rel_error || result.worst_param.empty()) {
        result.max_rel_error = std::max(rel, result.max_rel_error);
        if (rel >= result.max_rel_error) {
          result.worst_param = p->name;
          result.worst_index = i;
          result.worst_analytic = analytic;
          result.worst_numeric = numeric;
        }
      }
    }
  }
  return result;
}

}  // namespace loopmoe
