// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

// Value-level helpers evaluated in double, outside any graph.
namespace loopmoe {

template <typename T>
double logsumexp(std::span<const T> x) {
  if (x.empty()) return -INFINITY;
  const double mx = *std::max_element(x.begin(), x.end());
  double total = 0.0;
  for (T v : x) total += std::exp(static_cast<double>(v) - mx);
  return mx + std::log(total);
}

template <typename T>
std::vector<double> softmax_values(std::span<const T> x) {
  const double lse = logsumexp(x);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::exp(static_cast<double>(x[i]) - lse);
  return out;
}

template <typename T>
std::vector<double> log_softmax_values(std::span<const T> x) {
  const double lse = logsumexp(x);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<double>(x[i]) - lse;
  return out;
}

}  // namespace loopmoe
