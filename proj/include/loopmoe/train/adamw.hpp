// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "loopmoe/numerics/parameter.hpp"

namespace loopmoe {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Independent decay: theta -= weight_decay * theta each step, not scaled by the lr.
  double weight_decay = 1e-4;
};

// AdamW with bias correction. Each parameter moves with lr * lr_multiplier;
// decay applies only where Parameter::weight_decay is set.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  // Throws NumericError naming the first parameter with a non-finite gradient,
  // before touching any weight.
  void step(std::vector<Parameter<T>>& params, double lr);

  std::size_t steps_taken() const { return t_; }
  const AdamWConfig& config() const { return config_; }

 private:
  AdamWConfig config_;
  std::size_t t_ = 0;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

// Scales all gradients so their global L2 norm is at most max_norm; returns
// the norm before clipping.
template <typename T>
double clip_grad_norm(std::vector<Parameter<T>>& params, double max_norm);

}  // namespace loopmoe
