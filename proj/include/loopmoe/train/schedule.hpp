// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

namespace loopmoe {

// Warmup-stable-decay: linear warmup to the peak, a flat stable phase, then a
// sqrt-shaped cooldown lr = peak * (1 - (1 - floor) * sqrt(s)) where s runs
// from 0 at the first cooldown step to 1 at the final step.
struct WsdSchedule {
  double peak_lr = 1e-2;
  std::size_t total_steps = 1;
  std::size_t warmup_steps = 0;
  std::size_t cooldown_steps = 0;
  double floor = 0.05;

  // warmup = max(ceil(warmup_fraction * total), warmup_min_steps), clipped so
  // warmup and cooldown never overlap; cooldown = round(cooldown_fraction * total).
  static WsdSchedule from_fractions(double peak_lr, std::size_t total_steps, double warmup_fraction,
                                    std::size_t warmup_min_steps, double cooldown_fraction, double floor);

  // Valid for 0 <= step < total_steps.
  double lr(std::size_t step) const;

  // Cooldown multiplier of the peak at progress s in [0, 1].
  static double cooldown_factor(double s, double floor);
};

}  // namespace loopmoe
