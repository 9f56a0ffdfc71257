// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loopmoe/train/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "loopmoe/util/error.hpp"

namespace loopmoe {

WsdSchedule WsdSchedule::from_fractions(double peak_lr, std::size_t total_steps, double warmup_fraction,
                                        std::size_t warmup_min_steps, double cooldown_fraction, double floor) {
  if (total_steps == 0) throw ConfigError("schedule: total_steps must be positive");
  if (warmup_fraction < 0.0 || cooldown_fraction < 0.0 || warmup_fraction + cooldown_fraction > 1.0) {
    throw ConfigError("schedule: warmup_fraction + cooldown_fraction must lie in [0, 1]");
  }
  WsdSchedule s;
  s.peak_lr = peak_lr;
  s.total_steps = total_steps;
  s.floor = floor;
  const auto total = static_cast<double>(total_steps);
  s.cooldown_steps = std::min(total_steps, static_cast<std::size_t>(std::llround(cooldown_fraction * total)));
  const auto warm = static_cast<std::size_t>(std::ceil(warmup_fraction * total));
  s.warmup_steps = std::min(std::max(warm, warmup_min_steps), total_steps - s.cooldown_steps);
  return s;
}

double WsdSchedule::cooldown_factor(double s, double floor) {
  if (s >= 1.0) return floor;
  return 1.0 - (1.0 - floor) * std::sqrt(s);
}

double WsdSchedule::lr(std::size_t step) const {
  if (step >= total_steps) {
    throw std::out_of_range("schedule: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(total_steps) + ")");
  }
  const std::size_t cooldown_start = total_steps - cooldown_steps;
  if (step >= cooldown_start) {
    const double s = cooldown_steps == 1 ? 1.0
                                         : static_cast<double>(step - cooldown_start) /
                                               static_cast<double>(cooldown_steps - 1);
    return peak_lr * cooldown_factor(s, floor);
  }
  if (step < warmup_steps) {
    return peak_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  }
  return peak_lr;
}

}  // namespace loopmoe
