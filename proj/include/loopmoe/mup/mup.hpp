// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "loopmoe/model/config.hpp"
#include "loopmoe/model/transformer.hpp"

namespace loopmoe {

struct MupConfig {
  std::size_t d_base = 128;
  double sigma_base = 0.02;
  double eta_base = 1e-2;
  // false gives the un-scaled control: every weight at sigma_base^2 and lr multiplier 1.
  bool width_scaling = true;

  double w_ratio(std::size_t d_model) const {
    return static_cast<double>(d_model) / static_cast<double>(d_base);
  }
};

struct ParamGroup {
  std::string name;
  ParamRole role;
  double init_variance;
  double lr_multiplier;
  bool weight_decay_eligible;
};

// Hidden, unembedding, router and expert weights get variance
// sigma_base^2 / w_ratio and lr multiplier 1 / w_ratio; embeddings keep
// sigma_base^2 and 1. No forward-pass multipliers exist anywhere. Tied
// (looped) layers are ordinary parameters here.
std::vector<ParamGroup> build_param_groups(const ModelConfig& config, const MupConfig& mup);

// Copies group metadata (variance, lr multiplier, decay flag) onto the
// model's parameters. Throws std::logic_error if any parameter lacks a group.
template <typename T>
void apply_param_groups(Transformer<T>& model, const std::vector<ParamGroup>& groups);

// Fresh model with i.i.d. normal weights at each group's variance, drawn from
// the "init" sub-stream of `seed` in parameter order.
template <typename T>
Transformer<T> init_model(const ModelConfig& config, const MupConfig& mup, std::uint64_t seed);

}  // namespace loopmoe
