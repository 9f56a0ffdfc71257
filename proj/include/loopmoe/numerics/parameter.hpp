// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>

#include "loopmoe/numerics/tensor.hpp"

namespace loopmoe {

// Which width-scaling rule a weight follows.
enum class ParamRole { embedding, hidden, unembedding, router, expert };

std::string_view to_string(ParamRole role);

// A trainable weight with its gradient and optimizer metadata.
template <typename T>
struct Parameter {
  std::string name;
  ParamRole role = ParamRole::hidden;
  Tensor<T> value;
  Tensor<T> grad;
  double init_variance = 0.0;
  double lr_multiplier = 1.0;
  bool weight_decay = true;

  Parameter() = default;
  Parameter(std::string n, ParamRole r, Shape shape)
      : name(std::move(n)), role(r), value(shape), grad(std::move(shape)) {}

  void zero_grad() { grad.fill(T{0}); }
};

}  // namespace loopmoe
