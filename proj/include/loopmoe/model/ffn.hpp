// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "loopmoe/numerics/graph.hpp"

namespace loopmoe {

// y = (silu(x W_gate) * (x W_up)) W_down with row-vector activations.
template <typename T>
Var swiglu_ffn(Graph<T>& g, Var x, Var w_gate, Var w_up, Var w_down) {
  Var gate = g.silu(g.matmul(x, w_gate));
  Var up = g.matmul(x, w_up);
  return g.matmul(g.mul(gate, up), w_down);
}

}  // namespace loopmoe
