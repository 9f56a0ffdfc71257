// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <vector>

#include "loopmoe/numerics/graph.hpp"

namespace loopmoe {

// Routing decision for one token at one (physical layer, loop pass).
struct RoutingRecord {
  std::size_t physical_layer = 1;  // 1-based
  std::size_t loop_pass = 1;       // 1-based
  std::size_t batch = 0;
  std::size_t position = 0;
  std::vector<std::size_t> selected;    // k distinct experts, descending logit
  std::vector<double> selected_probs;   // softmax restricted to `selected`
  std::vector<double> full_probs;       // softmax over all E logits
};

struct RouteResult {
  std::vector<std::size_t> selected;
  std::vector<double> selected_probs;
  std::vector<double> full_probs;
};

// Top-k of one token's router logits, ties to the lowest expert index.
template <typename T>
RouteResult route(std::span<const T> logits, std::size_t k);

struct ExpertVars {
  Var w_gate;
  Var w_up;
  Var w_down;
};

// One MoE layer bound into a graph: router [d_model x E] plus E experts.
struct MoeVars {
  Var router;
  std::vector<ExpertVars> experts;
};

struct MoeOutput {
  Var y;
  Var router_logits;
  Var full_probs;
  Var selected_probs;
  std::vector<std::size_t> selected;    // [rows x k]
  std::vector<std::size_t> expert_rows;  // tokens evaluated per expert
};

// y = sum_{i in top-k} p_i(x) FFN_i(x). Each expert runs only on the tokens
// that selected it.
template <typename T>
MoeOutput moe_forward(Graph<T>& g, Var x, const MoeVars& layer, std::size_t k);

// E * sum_i f_i * mean_p_i over the records of one router invocation, with
// f_i = count_i / (k * tokens). Throws std::invalid_argument on an empty batch.
double load_balance_loss(std::span<const RoutingRecord> records);

// (1/B) sum_j logsumexp(h_j)^2 over the rows of `router_logits`.
template <typename T>
double z_loss(const Tensor<T>& router_logits);

// Auxiliary-loss weights.
struct MoeLossWeights {
  double load_balance = 0.01;
  double router_z = 0.001;
};

// Columns: physical_layer, loop_pass, batch, position, expert_0..k-1, prob_0..E-1.
void write_routing_csv(std::ostream& out, std::span<const RoutingRecord> records);

}  // namespace loopmoe
