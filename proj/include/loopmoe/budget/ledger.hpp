// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "loopmoe/model/config.hpp"

namespace loopmoe {

enum class Architecture { base, looped, moe, looped_moe };

std::string_view to_string(Architecture arch);
Architecture parse_architecture(std::string_view text);
inline constexpr Architecture kAllArchitectures[] = {Architecture::base, Architecture::looped, Architecture::moe,
                                                     Architecture::looped_moe};

// Active parameters count every looped invocation and only the k routed
// experts; unique parameters count stored weights once and all E experts.
// Router weights are kept out of both totals and reported on their own.
struct ParamLedger {
  std::size_t attention_per_layer = 0;  // A = 4 d^2
  std::size_t ffn_per_layer = 0;        // F = 3 d d_ff (dense equivalent)
  std::size_t expert_ffn = 0;           // F / k, zero for dense
  std::size_t router_per_layer = 0;     // E d, zero for dense
  std::size_t embedding = 0;            // 2 V d, embedding plus unembedding

  std::size_t active_non_embedding = 0;
  std::size_t unique_non_embedding = 0;
  std::size_t n_active = 0;        // active_non_embedding + embedding
  std::size_t n_unique = 0;        // unique_non_embedding + embedding
  std::size_t router_active = 0;   // router weights touched per forward pass
  std::size_t router_unique = 0;   // router weights stored

  // Stored parameters including routers; equals the model's tensor total.
  std::size_t stored_total() const { return n_unique + router_unique; }
};

ParamLedger count_params(const ModelConfig& config);

// Shape rules of the width grid.
struct GridOptions {
  std::size_t effective_depth = 16;
  std::size_t n_loops = 2;        // loop count for the looped architectures
  std::size_t d_head = 64;
  std::size_t ffn_multiple = 64;  // d_ff = ceil(8/3 d_model) rounded up to this
  std::size_t n_experts = 8;
  std::size_t top_k = 2;
  std::size_t vocab_size = 50257;
  std::size_t seq_len = 1024;
  std::size_t d_base = 128;

  static GridOptions full_scale() { return {}; }
  static GridOptions desk_scale();
};

std::size_t grid_d_ff(std::size_t d_model, std::size_t multiple);

// Configuration of `arch` at width d_model following the grid rules.
ModelConfig grid_config(std::size_t d_model, Architecture arch, const GridOptions& options);

}  // namespace loopmoe
