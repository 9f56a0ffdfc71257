// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loopmoe/budget/ledger.hpp"

#include <string>

#include "loopmoe/util/error.hpp"

namespace loopmoe {

std::string_view to_string(Architecture arch) {
  switch (arch) {
    case Architecture::base: return "base";
    case Architecture::looped: return "looped";
    case Architecture::moe: return "moe";
    case Architecture::looped_moe: return "looped_moe";
  }
  return "?";
}

Architecture parse_architecture(std::string_view text) {
  for (Architecture a : kAllArchitectures) {
    if (to_string(a) == text) return a;
  }
  throw ConfigError("unknown architecture '" + std::string(text) + "' (expected base, looped, moe or looped_moe)");
}

ParamLedger count_params(const ModelConfig& c) {
  c.validate();
  ParamLedger p;
  const std::size_t d = c.d_model;
  p.attention_per_layer = 4 * d * d;
  p.ffn_per_layer = 3 * d * c.d_ff;
  p.embedding = 2 * c.vocab_size * d;
  const std::size_t L = c.n_unique_layers;
  const std::size_t eff = c.effective_depth();
  if (c.is_moe()) {
    p.expert_ffn = 3 * d * c.expert_d_ff();
    p.router_per_layer = c.n_experts * d;
    p.active_non_embedding = eff * (p.attention_per_layer + c.top_k * p.expert_ffn);
    p.unique_non_embedding = L * (p.attention_per_layer + c.n_experts * p.expert_ffn);
    p.router_active = eff * p.router_per_layer;
    p.router_unique = L * p.router_per_layer;
  } else {
    p.active_non_embedding = eff * (p.attention_per_layer + p.ffn_per_layer);
    p.unique_non_embedding = L * (p.attention_per_layer + p.ffn_per_layer);
  }
  p.n_active = p.active_non_embedding + p.embedding;
  p.n_unique = p.unique_non_embedding + p.embedding;
  return p;
}

GridOptions GridOptions::desk_scale() {
  GridOptions o;
  o.effective_depth = 8;
  o.n_loops = 2;
  o.d_head = 16;
  o.ffn_multiple = 8;
  o.vocab_size = 256;
  o.seq_len = 256;
  o.d_base = 32;
  return o;
}

std::size_t grid_d_ff(std::size_t d_model, std::size_t multiple) {
  if (multiple == 0) throw ConfigError("ffn_multiple must be positive");
  const std::size_t raw = (8 * d_model + 2) / 3;  // ceil(8 d / 3)
  return (raw + multiple - 1) / multiple * multiple;
}

ModelConfig grid_config(std::size_t d_model, Architecture arch, const GridOptions& o) {
  if (o.d_head == 0 || d_model % o.d_head != 0) {
    throw ConfigError("width " + std::to_string(d_model) + " is not a multiple of d_head " + std::to_string(o.d_head));
  }
  const bool looped = arch == Architecture::looped || arch == Architecture::looped_moe;
  const bool moe = arch == Architecture::moe || arch == Architecture::looped_moe;
  if (looped && (o.n_loops == 0 || o.effective_depth % o.n_loops != 0)) {
    throw ConfigError("effective depth " + std::to_string(o.effective_depth) + " is not divisible by n_loops " +
                      std::to_string(o.n_loops));
  }
  ModelConfig c;
  c.d_model = d_model;
  c.n_heads = d_model / o.d_head;
  c.d_ff = grid_d_ff(d_model, o.ffn_multiple);
  c.n_loops = looped ? o.n_loops : 1;
  c.n_unique_layers = o.effective_depth / c.n_loops;
  c.ffn_kind = moe ? FfnKind::moe : FfnKind::dense;
  c.n_experts = o.n_experts;
  c.top_k = o.top_k;
  c.vocab_size = o.vocab_size;
  c.seq_len = o.seq_len;
  c.d_base = o.d_base;
  c.validate();
  return c;
}

}  // namespace loopmoe
