// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "loopmoe/numerics/parameter.hpp"

namespace loopmoe {

enum class FfnKind { dense, moe };

// Attention logit scale: 1/d_head (muP) or 1/sqrt(d_head).
enum class AttentionScale { inv_head_dim, inv_sqrt_head_dim };

std::string_view to_string(FfnKind kind);
std::string_view to_string(AttentionScale scale);
FfnKind parse_ffn_kind(std::string_view text);
AttentionScale parse_attention_scale(std::string_view text);

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 176;
  std::size_t n_unique_layers = 8;
  std::size_t n_loops = 1;
  FfnKind ffn_kind = FfnKind::dense;
  std::size_t n_experts = 8;
  std::size_t top_k = 2;
  std::size_t vocab_size = 256;
  std::size_t seq_len = 256;
  double rope_theta = 10000.0;
  std::size_t d_base = 32;
  AttentionScale attention_scale = AttentionScale::inv_head_dim;

  std::size_t effective_depth() const { return n_unique_layers * n_loops; }
  std::size_t head_dim() const { return d_model / n_heads; }
  bool is_moe() const { return ffn_kind == FfnKind::moe; }
  bool is_looped() const { return n_loops > 1; }
  // Hidden width of one expert: d_ff / k, so k experts match one dense FFN.
  std::size_t expert_d_ff() const { return d_ff / top_k; }
  double attention_score_scale() const;

  // Throws ConfigError describing the first violated invariant.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct ParamSpec {
  std::string name;
  ParamRole role;
  Shape shape;
};

// Every stored weight of a model, in checkpoint order. Loop passes share the
// n_unique_layers physical layers, so nothing here depends on n_loops.
std::vector<ParamSpec> parameter_layout(const ModelConfig& config);

}  // namespace loopmoe
