// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loopmoe/model/config.hpp"

#include <cmath>

#include "loopmoe/util/error.hpp"

namespace loopmoe {

std::string_view to_string(FfnKind kind) { return kind == FfnKind::moe ? "moe" : "dense"; }

std::string_view to_string(AttentionScale scale) {
  return scale == AttentionScale::inv_head_dim ? "inv_head_dim" : "inv_sqrt_head_dim";
}

FfnKind parse_ffn_kind(std::string_view text) {
  if (text == "dense") return FfnKind::dense;
  if (text == "moe") return FfnKind::moe;
  throw ConfigError("ffn_kind must be 'dense' or 'moe', got '" + std::string(text) + "'");
}

AttentionScale parse_attention_scale(std::string_view text) {
  if (text == "inv_head_dim") return AttentionScale::inv_head_dim;
  if (text == "inv_sqrt_head_dim") return AttentionScale::inv_sqrt_head_dim;
  throw ConfigError("attention_scale must be 'inv_head_dim' or 'inv_sqrt_head_dim', got '" + std::string(text) +
                    "'");
}

double ModelConfig::attention_score_scale() const {
  const double dh = static_cast<double>(head_dim());
  return attention_scale == AttentionScale::inv_head_dim ? 1.0 / dh : 1.0 / std::sqrt(dh);
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("model config: " + what); };
  if (d_model == 0) fail("d_model must be positive");
  if (n_heads == 0 || d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (head_dim() % 2 != 0) fail("head dimension must be even for RoPE");
  if (d_ff == 0) fail("d_ff must be positive");
  if (n_unique_layers == 0) fail("n_unique_layers must be at least 1");
  if (n_loops == 0) fail("n_loops must be at least 1");
  if (vocab_size == 0) fail("vocab_size must be positive");
  if (seq_len == 0) fail("seq_len must be positive");
  if (rope_theta <= 0.0) fail("rope_theta must be positive");
  if (d_base == 0) fail("d_base must be positive");
  if (ffn_kind == FfnKind::moe) {
    if (n_experts == 0) fail("n_experts must be positive");
    if (top_k == 0 || top_k > n_experts) fail("top_k must lie in [1, n_experts]");
    if (d_ff % top_k != 0) fail("d_ff must be divisible by top_k so experts split the dense FFN evenly");
  }
}

std::vector<ParamSpec> parameter_layout(const ModelConfig& c) {
  c.validate();
  std::vector<ParamSpec> out;
  const std::size_t d = c.d_model;
  out.push_back({"embed", ParamRole::embedding, {c.vocab_size, d}});
  for (std::size_t l = 0; l < c.n_unique_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
      out.push_back({p + "attn." + w, ParamRole::hidden, {d, d}});
    }
    if (c.ffn_kind == FfnKind::dense) {
      out.push_back({p + "ffn.w_gate", ParamRole::hidden, {d, c.d_ff}});
      out.push_back({p + "ffn.w_up", ParamRole::hidden, {d, c.d_ff}});
      out.push_back({p + "ffn.w_down", ParamRole::hidden, {c.d_ff, d}});
    } else {
      out.push_back({p + "moe.router", ParamRole::router, {d, c.n_experts}});
      const std::size_t h = c.expert_d_ff();
      for (std::size_t e = 0; e < c.n_experts; ++e) {
        const std::string ep = p + "moe.experts." + std::to_string(e) + ".";
        out.push_back({ep + "w_gate", ParamRole::expert, {d, h}});
        out.push_back({ep + "w_up", ParamRole::expert, {d, h}});
        out.push_back({ep + "w_down", ParamRole::expert, {h, d}});
      }
    }
  }
  out.push_back({"unembed", ParamRole::unembedding, {d, c.vocab_size}});
  return out;
}

}  // namespace loopmoe
