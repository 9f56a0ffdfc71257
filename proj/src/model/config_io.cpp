// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loopmoe/model/config_io.hpp"

#include "loopmoe/util/json_reader.hpp"

namespace loopmoe {

nlohmann::json to_json(const ModelConfig& c) {
  return {
      {"d_model", c.d_model},
      {"n_heads", c.n_heads},
      {"d_ff", c.d_ff},
      {"n_unique_layers", c.n_unique_layers},
      {"n_loops", c.n_loops},
      {"ffn_kind", std::string(to_string(c.ffn_kind))},
      {"n_experts", c.n_experts},
      {"top_k", c.top_k},
      {"vocab_size", c.vocab_size},
      {"seq_len", c.seq_len},
      {"rope_theta", c.rope_theta},
      {"d_base", c.d_base},
      {"attention_scale", std::string(to_string(c.attention_scale))},
  };
}

void read_model_config(const nlohmann::json& object, ModelConfig& c, const std::string& path) {
  StrictObject o(object, path);
  o.read("d_model", c.d_model);
  o.read("n_heads", c.n_heads);
  o.read("d_ff", c.d_ff);
  o.read("n_unique_layers", c.n_unique_layers);
  o.read("n_loops", c.n_loops);
  std::string kind(to_string(c.ffn_kind));
  o.read("ffn_kind", kind);
  c.ffn_kind = parse_ffn_kind(kind);
  o.read("n_experts", c.n_experts);
  o.read("top_k", c.top_k);
  o.read("vocab_size", c.vocab_size);
  o.read("seq_len", c.seq_len);
  o.read("rope_theta", c.rope_theta);
  o.read("d_base", c.d_base);
  std::string scale(to_string(c.attention_scale));
  o.read("attention_scale", scale);
  c.attention_scale = parse_attention_scale(scale);
  o.finish();
}

}  // namespace loopmoe
