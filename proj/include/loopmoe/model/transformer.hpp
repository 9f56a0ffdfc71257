// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "loopmoe/model/config.hpp"
#include "loopmoe/moe/moe.hpp"
#include "loopmoe/numerics/graph.hpp"

namespace loopmoe {

// Token ids laid out [batch x seq_len], row-major.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<std::int32_t> ids;

  std::size_t tokens() const { return batch * seq_len; }
};

// One router call inside the unrolled forward pass.
struct RouterInvocation {
  std::size_t physical_layer = 1;  // 1-based
  std::size_t loop_pass = 1;       // 1-based
  MoeOutput moe;
};

// Graph handles produced by Transformer::build.
struct ForwardGraph {
  Var logits;                   // [tokens x V]
  std::vector<Var> hidden;      // residual stream after each effective layer
  std::vector<RouterInvocation> routers;
};

struct CaptureFlags {
  bool hidden_states = true;
  bool routing = false;
};

template <typename T>
struct ForwardTrace {
  std::vector<Tensor<T>> hidden_states;  // L x R entries when captured
  std::vector<RoutingRecord> routing_records;
  Tensor<T> final_logits;                // [tokens x V]
};

// Decoder-only pre-norm transformer whose n_unique_layers physical layers are
// applied n_loops times. Parameters follow parameter_layout() order and are
// never reallocated, so references stay valid for the model's lifetime.
template <typename T>
class Transformer {
 public:
  explicit Transformer(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  Parameter<T>& parameter(std::string_view name);
  const Parameter<T>& parameter(std::string_view name) const;
  std::size_t stored_parameter_count() const;
  void zero_grad();

  // Builds the training graph; gradients reach this model's parameters.
  ForwardGraph build(Graph<T>& g, const TokenBatch& tokens);
  // Same computation on a private no-grad graph.
  ForwardTrace<T> forward(const TokenBatch& tokens, const CaptureFlags& capture = {}) const;

  // rmsnorm followed by the unembedding, for any residual-stream tensor.
  Tensor<T> lens_logits(const Tensor<T>& hidden) const;
  // softmax(lens_logits(hidden at effective_layer)), one distribution per row.
  // effective_layer is 1-based and must lie in [1, L x R].
  Tensor<T> logit_lens(const ForwardTrace<T>& trace, std::size_t effective_layer) const;

 private:
  struct LayerSlots {
    std::size_t wq, wk, wv, wo;
    std::size_t w_gate = 0, w_up = 0, w_down = 0;
    std::size_t router = 0;
    std::vector<std::size_t> experts;  // three slots per expert: gate, up, down
  };

  template <typename Bind>
  ForwardGraph build_impl(Graph<T>& g, const TokenBatch& tokens, Bind&& bind) const;
  void check_tokens(const TokenBatch& tokens) const;

  ModelConfig config_;
  std::vector<Parameter<T>> params_;
  std::size_t embed_ = 0;
  std::size_t unembed_ = 0;
  std::vector<LayerSlots> layers_;
};

extern template class Transformer<float>;
extern template class Transformer<double>;

// Per-token records of every router invocation, in (invocation, token) order.
template <typename T>
std::vector<RoutingRecord> collect_routing(const Graph<T>& g, const ForwardGraph& fg, const TokenBatch& tokens);

}  // namespace loopmoe
