// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loopmoe/model/transformer.hpp"

#include <stdexcept>
#include <string>

#include "loopmoe/model/ffn.hpp"
#include "loopmoe/util/error.hpp"

namespace loopmoe {

template <typename T>
Transformer<T>::Transformer(ModelConfig config) : config_(std::move(config)) {
  const auto layout = parameter_layout(config_);
  params_.reserve(layout.size());
  for (const ParamSpec& spec : layout) params_.emplace_back(spec.name, spec.role, spec.shape);

  std::size_t i = 0;
  embed_ = i++;
  layers_.resize(config_.n_unique_layers);
  for (LayerSlots& layer : layers_) {
    layer.wq = i++;
    layer.wk = i++;
    layer.wv = i++;
    layer.wo = i++;
    if (config_.is_moe()) {
      layer.router = i++;
      for (std::size_t e = 0; e < 3 * config_.n_experts; ++e) layer.experts.push_back(i++);
    } else {
      layer.w_gate = i++;
      layer.w_up = i++;
      layer.w_down = i++;
    }
  }
  unembed_ = i++;
  if (i != params_.size()) throw std::logic_error("transformer: parameter layout and slot table disagree");
}

template <typename T>
Parameter<T>& Transformer<T>::parameter(std::string_view name) {
  for (Parameter<T>& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

template <typename T>
const Parameter<T>& Transformer<T>::parameter(std::string_view name) const {
  return const_cast<Transformer*>(this)->parameter(name);
}

template <typename T>
std::size_t Transformer<T>::stored_parameter_count() const {
  std::size_t n = 0;
  for (const Parameter<T>& p : params_) n += p.value.size();
  return n;
}

template <typename T>
void Transformer<T>::zero_grad() {
  for (Parameter<T>& p : params_) p.zero_grad();
}

template <typename T>
void Transformer<T>::check_tokens(const TokenBatch& tokens) const {
  if (tokens.batch == 0 || tokens.seq_len == 0) throw std::invalid_argument("forward: empty token batch");
  if (tokens.ids.size() != tokens.tokens()) {
    throw std::invalid_argument("forward: token table holds " + std::to_string(tokens.ids.size()) +
                                " ids, expected batch x seq_len = " + std::to_string(tokens.tokens()));
  }
  if (tokens.seq_len > config_.seq_len) {
    throw std::invalid_argument("forward: sequence length " + std::to_string(tokens.seq_len) +
                                " exceeds configured seq_len " + std::to_string(config_.seq_len));
  }
  for (std::int32_t id : tokens.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw std::out_of_range("forward: token id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(config_.vocab_size));
    }
  }
}

template <typename T>
template <typename Bind>
ForwardGraph Transformer<T>::build_impl(Graph<T>& g, const TokenBatch& tokens, Bind&& bind) const {
  check_tokens(tokens);
  const ModelConfig& c = config_;
  const std::size_t seq = tokens.seq_len;
  const T score_scale = static_cast<T>(c.attention_score_scale());

  ForwardGraph fg;
  std::vector<std::size_t> ids(tokens.ids.begin(), tokens.ids.end());
  Var x = g.gather_rows(bind(embed_), std::move(ids));
  for (std::size_t pass = 0; pass < c.n_loops; ++pass) {
    for (std::size_t l = 0; l < c.n_unique_layers; ++l) {
      const LayerSlots& w = layers_[l];
      Var h = g.rmsnorm(x);
      Var q = g.rope(g.matmul(h, bind(w.wq)), seq, c.n_heads, c.rope_theta);
      Var k = g.rope(g.matmul(h, bind(w.wk)), seq, c.n_heads, c.rope_theta);
      Var v = g.matmul(h, bind(w.wv));
      Var attn = g.causal_attention(q, k, v, seq, c.n_heads, score_scale);
      x = g.add(x, g.matmul(attn, bind(w.wo)));

      h = g.rmsnorm(x);
      Var y;
      if (c.is_moe()) {
        MoeVars vars{bind(w.router), {}};
        for (std::size_t e = 0; e < c.n_experts; ++e) {
          vars.experts.push_back(
              {bind(w.experts[3 * e]), bind(w.experts[3 * e + 1]), bind(w.experts[3 * e + 2])});
        }
        RouterInvocation inv{l + 1, pass + 1, moe_forward(g, h, vars, c.top_k)};
        y = inv.moe.y;
        fg.routers.push_back(std::move(inv));
      } else {
        y = swiglu_ffn(g, h, bind(w.w_gate), bind(w.w_up), bind(w.w_down));
      }
      x = g.add(x, y);
      fg.hidden.push_back(x);
    }
  }
  fg.logits = g.matmul(g.rmsnorm(x), bind(unembed_));
  return fg;
}

template <typename T>
ForwardGraph Transformer<T>::build(Graph<T>& g, const TokenBatch& tokens) {
  return build_impl(g, tokens, [&](std::size_t slot) { return g.param(params_[slot]); });
}

template <typename T>
ForwardTrace<T> Transformer<T>::forward(const TokenBatch& tokens, const CaptureFlags& capture) const {
  Graph<T> g(false);
  std::vector<Var> bound(params_.size());
  ForwardGraph fg = build_impl(g, tokens, [&](std::size_t slot) {
    if (!bound[slot].valid()) bound[slot] = g.input(params_[slot].value);
    return bound[slot];
  });
  ForwardTrace<T> trace;
  if (capture.hidden_states) {
    for (Var h : fg.hidden) trace.hidden_states.push_back(g.value(h));
  }
  if (capture.routing) trace.routing_records = collect_routing(g, fg, tokens);
  trace.final_logits = g.value(fg.logits);
  return trace;
}

template <typename T>
Tensor<T> Transformer<T>::lens_logits(const Tensor<T>& hidden) const {
  if (hidden.rank() != 2 || hidden.cols() != config_.d_model) {
    throw ShapeError("logit lens: hidden state must be [tokens x d_model]");
  }
  Graph<T> g(false);
  Var out = g.matmul(g.rmsnorm(g.input(hidden)), g.input(params_[unembed_].value));
  return g.value(out);
}

template <typename T>
Tensor<T> Transformer<T>::logit_lens(const ForwardTrace<T>& trace, std::size_t effective_layer) const {
  if (effective_layer < 1 || effective_layer > config_.effective_depth()) {
    throw std::out_of_range("logit lens: effective layer " + std::to_string(effective_layer) + " outside [1, " +
                            std::to_string(config_.effective_depth()) + "]");
  }
  if (trace.hidden_states.size() != config_.effective_depth()) {
    throw std::invalid_argument("logit lens: trace was captured without hidden states");
  }
  Graph<T> g(false);
  Var probs = g.softmax(g.input(lens_logits(trace.hidden_states[effective_layer - 1])));
  return g.value(probs);
}

template <typename T>
std::vector<RoutingRecord> collect_routing(const Graph<T>& g, const ForwardGraph& fg, const TokenBatch& tokens) {
  std::vector<RoutingRecord> out;
  for (const RouterInvocation& inv : fg.routers) {
    const Tensor<T>& full = g.value(inv.moe.full_probs);
    const Tensor<T>& sel = g.value(inv.moe.selected_probs);
    const std::size_t k = sel.cols();
    for (std::size_t r = 0; r < full.rows(); ++r) {
      RoutingRecord rec;
      rec.physical_layer = inv.physical_layer;
      rec.loop_pass = inv.loop_pass;
      rec.batch = r / tokens.seq_len;
      rec.position = r % tokens.seq_len;
      rec.selected.assign(inv.moe.selected.begin() + static_cast<std::ptrdiff_t>(r * k),
                          inv.moe.selected.begin() + static_cast<std::ptrdiff_t>((r + 1) * k));
      rec.selected_probs.assign(sel.row(r).begin(), sel.row(r).end());
      rec.full_probs.assign(full.row(r).begin(), full.row(r).end());
      out.push_back(std::move(rec));
    }
  }
  return out;
}

template class Transformer<float>;
template class Transformer<double>;
template std::vector<RoutingRecord> collect_routing<float>(const Graph<float>&, const ForwardGraph&,
                                                           const TokenBatch&);
template std::vector<RoutingRecord> collect_routing<double>(const Graph<double>&, const ForwardGraph&,
                                                            const TokenBatch&);

}  // namespace loopmoe
