// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "loopmoe/numerics/parameter.hpp"
#include "loopmoe/numerics/tensor.hpp"

namespace loopmoe {

// Handle to a node of a Graph. Only meaningful for the graph that issued it.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

inline constexpr double kRmsNormEps = 1e-6;

// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so the
// tape order is a topological order and backward() walks it in reverse.
//
// Activations are rank-2 [rows x cols]. Sequence ops (rope, attention) take
// rows laid out as batch-major [batch * seq_len] with position = row % seq_len.
template <typename T>
class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  bool grad_enabled() const { return grad_enabled_; }
  void set_check_finite(bool on) { check_finite_ = on; }

  // Constant leaf; never receives a gradient.
  Var input(Tensor<T> value);
  // Trainable leaf. Repeated calls with the same Parameter return the same
  // node, so every use of a tied weight accumulates into one gradient.
  Var param(Parameter<T>& p);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, T factor);
  Var silu(Var a);
  // Softmax over the last axis.
  Var softmax(Var a);
  // x / sqrt(mean(x^2) + eps) per row, no gain.
  Var rmsnorm(Var a, T eps = static_cast<T>(kRmsNormEps));
  // Rotates consecutive coordinate pairs of each head by pos * theta^(-2i/d_head).
  Var rope(Var x, std::size_t seq_len, std::size_t n_heads, double theta);
  Var causal_attention(Var q, Var k, Var v, std::size_t seq_len, std::size_t n_heads, T score_scale);

  Var gather_rows(Var x, std::vector<std::size_t> rows);
  // Picks single elements (row, col) into an [n x 1] column.
  Var gather_elements(Var x, std::vector<std::pair<std::size_t, std::size_t>> index);
  // y[r, :] = w[r] * x[r, :] with w of shape [rows x 1].
  Var scale_rows(Var x, Var w);
  // Sums parts[i] into rows[i] of a zero [n_rows x cols] result.
  Var scatter_add_rows(std::vector<Var> parts, std::vector<std::vector<std::size_t>> rows, std::size_t n_rows);

  // Per-row top-k of the logits (ties to the lowest index) and the softmax
  // restricted to those k entries. Indices are written to `selected` as a
  // row-major [rows x k] table ordered by descending logit; they carry no
  // gradient.
  Var topk_softmax(Var logits, std::size_t k, std::vector<std::size_t>& selected);

  // Mean negative log-likelihood of `targets` under softmax(logits).
  Var cross_entropy(Var logits, std::span<const std::int32_t> targets);
  // E * sum_i f_i * mean_p_i with f_i = count_i / (k * rows); gradient flows
  // through the probabilities only.
  Var load_balance_loss(Var full_probs, std::span<const std::size_t> selected, std::size_t k);
  // mean over rows of logsumexp(row)^2.
  Var z_loss(Var logits);

  Var sum(Var a);
  Var mean(Var a);
  // sum_i weights[i] * terms[i]; all terms share one shape.
  Var weighted_sum(std::span<const Var> terms, std::span<const T> weights);

  // Seeds d(root)/d(root) = 1 for a single-element root, propagates, and adds
  // parameter-leaf gradients into Parameter::grad.
  void backward(Var root);

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  // Empty tensor when the node received no gradient.
  const Tensor<T>& grad(Var v) const { return nodes_.at(v.id).grad; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    std::string_view op;
  };

  Var push(std::string_view op, Tensor<T> value, std::vector<std::size_t> parents, BackwardFn fn);
  bool any_requires_grad(std::initializer_list<Var> vars) const;
  // Gradient buffer of a node, allocated on first use. Null if the node does
  // not require a gradient.
  Tensor<T>* grad_of(std::size_t id);
  const Tensor<T>& out_grad(std::size_t id) const { return nodes_[id].grad; }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
  bool grad_enabled_ = true;
  bool check_finite_ = true;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace loopmoe
