// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loopmoe/moe/moe.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

#include "loopmoe/model/ffn.hpp"
#include "loopmoe/numerics/functional.hpp"
#include "loopmoe/util/csv.hpp"

namespace loopmoe {

template <typename T>
RouteResult route(std::span<const T> logits, std::size_t k) {
  const std::size_t experts = logits.size();
  if (k == 0 || k > experts) throw std::invalid_argument("route: k must lie in [1, E]");
  std::vector<std::size_t> order(experts);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return logits[a] > logits[b] || (logits[a] == logits[b] && a < b);
                    });
  RouteResult r;
  r.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::vector<T> chosen;
  for (std::size_t e : r.selected) chosen.push_back(logits[e]);
  r.selected_probs = softmax_values(std::span<const T>(chosen));
  r.full_probs = softmax_values(logits);
  return r;
}

template <typename T>
MoeOutput moe_forward(Graph<T>& g, Var x, const MoeVars& layer, std::size_t k) {
  const std::size_t n_experts = layer.experts.size();
  if (n_experts == 0) throw std::invalid_argument("moe_forward: layer has no experts");
  MoeOutput out;
  out.router_logits = g.matmul(x, layer.router);
  if (g.value(out.router_logits).cols() != n_experts) {
    throw ShapeError("moe_forward: router width does not match expert count");
  }
  out.full_probs = g.softmax(out.router_logits);
  out.selected_probs = g.topk_softmax(out.router_logits, k, out.selected);

  const std::size_t rows = g.value(x).rows();
  std::vector<std::vector<std::size_t>> tokens(n_experts);
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> slots(n_experts);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t e = out.selected[r * k + j];
      tokens[e].push_back(r);
      slots[e].emplace_back(r, j);
    }
  }
  std::vector<Var> parts;
  std::vector<std::vector<std::size_t>> part_rows;
  out.expert_rows.assign(n_experts, 0);
  for (std::size_t e = 0; e < n_experts; ++e) {
    if (tokens[e].empty()) continue;
    out.expert_rows[e] = tokens[e].size();
    const ExpertVars& w = layer.experts[e];
    Var xe = g.gather_rows(x, tokens[e]);
    Var ye = swiglu_ffn(g, xe, w.w_gate, w.w_up, w.w_down);
    Var pe = g.gather_elements(out.selected_probs, std::move(slots[e]));
    parts.push_back(g.scale_rows(ye, pe));
    part_rows.push_back(std::move(tokens[e]));
  }
  out.y = g.scatter_add_rows(std::move(parts), std::move(part_rows), rows);
  return out;
}

double load_balance_loss(std::span<const RoutingRecord> records) {
  if (records.empty()) throw std::invalid_argument("load_balance_loss: empty batch");
  const std::size_t experts = records.front().full_probs.size();
  const std::size_t k = records.front().selected.size();
  std::vector<double> count(experts, 0.0), mean_p(experts, 0.0);
  for (const RoutingRecord& rec : records) {
    if (rec.full_probs.size() != experts || rec.selected.size() != k) {
      throw std::invalid_argument("load_balance_loss: records disagree on E or k");
    }
    for (std::size_t e : rec.selected) count.at(e) += 1.0;
    for (std::size_t i = 0; i < experts; ++i) mean_p[i] += rec.full_probs[i];
  }
  const double n = static_cast<double>(records.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < experts; ++i) {
    loss += (count[i] / (static_cast<double>(k) * n)) * (mean_p[i] / n);
  }
  return static_cast<double>(experts) * loss;
}

template <typename T>
double z_loss(const Tensor<T>& router_logits) {
  const std::size_t rows = router_logits.rows();
  if (rows == 0 || router_logits.empty()) throw std::invalid_argument("z_loss: empty batch");
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double lse = logsumexp(router_logits.row(r));
    total += lse * lse;
  }
  return total / static_cast<double>(rows);
}

void write_routing_csv(std::ostream& out, std::span<const RoutingRecord> records) {
  const std::size_t k = records.empty() ? 0 : records.front().selected.size();
  const std::size_t experts = records.empty() ? 0 : records.front().full_probs.size();
  out << "physical_layer,loop_pass,batch,position";
  for (std::size_t j = 0; j < k; ++j) out << ",expert_" << j;
  for (std::size_t i = 0; i < experts; ++i) out << ",prob_" << i;
  out << '\n';
  for (const RoutingRecord& r : records) {
    out << r.physical_layer << ',' << r.loop_pass << ',' << r.batch << ',' << r.position;
    for (std::size_t e : r.selected) out << ',' << e;
    for (double p : r.full_probs) out << ',' << format_number(p);
    out << '\n';
  }
}

template RouteResult route<float>(std::span<const float>, std::size_t);
template RouteResult route<double>(std::span<const double>, std::size_t);
template MoeOutput moe_forward<float>(Graph<float>&, Var, const MoeVars&, std::size_t);
template MoeOutput moe_forward<double>(Graph<double>&, Var, const MoeVars&, std::size_t);
template double z_loss<float>(const Tensor<float>&);
template double z_loss<double>(const Tensor<double>&);

}  // namespace loopmoe
