// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loopmoe/earlyexit/early_exit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "loopmoe/numerics/functional.hpp"
#include "loopmoe/train/trainer.hpp"
#include "loopmoe/util/csv.hpp"

namespace loopmoe {

double entropy(std::span<const double> dist) {
  double total = 0.0;
  double h = 0.0;
  for (double p : dist) {
    if (p < 0.0) throw std::invalid_argument("entropy: negative probability mass");
    total += p;
    if (p > 0.0) h -= p * std::log(p);
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw std::invalid_argument("entropy: distribution sums to " + format_number(total) + ", not 1");
  }
  return h;
}

std::vector<std::size_t> candidate_points(const ModelConfig& c) {
  std::vector<std::size_t> out;
  const std::size_t eff = c.effective_depth();
  if (c.is_looped()) {
    for (std::size_t r = 1; r < c.n_loops; ++r) out.push_back(r * c.n_unique_layers);
  } else {
    for (std::size_t l = 1; l < eff; ++l) out.push_back(l);
  }
  out.push_back(eff);
  return out;
}

template <typename T>
ExitTable build_exit_table(const Transformer<T>& model, std::span<const std::int32_t> stream,
                           const ExitEvalOptions& options) {
  const ModelConfig& c = model.config();
  const std::size_t seq = std::min(options.seq_len, c.seq_len);
  ExitTable table;
  table.candidates = candidate_points(c);
  table.effective_depth = c.effective_depth();
  table.vocab_size = c.vocab_size;
  const std::size_t n_cand = table.candidates.size();

  auto windows = eval_windows(stream.size(), seq);
  if (options.max_tokens > 0) {
    std::size_t kept = 0, n = 0;
    while (n < windows.size() && kept < options.max_tokens) {
      windows[n].second = std::min(windows[n].second, options.max_tokens - kept);
      kept += windows[n].second;
      ++n;
    }
    windows.resize(n);
  }
  if (windows.empty()) throw std::invalid_argument("early exit: evaluation stream holds fewer than two tokens");

  const std::size_t per_batch = std::max<std::size_t>(1, options.micro_batch_tokens / seq);
  std::size_t i = 0;
  while (i < windows.size()) {
    const std::size_t len = windows[i].second;
    std::vector<std::size_t> starts;
    while (i < windows.size() && windows[i].second == len && starts.size() < per_batch) {
      starts.push_back(windows[i++].first);
    }
    const WindowBatch wb = make_windows(stream, starts, len);
    const ForwardTrace<T> trace = model.forward(wb.inputs);
    std::vector<Tensor<T>> lens;
    for (std::size_t cp : table.candidates) {
      lens.push_back(cp == table.effective_depth ? trace.final_logits
                                                 : model.lens_logits(trace.hidden_states[cp - 1]));
    }
    for (std::size_t r = 0; r < wb.targets.size(); ++r) {
      const auto target = static_cast<std::size_t>(wb.targets[r]);
      for (std::size_t j = 0; j < n_cand; ++j) {
        const auto row = lens[j].row(r);
        const double lse = logsumexp<T>(row);
        table.target_nll.push_back(lse - static_cast<double>(row[target]));
        table.entropies.push_back(entropy(softmax_values<T>(row)));
      }
    }
    table.tokens += wb.targets.size();
  }
  return table;
}

ExitResult evaluate_exit(const ExitTable& table, double tau) {
  if (table.tokens == 0) throw std::invalid_argument("early exit: empty exit table");
  const std::size_t n_cand = table.candidates.size();
  const bool release_all = tau >= std::log(static_cast<double>(table.vocab_size));
  ExitResult res;
  res.tau = tau;
  res.histogram.assign(n_cand, 0);
  double nll = 0.0;
  double saved = 0.0;
  const auto depth = static_cast<double>(table.effective_depth);
  for (std::size_t t = 0; t < table.tokens; ++t) {
    std::size_t j = 0;
    while (j + 1 < n_cand && !(release_all || table.entropies[t * n_cand + j] < tau)) ++j;
    ++res.histogram[j];
    nll += table.target_nll[t * n_cand + j];
    saved += (depth - static_cast<double>(table.candidates[j])) / depth;
  }
  const auto n = static_cast<double>(table.tokens);
  res.mean_nll = nll / n;
  res.perplexity = std::exp(res.mean_nll);
  res.flops_saved = saved / n;
  return res;
}

template <typename T>
ExitResult evaluate_early_exit(const Transformer<T>& model, std::span<const std::int32_t> stream, double tau,
                               const ExitEvalOptions& options) {
  return evaluate_exit(build_exit_table(model, stream, options), tau);
}

std::vector<ExitResult> pareto_sweep(const ExitTable& table, std::span<const double> taus) {
  if (!std::is_sorted(taus.begin(), taus.end())) throw std::invalid_argument("pareto_sweep: tau grid must ascend");
  std::vector<ExitResult> out;
  for (double tau : taus) out.push_back(evaluate_exit(table, tau));
  return out;
}

std::vector<double> default_tau_grid(std::size_t vocab_size, std::size_t points, double tau_min) {
  const double hi = std::log(static_cast<double>(vocab_size));
  if (points == 0 || !(tau_min > 0.0) || !(tau_min < hi)) {
    throw std::invalid_argument("tau grid needs at least one point and 0 < tau_min < ln V");
  }
  if (points == 1) return {hi};
  std::vector<double> out(points);
  const double ratio = std::log(hi / tau_min) / static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i) out[i] = tau_min * std::exp(ratio * static_cast<double>(i));
  out.back() = hi;
  return out;
}

double perplexity_at_savings(std::span<const ExitResult> curve, double level) {
  for (std::size_t i = 0; i < curve.size(); ++i) {
    if (curve[i].flops_saved == level) return curve[i].perplexity;
    if (i > 0 && curve[i - 1].flops_saved < level && curve[i].flops_saved > level) {
      const double w = (level - curve[i - 1].flops_saved) / (curve[i].flops_saved - curve[i - 1].flops_saved);
      return curve[i - 1].perplexity + w * (curve[i].perplexity - curve[i - 1].perplexity);
    }
  }
  return std::numeric_limits<double>::quiet_NaN();
}

void write_pareto_csv(const std::filesystem::path& path, std::span<const ExitResult> curve,
                      std::span<const std::size_t> candidates, std::string_view comment) {
  std::vector<std::string> header = {"tau", "flops_saved", "perplexity"};
  for (std::size_t cp : candidates) header.push_back("exit_" + std::to_string(cp));
  CsvWriter w(path, header, comment);
  for (const ExitResult& r : curve) {
    std::vector<CsvField> row = {r.tau, r.flops_saved, r.perplexity};
    for (std::size_t n : r.histogram) row.emplace_back(static_cast<std::int64_t>(n));
    w.row(row);
  }
}

void write_savings_csv(const std::filesystem::path& path, std::span<const ExitResult> curve,
                       std::span<const double> levels, std::string_view comment) {
  CsvWriter w(path, {"flops_saved", "perplexity"}, comment);
  for (double level : levels) w.row({level, perplexity_at_savings(curve, level)});
}

template ExitTable build_exit_table<float>(const Transformer<float>&, std::span<const std::int32_t>,
                                           const ExitEvalOptions&);
template ExitTable build_exit_table<double>(const Transformer<double>&, std::span<const std::int32_t>,
                                            const ExitEvalOptions&);
template ExitResult evaluate_early_exit<float>(const Transformer<float>&, std::span<const std::int32_t>, double,
                                               const ExitEvalOptions&);
template ExitResult evaluate_early_exit<double>(const Transformer<double>&, std::span<const std::int32_t>, double,
                                                const ExitEvalOptions&);

}  // namespace loopmoe
