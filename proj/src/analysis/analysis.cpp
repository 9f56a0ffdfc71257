// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loopmoe/analysis/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "loopmoe/numerics/functional.hpp"
#include "loopmoe/train/trainer.hpp"
#include "loopmoe/util/csv.hpp"

namespace loopmoe {
namespace {

void check_distribution(std::span<const double> p, const char* name) {
  double total = 0.0;
  for (double v : p) {
    if (v < 0.0) throw std::invalid_argument(std::string("jsd: negative probability mass in ") + name);
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw std::invalid_argument(std::string("jsd: ") + name + " sums to " + format_number(total) + ", not 1");
  }
}

std::vector<std::pair<std::size_t, std::size_t>> truncated_windows(std::size_t stream_size, std::size_t seq,
                                                                   std::size_t max_tokens) {
  auto windows = eval_windows(stream_size, seq);
  if (max_tokens > 0) {
    std::size_t kept = 0, n = 0;
    while (n < windows.size() && kept < max_tokens) {
      windows[n].second = std::min(windows[n].second, max_tokens - kept);
      kept += windows[n].second;
      ++n;
    }
    windows.resize(n);
  }
  if (windows.empty()) throw std::invalid_argument("analysis: stream holds fewer than two tokens");
  return windows;
}

// Calls fn(WindowBatch) for batches of equal-length windows.
template <typename Fn>
void for_each_batch(std::span<const std::int32_t> stream, const ConvergenceOptions& options, std::size_t seq,
                    Fn&& fn) {
  const auto windows = truncated_windows(stream.size(), seq, options.max_tokens);
  const std::size_t per_batch = std::max<std::size_t>(1, options.micro_batch_tokens / seq);
  std::size_t i = 0;
  while (i < windows.size()) {
    const std::size_t len = windows[i].second;
    std::vector<std::size_t> starts;
    while (i < windows.size() && windows[i].second == len && starts.size() < per_batch) {
      starts.push_back(windows[i++].first);
    }
    fn(make_windows(stream, starts, len));
  }
}

double population_std(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size()));
}

}  // namespace

double jsd(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("jsd: distributions differ in size");
  check_distribution(p, "p");
  check_distribution(q, "q");
  double kl_p = 0.0, kl_q = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) kl_p += p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) kl_q += q[i] * std::log(q[i] / m);
  }
  const double raw = 0.5 * kl_p + 0.5 * kl_q;
  return std::clamp(raw / std::numbers::ln2, 0.0, 1.0);
}

template <typename T>
std::vector<ConvergenceRow> convergence_profile(const Transformer<T>& model, std::span<const std::int32_t> stream,
                                                const ConvergenceOptions& options) {
  const ModelConfig& c = model.config();
  const std::size_t depth = c.effective_depth();
  const std::size_t seq = std::min(options.seq_len, c.seq_len);
  std::vector<std::vector<double>> token_jsd(depth);
  std::vector<std::vector<double>> seq_means(depth);
  std::vector<std::size_t> converged(depth, 0);

  for_each_batch(stream, options, seq, [&](const WindowBatch& wb) {
    const ForwardTrace<T> trace = model.forward(wb.inputs);
    const std::size_t len = wb.inputs.seq_len;
    std::vector<std::vector<double>> finals(wb.targets.size());
    for (std::size_t r = 0; r < wb.targets.size(); ++r) finals[r] = softmax_values<T>(trace.final_logits.row(r));
    for (std::size_t l = 0; l < depth; ++l) {
      const Tensor<T> lens = l + 1 == depth ? trace.final_logits : model.lens_logits(trace.hidden_states[l]);
      for (std::size_t b = 0; b < wb.inputs.batch; ++b) {
        double seq_total = 0.0;
        for (std::size_t t = 0; t < len; ++t) {
          const std::size_t r = b * len + t;
          const double v = jsd(softmax_values<T>(lens.row(r)), finals[r]);
          token_jsd[l].push_back(v);
          seq_total += v;
          if (v < options.threshold) ++converged[l];
        }
        seq_means[l].push_back(seq_total / static_cast<double>(len));
      }
    }
  });

  std::vector<ConvergenceRow> rows(depth);
  for (std::size_t l = 0; l < depth; ++l) {
    const auto n = static_cast<double>(token_jsd[l].size());
    double total = 0.0;
    for (double v : token_jsd[l]) total += v;
    rows[l].effective_layer = l + 1;
    rows[l].mean_jsd = total / n;
    rows[l].std_jsd = population_std(seq_means[l]);
    rows[l].std_jsd_tokens = population_std(token_jsd[l]);
    rows[l].converged_fraction = static_cast<double>(converged[l]) / n;
  }
  return rows;
}

double OverlapCounts::frac_exact() const { return static_cast<double>(exact) / static_cast<double>(tokens()); }
double OverlapCounts::frac_partial() const { return static_cast<double>(partial) / static_cast<double>(tokens()); }
double OverlapCounts::frac_disjoint() const {
  return static_cast<double>(disjoint) / static_cast<double>(tokens());
}
double OverlapCounts::mean_unique_experts() const {
  return static_cast<double>(union_total) / static_cast<double>(tokens());
}

OverlapCategory classify_overlap(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.empty() || a.size() != b.size()) throw std::invalid_argument("overlap: expert sets must be equal-size k-sets");
  std::size_t shared = 0;
  for (std::size_t e : a) shared += static_cast<std::size_t>(std::count(b.begin(), b.end(), e));
  if (shared == a.size()) return OverlapCategory::exact;
  return shared == 0 ? OverlapCategory::disjoint : OverlapCategory::partial;
}

OverlapAccumulator::OverlapAccumulator(std::size_t n_physical_layers, std::size_t n_loops)
    : layers_(n_physical_layers), loops_(n_loops) {
  if (n_loops < 2) throw std::invalid_argument("overlap: routing overlap needs at least two loop passes");
  if (n_physical_layers == 0) throw std::invalid_argument("overlap: no physical layers");
  for (std::size_t l = 1; l <= layers_; ++l) {
    for (std::size_t r = 1; r < loops_; ++r) counts_.push_back({.physical_layer = l, .pass_from = r, .pass_to = r + 1});
  }
}

void OverlapAccumulator::add(std::span<const RoutingRecord> records) {
  if (records.empty()) return;
  std::size_t batch = 0, positions = 0;
  for (const RoutingRecord& rec : records) {
    if (rec.physical_layer < 1 || rec.physical_layer > layers_ || rec.loop_pass < 1 || rec.loop_pass > loops_) {
      throw std::invalid_argument("overlap: record outside the model's layer/pass range");
    }
    batch = std::max(batch, rec.batch + 1);
    positions = std::max(positions, rec.position + 1);
  }
  const std::size_t tokens = batch * positions;
  // index: ((layer * loops) + pass) * tokens + token
  std::vector<const RoutingRecord*> slot(layers_ * loops_ * tokens, nullptr);
  for (const RoutingRecord& rec : records) {
    const std::size_t idx =
        ((rec.physical_layer - 1) * loops_ + (rec.loop_pass - 1)) * tokens + rec.batch * positions + rec.position;
    if (slot[idx] != nullptr) throw std::invalid_argument("overlap: duplicate routing record");
    slot[idx] = &rec;
  }
  for (std::size_t l = 0; l < layers_; ++l) {
    for (std::size_t r = 0; r + 1 < loops_; ++r) {
      OverlapCounts& oc = counts_[l * (loops_ - 1) + r];
      for (std::size_t t = 0; t < tokens; ++t) {
        const RoutingRecord* a = slot[(l * loops_ + r) * tokens + t];
        const RoutingRecord* b = slot[(l * loops_ + r + 1) * tokens + t];
        if (a == nullptr || b == nullptr) {
          throw std::invalid_argument("overlap: missing routing record for physical layer " + std::to_string(l + 1) +
                                      ", pass " + std::to_string(a == nullptr ? r + 1 : r + 2) + ", batch " +
                                      std::to_string(t / positions) + ", position " + std::to_string(t % positions));
        }
        switch (classify_overlap(a->selected, b->selected)) {
          case OverlapCategory::exact: ++oc.exact; break;
          case OverlapCategory::partial: ++oc.partial; break;
          case OverlapCategory::disjoint: ++oc.disjoint; break;
        }
        std::vector<std::size_t> uni(a->selected);
        uni.insert(uni.end(), b->selected.begin(), b->selected.end());
        std::sort(uni.begin(), uni.end());
        oc.union_total += static_cast<std::size_t>(std::unique(uni.begin(), uni.end()) - uni.begin());
      }
    }
  }
}

std::vector<OverlapCounts> routing_overlap(std::span<const RoutingRecord> records, std::size_t n_physical_layers,
                                           std::size_t n_loops) {
  OverlapAccumulator acc(n_physical_layers, n_loops);
  acc.add(records);
  return acc.counts();
}

template <typename T>
std::vector<OverlapCounts> overlap_profile(const Transformer<T>& model, std::span<const std::int32_t> stream,
                                           const ConvergenceOptions& options) {
  const ModelConfig& c = model.config();
  if (!c.is_moe()) throw std::invalid_argument("overlap: dense models have no routing");
  OverlapAccumulator acc(c.n_unique_layers, c.n_loops);
  const std::size_t seq = std::min(options.seq_len, c.seq_len);
  for_each_batch(stream, options, seq, [&](const WindowBatch& wb) {
    const ForwardTrace<T> trace = model.forward(wb.inputs, {.hidden_states = false, .routing = true});
    acc.add(trace.routing_records);
  });
  return acc.counts();
}

void write_overlap_csv(const std::filesystem::path& path, std::span<const OverlapCounts> counts, std::size_t n_loops,
                       std::string_view comment) {
  std::vector<std::string> header = {"physical_layer", "frac_exact", "frac_partial", "frac_disjoint",
                                     "mean_unique_experts"};
  if (n_loops > 2) {
    header.emplace_back("pass_from");
    header.emplace_back("pass_to");
  }
  CsvWriter w(path, header, comment);
  for (const OverlapCounts& oc : counts) {
    std::vector<CsvField> row = {static_cast<std::int64_t>(oc.physical_layer), oc.frac_exact(), oc.frac_partial(),
                                 oc.frac_disjoint(), oc.mean_unique_experts()};
    if (n_loops > 2) {
      row.emplace_back(static_cast<std::int64_t>(oc.pass_from));
      row.emplace_back(static_cast<std::int64_t>(oc.pass_to));
    }
    w.row(row);
  }
}

void write_convergence_csv(const std::filesystem::path& path, std::span<const ConvergenceRow> rows,
                           std::string_view comment) {
  CsvWriter w(path, {"effective_layer", "mean_jsd", "std_jsd", "converged_fraction", "std_jsd_tokens"}, comment);
  for (const ConvergenceRow& r : rows) {
    w.row({static_cast<std::int64_t>(r.effective_layer), r.mean_jsd, r.std_jsd, r.converged_fraction,
           r.std_jsd_tokens});
  }
}

template std::vector<ConvergenceRow> convergence_profile<float>(const Transformer<float>&,
                                                                std::span<const std::int32_t>,
                                                                const ConvergenceOptions&);
template std::vector<ConvergenceRow> convergence_profile<double>(const Transformer<double>&,
                                                                 std::span<const std::int32_t>,
                                                                 const ConvergenceOptions&);
template std::vector<OverlapCounts> overlap_profile<float>(const Transformer<float>&, std::span<const std::int32_t>,
                                                           const ConvergenceOptions&);
template std::vector<OverlapCounts> overlap_profile<double>(const Transformer<double>&, std::span<const std::int32_t>,
                                                            const ConvergenceOptions&);

}  // namespace loopmoe
