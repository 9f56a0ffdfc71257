// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loopmoe/mup/width_sweep.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "loopmoe/budget/ledger.hpp"
#include "loopmoe/util/csv.hpp"
#include "loopmoe/util/error.hpp"
#include "loopmoe/util/parallel.hpp"

namespace loopmoe {
namespace {

double tensor_rms(const Tensor<float>& t) {
  double ss = 0.0;
  for (float v : t.data()) ss += static_cast<double>(v) * v;
  return std::sqrt(ss / static_cast<double>(t.size()));
}

std::string describe(std::size_t width, const std::string& what) {
  return "width " + std::to_string(width) + ": " + what;
}

}  // namespace

ModelConfig config_at_width(const ModelConfig& base, std::size_t width, std::size_t d_head,
                            std::size_t ffn_multiple) {
  if (d_head == 0 || width % d_head != 0) {
    throw ConfigError("width " + std::to_string(width) + " is not a multiple of d_head " + std::to_string(d_head));
  }
  ModelConfig c = base;
  c.d_model = width;
  c.n_heads = width / d_head;
  c.d_ff = grid_d_ff(width, ffn_multiple);
  if (c.is_moe()) c.d_ff = (c.d_ff + c.top_k - 1) / c.top_k * c.top_k;
  c.validate();
  return c;
}

double CoordCheckResult::ratio(std::size_t step, std::size_t effective_layer) const {
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (std::size_t w = 0; w < widths.size(); ++w) {
    bool found = false;
    for (const CoordCheckRow& r : rows) {
      if (r.width == widths[w] && r.step == step && r.effective_layer == effective_layer) {
        lo = std::min(lo, r.rms);
        hi = std::max(hi, r.rms);
        found = true;
        break;
      }
    }
    if (!found) return std::numeric_limits<double>::infinity();
  }
  return hi / lo;
}

double CoordCheckResult::max_ratio() const {
  double worst = 0.0;
  for (std::size_t s = 0; s <= steps; ++s) {
    for (std::size_t l = 1; l <= effective_depth; ++l) worst = std::max(worst, ratio(s, l));
  }
  return worst;
}

CoordCheckResult coord_check(const WidthSweepSpec& spec, std::span<const std::size_t> widths, std::size_t steps,
                             const CorpusStore& corpus, std::size_t probe_sequences) {
  if (widths.empty()) throw ConfigError("coord_check needs at least one width");
  if (steps == 0) throw ConfigError("coord_check needs at least one step");
  TrainConfig tc = spec.train;
  tc.token_budget = steps * tc.batch_tokens;
  tc.eval_tokens = tc.seq_len;
  tc.validate();

  const auto probe_stream = corpus.test();
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; starts.size() < probe_sequences && s + tc.seq_len + 1 <= probe_stream.size();
       s += tc.seq_len) {
    starts.push_back(s);
  }
  if (starts.empty()) throw ConfigError("coord_check: test split is shorter than one probe sequence");
  const WindowBatch probe = make_windows(probe_stream, starts, tc.seq_len);

  CoordCheckResult result;
  result.widths.assign(widths.begin(), widths.end());
  result.steps = steps;
  result.effective_depth = spec.model.effective_depth();
  if (spec.seeds == 0) throw ConfigError("coord_check needs at least one seed");
  const std::size_t runs = widths.size() * spec.seeds;
  std::vector<std::vector<CoordCheckRow>> per_run(runs);
  std::vector<std::string> run_divergence(runs);

  parallel_for(runs, spec.jobs, [&](std::size_t i) {
    const std::size_t w = i / spec.seeds;
    const std::size_t s = i % spec.seeds;
    const ModelConfig c = config_at_width(spec.model, widths[w], spec.d_head, spec.ffn_multiple);
    Transformer<float> model = init_model<float>(c, spec.mup, spec.seed + s);
    TrainConfig run_tc = tc;
    run_tc.seed = tc.seed + s;
    bool probe_failed = false;
    TrainHooks<float> hooks;
    hooks.on_step = [&](std::size_t step, const Transformer<float>& m) {
      if (probe_failed) return;
      try {
        const ForwardTrace<float> trace = m.forward(probe.inputs);
        for (std::size_t l = 0; l < trace.hidden_states.size(); ++l) {
          per_run[i].push_back({widths[w], step, l + 1, tensor_rms(trace.hidden_states[l])});
        }
      } catch (const NumericError& e) {
        probe_failed = true;
        run_divergence[i] = describe(widths[w], std::string("probe forward failed at step ") +
                                                    std::to_string(step) + ": " + e.what());
      }
    };
    const TrainResult tr = train(model, corpus, run_tc, hooks);
    if (tr.diverged && run_divergence[i].empty()) run_divergence[i] = describe(widths[w], tr.diagnostic);
  });

  std::vector<std::vector<CoordCheckRow>> per_width(widths.size());
  result.divergence.assign(widths.size(), "");
  for (std::size_t w = 0; w < widths.size(); ++w) {
    std::size_t complete = per_run[w * spec.seeds].size();
    for (std::size_t s = 0; s < spec.seeds; ++s) {
      const std::size_t i = w * spec.seeds + s;
      complete = std::min(complete, per_run[i].size());
      if (result.divergence[w].empty()) result.divergence[w] = run_divergence[i];
    }
    for (std::size_t r = 0; r < complete; ++r) {
      CoordCheckRow row = per_run[w * spec.seeds][r];
      double sum = 0.0;
      for (std::size_t s = 0; s < spec.seeds; ++s) sum += per_run[w * spec.seeds + s][r].rms;
      row.rms = sum / static_cast<double>(spec.seeds);
      per_width[w].push_back(row);
    }
  }
  for (auto& rows : per_width) result.rows.insert(result.rows.end(), rows.begin(), rows.end());
  return result;
}

void write_coord_check_csv(const std::filesystem::path& path, const CoordCheckResult& result,
                           std::string_view comment) {
  CsvWriter w(path, {"width", "step", "effective_layer", "rms"}, comment);
  for (const CoordCheckRow& r : result.rows) {
    w.row({static_cast<std::int64_t>(r.width), static_cast<std::int64_t>(r.step),
           static_cast<std::int64_t>(r.effective_layer), r.rms});
  }
}

std::vector<TransferRun> lr_transfer_sweep(const WidthSweepSpec& spec, std::span<const std::size_t> widths,
                                           std::span<const double> lrs, const CorpusStore& corpus) {
  if (widths.empty() || lrs.empty()) throw ConfigError("lr transfer sweep needs at least one width and one lr");
  spec.train.validate();
  std::vector<TransferRun> runs(widths.size() * lrs.size());
  parallel_for(runs.size(), spec.jobs, [&](std::size_t i) {
    const std::size_t w = i / lrs.size();
    const double lr = lrs[i % lrs.size()];
    const ModelConfig c = config_at_width(spec.model, widths[w], spec.d_head, spec.ffn_multiple);
    Transformer<float> model = init_model<float>(c, spec.mup, spec.seed);
    TrainConfig tc = spec.train;
    tc.peak_lr = lr;
    const TrainResult tr = train(model, corpus, tc);
    runs[i] = {widths[w], lr, tr.final_test_loss, tr.diverged};
  });
  return runs;
}

std::vector<TransferSummary> summarize_transfer(std::span<const TransferRun> runs) {
  std::vector<std::size_t> widths;
  std::vector<double> lrs;
  for (const TransferRun& r : runs) {
    if (std::find(widths.begin(), widths.end(), r.width) == widths.end()) widths.push_back(r.width);
    if (std::find(lrs.begin(), lrs.end(), r.lr) == lrs.end()) lrs.push_back(r.lr);
  }
  std::sort(lrs.begin(), lrs.end());
  if (runs.empty() || runs.size() != widths.size() * lrs.size()) {
    throw std::invalid_argument("summarize_transfer: runs do not form a full width x lr grid");
  }
  std::map<std::pair<std::size_t, double>, double> loss;
  for (const TransferRun& r : runs) {
    const double v = r.diverged ? std::numeric_limits<double>::quiet_NaN() : r.final_loss;
    if (!loss.emplace(std::make_pair(r.width, r.lr), v).second) {
      throw std::invalid_argument("summarize_transfer: duplicate (width, lr) run");
    }
  }
  const auto nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::size_t> best_index(widths.size(), lrs.size());
  for (std::size_t w = 0; w < widths.size(); ++w) {
    for (std::size_t j = 0; j < lrs.size(); ++j) {
      const double v = loss[{widths[w], lrs[j]}];
      if (std::isfinite(v) && (best_index[w] == lrs.size() || v < loss[{widths[w], lrs[best_index[w]]}])) {
        best_index[w] = j;
      }
    }
  }
  std::vector<TransferSummary> out;
  const std::size_t base = best_index[0];
  for (std::size_t w = 0; w < widths.size(); ++w) {
    TransferSummary s;
    s.width = widths[w];
    if (best_index[w] == lrs.size()) {
      s.best_lr = nan;
      s.best_loss = nan;
      s.relative_gap = nan;
    } else {
      s.best_lr = lrs[best_index[w]];
      s.best_loss = loss[{widths[w], s.best_lr}];
      if (base == lrs.size()) {
        s.relative_gap = nan;
      } else {
        s.grid_steps_from_base = static_cast<long>(best_index[w]) - static_cast<long>(base);
        s.relative_gap = (loss[{widths[w], lrs[base]}] - s.best_loss) / s.best_loss;
      }
    }
    out.push_back(s);
  }
  return out;
}

void write_transfer_csv(const std::filesystem::path& path, std::span<const TransferRun> runs,
                        std::string_view comment) {
  CsvWriter w(path, {"width", "lr", "final_loss", "diverged"}, comment);
  for (const TransferRun& r : runs) {
    w.row({static_cast<std::int64_t>(r.width), r.lr, r.final_loss, static_cast<std::int64_t>(r.diverged ? 1 : 0)});
  }
}

void write_transfer_summary_csv(const std::filesystem::path& path, std::span<const TransferSummary> rows,
                                std::string_view comment) {
  CsvWriter w(path, {"width", "best_lr", "best_loss", "grid_steps_from_base", "relative_gap"}, comment);
  for (const TransferSummary& s : rows) {
    w.row({static_cast<std::int64_t>(s.width), s.best_lr, s.best_loss,
           static_cast<std::int64_t>(s.grid_steps_from_base), s.relative_gap});
  }
}

}  // namespace loopmoe
