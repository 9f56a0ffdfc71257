// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loopmoe/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "loopmoe/numerics/functional.hpp"
#include "loopmoe/train/checkpoint.hpp"
#include "loopmoe/util/csv.hpp"
#include "loopmoe/util/error.hpp"
#include "loopmoe/util/random.hpp"

namespace loopmoe {

WsdSchedule TrainConfig::schedule() const {
  return WsdSchedule::from_fractions(peak_lr, steps(), warmup_fraction, warmup_min_steps, cooldown_fraction,
                                     cooldown_floor);
}

void TrainConfig::validate() const {
  if (seq_len == 0) throw ConfigError("train.seq_len must be positive");
  if (token_budget == 0) throw ConfigError("train.token_budget must be positive");
  if (batch_tokens < seq_len || batch_tokens % seq_len != 0) {
    throw ConfigError("train.batch_tokens (" + std::to_string(batch_tokens) +
                      ") must be a positive multiple of train.seq_len (" + std::to_string(seq_len) + ")");
  }
  if (micro_batch_tokens == 0) throw ConfigError("train.micro_batch_tokens must be positive");
  if (!(peak_lr > 0.0) || !std::isfinite(peak_lr)) throw ConfigError("train.peak_lr must be positive");
  if (warmup_fraction < 0.0 || cooldown_fraction < 0.0 || warmup_fraction + cooldown_fraction > 1.0) {
    throw ConfigError("train.warmup_fraction + train.cooldown_fraction must lie in [0, 1]");
  }
  if (cooldown_floor < 0.0 || cooldown_floor > 1.0) throw ConfigError("train.cooldown_floor must lie in [0, 1]");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("train betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("train.eps must be positive");
  if (weight_decay < 0.0 || weight_decay >= 1.0) throw ConfigError("train.weight_decay must lie in [0, 1)");
  if (lambda_lb < 0.0 || lambda_rz < 0.0) throw ConfigError("auxiliary loss weights must be non-negative");
  if (grad_clip < 0.0) throw ConfigError("train.grad_clip must be non-negative");
  if (eval_fraction < 0.0 || eval_fraction >= 1.0) throw ConfigError("train.eval_fraction must lie in [0, 1)");
}

double wsd_lr(std::size_t step, std::size_t total_steps, const TrainConfig& config) {
  return WsdSchedule::from_fractions(config.peak_lr, total_steps, config.warmup_fraction, config.warmup_min_steps,
                                     config.cooldown_fraction, config.cooldown_floor)
      .lr(step);
}

template <typename T>
BatchLoss build_loss(Graph<T>& g, Transformer<T>& model, const TokenBatch& inputs,
                     std::span<const std::int32_t> targets, const MoeLossWeights& weights) {
  ForwardGraph fg = model.build(g, inputs);
  BatchLoss loss;
  loss.ce = g.cross_entropy(fg.logits, targets);
  if (fg.routers.empty()) {
    loss.total = loss.ce;
    return loss;
  }
  const std::size_t k = model.config().top_k;
  std::vector<Var> lb_terms;
  std::vector<Var> rz_terms;
  for (const RouterInvocation& inv : fg.routers) {
    lb_terms.push_back(g.load_balance_loss(inv.moe.full_probs, inv.moe.selected, k));
    rz_terms.push_back(g.z_loss(inv.moe.router_logits));
  }
  const std::vector<T> mean_w(fg.routers.size(), static_cast<T>(1.0 / static_cast<double>(fg.routers.size())));
  loss.lb = g.weighted_sum(lb_terms, mean_w);
  loss.rz = g.weighted_sum(rz_terms, mean_w);
  const std::vector<Var> parts = {loss.ce, *loss.lb, *loss.rz};
  const std::vector<T> part_w = {T(1), static_cast<T>(weights.load_balance), static_cast<T>(weights.router_z)};
  loss.total = g.weighted_sum(parts, part_w);
  return loss;
}

WindowBatch make_windows(std::span<const std::int32_t> stream, std::span<const std::size_t> starts,
                         std::size_t seq_len) {
  WindowBatch wb;
  wb.inputs.batch = starts.size();
  wb.inputs.seq_len = seq_len;
  wb.inputs.ids.reserve(starts.size() * seq_len);
  wb.targets.reserve(starts.size() * seq_len);
  for (std::size_t s : starts) {
    if (s + seq_len + 1 > stream.size()) {
      throw std::out_of_range("window at offset " + std::to_string(s) + " runs past the end of a " +
                              std::to_string(stream.size()) + "-token stream");
    }
    wb.inputs.ids.insert(wb.inputs.ids.end(), stream.begin() + static_cast<std::ptrdiff_t>(s),
                         stream.begin() + static_cast<std::ptrdiff_t>(s + seq_len));
    wb.targets.insert(wb.targets.end(), stream.begin() + static_cast<std::ptrdiff_t>(s + 1),
                      stream.begin() + static_cast<std::ptrdiff_t>(s + seq_len + 1));
  }
  return wb;
}

std::vector<std::pair<std::size_t, std::size_t>> eval_windows(std::size_t stream_size, std::size_t seq_len) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (seq_len == 0) throw std::invalid_argument("eval_windows: seq_len must be positive");
  for (std::size_t s = 0; s + 1 < stream_size; s += seq_len) {
    out.emplace_back(s, std::min(seq_len, stream_size - 1 - s));
  }
  return out;
}

template <typename T>
double evaluate_loss(const Transformer<T>& model, std::span<const std::int32_t> stream, std::size_t seq_len,
                     std::size_t max_tokens, std::size_t micro_batch_tokens) {
  auto windows = eval_windows(stream.size(), seq_len);
  if (max_tokens > 0) {
    std::size_t kept = 0;
    std::size_t n = 0;
    while (n < windows.size() && kept < max_tokens) {
      windows[n].second = std::min(windows[n].second, max_tokens - kept);
      kept += windows[n].second;
      ++n;
    }
    windows.resize(n);
  }
  if (windows.empty()) throw std::invalid_argument("evaluate_loss: test stream holds fewer than two tokens");

  const std::size_t per_batch = std::max<std::size_t>(1, micro_batch_tokens / seq_len);
  double total = 0.0;
  std::size_t count = 0;
  std::size_t i = 0;
  while (i < windows.size()) {
    const std::size_t len = windows[i].second;
    std::vector<std::size_t> starts;
    while (i < windows.size() && windows[i].second == len && starts.size() < per_batch) {
      starts.push_back(windows[i++].first);
    }
    const WindowBatch wb = make_windows(stream.first(stream.size()), starts, len);
    const ForwardTrace<T> trace = model.forward(wb.inputs, {.hidden_states = false, .routing = false});
    for (std::size_t r = 0; r < wb.targets.size(); ++r) {
      const auto row = trace.final_logits.row(r);
      total += logsumexp<T>(row) - static_cast<double>(row[static_cast<std::size_t>(wb.targets[r])]);
    }
    count += wb.targets.size();
  }
  return total / static_cast<double>(count);
}

template <typename T>
TrainResult train(Transformer<T>& model, const CorpusStore& corpus, const TrainConfig& config,
                  const TrainHooks<T>& hooks) {
  config.validate();
  if (config.seq_len > model.config().seq_len) {
    throw ConfigError("train.seq_len exceeds model.seq_len");
  }
  if (corpus.vocab_size > model.config().vocab_size) {
    throw ConfigError("corpus vocabulary (" + std::to_string(corpus.vocab_size) + ") exceeds model vocab_size (" +
                      std::to_string(model.config().vocab_size) + ")");
  }
  const auto stream = corpus.train();
  const std::size_t seq = config.seq_len;
  if (stream.size() < seq + 1) throw ConfigError("training split is shorter than one window");

  std::vector<std::size_t> window_starts;
  for (std::size_t s = 0; s + seq + 1 <= stream.size(); s += seq) window_starts.push_back(s);
  std::mt19937_64 order_rng(derive_seed(config.seed, "data-order"));
  std::vector<std::size_t> order(window_starts.size());
  std::size_t cursor = order.size();
  auto next_window = [&]() {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), order_rng);
      cursor = 0;
    }
    return window_starts[order[cursor++]];
  };

  const std::size_t total_steps = config.steps();
  const std::size_t batch_seqs = config.sequences_per_step();
  const std::size_t micro_seqs = std::clamp<std::size_t>(config.micro_batch_tokens / seq, 1, batch_seqs);
  const WsdSchedule schedule = config.schedule();
  const MoeLossWeights weights{config.lambda_lb, config.lambda_rz};
  AdamW<T> opt(config.adamw());
  auto& params = model.parameters();

  TrainResult result;
  if (hooks.on_step) hooks.on_step(0, model);

  std::vector<Tensor<T>> last_good(params.size());
  for (std::size_t step = 0; step < total_steps; ++step) {
    const double lr = schedule.lr(step);
    LossPoint point{step, lr, 0.0, 0.0, 0.0, 0.0};
    try {
      model.zero_grad();
      std::vector<std::size_t> starts(batch_seqs);
      for (std::size_t& s : starts) s = next_window();
      for (std::size_t m = 0; m < batch_seqs; m += micro_seqs) {
        const std::size_t n = std::min(micro_seqs, batch_seqs - m);
        const WindowBatch wb = make_windows(stream, std::span(starts).subspan(m, n), seq);
        const double share = static_cast<double>(n) / static_cast<double>(batch_seqs);
        Graph<T> g;
        const BatchLoss loss = build_loss(g, model, wb.inputs, wb.targets, weights);
        Var scaled = g.scale(loss.total, static_cast<T>(share));
        g.backward(scaled);
        point.train_loss += share * static_cast<double>(g.value(loss.total)[0]);
        point.ce_loss += share * static_cast<double>(g.value(loss.ce)[0]);
        if (loss.lb) point.lb_loss += share * static_cast<double>(g.value(*loss.lb)[0]);
        if (loss.rz) point.rz_loss += share * static_cast<double>(g.value(*loss.rz)[0]);
      }
      if (config.grad_clip > 0.0) clip_grad_norm(params, config.grad_clip);
      for (std::size_t i = 0; i < params.size(); ++i) last_good[i] = params[i].value;
      opt.step(params, lr);
      for (const Parameter<T>& p : params) {
        if (!p.value.all_finite()) {
          for (std::size_t i = 0; i < params.size(); ++i) params[i].value = last_good[i];
          throw NumericError("parameter '" + p.name + "' became non-finite after step " + std::to_string(step));
        }
      }
    } catch (const NumericError& e) {
      result.diverged = true;
      result.diagnostic = "diverged at step " + std::to_string(step) + ": " + e.what();
      result.final_test_loss = std::numeric_limits<double>::quiet_NaN();
      if (hooks.checkpoint) save_checkpoint(*hooks.checkpoint, model);
      return result;
    }
    result.curve.push_back(point);
    result.steps_completed = step + 1;
    if (hooks.on_step) hooks.on_step(step + 1, model);
  }

  const auto test = corpus.test();
  if (test.size() >= 2) {
    const std::size_t eval_seq = std::min(seq, model.config().seq_len);
    result.final_test_loss = evaluate_loss(model, test, eval_seq, config.eval_tokens, config.micro_batch_tokens);
  } else {
    result.final_test_loss = std::numeric_limits<double>::quiet_NaN();
  }
  if (hooks.checkpoint) save_checkpoint(*hooks.checkpoint, model);
  return result;
}

void write_loss_curve_csv(const std::filesystem::path& path, std::span<const LossPoint> curve,
                          std::string_view comment) {
  CsvWriter w(path, {"step", "lr", "train_loss", "ce_loss", "lb_loss", "rz_loss"}, comment);
  for (const LossPoint& p : curve) {
    w.row({static_cast<std::int64_t>(p.step), p.lr, p.train_loss, p.ce_loss, p.lb_loss, p.rz_loss});
  }
}

template BatchLoss build_loss<float>(Graph<float>&, Transformer<float>&, const TokenBatch&,
                                     std::span<const std::int32_t>, const MoeLossWeights&);
template BatchLoss build_loss<double>(Graph<double>&, Transformer<double>&, const TokenBatch&,
                                      std::span<const std::int32_t>, const MoeLossWeights&);
template double evaluate_loss<float>(const Transformer<float>&, std::span<const std::int32_t>, std::size_t,
                                     std::size_t, std::size_t);
template double evaluate_loss<double>(const Transformer<double>&, std::span<const std::int32_t>, std::size_t,
                                      std::size_t, std::size_t);
template TrainResult train<float>(Transformer<float>&, const CorpusStore&, const TrainConfig&,
                                  const TrainHooks<float>&);
template TrainResult train<double>(Transformer<double>&, const CorpusStore&, const TrainConfig&,
                                   const TrainHooks<double>&);

}  // namespace loopmoe
