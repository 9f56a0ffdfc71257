// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "loopmoe/model/transformer.hpp"
#include "loopmoe/moe/moe.hpp"
#include "loopmoe/train/adamw.hpp"
#include "loopmoe/train/corpus.hpp"
#include "loopmoe/train/schedule.hpp"

namespace loopmoe {

struct TrainConfig {
  std::size_t token_budget = 1 << 20;
  std::size_t batch_tokens = 8192;
  std::size_t seq_len = 256;
  // Gradient-accumulation chunk; bounds activation memory only.
  std::size_t micro_batch_tokens = 2048;
  double peak_lr = 1e-2;
  double warmup_fraction = 0.01;
  std::size_t warmup_min_steps = 20;
  double cooldown_fraction = 0.10;
  double cooldown_floor = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  double lambda_lb = 0.01;
  double lambda_rz = 0.001;
  double grad_clip = 1.0;  // global-norm clip; 0 disables
  std::uint64_t seed = 0;
  double eval_fraction = 0.1;
  std::size_t eval_tokens = 0;  // cap on scored test tokens; 0 = whole split

  std::size_t sequences_per_step() const { return batch_tokens / seq_len; }
  // ceil(token_budget / batch_tokens)
  std::size_t steps() const { return (token_budget + batch_tokens - 1) / batch_tokens; }
  WsdSchedule schedule() const;
  AdamWConfig adamw() const { return {beta1, beta2, eps, weight_decay}; }
  void validate() const;
};

// Learning rate at `step` of a run with `total_steps` steps.
double wsd_lr(std::size_t step, std::size_t total_steps, const TrainConfig& config);

struct LossPoint {
  std::size_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // CE plus weighted auxiliary terms
  double ce_loss = 0.0;
  double lb_loss = 0.0;     // mean over router invocations
  double rz_loss = 0.0;
};

struct TrainResult {
  double final_test_loss = 0.0;
  std::vector<LossPoint> curve;
  bool diverged = false;
  std::string diagnostic;
  std::size_t steps_completed = 0;
};

template <typename T>
struct TrainHooks {
  // Called once before the first step (step 0) and after every optimizer
  // step (1-based count).
  std::function<void(std::size_t, const Transformer<T>&)> on_step;
  // Written at the end of the run, or with the last good weights on divergence.
  std::optional<std::filesystem::path> checkpoint;
};

// Loss terms of one batch built into `g`. Dense models get ce only; the
// auxiliary terms are then exactly absent rather than zero-weighted.
struct BatchLoss {
  Var total;
  Var ce;
  std::optional<Var> lb;
  std::optional<Var> rz;
};

template <typename T>
BatchLoss build_loss(Graph<T>& g, Transformer<T>& model, const TokenBatch& inputs,
                     std::span<const std::int32_t> targets, const MoeLossWeights& weights);

// Inputs/targets for windows starting at token offsets `starts` of `stream`;
// each window reads seq_len + 1 tokens.
struct WindowBatch {
  TokenBatch inputs;
  std::vector<std::int32_t> targets;
};
WindowBatch make_windows(std::span<const std::int32_t> stream, std::span<const std::size_t> starts,
                         std::size_t seq_len);

// Mean next-token cross entropy over non-overlapping windows of `stream`.
template <typename T>
double evaluate_loss(const Transformer<T>& model, std::span<const std::int32_t> stream, std::size_t seq_len,
                     std::size_t max_tokens = 0, std::size_t micro_batch_tokens = 2048);

// Window start offsets that tile `stream` with seq_len-token inputs; the last
// window is shortened when fewer than seq_len + 1 tokens remain.
std::vector<std::pair<std::size_t, std::size_t>> eval_windows(std::size_t stream_size, std::size_t seq_len);

template <typename T>
TrainResult train(Transformer<T>& model, const CorpusStore& corpus, const TrainConfig& config,
                  const TrainHooks<T>& hooks = {});

void write_loss_curve_csv(const std::filesystem::path& path, std::span<const LossPoint> curve,
                          std::string_view comment = {});

}  // namespace loopmoe
