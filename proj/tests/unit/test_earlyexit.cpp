// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "loopmoe/earlyexit/early_exit.hpp"
#include "loopmoe/mup/mup.hpp"
#include "loopmoe/train/trainer.hpp"
#include "loopmoe/util/csv.hpp"
#include "test_support.hpp"

namespace loopmoe {
namespace {

MupConfig peaked_init() {
  MupConfig mup;
  mup.d_base = 16;
  mup.sigma_base = 0.5;
  return mup;
}

ExitEvalOptions options_for(const ModelConfig& c) {
  ExitEvalOptions o;
  o.seq_len = c.seq_len;
  o.micro_batch_tokens = 4 * c.seq_len;
  return o;
}

TEST(Entropy, ClosedForms) {
  const std::vector<double> one_hot = {0, 0, 1, 0};
  EXPECT_EQ(entropy(one_hot), 0.0);
  const std::vector<double> uniform(32, 1.0 / 32.0);
  EXPECT_NEAR(entropy(uniform), std::log(32.0), 1e-12);
  const std::vector<double> half = {0.5, 0.5, 0, 0, 0};
  EXPECT_NEAR(entropy(half), std::log(2.0), 1e-15);
  EXPECT_NEAR(entropy(half), 0.6931, 1e-4);
}

TEST(Entropy, RejectsNegativeOrUnnormalizedMass) {
  const std::vector<double> negative = {1.5, -0.5};
  EXPECT_THROW(entropy(negative), std::invalid_argument);
  const std::vector<double> short_mass = {0.5, 0.4};
  EXPECT_THROW(entropy(short_mass), std::invalid_argument);
}

TEST(CandidatePoints, LoopBoundariesOrEveryLayer) {
  EXPECT_EQ(candidate_points(testing::tiny_config(16, 8, 2)), (std::vector<std::size_t>{8, 16}));
  EXPECT_EQ(candidate_points(testing::tiny_config(16, 4, 4)), (std::vector<std::size_t>{4, 8, 12, 16}));
  const auto two_by_eight = candidate_points(testing::tiny_config(16, 2, 8));
  EXPECT_EQ(two_by_eight.size(), 8u);
  EXPECT_EQ(two_by_eight.front(), 2u);
  const auto base = candidate_points(testing::tiny_config(16, 6, 1));
  EXPECT_EQ(base, (std::vector<std::size_t>{1, 2, 3, 4, 5, 6}));
}

TEST(EarlyExit, ZeroThresholdReproducesFullDepthExactly) {
  for (bool moe : {false, true}) {
    const ModelConfig c = testing::tiny_config(16, 2, 2, moe);
    const auto model = init_model<float>(c, peaked_init(), 3);
    const auto stream = testing::random_stream(200, c.vocab_size, 4);
    const ExitResult r = evaluate_early_exit(model, stream, 0.0, options_for(c));
    const double full = evaluate_loss(model, stream, c.seq_len, 0, 4 * c.seq_len);
    EXPECT_EQ(r.mean_nll, full);
    EXPECT_EQ(r.perplexity, std::exp(full));
    EXPECT_EQ(r.flops_saved, 0.0);
    EXPECT_EQ(r.histogram.back(), 199u);
  }
}

TEST(EarlyExit, ThresholdAtLogVocabSavesHalfForEightByTwo) {
  const ModelConfig c = testing::tiny_config(16, 8, 2, true);
  const auto model = init_model<float>(c, peaked_init(), 5);
  const auto stream = testing::random_stream(100, c.vocab_size, 6);
  const ExitResult r = evaluate_early_exit(model, stream, std::log(32.0), options_for(c));
  EXPECT_EQ(r.flops_saved, 0.5);
  EXPECT_EQ(r.histogram.front(), 99u);
}

TEST(EarlyExit, ExitAtFirstCandidateUsesItsLensLoss) {
  const ModelConfig c = testing::tiny_config(16, 2, 2);
  const auto model = init_model<double>(c, peaked_init(), 7);
  const auto stream = testing::random_stream(17, c.vocab_size, 8);
  const ExitTable table = build_exit_table(model, stream, options_for(c));
  ASSERT_EQ(table.tokens, 16u);
  const std::size_t starts[] = {0};
  const WindowBatch wb = make_windows(stream, starts, 16);
  const ForwardTrace<double> trace = model.forward(wb.inputs);
  const Tensor<double> lens = model.logit_lens(trace, 2);
  double nll = 0.0;
  for (std::size_t t = 0; t < 16; ++t) nll -= std::log(lens.at(t, static_cast<std::size_t>(wb.targets[t])));
  const ExitResult r = evaluate_exit(table, 1e9);
  EXPECT_NEAR(r.mean_nll, nll / 16.0, 1e-12);
  EXPECT_EQ(r.flops_saved, 0.5);
}

TEST(ParetoSweep, FlopsSavedMonotoneAndExitDepthNonincreasing) {
  const ModelConfig c = testing::tiny_config(16, 6, 1, true);
  const auto model = init_model<float>(c, peaked_init(), 9);
  const auto stream = testing::random_stream(300, c.vocab_size, 10);
  const ExitTable table = build_exit_table(model, stream, options_for(c));
  const auto grid = default_tau_grid(c.vocab_size);
  ASSERT_EQ(grid.size(), 32u);
  EXPECT_DOUBLE_EQ(grid.front(), 1e-3);
  EXPECT_EQ(grid.back(), std::log(32.0));
  const auto curve = pareto_sweep(table, grid);
  for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_GE(curve[i].flops_saved, curve[i - 1].flops_saved);
  const std::size_t n_cand = table.candidates.size();
  for (std::size_t t = 0; t < table.tokens; ++t) {
    std::size_t previous = n_cand;
    for (double tau : grid) {
      std::size_t j = 0;
      while (j + 1 < n_cand && !(table.entropies[t * n_cand + j] < tau) && tau < std::log(32.0)) ++j;
      EXPECT_LE(j, previous);
      previous = j;
    }
  }
  for (const ExitResult& r : curve) {
    std::size_t total = 0;
    for (std::size_t n : r.histogram) total += n;
    EXPECT_EQ(total, table.tokens);
    EXPECT_GE(r.flops_saved, 0.0);
    EXPECT_LT(r.flops_saved, 1.0);
  }
}

TEST(ParetoSweep, ZeroGridGivesBaselinePointAndDescendingGridThrows) {
  const ModelConfig c = testing::tiny_config(16, 2, 2);
  const auto model = init_model<float>(c, peaked_init(), 11);
  const auto stream = testing::random_stream(64, c.vocab_size, 12);
  const ExitTable table = build_exit_table(model, stream, options_for(c));
  const double zero[] = {0.0};
  const auto curve = pareto_sweep(table, zero);
  ASSERT_EQ(curve.size(), 1u);
  EXPECT_EQ(curve[0].flops_saved, 0.0);
  EXPECT_EQ(curve[0].perplexity, std::exp(evaluate_loss(model, stream, c.seq_len, 0, 4 * c.seq_len)));
  const double descending[] = {1.0, 0.5};
  EXPECT_THROW(pareto_sweep(table, descending), std::invalid_argument);
}

TEST(PerplexityAtSavings, LinearInterpolation) {
  std::vector<ExitResult> curve(3);
  curve[0].flops_saved = 0.0;
  curve[0].perplexity = 10.0;
  curve[1].flops_saved = 0.1;
  curve[1].perplexity = 12.0;
  curve[2].flops_saved = 0.3;
  curve[2].perplexity = 20.0;
  EXPECT_NEAR(perplexity_at_savings(curve, 0.05), 11.0, 1e-12);
  EXPECT_EQ(perplexity_at_savings(curve, 0.1), 12.0);
  EXPECT_NEAR(perplexity_at_savings(curve, 0.2), 16.0, 1e-12);
  EXPECT_TRUE(std::isnan(perplexity_at_savings(curve, 0.4)));
}

TEST(ParetoCsv, ColumnsIncludeHistogramPerCandidate) {
  const auto dir = testing::temp_dir("pareto_csv");
  std::vector<ExitResult> curve(1);
  curve[0].tau = 0.5;
  curve[0].flops_saved = 0.25;
  curve[0].perplexity = 3.0;
  curve[0].histogram = {5, 7};
  const std::size_t cands[] = {8, 16};
  write_pareto_csv(dir / "pareto.csv", curve, cands);
  const CsvTable t = read_csv(dir / "pareto.csv");
  EXPECT_EQ(t.header, (std::vector<std::string>{"tau", "flops_saved", "perplexity", "exit_8", "exit_16"}));
  EXPECT_EQ(t.rows[0][4], "7");
  const double levels[] = {0.05, 0.1, 0.2, 0.3};
  write_savings_csv(dir / "savings.csv", curve, levels);
  EXPECT_EQ(read_csv(dir / "savings.csv").rows.size(), 4u);
}

}  // namespace
}  // namespace loopmoe
