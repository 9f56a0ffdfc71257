// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "loopmoe/analysis/analysis.hpp"
#include "loopmoe/mup/mup.hpp"
#include "loopmoe/numerics/functional.hpp"
#include "loopmoe/util/csv.hpp"
#include "test_support.hpp"

namespace loopmoe {
namespace {

std::vector<double> random_distribution(std::size_t n, std::mt19937_64& rng, double sharpness) {
  std::normal_distribution<double> dist(0.0, sharpness);
  std::vector<double> logits(n);
  for (double& v : logits) v = dist(rng);
  return softmax_values<double>(logits);
}

TEST(Jsd, IdenticalIsZeroAndDisjointOneHotsAreOne) {
  const std::vector<double> p = {0.2, 0.3, 0.5};
  EXPECT_EQ(jsd(p, p), 0.0);
  const std::vector<double> a = {1, 0, 0, 0};
  const std::vector<double> b = {0, 0, 1, 0};
  EXPECT_EQ(jsd(a, b), 1.0);
}

TEST(Jsd, MatchesDirectFormula) {
  const std::vector<double> p = {0.1, 0.6, 0.3};
  const std::vector<double> q = {0.5, 0.25, 0.25};
  double raw = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double m = (p[i] + q[i]) / 2.0;
    raw += 0.5 * p[i] * std::log(p[i] / m) + 0.5 * q[i] * std::log(q[i] / m);
  }
  EXPECT_NEAR(jsd(p, q), raw / std::log(2.0), 1e-15);
}

TEST(Jsd, SymmetricBoundedAndPositiveProperty) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = random_distribution(16, rng, 0.5 + trial * 0.05);
    const auto q = random_distribution(16, rng, 0.5 + trial * 0.05);
    const double v = jsd(p, q);
    EXPECT_EQ(v, jsd(q, p));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_GT(v, 1e-9);
    EXPECT_LT(jsd(p, p), 1e-9);
  }
}

TEST(Jsd, RejectsBadInputs) {
  const std::vector<double> neg = {1.5, -0.5};
  const std::vector<double> ok = {0.5, 0.5};
  const std::vector<double> three = {0.2, 0.3, 0.5};
  const std::vector<double> low = {0.2, 0.3};
  EXPECT_THROW(jsd(neg, ok), std::invalid_argument);
  EXPECT_THROW(jsd(ok, three), std::invalid_argument);
  EXPECT_THROW(jsd(ok, low), std::invalid_argument);
}

MupConfig peaked_init(double sigma) {
  MupConfig mup;
  mup.d_base = 16;
  mup.sigma_base = sigma;
  return mup;
}

ConvergenceOptions options_for(const ModelConfig& c) {
  ConvergenceOptions o;
  o.seq_len = c.seq_len;
  o.micro_batch_tokens = 2 * c.seq_len;
  return o;
}

TEST(Convergence, FinalLayerFullyConvergedOnAnyModel) {
  for (std::size_t loops : {1u, 2u}) {
    const ModelConfig c = testing::tiny_config(16, 3, loops, true);
    const auto model = init_model<float>(c, peaked_init(0.3), 2);
    const auto stream = testing::random_stream(81, c.vocab_size, 3);
    const auto rows = convergence_profile(model, stream, options_for(c));
    ASSERT_EQ(rows.size(), c.effective_depth());
    for (std::size_t l = 0; l < rows.size(); ++l) {
      EXPECT_EQ(rows[l].effective_layer, l + 1);
      EXPECT_GE(rows[l].mean_jsd, 0.0);
      EXPECT_LE(rows[l].mean_jsd, 1.0);
      EXPECT_GE(rows[l].converged_fraction, 0.0);
      EXPECT_LE(rows[l].converged_fraction, 1.0);
    }
    EXPECT_EQ(rows.back().mean_jsd, 0.0);
    EXPECT_EQ(rows.back().std_jsd, 0.0);
    EXPECT_EQ(rows.back().converged_fraction, 1.0);
  }
}

TEST(Convergence, RandomInitEarlyLayersRarelyConverge) {
  ModelConfig c = testing::tiny_config(32, 8, 1);
  c.vocab_size = 64;
  c.n_heads = 4;
  const auto model = init_model<double>(c, peaked_init(2.0), 4);
  const auto stream = testing::random_stream(161, c.vocab_size, 5);
  const auto rows = convergence_profile(model, stream, options_for(c));
  EXPECT_LT(rows.front().converged_fraction, 0.1);
}

TEST(Convergence, SequenceStdUsesPerSequenceMeans) {
  const ModelConfig c = testing::tiny_config(16, 2, 1);
  const auto model = init_model<double>(c, peaked_init(1.0), 6);
  const auto stream = testing::random_stream(33, c.vocab_size, 7);
  const auto rows = convergence_profile(model, stream, options_for(c));
  const auto one = convergence_profile(model, std::span(stream).first(17), options_for(c));
  const auto two = convergence_profile(model, std::span(stream).subspan(16), options_for(c));
  const double m1 = one[0].mean_jsd, m2 = two[0].mean_jsd;
  EXPECT_NEAR(rows[0].mean_jsd, (m1 + m2) / 2.0, 1e-12);
  EXPECT_NEAR(rows[0].std_jsd, std::abs(m1 - m2) / 2.0, 1e-12);
  EXPECT_EQ(one[0].std_jsd, 0.0);
  EXPECT_GT(one[0].std_jsd_tokens, 0.0);
}

RoutingRecord record(std::size_t layer, std::size_t pass, std::size_t pos, std::vector<std::size_t> sel) {
  RoutingRecord r;
  r.physical_layer = layer;
  r.loop_pass = pass;
  r.position = pos;
  r.selected = std::move(sel);
  return r;
}

TEST(Overlap, CategoryExamples) {
  const std::vector<std::size_t> a = {1, 3}, b = {3, 1}, c = {3, 5}, d = {0, 2};
  EXPECT_EQ(classify_overlap(a, b), OverlapCategory::exact);
  EXPECT_EQ(classify_overlap(a, c), OverlapCategory::partial);
  EXPECT_EQ(classify_overlap(a, d), OverlapCategory::disjoint);
}

TEST(Overlap, TenTokenRecordsMatchSetIntersectionOracle) {
  std::mt19937_64 rng(11);
  std::vector<RoutingRecord> records;
  std::vector<std::vector<std::size_t>> sets(2 * 2 * 10);
  for (std::size_t pass = 1; pass <= 2; ++pass) {
    for (std::size_t layer = 1; layer <= 2; ++layer) {
      for (std::size_t t = 0; t < 10; ++t) {
        std::vector<std::size_t> experts = {0, 1, 2, 3, 4, 5, 6, 7};
        std::shuffle(experts.begin(), experts.end(), rng);
        experts.resize(2);
        sets[((layer - 1) * 2 + (pass - 1)) * 10 + t] = experts;
        records.push_back(record(layer, pass, t, experts));
      }
    }
  }
  std::shuffle(records.begin(), records.end(), rng);
  const auto counts = routing_overlap(records, 2, 2);
  ASSERT_EQ(counts.size(), 2u);
  for (std::size_t layer = 0; layer < 2; ++layer) {
    std::size_t exact = 0, partial = 0, disjoint = 0, uni = 0;
    for (std::size_t t = 0; t < 10; ++t) {
      const auto& s1 = sets[(layer * 2) * 10 + t];
      const auto& s2 = sets[(layer * 2 + 1) * 10 + t];
      std::set<std::size_t> a(s1.begin(), s1.end()), b(s2.begin(), s2.end()), both;
      std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(both, both.end()));
      if (both.size() == 2) ++exact;
      else if (both.empty()) ++disjoint;
      else ++partial;
      a.insert(b.begin(), b.end());
      uni += a.size();
    }
    EXPECT_EQ(counts[layer].physical_layer, layer + 1);
    EXPECT_EQ(counts[layer].exact, exact);
    EXPECT_EQ(counts[layer].partial, partial);
    EXPECT_EQ(counts[layer].disjoint, disjoint);
    EXPECT_EQ(counts[layer].frac_exact(), static_cast<double>(exact) / 10.0);
    EXPECT_EQ(counts[layer].mean_unique_experts(), static_cast<double>(uni) / 10.0);
    EXPECT_NEAR(counts[layer].frac_exact() + counts[layer].frac_partial() + counts[layer].frac_disjoint(), 1.0,
                1e-9);
  }
}

TEST(Overlap, MissingPassRecordThrows) {
  std::vector<RoutingRecord> records = {record(1, 1, 0, {0, 1}), record(1, 2, 0, {0, 1}), record(1, 1, 1, {2, 3})};
  EXPECT_THROW(routing_overlap(records, 1, 2), std::invalid_argument);
  EXPECT_THROW(routing_overlap(records, 1, 1), std::invalid_argument);
}

TEST(Overlap, ConsecutivePairsForFourPasses) {
  std::vector<RoutingRecord> records;
  const std::vector<std::vector<std::size_t>> passes = {{0, 1}, {0, 1}, {1, 2}, {3, 4}};
  for (std::size_t p = 0; p < 4; ++p) records.push_back(record(1, p + 1, 0, passes[p]));
  const auto counts = routing_overlap(records, 1, 4);
  ASSERT_EQ(counts.size(), 3u);
  EXPECT_EQ(counts[0].exact, 1u);
  EXPECT_EQ(counts[1].partial, 1u);
  EXPECT_EQ(counts[2].disjoint, 1u);
  EXPECT_EQ(counts[2].pass_from, 3u);
}

TEST(Overlap, ModelProfileCoversEveryToken) {
  const ModelConfig c = testing::tiny_config(16, 2, 2, true);
  const auto model = init_model<float>(c, peaked_init(0.5), 12);
  const auto stream = testing::random_stream(49, c.vocab_size, 13);
  const auto counts = overlap_profile(model, stream, options_for(c));
  ASSERT_EQ(counts.size(), 2u);
  for (const auto& oc : counts) EXPECT_EQ(oc.tokens(), 48u);
  const auto dense = testing::tiny_config(16, 2, 2, false);
  EXPECT_THROW(overlap_profile(init_model<float>(dense, MupConfig{}, 1), stream, options_for(dense)),
               std::invalid_argument);
}

TEST(AnalysisCsv, Headers) {
  const auto dir = testing::temp_dir("analysis_csv");
  OverlapCounts oc;
  oc.physical_layer = 1;
  oc.exact = 1;
  oc.partial = 2;
  oc.disjoint = 1;
  oc.union_total = 12;
  const OverlapCounts counts[] = {oc};
  write_overlap_csv(dir / "overlap.csv", counts, 2);
  const CsvTable t = read_csv(dir / "overlap.csv");
  EXPECT_EQ(t.header, (std::vector<std::string>{"physical_layer", "frac_exact", "frac_partial", "frac_disjoint",
                                                "mean_unique_experts"}));
  EXPECT_EQ(t.rows[0][2], "0.5");
  const ConvergenceRow rows[] = {{1, 0.25, 0.1, 0.05, 0.75}};
  write_convergence_csv(dir / "convergence.csv", rows);
  EXPECT_EQ(read_csv(dir / "convergence.csv").header,
            (std::vector<std::string>{"effective_layer", "mean_jsd", "std_jsd", "converged_fraction",
                                      "std_jsd_tokens"}));
}

}  // namespace
}  // namespace loopmoe
