// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "loopmoe/numerics/grad_check.hpp"
#include "loopmoe/numerics/graph.hpp"
#include "test_support.hpp"

namespace loopmoe {
namespace {

using testing::random_tensor;

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), ShapeError);
  Tensor<float> t({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t.at(1, 2), 6.0f);
}

TEST(Matmul, IdentityLeavesInputUnchanged) {
  Graph<double> g(false);
  Tensor<double> x = random_tensor({2, 5}, 1);
  Var y = g.matmul(g.input(Tensor<double>({2, 2}, {1, 0, 0, 1})), g.input(x));
  EXPECT_EQ(g.value(y), x);
}

TEST(Matmul, HandArithmetic) {
  Graph<double> g(false);
  Var y = g.matmul(g.input(Tensor<double>({1, 2}, {1, 2})), g.input(Tensor<double>({2, 1}, {3, 4})));
  ASSERT_EQ(g.value(y).shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(g.value(y)[0], 11.0);
}

TEST(Matmul, ShapeMismatchThrows) {
  Graph<double> g(false);
  EXPECT_THROW(g.matmul(g.input(Tensor<double>({2, 3})), g.input(Tensor<double>({2, 3}))), ShapeError);
}

TEST(Matmul, GradientOfSumIsOnesTimesBTransposed) {
  Parameter<double> a("a", ParamRole::hidden, {3, 4});
  a.value = random_tensor({3, 4}, 2);
  const Tensor<double> b = random_tensor({4, 2}, 3);
  Graph<double> g;
  g.backward(g.sum(g.matmul(g.param(a), g.input(b))));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_NEAR(a.grad.at(i, j), b.at(j, 0) + b.at(j, 1), 1e-12);
    }
  }
  Parameter<double>* params[] = {&a};
  auto r = grad_check([&](Graph<double>& h) { return h.sum(h.matmul(h.param(a), h.input(b))); }, params);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(Softmax, UniformOnEqualInputs) {
  Graph<double> g(false);
  Var p = g.softmax(g.input(Tensor<double>({1, 3}, {0, 0, 0})));
  for (double v : g.value(p).data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
  Graph<float> g(false);
  Var p = g.softmax(g.input(Tensor<float>({1, 2}, {1000.0f, 0.0f})));
  EXPECT_NEAR(g.value(p)[0], 1.0f, 1e-6);
  EXPECT_NEAR(g.value(p)[1], 0.0f, 1e-6);
}

TEST(Softmax, TwoOneCase) {
  Graph<double> g(false);
  Var p = g.softmax(g.input(Tensor<double>({1, 2}, {2, 1})));
  const double e2 = std::exp(2.0), e1 = std::exp(1.0);
  EXPECT_NEAR(g.value(p)[0], e2 / (e2 + e1), 1e-12);
  EXPECT_NEAR(g.value(p)[0], 0.7311, 1e-4);
  EXPECT_NEAR(g.value(p)[1], 0.2689, 1e-4);
}

TEST(Softmax, RowsSumToOneProperty) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Graph<float> g(false);
    Var p = g.softmax(g.input(random_tensor<float>({7, 13}, seed, 5.0 + static_cast<double>(seed))));
    const Tensor<float>& v = g.value(p);
    for (std::size_t r = 0; r < v.rows(); ++r) {
      double s = 0.0;
      for (float x : v.row(r)) {
        EXPECT_GE(x, 0.0f);
        s += x;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, GradCheck) {
  Parameter<double> x("x", ParamRole::hidden, {3, 5});
  x.value = random_tensor({3, 5}, 9);
  const Tensor<double> w = random_tensor({3, 5}, 10);
  Parameter<double>* params[] = {&x};
  auto r = grad_check([&](Graph<double>& g) { return g.sum(g.mul(g.softmax(g.param(x)), g.input(w))); }, params);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(RmsNorm, ZerosStayZero) {
  Graph<double> g(false);
  Var y = g.rmsnorm(g.input(Tensor<double>({1, 4})));
  for (double v : g.value(y).data()) EXPECT_EQ(v, 0.0);
}

TEST(RmsNorm, ConstantVectorNormalizesToOne) {
  Graph<double> g(false);
  Var y = g.rmsnorm(g.input(Tensor<double>({1, 4}, {2, 2, 2, 2})));
  for (double v : g.value(y).data()) EXPECT_NEAR(v, 1.0, 1e-5);
}

TEST(RmsNorm, OutputRmsIsOne) {
  Graph<double> g(false);
  Var y = g.rmsnorm(g.input(random_tensor({5, 32}, 4, 3.0)));
  const Tensor<double>& v = g.value(y);
  for (std::size_t r = 0; r < v.rows(); ++r) {
    double ss = 0.0;
    for (double x : v.row(r)) ss += x * x;
    EXPECT_NEAR(std::sqrt(ss / 32.0), 1.0, 1e-5);
  }
}

TEST(RmsNorm, GradCheck) {
  Parameter<double> x("x", ParamRole::hidden, {3, 8});
  x.value = random_tensor({3, 8}, 5);
  const Tensor<double> w = random_tensor({3, 8}, 6);
  Parameter<double>* params[] = {&x};
  auto r = grad_check([&](Graph<double>& g) { return g.sum(g.mul(g.rmsnorm(g.param(x)), g.input(w))); }, params);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
  Graph<double> g(false);
  const std::vector<std::int32_t> targets = {3, 5};
  Var l = g.cross_entropy(g.input(Tensor<double>({2, 8})), targets);
  EXPECT_NEAR(g.value(l)[0], std::log(8.0), 1e-12);
  EXPECT_NEAR(g.value(l)[0], 2.0794, 1e-4);
}

TEST(CrossEntropy, SpikeOnTargetGivesZero) {
  Graph<double> g(false);
  const std::vector<std::int32_t> targets = {1};
  Var l = g.cross_entropy(g.input(Tensor<double>({1, 4}, {0, 500, 0, 0})), targets);
  EXPECT_NEAR(g.value(l)[0], 0.0, 1e-12);
}

TEST(CrossEntropy, MatchesLogSumExpOracle) {
  const Tensor<double> logits = random_tensor({3, 5}, 11, 2.0);
  const std::vector<std::int32_t> targets = {4, 0, 2};
  double oracle = 0.0;
  for (std::size_t r = 0; r < 3; ++r) {
    double m = -1e300;
    for (double v : logits.row(r)) m = std::max(m, v);
    double s = 0.0;
    for (double v : logits.row(r)) s += std::exp(v - m);
    oracle += m + std::log(s) - logits.at(r, static_cast<std::size_t>(targets[r]));
  }
  oracle /= 3.0;
  Graph<double> g(false);
  Var l = g.cross_entropy(g.input(logits), targets);
  EXPECT_NEAR(g.value(l)[0], oracle, 1e-6);
}

TEST(CrossEntropy, TargetOutOfRangeThrows) {
  Graph<double> g(false);
  const std::vector<std::int32_t> bad = {8};
  EXPECT_THROW(g.cross_entropy(g.input(Tensor<double>({1, 8})), bad), std::out_of_range);
  const std::vector<std::int32_t> negative = {-1};
  EXPECT_THROW(g.cross_entropy(g.input(Tensor<double>({1, 8})), negative), std::out_of_range);
}

TEST(CrossEntropy, GradCheck) {
  Parameter<double> x("logits", ParamRole::hidden, {4, 6});
  x.value = random_tensor({4, 6}, 12);
  const std::vector<std::int32_t> targets = {0, 5, 2, 2};
  Parameter<double>* params[] = {&x};
  auto r = grad_check([&](Graph<double>& g) { return g.cross_entropy(g.param(x), targets); }, params);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, SumOfSquares) {
  Parameter<double> theta("theta", ParamRole::hidden, {10});
  theta.value = random_tensor({10}, 13);
  Parameter<double>* params[] = {&theta};
  auto r = grad_check(
      [&](Graph<double>& g) {
        Var t = g.param(theta);
        return g.sum(g.mul(t, t));
      },
      params);
  EXPECT_LT(r.max_rel_error, 1e-8);
  EXPECT_EQ(r.coords_checked, 10u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(theta.grad[i], 2.0 * theta.value[i], 1e-12);
}

TEST(GradCheck, DetectsNondeterministicFunction) {
  Parameter<double> theta("theta", ParamRole::hidden, {3});
  theta.value = random_tensor({3}, 14);
  Parameter<double>* params[] = {&theta};
  int calls = 0;
  auto f = [&](Graph<double>& g) {
    ++calls;
    return g.sum(g.scale(g.param(theta), static_cast<double>(calls)));
  };
  EXPECT_THROW(grad_check(f, params), NondeterministicError);
}

TEST(Graph, NonFiniteForwardThrows) {
  Graph<double> g(false);
  Var x = g.input(Tensor<double>({1, 2}, {1e200, 1e200}));
  EXPECT_THROW(g.mul(x, x), NumericError);
}

TEST(Graph, TiedParameterAccumulatesBothUses) {
  Parameter<double> w("w", ParamRole::hidden, {2, 2});
  w.value = random_tensor({2, 2}, 15);
  const Tensor<double> x = random_tensor({3, 2}, 16);
  Graph<double> g;
  Var h = g.matmul(g.matmul(g.input(x), g.param(w)), g.param(w));
  g.backward(g.sum(h));
  Parameter<double>* params[] = {&w};
  auto r = grad_check(
      [&](Graph<double>& h2) { return h2.sum(h2.matmul(h2.matmul(h2.input(x), h2.param(w)), h2.param(w))); }, params);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(Graph, BackwardIsBitDeterministic) {
  auto run = [] {
    Parameter<float> w("w", ParamRole::hidden, {8, 8});
    w.value = random_tensor<float>({8, 8}, 17);
    Graph<float> g;
    Var y = g.rmsnorm(g.matmul(g.input(random_tensor<float>({6, 8}, 18)), g.param(w)));
    g.backward(g.sum(g.mul(y, y)));
    return w.grad;
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace loopmoe
