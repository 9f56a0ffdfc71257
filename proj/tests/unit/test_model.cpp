// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "loopmoe/model/config_io.hpp"
#include "loopmoe/model/ffn.hpp"
#include "loopmoe/model/transformer.hpp"
#include "loopmoe/mup/mup.hpp"
#include "loopmoe/numerics/grad_check.hpp"
#include "loopmoe/util/error.hpp"
#include "test_support.hpp"

namespace loopmoe {
namespace {

using testing::max_abs_diff;
using testing::random_tensor;
using testing::tiny_config;

TokenBatch random_tokens(std::size_t batch, std::size_t seq, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int32_t> dist(0, static_cast<std::int32_t>(vocab) - 1);
  TokenBatch t{batch, seq, std::vector<std::int32_t>(batch * seq)};
  for (auto& id : t.ids) id = dist(rng);
  return t;
}

MupConfig mup_for(const ModelConfig& c) {
  MupConfig m;
  m.d_base = c.d_base;
  m.sigma_base = 0.2;
  return m;
}

TEST(ModelConfig, ValidateRejectsBadShapes) {
  ModelConfig c = tiny_config();
  EXPECT_NO_THROW(c.validate());
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config(16, 2, 1, true);
  c.top_k = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.n_loops = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.n_heads = 16;  // head dim 1 is odd
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelConfig, JsonRoundTripAndUnknownKey) {
  ModelConfig c = tiny_config(32, 4, 2, true);
  c.attention_scale = AttentionScale::inv_sqrt_head_dim;
  ModelConfig back;
  read_model_config(to_json(c), back);
  EXPECT_EQ(back, c);
  nlohmann::json j = to_json(c);
  j["d_modle"] = 3;
  EXPECT_THROW(read_model_config(j, back), ConfigError);
}

TEST(Rope, PositionZeroIsIdentity) {
  Graph<double> g(false);
  const Tensor<double> x = random_tensor({1, 8}, 1);
  Var y = g.rope(g.input(x), 1, 2, 10000.0);
  EXPECT_EQ(g.value(y), x);
}

TEST(Rope, UnitPairRotatesByPosition) {
  const std::size_t seq = 6;
  Tensor<double> x({seq, 2});
  for (std::size_t p = 0; p < seq; ++p) x.at(p, 0) = 1.0;
  Graph<double> g(false);
  Var y = g.rope(g.input(x), seq, 1, 10000.0);
  for (std::size_t p = 0; p < seq; ++p) {
    EXPECT_NEAR(g.value(y).at(p, 0), std::cos(static_cast<double>(p)), 1e-12);
    EXPECT_NEAR(g.value(y).at(p, 1), std::sin(static_cast<double>(p)), 1e-12);
  }
}

TEST(Rope, HigherPairsUseLowerFrequency) {
  Tensor<double> x({4, 4});
  for (std::size_t p = 0; p < 4; ++p) x.at(p, 2) = 1.0;
  Graph<double> g(false);
  Var y = g.rope(g.input(x), 4, 1, 100.0);
  const double freq = std::pow(100.0, -2.0 / 4.0);
  EXPECT_NEAR(g.value(y).at(3, 2), std::cos(3 * freq), 1e-12);
  EXPECT_NEAR(g.value(y).at(3, 3), std::sin(3 * freq), 1e-12);
}

TEST(Rope, PreservesPairNorms) {
  const Tensor<double> x = random_tensor({2 * 5, 8}, 2);
  Graph<double> g(false);
  const Tensor<double>& y = g.value(g.rope(g.input(x), 5, 2, 10000.0));
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < 8; c += 2) {
      EXPECT_NEAR(std::hypot(y.at(r, c), y.at(r, c + 1)), std::hypot(x.at(r, c), x.at(r, c + 1)), 1e-5);
    }
  }
}

TEST(Rope, OddHeadDimensionThrows) {
  Graph<double> g(false);
  EXPECT_THROW(g.rope(g.input(Tensor<double>({2, 6})), 2, 2, 10000.0), ShapeError);
}

TEST(Rope, GradCheck) {
  Parameter<double> x("x", ParamRole::hidden, {6, 8});
  x.value = random_tensor({6, 8}, 3);
  const Tensor<double> w = random_tensor({6, 8}, 4);
  Parameter<double>* params[] = {&x};
  auto r = grad_check([&](Graph<double>& g) { return g.sum(g.mul(g.rope(g.param(x), 3, 2, 10.0), g.input(w))); },
                      params);
  EXPECT_LT(r.max_rel_error, 1e-7);
}

TEST(Attention, SingleTokenReturnsValues) {
  const Tensor<double> q = random_tensor({3, 8}, 5);
  const Tensor<double> k = random_tensor({3, 8}, 6);
  const Tensor<double> v = random_tensor({3, 8}, 7);
  Graph<double> g(false);
  Var out = g.causal_attention(g.input(q), g.input(k), g.input(v), 1, 2, 0.25);
  EXPECT_LT(max_abs_diff(g.value(out), v), 1e-12);
}

TEST(Attention, MatchesNaiveOracle) {
  const std::size_t seq = 4, heads = 2, d = 8, dh = 4;
  const Tensor<double> q = random_tensor({2 * seq, d}, 8);
  const Tensor<double> k = random_tensor({2 * seq, d}, 9);
  const Tensor<double> v = random_tensor({2 * seq, d}, 10);
  const double scale = 1.0 / dh;
  Graph<double> g(false);
  const Tensor<double>& out = g.value(g.causal_attention(g.input(q), g.input(k), g.input(v), seq, heads, scale));
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t t = 0; t < seq; ++t) {
        std::vector<double> s(t + 1);
        double mx = -1e300;
        for (std::size_t u = 0; u <= t; ++u) {
          double dot = 0.0;
          for (std::size_t c = 0; c < dh; ++c) dot += q.at(b * seq + t, h * dh + c) * k.at(b * seq + u, h * dh + c);
          s[u] = dot * scale;
          mx = std::max(mx, s[u]);
        }
        double z = 0.0;
        for (double& x : s) z += (x = std::exp(x - mx));
        for (std::size_t c = 0; c < dh; ++c) {
          double o = 0.0;
          for (std::size_t u = 0; u <= t; ++u) o += s[u] / z * v.at(b * seq + u, h * dh + c);
          EXPECT_NEAR(out.at(b * seq + t, h * dh + c), o, 1e-12);
        }
      }
    }
  }
}

TEST(Attention, GradCheck) {
  Parameter<double> q("q", ParamRole::hidden, {6, 8});
  Parameter<double> k("k", ParamRole::hidden, {6, 8});
  Parameter<double> v("v", ParamRole::hidden, {6, 8});
  q.value = random_tensor({6, 8}, 11);
  k.value = random_tensor({6, 8}, 12);
  v.value = random_tensor({6, 8}, 13);
  const Tensor<double> w = random_tensor({6, 8}, 14);
  Parameter<double>* params[] = {&q, &k, &v};
  auto r = grad_check(
      [&](Graph<double>& g) {
        return g.sum(g.mul(g.causal_attention(g.param(q), g.param(k), g.param(v), 3, 2, 0.5), g.input(w)));
      },
      params);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Swiglu, ZeroInputGivesZero) {
  Graph<double> g(false);
  Var y = swiglu_ffn(g, g.input(Tensor<double>({2, 3})), g.input(random_tensor({3, 4}, 1)),
                     g.input(random_tensor({3, 4}, 2)), g.input(random_tensor({4, 3}, 3)));
  for (double v : g.value(y).data()) EXPECT_EQ(v, 0.0);
}

TEST(Swiglu, MatchesElementwiseOracle) {
  const Tensor<double> x = random_tensor({2, 3}, 4);
  const Tensor<double> wg = random_tensor({3, 5}, 5);
  const Tensor<double> wu = random_tensor({3, 5}, 6);
  const Tensor<double> wd = random_tensor({5, 3}, 7);
  Graph<double> g(false);
  const Tensor<double>& y = g.value(swiglu_ffn(g, g.input(x), g.input(wg), g.input(wu), g.input(wd)));
  for (std::size_t r = 0; r < 2; ++r) {
    std::vector<double> hidden(5);
    for (std::size_t j = 0; j < 5; ++j) {
      double a = 0.0, b = 0.0;
      for (std::size_t i = 0; i < 3; ++i) {
        a += x.at(r, i) * wg.at(i, j);
        b += x.at(r, i) * wu.at(i, j);
      }
      hidden[j] = a / (1.0 + std::exp(-a)) * b;
    }
    for (std::size_t c = 0; c < 3; ++c) {
      double o = 0.0;
      for (std::size_t j = 0; j < 5; ++j) o += hidden[j] * wd.at(j, c);
      EXPECT_NEAR(y.at(r, c), o, 1e-6);
    }
  }
}

TEST(Transformer, ParameterCountsPerFfn) {
  const ModelConfig c = tiny_config(16, 1, 1, false);
  Transformer<float> m(c);
  EXPECT_EQ(m.parameter("layers.0.ffn.w_gate").value.size() + m.parameter("layers.0.ffn.w_up").value.size() +
                m.parameter("layers.0.ffn.w_down").value.size(),
            3 * c.d_model * c.d_ff);
}

TEST(Transformer, FullModelGradCheck) {
  ModelConfig c = tiny_config(16, 1, 1, false);
  c.vocab_size = 11;
  auto model = init_model<double>(c, mup_for(c), 3);
  const TokenBatch tokens = random_tokens(2, 4, c.vocab_size, 4);
  const std::vector<std::int32_t> targets = random_tokens(2, 4, c.vocab_size, 5).ids;
  std::vector<Parameter<double>*> params;
  for (auto& p : model.parameters()) params.push_back(&p);
  auto r = grad_check(
      [&](Graph<double>& g) { return g.cross_entropy(model.build(g, tokens).logits, targets); }, params,
      {.eps = 1e-4, .coords_per_param = 16, .seed = 1});
  EXPECT_LT(r.max_rel_error, 1e-3) << r.worst_param << "[" << r.worst_index << "]";
}

TEST(Transformer, HiddenStateCountIsEffectiveDepth) {
  const ModelConfig c = tiny_config(16, 3, 2, false);
  auto model = init_model<float>(c, mup_for(c), 1);
  auto trace = model.forward(random_tokens(2, 5, c.vocab_size, 2));
  EXPECT_EQ(trace.hidden_states.size(), 6u);
  EXPECT_EQ(trace.final_logits.shape(), (Shape{10, c.vocab_size}));
}

TEST(Transformer, LensAtFinalLayerReproducesLogitsExactly) {
  for (bool moe : {false, true}) {
    const ModelConfig c = tiny_config(16, 2, 2, moe);
    auto model = init_model<float>(c, mup_for(c), 7);
    auto trace = model.forward(random_tokens(2, 6, c.vocab_size, 8));
    EXPECT_EQ(model.lens_logits(trace.hidden_states.back()), trace.final_logits);
    Graph<float> g(false);
    EXPECT_EQ(model.logit_lens(trace, 4), g.value(g.softmax(g.input(trace.final_logits))));
  }
}

TEST(Transformer, LensDistributionsSumToOneAndDiffer) {
  const ModelConfig c = tiny_config(16, 2, 2, false);
  auto model = init_model<float>(c, mup_for(c), 9);
  auto trace = model.forward(random_tokens(1, 6, c.vocab_size, 10));
  for (std::size_t l = 1; l <= 4; ++l) {
    const Tensor<float> p = model.logit_lens(trace, l);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double s = 0.0;
      for (float v : p.row(r)) s += v;
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
  EXPECT_GT(max_abs_diff(model.logit_lens(trace, 1), model.logit_lens(trace, 2)), 1e-6);
  EXPECT_THROW(model.logit_lens(trace, 0), std::out_of_range);
  EXPECT_THROW(model.logit_lens(trace, 5), std::out_of_range);
}

TEST(Transformer, CausalityUnderFuturePerturbation) {
  const ModelConfig c = tiny_config(16, 2, 2, true);
  auto model = init_model<float>(c, mup_for(c), 11);
  TokenBatch a = random_tokens(1, 8, c.vocab_size, 12);
  TokenBatch b = a;
  const std::size_t t = 4;
  for (std::size_t u = t + 1; u < 8; ++u) b.ids[u] = (b.ids[u] + 7) % static_cast<std::int32_t>(c.vocab_size);
  const auto la = model.forward(a).final_logits;
  const auto lb = model.forward(b).final_logits;
  for (std::size_t r = 0; r <= t; ++r) {
    for (std::size_t v = 0; v < c.vocab_size; ++v) EXPECT_EQ(la.at(r, v), lb.at(r, v));
  }
  EXPECT_GT(max_abs_diff(la, lb), 0.0);
}

TEST(Transformer, SingleLoopEqualsStandardStack) {
  ModelConfig c = tiny_config(16, 4, 1, false);
  auto model = init_model<float>(c, mup_for(c), 13);
  EXPECT_FALSE(c.is_looped());
  EXPECT_EQ(model.forward(random_tokens(1, 5, c.vocab_size, 14)).hidden_states.size(), 4u);
}

// Copies every physical layer of `looped` into the R positions it occupies in
// an unrolled stack of L x R distinct layers.
template <typename T>
Transformer<T> unrolled_copy(const Transformer<T>& looped) {
  ModelConfig flat = looped.config();
  const std::size_t L = flat.n_unique_layers;
  flat.n_unique_layers = L * flat.n_loops;
  flat.n_loops = 1;
  Transformer<T> out(flat);
  for (auto& p : out.parameters()) {
    std::string name = p.name;
    if (name.rfind("layers.", 0) == 0) {
      const std::size_t dot = name.find('.', 7);
      const std::size_t layer = std::stoul(name.substr(7, dot - 7));
      name = "layers." + std::to_string(layer % L) + name.substr(dot);
    }
    p.value = looped.parameter(name).value;
  }
  return out;
}

TEST(Transformer, LoopMatchesDuplicatedWeights) {
  for (bool moe : {false, true}) {
    const ModelConfig c = tiny_config(16, 8, 2, moe);
    auto looped = init_model<float>(c, mup_for(c), 15);
    auto flat = unrolled_copy(looped);
    const TokenBatch tokens = random_tokens(2, 8, c.vocab_size, 16);
    const auto a = looped.forward(tokens);
    const auto b = flat.forward(tokens);
    EXPECT_EQ(a.final_logits, b.final_logits) << "moe=" << moe;
    ASSERT_EQ(a.hidden_states.size(), b.hidden_states.size());
    for (std::size_t l = 0; l < a.hidden_states.size(); ++l) EXPECT_EQ(a.hidden_states[l], b.hidden_states[l]);
  }
}

TEST(Transformer, TiedGradientEqualsSumOfUnrolledGradients) {
  const ModelConfig c = tiny_config(16, 2, 3, true);
  auto looped = init_model<double>(c, mup_for(c), 17);
  auto flat = unrolled_copy(looped);
  const TokenBatch tokens = random_tokens(2, 6, c.vocab_size, 18);
  const std::vector<std::int32_t> targets = random_tokens(2, 6, c.vocab_size, 19).ids;
  for (auto* m : {&looped, &flat}) {
    Graph<double> g;
    g.backward(g.cross_entropy(m->build(g, tokens).logits, targets));
  }
  for (const auto& p : looped.parameters()) {
    Tensor<double> expected(p.value.shape());
    if (p.name.rfind("layers.", 0) == 0) {
      const std::size_t dot = p.name.find('.', 7);
      const std::size_t layer = std::stoul(p.name.substr(7, dot - 7));
      for (std::size_t r = 0; r < c.n_loops; ++r) {
        const auto& part = flat.parameter("layers." + std::to_string(layer + r * c.n_unique_layers) +
                                          p.name.substr(dot)).grad;
        for (std::size_t i = 0; i < expected.size(); ++i) expected[i] += part[i];
      }
    } else {
      expected = flat.parameter(p.name).grad;
    }
    double scale = 1e-12;
    for (double v : expected.data()) scale = std::max(scale, std::abs(v));
    EXPECT_LT(max_abs_diff(p.grad, expected) / scale, 1e-10) << p.name;
  }
}

TEST(Transformer, RejectsBadTokens) {
  const ModelConfig c = tiny_config();
  Transformer<float> m(c);
  TokenBatch t = random_tokens(1, 4, c.vocab_size, 1);
  t.ids[2] = static_cast<std::int32_t>(c.vocab_size);
  EXPECT_THROW(m.forward(t), std::out_of_range);
  EXPECT_THROW(m.forward(random_tokens(1, c.seq_len + 1, c.vocab_size, 1)), std::invalid_argument);
}

TEST(Transformer, ForwardIsDeterministic) {
  const ModelConfig c = tiny_config(16, 2, 2, true);
  auto model = init_model<float>(c, mup_for(c), 20);
  const TokenBatch tokens = random_tokens(2, 8, c.vocab_size, 21);
  EXPECT_EQ(model.forward(tokens).final_logits, model.forward(tokens).final_logits);
}

}  // namespace
}  // namespace loopmoe
