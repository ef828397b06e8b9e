// Copyright 2026 The ConVQG Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "convqg/objective.hpp"
#include "gradcheck.hpp"

namespace convqg {
namespace {

using grad::Graph;
using grad::Tensor;
using grad::Var;

using Vec = std::vector<double>;

Tensor<double> row(const Vec& v) { return Tensor<double>({1, v.size()}, v); }

// Scalar oracle, written against plain vectors.
double oracle_margin(const Vec& a, const Vec& pos, const Vec& neg, double m) {
  double dp = 0, dn = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dp += (a[i] - pos[i]) * (a[i] - pos[i]);
    dn += (a[i] - neg[i]) * (a[i] - neg[i]);
  }
  const double v = std::sqrt(dp) - std::sqrt(dn) + m;
  return v > 0 ? v : 0.0;
}

double eval_img(const Vec& q_it, const Vec& q_gt, const Vec& q_i, double m) {
  Graph<double> g(false);
  return cl_img(g.constant(row(q_it)), row(q_gt), row(q_i), m).value().item();
}

double eval_txt(const Vec& q_it, const Vec& q_gt, const Vec& q_t, double m) {
  Graph<double> g(false);
  return cl_txt(g.constant(row(q_it)), row(q_gt), row(q_t), m).value().item();
}

Vec random_vec(std::mt19937_64& rng, std::size_t d, bool unit) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vec v(d);
  double n = 0;
  for (auto& x : v) {
    x = nd(rng);
    n += x * x;
  }
  if (unit) {
    for (auto& x : v) x /= std::sqrt(n);
  }
  return v;
}

double dist(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// --- trivial examples --------------------------------------------------------

TEST(MarginLossTest, SatisfiedMarginIsZero) {
  EXPECT_EQ(eval_img({0, 0}, {0, 0}, {1, 0}, 0.5), 0.0);
  EXPECT_EQ(eval_txt({0, 0}, {0, 0}, {0, 0.5}, 0.5), 0.0);
  EXPECT_EQ(eval_txt({0, 0}, {0, 0}, {0, 0.9}, 0.5), 0.0);
}

TEST(MarginLossTest, DirectSubstitution) {
  // |q_it - q_gt| = 1.0, |q_it - q_i| = 0.2
  EXPECT_NEAR(eval_img({0, 0}, {1, 0}, {0, 0.2}, 0.5), 1.3, 1e-12);
}

TEST(MarginLossTest, NegativeArgumentSymmetry) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    const Vec a = random_vec(rng, 6, true), p = random_vec(rng, 6, true), x = random_vec(rng, 6, true);
    EXPECT_EQ(eval_txt(a, p, x, 0.5), eval_img(a, p, x, 0.5));
  }
}

TEST(MarginLossTest, DimensionMismatchThrows) {
  Graph<double> g(false);
  EXPECT_THROW(cl_img(g.constant(row({0, 0})), row({0, 0, 0}), row({0, 0}), 0.5), DimensionError);
  EXPECT_THROW(cl_img(g.constant(row({0, 0})), row({0, 0}), row({1, 0}), 0.0), ValueError);
}

TEST(MarginLossTest, MatchesScalarOracleAndFiniteDifferences) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 50; ++i) {
    const Vec a = random_vec(rng, 8, true), p = random_vec(rng, 8, true), n = random_vec(rng, 8, true);
    EXPECT_NEAR(eval_img(a, p, n, 0.5), oracle_margin(a, p, n, 0.5), 1e-12);
    EXPECT_NEAR(eval_txt(a, p, n, 0.5), oracle_margin(a, p, n, 0.5), 1e-12);
    if (oracle_margin(a, p, n, 0.5) < 1e-3) continue;  // away from the hinge
    const auto check = testing::check_leaves({row(a)}, [&](Graph<double>&, std::vector<Var<double>>& x) {
      return cl_img(x[0], row(p), row(n), 0.5);
    });
    EXPECT_LT(check.worst(), 1e-8);
  }
}

TEST(CombineTest, Examples) {
  Graph<double> g(false);
  auto s = [&](double v) { return g.constant(Tensor<double>::scalar(v)); };
  EXPECT_NEAR(combine_cl(s(1.0), s(0.5), 0.2).value().item(), 0.6, 1e-12);
  EXPECT_EQ(combine_cl(s(1.7), s(0.3), 0.0).value().item(), 0.3);
  EXPECT_EQ(combine_cl(s(1.7), s(0.3), 1.0).value().item(), 1.7);
  EXPECT_NEAR(combine_cl(s(0.42), s(0.42), 0.5).value().item(), 0.42, 1e-12);
  EXPECT_THROW(combine_cl(s(1), s(1), 1.5), ValueError);
  EXPECT_THROW(combine_cl(s(1), s(1), -0.1), ValueError);
}

TEST(TotalLossTest, Examples) {
  Graph<double> g(false);
  auto s = [&](double v) { return g.constant(Tensor<double>::scalar(v)); };
  EXPECT_NEAR(total_loss(s(0.6), s(2.0), 10.0).value().item(), 4.0, 1e-12);
  EXPECT_NEAR(total_loss(s(0.6), s(2.0), 0.0).value().item(), 1.0, 1e-12);
  EXPECT_NEAR(total_loss(s(0.0), s(2.0), 1e5).value().item(), 1.0, 1e-12);
  EXPECT_THROW(total_loss(s(0.6), s(2.0), -1.0), ValueError);
}

TEST(BetaScheduleTest, Geometric10) {
  const auto b = BetaSchedule::geometric10();
  EXPECT_EQ(beta_at(b, 0), 10.0);
  EXPECT_EQ(beta_at(b, 1), 100.0);
  EXPECT_EQ(beta_at(b, 2), 1000.0);
  EXPECT_EQ(beta_at(b, 4), 100000.0);
  EXPECT_THROW(beta_at(b, -1), ValueError);
}

TEST(BetaScheduleTest, FixedAndParsing) {
  for (int e = 0; e < 6; ++e) EXPECT_EQ(beta_at(BetaSchedule::fixed(100), e), 100.0);
  EXPECT_EQ(BetaSchedule::parse("geometric10"), BetaSchedule::geometric10());
  EXPECT_EQ(BetaSchedule::parse("fixed:100"), BetaSchedule::fixed(100));
  EXPECT_EQ(BetaSchedule::parse("10"), BetaSchedule::fixed(10));
  EXPECT_EQ(BetaSchedule::parse(BetaSchedule::geometric10(5).to_string()), BetaSchedule::geometric10(5));
  EXPECT_THROW(BetaSchedule::parse("linear"), ValueError);
  EXPECT_THROW(BetaSchedule::parse("fixed:-1"), ValueError);
  EXPECT_THROW(BetaSchedule::parse("geometric10:0"), ValueError);
}

TEST(LossConfigTest, Validation) {
  LossConfig c;
  EXPECT_NO_THROW(c.validate());
  c.alpha = 1.5;
  EXPECT_THROW(c.validate(), ValueError);
  c = LossConfig{};
  c.margin = 0;
  EXPECT_THROW(c.validate(), ValueError);
  EXPECT_EQ(parse_variant("IT"), Variant::kIT);
  EXPECT_THROW(parse_variant("X"), ValueError);
}

// --- properties over 1000 seeded triples -----------------------------------

TEST(MarginPropertyTest, NonNegativeAndTranslationInvariant) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    const Vec a = random_vec(rng, 8, false), p = random_vec(rng, 8, false), n = random_vec(rng, 8, false);
    const Vec v = random_vec(rng, 8, false);
    auto shift = [&](Vec x) {
      for (std::size_t k = 0; k < x.size(); ++k) x[k] += v[k];
      return x;
    };
    const double base_i = eval_img(a, p, n, 0.5), base_t = eval_txt(a, p, n, 0.5);
    EXPECT_GE(base_i, 0.0);
    EXPECT_GE(base_t, 0.0);
    EXPECT_NEAR(eval_img(shift(a), shift(p), shift(n), 0.5), base_i, 1e-9);
    EXPECT_NEAR(eval_txt(shift(a), shift(p), shift(n), 0.5), base_t, 1e-9);
  }
}

TEST(MarginPropertyTest, NegativeSwapExchangesTerms) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 1000; ++i) {
    const Vec a = random_vec(rng, 8, true), gt = random_vec(rng, 8, true);
    const Vec qi = random_vec(rng, 8, true), qt = random_vec(rng, 8, true);
    EXPECT_EQ(eval_img(a, gt, qt, 0.5), eval_txt(a, gt, qt, 0.5));
    EXPECT_EQ(eval_txt(a, gt, qi, 0.5), eval_img(a, gt, qi, 0.5));
  }
}

TEST(MarginPropertyTest, ZeroLossRegion) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> um(0.05, 1.0);
  int in_region = 0;
  for (int i = 0; i < 1000; ++i) {
    const Vec a = random_vec(rng, 8, true), p = random_vec(rng, 8, true), n = random_vec(rng, 8, true);
    const double m = um(rng);
    if (dist(a, p) + m <= dist(a, n)) {
      ++in_region;
      EXPECT_EQ(eval_img(a, p, n, m), 0.0);
    }
  }
  EXPECT_GT(in_region, 50);
}

TEST(MarginPropertyTest, MonotoneInMargin) {
  std::mt19937_64 rng(14);
  for (int i = 0; i < 1000; ++i) {
    const Vec a = random_vec(rng, 8, true), p = random_vec(rng, 8, true), n = random_vec(rng, 8, true);
    double prev = -1;
    for (double m : {0.1, 0.2, 0.5, 0.8, 1.5}) {
      const double v = eval_img(a, p, n, m);
      EXPECT_GE(v, prev);
      prev = v;
    }
  }
}

// --- batch loss ------------------------------------------------------------

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_len = 16;
  c.d_sent = 8;
  return c;
}

struct BatchFixture {
  ModelConfig config = small_config();
  HashedSentenceEmbedder embedder{8};
  Vocab vocab;
  std::vector<TrainingExample> batch;

  BatchFixture() {
    const auto world = toyworld::generate_world(4, 20, 12);
    std::vector<std::string> text;
    for (const auto& ex : world) {
      text.push_back(ex.question);
      text.push_back(render(ex.constraint));
    }
    vocab = Vocab::build(text);
    for (int i = 0; i < 4; ++i) batch.push_back(prepare_example(world[i], vocab, config, embedder));
  }
};

TEST(BatchLossTest, PreparedExampleLayout) {
  BatchFixture f;
  const auto& ex = f.batch[0];
  EXPECT_EQ(ex.input_ids.front(), Vocab::kBos);
  EXPECT_EQ(ex.target_ids.back(), Vocab::kEos);
  EXPECT_EQ(ex.input_ids.size(), ex.target_ids.size());
  EXPECT_TRUE(std::equal(ex.input_ids.begin() + 1, ex.input_ids.end(), ex.target_ids.begin()));
  EXPECT_EQ(ex.q_gt.dim(), 8u);
  HashedSentenceEmbedder wrong(16);
  EXPECT_THROW(prepare_example(toyworld::generate_world(4, 1, 12)[0], f.vocab, f.config, wrong),
               DimensionError);
}

TEST(BatchLossTest, BreakdownInvariants) {
  BatchFixture f;
  QuestionModel<double> model(f.config, f.vocab.size(), 3);
  for (Variant v : {Variant::kB, Variant::kI, Variant::kT, Variant::kIT}) {
    LossConfig lc;
    lc.variant = v;
    Graph<double> g(false);
    const auto [total, b] = batch_loss<double>(g, model, f.batch, lc, 1);
    EXPECT_GE(b.cl_img, 0.0);
    EXPECT_GE(b.cl_txt, 0.0);
    EXPECT_NEAR(b.total, (b.beta_used * b.cl + b.cel) / 2, 1e-9);
    EXPECT_EQ(b.total, total.value().item());
    if (v == Variant::kIT || v == Variant::kB) {
      EXPECT_NEAR(b.cl, 0.2 * b.cl_txt + 0.8 * b.cl_img, 1e-9);
    }
    if (v == Variant::kI) {
      EXPECT_EQ(b.cl, b.cl_img);
    }
    if (v == Variant::kT) {
      EXPECT_EQ(b.cl, b.cl_txt);
    }
    if (v != Variant::kB) {
      EXPECT_EQ(b.beta_used, 100.0);
    }
  }
  Graph<double> g(false);
  EXPECT_THROW(batch_loss<double>(g, model, {}, LossConfig{}, 0), ValueError);
}

TEST(BatchLossTest, VariantBEqualsFullObjectiveWithZeroBeta) {
  BatchFixture f;
  QuestionModel<double> model(f.config, f.vocab.size(), 3);
  LossConfig b;
  b.variant = Variant::kB;
  LossConfig zero;
  zero.beta = BetaSchedule::fixed(0.0);
  Graph<double> g(false);
  EXPECT_EQ(batch_loss<double>(g, model, f.batch, b, 0).second.total,
            batch_loss<double>(g, model, f.batch, zero, 0).second.total);
}

TEST(BatchLossTest, VariantBBlocksContrastiveGradient) {
  BatchFixture f;
  QuestionModel<double> model(f.config, f.vocab.size(), 3);
  LossConfig lc;
  lc.variant = Variant::kB;
  Graph<double> g;
  g.backward(batch_loss<double>(g, model, f.batch, lc, 0).first);
  for (const char* name : {"head.q_w", "head.q_b"}) {
    const auto& gr = model.param(name).grad;
    EXPECT_TRUE(std::all_of(gr.begin(), gr.end(), [](double v) { return v == 0.0; })) << name;
  }
  model.zero_grad();
  lc.variant = Variant::kIT;
  Graph<double> h;
  h.backward(batch_loss<double>(h, model, f.batch, lc, 0).first);
  const auto& gr = model.param("head.q_w").grad;
  EXPECT_TRUE(std::any_of(gr.begin(), gr.end(), [](double v) { return v != 0.0; }));
}

TEST(BatchLossTest, FullGradientMatchesFiniteDifferences) {
  BatchFixture f;
  QuestionModel<double> model(f.config, f.vocab.size(), 5);
  LossConfig lc;
  auto loss = [&](Graph<double>& g) { return batch_loss<double>(g, model, f.batch, lc, 0).first; };
  const auto check = testing::check_params(
      model.trainable(),
      [&] {
        Graph<double> g;
        g.backward(loss(g));
      },
      [&] {
        Graph<double> g(false);
        return loss(g).value().item();
      });
  EXPECT_LT(check.worst(), 1e-5);
  std::size_t k = 0;
  for (const auto& [name, _] : model.params()) {
    EXPECT_LT(check.per_param[k++], 1e-5) << name;
  }
}

}  // namespace
}  // namespace convqg
