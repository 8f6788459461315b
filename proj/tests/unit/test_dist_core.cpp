// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "tokshift/dist_core.hpp"
#include "tokshift/errors.hpp"

using namespace tokshift;

namespace {

constexpr double kJsHalfVsPoint = 0.2157615543388357;  // mpmath, 30 digits

std::vector<double> probs_of(const Distribution& d) { return {d.probs().begin(), d.probs().end()}; }
std::vector<TokenId> support_of(const Distribution& d) { return {d.support().begin(), d.support().end()}; }

// Straight-line JS from dense vectors.
double js_oracle(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0) s += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0) s += 0.5 * q[i] * std::log(q[i] / m);
  }
  return s;
}

Distribution random_dist(std::mt19937_64& g, std::size_t v, double zero_rate) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> w(v);
  for (auto& x : w) x = u(g) < zero_rate ? 0.0 : std::exp(-20 * u(g));
  if (std::all_of(w.begin(), w.end(), [](double x) { return x == 0; })) w[g() % v] = 1;
  return normalize(w);
}

}  // namespace

TEST(Normalize, DropsZerosAndRescales) {
  const auto d = normalize({2, 2, 0, 0});
  EXPECT_EQ(support_of(d), (std::vector<TokenId>{0, 1}));
  EXPECT_EQ(probs_of(d), (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(d.vocab_size(), 4u);
}

TEST(Normalize, PointMassAndAlreadyNormalized) {
  EXPECT_EQ(normalize({1, 0, 0}), Distribution::point_mass(0, 3));
  const auto d = normalize({0.3, 0.6, 0.1});
  EXPECT_NEAR(d.prob(0), 0.3, 1e-15);
  EXPECT_NEAR(d.prob(1), 0.6, 1e-15);
  EXPECT_NEAR(d.prob(2), 0.1, 1e-15);
}

TEST(Normalize, AllZeroThrows) {
  EXPECT_THROW(normalize({0, 0, 0}), AllZeroMass);
  EXPECT_THROW(normalize({-1, 2}), PreconditionError);
}

TEST(Distribution, FromMassesValidates) {
  EXPECT_THROW(Distribution::from_masses({{3, 1.0}}, 3), PreconditionError);
  EXPECT_THROW(Distribution::from_masses({{1, 1.0}, {1, 2.0}}, 3), PreconditionError);
  const auto d = Distribution::from_masses({{2, 1.0}, {0, 3.0}}, 4);
  EXPECT_EQ(support_of(d), (std::vector<TokenId>{0, 2}));
  EXPECT_DOUBLE_EQ(d.prob(0), 0.75);
  EXPECT_EQ(d.prob(1), 0.0);
}

TEST(Normalize, SumsToOneProperty) {
  std::mt19937_64 g(1);
  for (int i = 0; i < 2000; ++i) {
    const auto d = random_dist(g, 1 + g() % 64, 0.4);
    long double s = 0;
    for (const double p : d.probs()) {
      s += p;
      EXPECT_GT(p, 0.0);
    }
    EXPECT_NEAR(static_cast<double>(s), 1.0, 1e-12);
    EXPECT_TRUE(std::is_sorted(d.support().begin(), d.support().end()));
    EXPECT_EQ(std::set<TokenId>(d.support().begin(), d.support().end()).size(), d.size());
  }
}

TEST(TopP, CrossingTokenIncluded) {
  TruncationSpec s;
  s.top_p = 0.7;
  const auto t = truncate_top_p(normalize({0.6, 0.3, 0.1}), s);
  EXPECT_EQ(support_of(t), (std::vector<TokenId>{0, 1}));
  EXPECT_NEAR(t.prob(0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(t.prob(1), 1.0 / 3.0, 1e-15);
}

TEST(TopP, TieBrokenByLowerId) {
  TruncationSpec s;
  s.top_p = 0.4;
  EXPECT_EQ(truncate_top_p(normalize({0.5, 0.5}), s), Distribution::point_mass(0, 2));
}

TEST(TopP, ExactThresholdStops) {
  TruncationSpec s;
  s.top_p = 0.5;
  EXPECT_EQ(truncate_top_p(normalize({0.25, 0.5, 0.25}), s), Distribution::point_mass(1, 3));
}

TEST(TopP, TopKAppliedFirst) {
  TruncationSpec s;
  s.top_k = 2;
  const auto t = truncate_top_p(normalize({0.1, 0.5, 0.2, 0.2}), s);
  EXPECT_EQ(support_of(t), (std::vector<TokenId>{1, 2}));
  s.top_p = 0.7;  // of the renormalized top-2: 5/7 >= 0.7
  EXPECT_EQ(truncate_top_p(normalize({0.1, 0.5, 0.2, 0.2}), s), Distribution::point_mass(1, 4));
}

TEST(TopP, InvalidSpec) {
  TruncationSpec s;
  s.top_p = 0.0;
  EXPECT_THROW(s.validate(), SpecInvalid);
  s.top_p = 1.5;
  EXPECT_THROW(s.validate(), SpecInvalid);
  s.top_p = 0.5;
  s.top_k = 0;
  EXPECT_THROW(s.validate(), SpecInvalid);
}

TEST(TopP, IdentityProperty) {
  std::mt19937_64 g(2);
  for (int i = 0; i < 500; ++i) {
    const auto d = random_dist(g, 1 + g() % 20, 0.3);
    EXPECT_EQ(truncate_top_p(d, {}), d);
  }
}

TEST(TopP, OracleProperty) {
  // oracle: sort dense entries, walk until cumulative/total >= p
  std::mt19937_64 g(3);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const auto d = random_dist(g, 2 + g() % 12, 0.2);
    TruncationSpec s;
    s.top_p = u(g);
    const auto t = truncate_top_p(d, s);
    auto dense = d.dense();
    std::vector<TokenId> ids(dense.size());
    std::iota(ids.begin(), ids.end(), 0);
    std::sort(ids.begin(), ids.end(), [&](TokenId a, TokenId b) { return dense[a] != dense[b] ? dense[a] > dense[b] : a < b; });
    double cum = 0;
    std::set<TokenId> keep;
    for (const auto id : ids) {
      if (dense[id] == 0) break;
      keep.insert(id);
      cum += dense[id];
      if (cum >= s.top_p - 1e-15) break;
    }
    EXPECT_EQ(std::set<TokenId>(t.support().begin(), t.support().end()), keep);
  }
}

TEST(Js, Examples) {
  const auto p = normalize({0.5, 0.5});
  EXPECT_EQ(js_divergence(p, p), 0.0);
  EXPECT_NEAR(js_divergence(Distribution::point_mass(0, 3), Distribution::point_mass(2, 3)), kLn2, 1e-15);
  EXPECT_NEAR(js_divergence(p, normalize({1, 0})), kJsHalfVsPoint, 1e-12);
}

TEST(Js, OracleProperty) {
  std::mt19937_64 g(4);
  for (int i = 0; i < 3000; ++i) {
    const std::size_t v = 1 + g() % 16;
    const auto p = random_dist(g, v, 0.3), q = random_dist(g, v, 0.3);
    EXPECT_NEAR(js_divergence(p, q), js_oracle(p.dense(), q.dense()), 1e-12);
  }
}

TEST(Js, SymmetryAndRangeProperty) {
  std::mt19937_64 g(5);
  for (int i = 0; i < 10000; ++i) {
    const std::size_t v = 1 + g() % 16;
    const auto p = random_dist(g, v, 0.3), q = random_dist(g, v, 0.3);
    const double a = js_divergence(p, q);
    EXPECT_NEAR(a, js_divergence(q, p), 1e-12);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, kLn2 + 1e-12);
    EXPECT_NEAR(skew_js_divergence(p, q, 0.5), a, 1e-12);
  }
}

TEST(Js, VocabularyMismatchRejected) {
  EXPECT_THROW(js_divergence(normalize({1, 1}), normalize({1, 1, 1})), PreconditionError);
}

TEST(Kl, Examples) {
  const auto p = normalize({0.2, 0.8});
  EXPECT_EQ(kl_divergence(p, p), 0.0);
  EXPECT_NEAR(kl_divergence(normalize({1, 0}), normalize({0.5, 0.5})), kLn2, 1e-15);
  EXPECT_THROW(kl_divergence(normalize({0.5, 0.5}), normalize({1, 0})), AbsoluteContinuityViolation);
}

TEST(Kl, NonNegativeProperty) {
  std::mt19937_64 g(6);
  for (int i = 0; i < 10000; ++i) {
    const std::size_t v = 1 + g() % 16;
    const auto p = random_dist(g, v, 0.3), q = random_dist(g, v, 0.0);
    EXPECT_GE(kl_divergence(p, q), -1e-12);
  }
}

TEST(SkewJs, Examples) {
  const auto p = normalize({0.5, 0.5}), q = normalize({1, 0});
  EXPECT_NEAR(skew_js_divergence(p, q, 0.5), kJsHalfVsPoint, 1e-12);
  EXPECT_EQ(skew_js_divergence(p, q, 0.0), 0.0);
  EXPECT_EQ(skew_js_divergence(p, q, 1.0), 0.0);
  EXPECT_THROW(skew_js_divergence(p, q, 1.5), PreconditionError);
}

TEST(SkewJs, OracleProperty) {
  std::mt19937_64 g(7);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 2000; ++i) {
    const std::size_t v = 1 + g() % 10;
    const auto p = random_dist(g, v, 0.3), q = random_dist(g, v, 0.3);
    const double a = u(g);
    const auto pd = p.dense(), qd = q.dense();
    double s = 0;
    for (std::size_t k = 0; k < v; ++k) {
      const double m = a * pd[k] + (1 - a) * qd[k];
      if (pd[k] > 0) s += a * pd[k] * std::log(pd[k] / m);
      if (qd[k] > 0) s += (1 - a) * qd[k] * std::log(qd[k] / m);
    }
    EXPECT_NEAR(skew_js_divergence(p, q, a), s, 1e-12);
  }
}

TEST(Entropy, Examples) {
  EXPECT_EQ(entropy(Distribution::point_mass(1, 4)), 0.0);
  EXPECT_NEAR(entropy(Distribution::uniform(4)), std::log(4.0), 1e-15);
  EXPECT_NEAR(entropy(normalize({0.5, 0.5})), kLn2, 1e-15);
  for (std::size_t v = 2; v <= 64; ++v) EXPECT_NEAR(entropy(Distribution::uniform(v)), std::log(double(v)), 1e-12);
}

TEST(Rank, Examples) {
  EXPECT_EQ(rank_of(normalize({0.1, 0.7, 0.2}), 1), 1u);
  EXPECT_EQ(rank_of(normalize({0.2, 0.3, 0.5}), 0), 3u);
  EXPECT_EQ(rank_of(normalize({0.4, 0.4, 0.2}), 1), 2u);
  // off-support tokens after the support, by id
  const auto d = normalize({0, 0.6, 0, 0.4});
  EXPECT_EQ(rank_of(d, 0), 3u);
  EXPECT_EQ(rank_of(d, 2), 4u);
}

TEST(Rank, BijectionProperty) {
  std::mt19937_64 g(8);
  for (int i = 0; i < 500; ++i) {
    const std::size_t v = 1 + g() % 20;
    const auto d = random_dist(g, v, 0.4);
    std::set<std::size_t> ranks;
    for (TokenId t = 0; t < v; ++t) ranks.insert(rank_of(d, t));
    EXPECT_EQ(ranks.size(), v);
    EXPECT_EQ(*ranks.begin(), 1u);
    EXPECT_EQ(*ranks.rbegin(), v);
  }
}

TEST(TopK, Examples) {
  EXPECT_EQ(top_k_set(normalize({0.6, 0.4}), 1), (std::vector<TokenId>{0}));
  EXPECT_EQ(top_k_set(normalize({0.6, 0.4}), 2), (std::vector<TokenId>{0, 1}));
  EXPECT_EQ(top_k_set(normalize({0.5, 0.5, 0}), 2), (std::vector<TokenId>{0, 1}));
  // padding with off-support ids ascending
  EXPECT_EQ(top_k_set(normalize({0, 0, 1, 0}), 3), (std::vector<TokenId>{0, 1, 2}));
}

TEST(CompensatedSum, BeatsNaiveSummation) {
  CompensatedSum s;
  s += 1.0;
  for (int i = 0; i < 1000000; ++i) s += 1e-20L;
  s += -1.0;
  EXPECT_NEAR(static_cast<double>(s.value()), 1e-14, 1e-20);
}
