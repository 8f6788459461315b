// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "tokshift/rl_weighting.hpp"

using namespace tokshift;

TEST(GroupAdvantage, Examples) {
  EXPECT_EQ(group_advantage({{1, 0, 0, 1}}), (std::vector<double>{1, -1, -1, 1}));
  EXPECT_EQ(group_advantage({{0, 1}}), (std::vector<double>{-1, 1}));
  EXPECT_THROW(group_advantage({{1, 1, 1, 1}}), GroupDegenerate);
  EXPECT_THROW(group_advantage({{1}}), PreconditionError);
}

TEST(GroupAdvantage, StandardizedProperty) {
  std::mt19937_64 g(1);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int i = 0; i < 1000; ++i) {
    RewardGroup grp;
    grp.rewards.resize(2 + g() % 30);
    for (auto& r : grp.rewards) r = u(g);
    const auto a = group_advantage(grp);
    double m = 0, v = 0;
    for (double x : a) m += x;
    m /= a.size();
    for (double x : a) v += (x - m) * (x - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / a.size(), 1.0, 1e-12);
  }
}

TEST(DynamicSampling, Examples) {
  EXPECT_FALSE(dynamic_sampling_admissible(0, 8));
  EXPECT_FALSE(dynamic_sampling_admissible(8, 8));
  EXPECT_TRUE(dynamic_sampling_admissible(3, 8));
}

TEST(K3, Examples) {
  EXPECT_EQ(k3_kl_estimate(1.0), 0.0);
  EXPECT_NEAR(k3_kl_estimate(2.0), 2.0 - std::log(2.0) - 1.0, 1e-15);
  EXPECT_NEAR(k3_kl_estimate(2.0), 0.306853, 1e-6);
  EXPECT_NEAR(k3_kl_estimate(0.5), 0.193147, 1e-6);
  EXPECT_THROW(k3_kl_estimate(0.0), NonPositiveRatio);
  EXPECT_THROW(k3_kl_estimate(-1.0), NonPositiveRatio);
}

TEST(K3, NonNegativeProperty) {
  std::mt19937_64 g(2);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int i = 0; i < 10000; ++i) EXPECT_GE(k3_kl_estimate(std::exp(u(g))), 0.0);
}

TEST(SigmoidWeight, Examples) {
  EXPECT_EQ(sigmoid_weight(5.0, {0.3, 0.0}), 1.0);
  EXPECT_EQ(sigmoid_weight(0.0, {0.3, 7.0}), 1.0);
  EXPECT_NEAR(sigmoid_weight(std::log(3.0), {0.3, 1.0}), 1.075, 1e-9);
  EXPECT_THROW(sigmoid_weight(-0.1, {}), PreconditionError);
}

TEST(SigmoidWeight, RangeProperty) {
  std::mt19937_64 g(3);
  std::uniform_real_distribution<double> u(0, 50), s(-2, 2), a(-5, 5);
  for (int i = 0; i < 10000; ++i) {
    const WeightingParams p{s(g), a(g)};
    const double w = sigmoid_weight(u(g), p);
    EXPECT_GE(w, 1.0 - std::abs(p.s) / 2 - 1e-15);
    EXPECT_LE(w, 1.0 + std::abs(p.s) / 2 + 1e-15);
  }
  EXPECT_TRUE(std::isfinite(sigmoid(-1000.0)));
  EXPECT_EQ(sigmoid(1000.0), 1.0);
}

TEST(WeightedAdvantage, Examples) {
  const std::vector<double> adv{1, -2, 0}, kl{0.5, 1.0, 3.0};
  EXPECT_EQ(divergence_weighted_advantage(adv, kl, {0.3, 0.0}), adv);
  EXPECT_EQ(divergence_weighted_advantage(adv, kl, {0.3, 2.0})[2], 0.0);
  const std::vector<double> one{1}, ln3{std::log(3.0)};
  EXPECT_NEAR(divergence_weighted_advantage(one, ln3, {0.3, 1.0})[0], 1.075, 1e-9);
  const std::vector<double> two{1, 2};
  EXPECT_THROW(divergence_weighted_advantage(two, ln3, {}), LengthMismatch);
}

TEST(Dapo, TokenExamples) {
  const ClipParams c{0.2, 0.28};
  EXPECT_EQ(dapo_token_objective(1.0, 0.7, c), 0.7);
  EXPECT_NEAR(dapo_token_objective(1.5, 1.0, c), 1.28, 1e-15);
  EXPECT_NEAR(dapo_token_objective(0.5, -1.0, c), -0.8, 1e-15);
  EXPECT_THROW(dapo_token_objective(0.0, 1.0, c), NonPositiveRatio);
}

TEST(Dapo, TokenBoundProperty) {
  // min(rA, clip(r)A) never exceeds the unclipped term
  std::mt19937_64 g(4);
  std::uniform_real_distribution<double> r(0.01, 3), a(-3, 3);
  for (int i = 0; i < 10000; ++i) {
    const double x = r(g), y = a(g);
    EXPECT_LE(dapo_token_objective(x, y, {}), x * y + 1e-15);
  }
}

TEST(Dapo, GroupAveragesOverTokens) {
  const std::vector<ResponseTokens> rs{{{1.0, 1.0, 1.0}, {1, 1, 1}}, {{1.0}, {-1}}};
  EXPECT_NEAR(dapo_group_objective(rs, {}), 0.5, 1e-15);
  EXPECT_THROW(dapo_group_objective({}, {}), EmptyInput);
  EXPECT_THROW(dapo_group_objective({{{1.0}, {}}}, {}), LengthMismatch);
}

TEST(AlphaSchedule, Examples) {
  const AlphaSchedule s{100, 50.0, 200};
  EXPECT_EQ(alpha_schedule(10, s), 0.0);
  EXPECT_EQ(alpha_schedule(100, s), 0.0);
  EXPECT_EQ(alpha_schedule(200, s), 50.0);
  EXPECT_EQ(alpha_schedule(150, s), 25.0);
  EXPECT_EQ(alpha_schedule(900, s), 50.0);
  EXPECT_THROW(alpha_schedule(0, {200, 1.0, 100}), ScheduleInvalid);
}

TEST(KlProvenance, RoundTrip) {
  for (const auto p : {KlProvenance::SampledToken, KlProvenance::FullDistribution, KlProvenance::Unspecified})
    EXPECT_EQ(parse_kl_provenance(to_string(p)), p);
  EXPECT_THROW(parse_kl_provenance("guess"), PreconditionError);
}

TEST(WeightRows, Evaluate) {
  const auto out = evaluate_weight_rows({{1.5, 1.0, std::log(3.0)}}, {0.3, 1.0}, {});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_NEAR(out[0].weight, 1.075, 1e-12);
  EXPECT_NEAR(out[0].weighted_advantage, 1.075, 1e-12);
  EXPECT_NEAR(out[0].objective, 1.28 * 1.075, 1e-12);
}
