// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <random>

#include "tokshift/mechanics.hpp"

using namespace tokshift;

namespace {

AnalyzedPosition position(std::vector<double> base, std::vector<double> rl, std::string seq = "s",
                          std::size_t pos = 0) {
  AnalyzedPosition a{{}, normalize(base), normalize(rl)};
  a.record.seq_id = std::move(seq);
  a.record.pos = pos;
  a.record.seq_len = pos + 1;
  a.record.js = js_divergence(a.base, a.rl);
  return a;
}

std::vector<AnalyzedPosition> toy_positions(std::uint64_t seed, std::size_t v, double shift) {
  ToyPolicySpec s;
  s.vocab_size = v;
  s.seed = seed;
  s.temperature = 1.5;
  const auto pair = make_toy_pair(s, shift);
  std::vector<Trajectory> trajs;
  for (int i = 0; i < 30; ++i) trajs.push_back(sample_trajectory(*pair.rl, {20, {}}, i, {}, std::to_string(i)));
  return analyze_trajectories(*pair.base, *pair.rl, trajs, {});
}

}  // namespace

TEST(TopkOverlap, Examples) {
  const std::vector<AnalyzedPosition> same{position({0.5, 0.3, 0.2, 0}, {0.5, 0.3, 0.2, 0})};
  // identical distributions never qualify; use a tiny threshold on a near-identical pair instead
  EXPECT_THROW(topk_overlap_curve(same, 0.01, 2), NoQualifyingPositions);

  const std::vector<AnalyzedPosition> scaled{position({0.6, 0.3, 0.1, 0}, {0.4, 0.35, 0.25, 0})};
  for (const double o : topk_overlap_curve(scaled, 1e-3, 4).overlap) EXPECT_EQ(o, 1.0);

  const std::vector<AnalyzedPosition> disjoint{position({0.6, 0.4, 0, 0}, {0, 0, 0.6, 0.4})};
  const auto c = topk_overlap_curve(disjoint, 0.1, 2);
  EXPECT_EQ(c.overlap, (std::vector<double>{0.0, 0.0}));

  const std::vector<AnalyzedPosition> one_shared{position({0.6, 0.4, 0, 0}, {0.1, 0.5, 0.4, 0})};
  EXPECT_EQ(topk_overlap_curve(one_shared, 0.1, 2).overlap[1], 0.5);
  EXPECT_THROW(topk_overlap_curve(one_shared, 0.1, 5), PreconditionError);
}

TEST(TopkOverlap, BruteForceRecount) {
  const auto ps = toy_positions(5, 8, 0.8);
  const auto c = topk_overlap_curve(ps, 0.05, 8);
  for (std::size_t k = 1; k <= 8; ++k) {
    double sum = 0;
    std::size_t n = 0;
    for (const auto& p : ps) {
      if (!(p.record.js > 0.05)) continue;
      auto b = p.base.dense(), r = p.rl.dense();
      auto top = [k](const std::vector<double>& d) {
        std::vector<std::size_t> idx(d.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](auto x, auto y) { return d[x] != d[y] ? d[x] > d[y] : x < y; });
        return std::set<std::size_t>(idx.begin(), idx.begin() + k);
      };
      const auto tb = top(b), tr = top(r);
      std::size_t inter = 0;
      for (auto x : tb) inter += tr.count(x);
      sum += double(inter) / k;
      ++n;
    }
    EXPECT_EQ(c.positions, n);
    EXPECT_NEAR(c.overlap[k - 1], sum / n, 1e-12);
  }
  EXPECT_EQ(c.overlap.back(), 1.0);
}

TEST(RankHistograms, Examples) {
  // rl top-1 is base rank 2 everywhere
  std::vector<AnalyzedPosition> ps;
  for (int i = 0; i < 5; ++i) ps.push_back(position({0.5, 0.3, 0.2}, {0.2, 0.7, 0.1}));
  const auto h = base_rank_distribution_of_rl_topk(ps, 0.05, 3);
  EXPECT_EQ(h.by_j[0], (std::vector<std::size_t>{0, 5, 0}));
  EXPECT_EQ(h.by_j[1], (std::vector<std::size_t>{5, 0, 0}));
  EXPECT_EQ(h.by_j[2], (std::vector<std::size_t>{0, 0, 5}));
  EXPECT_THROW(base_rank_distribution_of_rl_topk(ps, 0.05, 4), PreconditionError);
}

TEST(RankHistograms, BruteForceRecount) {
  const auto ps = toy_positions(6, 6, 0.9);
  const auto h = base_rank_distribution_of_rl_topk(ps, 0.05, 3);
  for (std::size_t j = 1; j <= 3; ++j) {
    std::vector<std::size_t> want(6, 0);
    for (const auto& p : ps) {
      if (!(p.record.js > 0.05)) continue;
      const TokenId t = ranked_tokens(p.rl, j)[j - 1];
      const auto b = p.base.dense();
      std::size_t r = 1;
      for (std::size_t i = 0; i < b.size(); ++i) r += (b[i] > b[t] || (b[i] == b[t] && i < t));
      ++want[r - 1];
    }
    EXPECT_EQ(h.by_j[j - 1], want);
  }
}

TEST(TailPromotion, Examples) {
  std::vector<AnalyzedPosition> ps;
  for (int i = 0; i < 4; ++i) ps.push_back(position({0.6, 0.399, 0.001}, {0.2, 0.1, 0.7}));
  const auto t = tail_promotion_stats(ps, 0.1, {0.005, 0.01, 0.5}, 0.01);
  EXPECT_EQ(t.fraction_below[0].second, 1.0);
  EXPECT_EQ(t.fraction_below[1].second, 1.0);
  EXPECT_EQ(t.subset_size, 4u);
  EXPECT_EQ(t.rl_prob_histogram.counts[7], 4u);

  // rl top-1 has base prob >= 0.5 everywhere
  std::vector<AnalyzedPosition> qs;
  for (int i = 0; i < 4; ++i) qs.push_back(position({0.7, 0.2, 0.1}, {0.9, 0.05, 0.05}));
  for (const auto& [tau, f] : tail_promotion_stats(qs, 0.01, {0.1, 0.3, 0.5}).fraction_below) EXPECT_EQ(f, 0.0);
  EXPECT_THROW(tail_promotion_stats(qs, 0.01, {0.5, 0.1}), PreconditionError);
}

TEST(Jaccard, Examples) {
  const std::set<PositionKey> ab{{"a", 0}, {"b", 0}}, bc{{"b", 0}, {"c", 0}};
  EXPECT_NEAR(jaccard(ab, bc), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(jaccard(ab, ab), 1.0);
  EXPECT_EQ(jaccard({}, ab), 0.0);
}

TEST(CheckpointEvolution, BaseCheckpointAndFinal) {
  ToyPolicySpec s;
  s.vocab_size = 6;
  s.seed = 8;
  s.temperature = 2.0;
  ToyPolicySpec far = s;
  far.seed = 99;
  const auto base = build_toy_policy(s);
  const auto end = build_toy_policy(far);
  std::vector<PolicyPtr> cks{base, base, std::make_shared<InterpolatedPolicy>(base, end, 0.5), end};
  const auto st = checkpoint_evolution(cks, *end, {15, {}}, 20, 1, {});
  ASSERT_EQ(st.size(), 4u);
  ASSERT_GT(st.back().divergent_count, 0u);
  for (const auto& [p, v] : st[1].percentiles) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(st[1].jaccard_with_final, 0.0);
  EXPECT_EQ(st.back().jaccard_with_final, 1.0);
}

TEST(WeightGap, Examples) {
  const std::vector<double> a{1, 2, 3}, neg{-1, -2, -3};
  EXPECT_EQ(weight_gap_ratio(a, a), 0.0);
  EXPECT_EQ(weight_gap_ratio(a, neg), 1.0);
  const std::vector<double> o{1, 1}, t{1, 0};
  EXPECT_NEAR(weight_gap_ratio(o, t), 1.0 / 3.0, 1e-15);
  EXPECT_THROW(weight_gap_ratio(o, a), LengthMismatch);
  const std::vector<double> z{0, 0};
  EXPECT_THROW(weight_gap_ratio(z, z), DegenerateInput);
}

TEST(WeightGap, RangeProperty) {
  std::mt19937_64 g(13);
  std::normal_distribution<double> n(0, 1);
  for (int i = 0; i < 10000; ++i) {
    std::vector<double> a(1 + g() % 8), b(a.size());
    for (auto& x : a) x = n(g);
    for (auto& x : b) x = n(g);
    const double r = weight_gap_ratio(a, b);
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, 1.0);
  }
}

TEST(WeightVector, LoadsJsonAndFloat32) {
  const std::string j = ::testing::TempDir() + "w.json";
  const std::string f = ::testing::TempDir() + "w.f32";
  std::ofstream(j) << "[1.5, -2, 0.25]";
  {
    std::ofstream out(f, std::ios::binary);
    const float v[2] = {0.5f, -4.0f};
    out.write(reinterpret_cast<const char*>(v), sizeof v);
  }
  EXPECT_EQ(load_weight_vector(j), (std::vector<double>{1.5, -2, 0.25}));
  EXPECT_EQ(load_weight_vector(f), (std::vector<double>{0.5, -4.0}));
  std::remove(j.c_str());
  std::remove(f.c_str());
}
