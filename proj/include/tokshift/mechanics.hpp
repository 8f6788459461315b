// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file mechanics.hpp
 * @brief How probability mass moves at divergent positions: top-k candidate
 *        overlap, base ranks of the RL top tokens, promotion of low-probability
 *        tokens, evolution across checkpoints, and the weight-level gap ratio.
 *
 * "Qualifying" positions are those whose record js strictly exceeds the
 * threshold. Set-valued and rank-valued quantities use the untruncated
 * distributions stored in AnalyzedPosition.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tokshift/dist_core.hpp"
#include "tokshift/policies.hpp"
#include "tokshift/shift_analysis.hpp"

namespace tokshift {

inline constexpr double kDivergentThreshold = 0.1;

namespace detail {

inline void check_js_threshold(double t) {
  if (!(t > 0.0 && t < kLn2)) throw PreconditionError("js threshold must lie in (0, ln 2)");
}

inline std::vector<const AnalyzedPosition*> qualifying(const std::vector<AnalyzedPosition>& positions,
                                                       double js_thresh) {
  std::vector<const AnalyzedPosition*> out;
  for (const auto& p : positions) {
    if (p.record.js > js_thresh) out.push_back(&p);
  }
  if (out.empty()) throw NoQualifyingPositions();
  return out;
}

inline std::size_t intersection_size(const std::vector<TokenId>& a, const std::vector<TokenId>& b) {
  std::size_t n = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Top-k overlap
// ---------------------------------------------------------------------------

struct OverlapCurve {
  double js_thresh = kDivergentThreshold;
  std::vector<double> overlap;  // overlap[k-1] = mean |topk(base) & topk(rl)| / k
  std::size_t positions = 0;
};

inline OverlapCurve topk_overlap_curve(const std::vector<AnalyzedPosition>& positions, double js_thresh,
                                       std::size_t max_k) {
  detail::check_js_threshold(js_thresh);
  if (max_k < 1) throw PreconditionError("K must be >= 1");
  const auto q = detail::qualifying(positions, js_thresh);
  for (const auto* p : q) {
    if (max_k > p->base.vocab_size()) throw PreconditionError("K exceeds the vocabulary size");
  }
  OverlapCurve c;
  c.js_thresh = js_thresh;
  c.positions = q.size();
  for (std::size_t k = 1; k <= max_k; ++k) {
    CompensatedSum s;
    for (const auto* p : q) {
      const auto n = detail::intersection_size(top_k_set(p->base, k), top_k_set(p->rl, k));
      s += static_cast<long double>(n) / static_cast<long double>(k);
    }
    c.overlap.push_back(static_cast<double>(s.value() / static_cast<long double>(q.size())));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Base ranks of RL top-j tokens
// ---------------------------------------------------------------------------

struct RankHistograms {
  double js_thresh = kDivergentThreshold;
  std::size_t positions = 0;
  /// by_j[j-1][r-1] = number of positions where RL's j-th token has base rank r.
  std::vector<std::vector<std::size_t>> by_j;
};

inline RankHistograms base_rank_distribution_of_rl_topk(const std::vector<AnalyzedPosition>& positions,
                                                        double js_thresh, std::size_t m = 3) {
  detail::check_js_threshold(js_thresh);
  if (m < 1) throw PreconditionError("m must be >= 1");
  const auto q = detail::qualifying(positions, js_thresh);
  const std::size_t v = q.front()->base.vocab_size();
  if (m > v) throw PreconditionError("m exceeds the vocabulary size");
  RankHistograms h;
  h.js_thresh = js_thresh;
  h.positions = q.size();
  h.by_j.assign(m, std::vector<std::size_t>(v, 0));
  for (const auto* p : q) {
    if (p->base.vocab_size() != v) throw PreconditionError("positions have mixed vocabulary sizes");
    const auto rl_ranked = ranked_tokens(p->rl, m);
    for (std::size_t j = 0; j < m; ++j) ++h.by_j[j][rank_of(p->base, rl_ranked[j]) - 1];
  }
  return h;
}

// ---------------------------------------------------------------------------
// Tail promotion
// ---------------------------------------------------------------------------

struct TailPromotion {
  double js_thresh = kDivergentThreshold;
  double cutoff = 0.01;
  std::size_t positions = 0;
  /// (tau, fraction of qualifying positions whose RL top-1 has base prob < tau)
  std::vector<std::pair<double, double>> fraction_below;
  /// RL probability of the RL top-1 token over the subset with base prob < cutoff.
  Histogram rl_prob_histogram;
  std::size_t subset_size = 0;
};

inline TailPromotion tail_promotion_stats(const std::vector<AnalyzedPosition>& positions, double js_thresh,
                                          const std::vector<double>& thresholds, double cutoff = 0.01,
                                          const HistogramSpec& rl_prob_bins = HistogramSpec::linear(0.0, 1.0, 10)) {
  detail::check_js_threshold(js_thresh);
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > 0.0 && thresholds[i] < 1.0)) {
      throw PreconditionError("thresholds must lie in (0, 1)");
    }
    if (i > 0 && !(thresholds[i] > thresholds[i - 1])) {
      throw PreconditionError("thresholds must be ascending");
    }
  }
  const auto q = detail::qualifying(positions, js_thresh);
  std::vector<double> base_p, rl_p;
  for (const auto* p : q) {
    const TokenId top1 = ranked_tokens(p->rl, 1).front();
    base_p.push_back(p->base.prob(top1));
    rl_p.push_back(p->rl.prob(top1));
  }
  TailPromotion t;
  t.js_thresh = js_thresh;
  t.cutoff = cutoff;
  t.positions = q.size();
  for (const double tau : thresholds) {
    const auto n = std::count_if(base_p.begin(), base_p.end(), [tau](double b) { return b < tau; });
    t.fraction_below.emplace_back(tau, static_cast<double>(n) / static_cast<double>(q.size()));
  }
  std::vector<double> subset;
  for (std::size_t i = 0; i < base_p.size(); ++i) {
    if (base_p[i] < cutoff) subset.push_back(rl_p[i]);
  }
  t.subset_size = subset.size();
  t.rl_prob_histogram = histogram_of(subset, rl_prob_bins);
  return t;
}

// ---------------------------------------------------------------------------
// Checkpoint evolution
// ---------------------------------------------------------------------------

using PositionKey = std::pair<std::string, std::size_t>;  // (seq_id, pos)

inline double jaccard(const std::set<PositionKey>& a, const std::set<PositionKey>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& x : a) inter += b.count(x);
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

inline std::set<PositionKey> divergent_set(const std::vector<TokenShiftRecord>& records,
                                           double js_thresh = kDivergentThreshold) {
  std::set<PositionKey> s;
  for (const auto& r : records) {
    if (r.js > js_thresh) s.emplace(r.seq_id, r.pos);
  }
  return s;
}

enum class EvolutionMode { AgainstFirst, Consecutive };

struct CheckpointStats {
  std::size_t index = 0;
  std::vector<std::pair<double, double>> percentiles;
  std::size_t divergent_count = 0;
  double jaccard_with_final = 0.0;
};

/// Divergence of every checkpoint against the first one (or its predecessor
/// in Consecutive mode; checkpoint 0 then compares with itself) along
/// trajectories generated by the final model.
inline std::vector<CheckpointStats> checkpoint_evolution(const std::vector<PolicyPtr>& checkpoints,
                                                         const std::vector<Trajectory>& trajectories,
                                                         const PercentileSpec& percentiles,
                                                         const TruncationSpec& trunc = {},
                                                         EvolutionMode mode = EvolutionMode::AgainstFirst,
                                                         double js_thresh = kDivergentThreshold,
                                                         std::size_t jobs = 1) {
  if (checkpoints.size() < 2) throw PreconditionError("need at least two checkpoints");
  percentiles.validate();
  std::vector<std::vector<TokenShiftRecord>> recs(checkpoints.size());
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    const auto& ref = mode == EvolutionMode::AgainstFirst ? checkpoints.front()
                                                          : checkpoints[i == 0 ? 0 : i - 1];
    recs[i] = records_of(analyze_trajectories(*ref, *checkpoints[i], trajectories, trunc, jobs));
  }
  const auto final_set = divergent_set(recs.back(), js_thresh);
  std::vector<CheckpointStats> out;
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    CheckpointStats s;
    s.index = i;
    s.percentiles = js_percentiles(recs[i], percentiles);
    const auto set_i = divergent_set(recs[i], js_thresh);
    s.divergent_count = set_i.size();
    s.jaccard_with_final = jaccard(set_i, final_set);
    out.push_back(std::move(s));
  }
  return out;
}

/// Same, sampling `n_trajectories` responses from `reference` first.
inline std::vector<CheckpointStats> checkpoint_evolution(const std::vector<PolicyPtr>& checkpoints,
                                                         const PolicyProvider& reference,
                                                         const GenerationLimits& limits,
                                                         std::size_t n_trajectories, std::uint64_t seed,
                                                         const PercentileSpec& percentiles,
                                                         const TruncationSpec& trunc = {},
                                                         EvolutionMode mode = EvolutionMode::AgainstFirst,
                                                         double js_thresh = kDivergentThreshold,
                                                         std::size_t jobs = 1) {
  std::vector<Trajectory> trajs;
  for (std::size_t i = 0; i < n_trajectories; ++i) {
    trajs.push_back(sample_trajectory(reference, limits, rng::derive_seed(seed, i), trunc,
                                      "seq-" + std::to_string(i)));
  }
  return checkpoint_evolution(checkpoints, trajs, percentiles, trunc, mode, js_thresh, jobs);
}

// ---------------------------------------------------------------------------
// Weight-level gap
// ---------------------------------------------------------------------------

/// sum|a - b| / (sum|a| + sum|b|), in [0, 1].
inline double weight_gap_ratio(std::span<const double> original, std::span<const double> tuned) {
  if (original.size() != tuned.size()) throw LengthMismatch(original.size(), tuned.size());
  CompensatedSum diff, na, nb;
  for (std::size_t i = 0; i < original.size(); ++i) {
    diff += std::fabs(static_cast<long double>(original[i]) - static_cast<long double>(tuned[i]));
    na += std::fabs(static_cast<long double>(original[i]));
    nb += std::fabs(static_cast<long double>(tuned[i]));
  }
  const long double denom = na.value() + nb.value();
  if (!(denom > 0.0L)) throw DegenerateInput("both weight vectors are all zero");
  return static_cast<double>(std::clamp(diff.value() / denom, 0.0L, 1.0L));
}

/// Reads a weight vector: a JSON array of numbers if the file starts with
/// '[', otherwise raw little-endian float32.
inline std::vector<double> load_weight_vector(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PreconditionError("cannot open weight file: " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto first = std::find_if(bytes.begin(), bytes.end(),
                                  [](char c) { return c != ' ' && c != '\n' && c != '\r' && c != '\t'; });
  std::vector<double> out;
  if (first != bytes.end() && *first == '[') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(1, e.what());
    }
    for (const auto& v : j) {
      if (!v.is_number()) throw ParseError(1, "weight array must contain only numbers");
      out.push_back(v.get<double>());
    }
    return out;
  }
  if (bytes.size() % 4 != 0) throw ParseError(1, "float32 file size is not a multiple of 4");
  out.reserve(bytes.size() / 4);
  for (std::size_t i = 0; i < bytes.size(); i += 4) {
    const auto b = reinterpret_cast<const unsigned char*>(bytes.data() + i);
    const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                               (static_cast<std::uint32_t>(b[2]) << 16) |
                               (static_cast<std::uint32_t>(b[3]) << 24);
    float f;
    std::memcpy(&f, &bits, sizeof f);
    out.push_back(f);
  }
  return out;
}

}  // namespace tokshift
