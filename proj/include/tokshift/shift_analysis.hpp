// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file shift_analysis.hpp
 * @brief Per-token divergence records along trajectories and the aggregate
 *        statistics built on them (histograms, percentile curves, positional
 *        profiles, entropy grouping, token frequency tables).
 *
 * JS is measured on truncated distributions; entropies and ranks on the
 * untruncated ones. Positions index the response only (prompt excluded).
 */

#include <algorithm>
#include <cmath>
#include <future>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tokshift/dist_core.hpp"
#include "tokshift/policies.hpp"

namespace tokshift {

struct TokenShiftRecord {
  std::string seq_id;
  std::size_t pos = 0;
  std::size_t seq_len = 0;
  double norm_pos = 0.0;  // pos / seq_len, in [0, 1)
  TokenId sampled = 0;
  double js = 0.0;
  double base_entropy = 0.0;
  double rl_entropy = 0.0;
  std::size_t base_rank_of_sampled = 0;
  std::size_t rl_rank_of_sampled = 0;
};

/// A record together with the untruncated distributions it came from.
struct AnalyzedPosition {
  TokenShiftRecord record;
  Distribution base;
  Distribution rl;
};

inline std::vector<AnalyzedPosition> analyze_pair_detailed(const PolicyProvider& base,
                                                           const PolicyProvider& rl,
                                                           const Trajectory& trajectory,
                                                           const TruncationSpec& trunc) {
  trunc.validate();
  std::vector<AnalyzedPosition> out;
  const std::size_t n = trajectory.response.size();
  out.reserve(n);
  for (std::size_t pos = 0; pos < n; ++pos) {
    const Prefix prefix = trajectory.prefix_at(pos);
    Distribution pb = base.next_dist(prefix);
    Distribution pr = rl.next_dist(prefix);
    TokenShiftRecord r;
    r.seq_id = trajectory.seq_id;
    r.pos = pos;
    r.seq_len = n;
    r.norm_pos = static_cast<double>(pos) / static_cast<double>(n);
    r.sampled = trajectory.response[pos];
    r.js = js_divergence(truncate_top_p(pb, trunc), truncate_top_p(pr, trunc));
    r.base_entropy = entropy(pb);
    r.rl_entropy = entropy(pr);
    r.base_rank_of_sampled = rank_of(pb, r.sampled);
    r.rl_rank_of_sampled = rank_of(pr, r.sampled);
    out.push_back(AnalyzedPosition{std::move(r), std::move(pb), std::move(pr)});
  }
  return out;
}

inline std::vector<TokenShiftRecord> analyze_pair(const PolicyProvider& base, const PolicyProvider& rl,
                                                  const Trajectory& trajectory,
                                                  const TruncationSpec& trunc) {
  std::vector<TokenShiftRecord> out;
  for (auto& a : analyze_pair_detailed(base, rl, trajectory, trunc)) out.push_back(std::move(a.record));
  return out;
}

/// Analyzes many trajectories on up to `jobs` threads; output order follows
/// the input order regardless of scheduling.
inline std::vector<AnalyzedPosition> analyze_trajectories(const PolicyProvider& base,
                                                          const PolicyProvider& rl,
                                                          const std::vector<Trajectory>& trajectories,
                                                          const TruncationSpec& trunc,
                                                          std::size_t jobs = 1) {
  std::vector<std::vector<AnalyzedPosition>> parts(trajectories.size());
  jobs = std::max<std::size_t>(1, jobs);
  std::vector<std::future<void>> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t i = w; i < trajectories.size(); i += jobs) {
        parts[i] = analyze_pair_detailed(base, rl, trajectories[i], trunc);
      }
    }));
  }
  for (auto& f : workers) f.get();
  std::vector<AnalyzedPosition> out;
  for (auto& p : parts) {
    for (auto& a : p) out.push_back(std::move(a));
  }
  return out;
}

inline std::vector<TokenShiftRecord> records_of(const std::vector<AnalyzedPosition>& positions) {
  std::vector<TokenShiftRecord> out;
  out.reserve(positions.size());
  for (const auto& p : positions) out.push_back(p.record);
  return out;
}

// ---------------------------------------------------------------------------
// Order statistics
// ---------------------------------------------------------------------------

/// Linear interpolation between closest ranks on sorted data:
/// index = p/100 * (n-1).
inline double percentile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw EmptyInput();
  const double idx = p / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(idx));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = idx - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) throw EmptyInput();
  CompensatedSum s;
  for (const double x : v) s += x;
  return static_cast<double>(s.value() / static_cast<long double>(v.size()));
}

// ---------------------------------------------------------------------------
// Histograms and percentile curves
// ---------------------------------------------------------------------------

struct HistogramSpec {
  std::vector<double> edges;

  void validate() const {
    if (edges.size() < 2) throw SpecInvalid("histogram needs at least two edges");
    for (std::size_t i = 1; i < edges.size(); ++i) {
      if (!(edges[i] > edges[i - 1])) throw SpecInvalid("histogram edges must be strictly increasing");
    }
  }

  static HistogramSpec linear(double lo, double hi, std::size_t bins) {
    if (bins < 1 || !(hi > lo)) throw SpecInvalid("invalid linear histogram range");
    HistogramSpec s;
    for (std::size_t i = 0; i <= bins; ++i) {
      s.edges.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins));
    }
    return s;
  }

  static HistogramSpec logarithmic(double lo, double hi, std::size_t bins) {
    if (bins < 1 || !(lo > 0) || !(hi > lo)) throw SpecInvalid("invalid log histogram range");
    HistogramSpec s;
    const double a = std::log(lo), b = std::log(hi);
    for (std::size_t i = 0; i <= bins; ++i) {
      s.edges.push_back(std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(bins)));
    }
    return s;
  }
};

struct Histogram {
  std::vector<double> edges;
  std::vector<std::size_t> counts;  // edges.size() - 1 bins
};

/// Bin of `v`: [edges[i], edges[i+1]); values below the first edge land in
/// bin 0 and values at or above the last edge in the last bin.
inline std::size_t bin_index(const std::vector<double>& edges, double v) {
  const std::size_t bins = edges.size() - 1;
  const auto it = std::upper_bound(edges.begin(), edges.end(), v);
  const auto k = static_cast<std::size_t>(it - edges.begin());
  if (k == 0) return 0;
  return std::min(k - 1, bins - 1);
}

inline Histogram histogram_of(const std::vector<double>& values, const HistogramSpec& spec) {
  spec.validate();
  Histogram h{spec.edges, std::vector<std::size_t>(spec.edges.size() - 1, 0)};
  for (const double v : values) ++h.counts[bin_index(spec.edges, v)];
  return h;
}

inline Histogram js_histogram(const std::vector<TokenShiftRecord>& records, const HistogramSpec& spec) {
  std::vector<double> v;
  v.reserve(records.size());
  for (const auto& r : records) v.push_back(r.js);
  return histogram_of(v, spec);
}

struct PercentileSpec {
  std::vector<double> percentiles{1, 5, 10, 25, 50, 75, 90, 95, 99};

  void validate() const {
    for (const double p : percentiles) {
      if (!(p > 0.0 && p < 100.0)) throw PreconditionError("percentiles must lie in (0, 100)");
    }
  }
};

enum class Aggregation { Pooled, PerSequenceMean };

/// Mean js of each sequence, in order of first appearance.
inline std::vector<std::pair<std::string, double>> sequence_means(
    const std::vector<TokenShiftRecord>& records) {
  std::vector<std::pair<std::string, double>> out;
  std::map<std::string, std::size_t> index;
  std::vector<CompensatedSum> sums;
  std::vector<std::size_t> counts;
  for (const auto& r : records) {
    auto [it, fresh] = index.try_emplace(r.seq_id, out.size());
    if (fresh) {
      out.emplace_back(r.seq_id, 0.0);
      sums.emplace_back();
      counts.push_back(0);
    }
    sums[it->second] += r.js;
    ++counts[it->second];
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].second = static_cast<double>(sums[i].value() / static_cast<long double>(counts[i]));
  }
  return out;
}

inline std::vector<std::pair<double, double>> js_percentiles(const std::vector<TokenShiftRecord>& records,
                                                             const PercentileSpec& spec,
                                                             Aggregation agg = Aggregation::Pooled) {
  spec.validate();
  if (records.empty()) throw EmptyInput();
  std::vector<double> v;
  if (agg == Aggregation::Pooled) {
    for (const auto& r : records) v.push_back(r.js);
  } else {
    for (const auto& [id, m] : sequence_means(records)) v.push_back(m);
  }
  std::sort(v.begin(), v.end());
  auto ps = spec.percentiles;
  std::sort(ps.begin(), ps.end());
  std::vector<std::pair<double, double>> out;
  for (const double p : ps) out.emplace_back(p, percentile_sorted(v, p));
  return out;
}

// ---------------------------------------------------------------------------
// Positional profile
// ---------------------------------------------------------------------------

struct PositionBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  bool empty = true;
  double mean = 0.0;
  double median = 0.0;
  double p5 = 0.0;
  double p25 = 0.0;
  double p75 = 0.0;
  double p95 = 0.0;
};

inline std::vector<PositionBin> positional_profile(const std::vector<TokenShiftRecord>& records,
                                                   std::size_t n_bins) {
  if (n_bins < 1) throw PreconditionError("n_bins must be >= 1");
  std::vector<std::vector<double>> per_bin(n_bins);
  for (const auto& r : records) {
    auto b = static_cast<std::size_t>(std::floor(r.norm_pos * static_cast<double>(n_bins)));
    per_bin[std::min(b, n_bins - 1)].push_back(r.js);
  }
  std::vector<PositionBin> out(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    auto& bin = out[b];
    bin.lo = static_cast<double>(b) / static_cast<double>(n_bins);
    bin.hi = static_cast<double>(b + 1) / static_cast<double>(n_bins);
    auto& v = per_bin[b];
    bin.count = v.size();
    bin.empty = v.empty();
    if (v.empty()) continue;
    std::sort(v.begin(), v.end());
    bin.mean = mean_of(v);
    bin.median = percentile_sorted(v, 50);
    bin.p5 = percentile_sorted(v, 5);
    bin.p25 = percentile_sorted(v, 25);
    bin.p75 = percentile_sorted(v, 75);
    bin.p95 = percentile_sorted(v, 95);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Entropy vs divergence
// ---------------------------------------------------------------------------

struct EntropyGroups {
  double threshold = 0.1;
  std::vector<std::pair<double, double>> low;   // (base_entropy, rl_entropy), js <= threshold
  std::vector<std::pair<double, double>> high;  // js > threshold
};

inline EntropyGroups entropy_by_divergence_bins(const std::vector<TokenShiftRecord>& records,
                                                double threshold = 0.1) {
  if (!(threshold > 0.0 && threshold < kLn2)) throw PreconditionError("threshold must lie in (0, ln 2)");
  EntropyGroups g;
  g.threshold = threshold;
  for (const auto& r : records) {
    auto& dst = r.js > threshold ? g.high : g.low;
    dst.emplace_back(r.base_entropy, r.rl_entropy);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Token identity
// ---------------------------------------------------------------------------

struct TokenJsList {
  TokenId token = 0;
  std::size_t count = 0;           // occurrences within its class
  std::vector<double> js_values;   // every occurrence, any class, record order
};

struct TokenFrequencyTables {
  double high_thresh = 0.1;
  double low_thresh = 0.01;
  /// (token, count), count descending then token ascending.
  std::vector<std::pair<TokenId, std::size_t>> high;
  std::vector<std::pair<TokenId, std::size_t>> low;
  std::vector<TokenJsList> high_top;
  std::vector<TokenJsList> low_top;
};

inline TokenFrequencyTables token_frequency_by_divergence(const std::vector<TokenShiftRecord>& records,
                                                          double high_thresh = 0.1,
                                                          double low_thresh = 0.01,
                                                          std::size_t top_n = 20) {
  if (!(low_thresh < high_thresh)) throw PreconditionError("low_thresh must be < high_thresh");
  std::map<TokenId, std::size_t> hi, lo;
  std::map<TokenId, std::vector<double>> all_js;
  for (const auto& r : records) {
    if (r.js > high_thresh) ++hi[r.sampled];
    if (r.js < low_thresh) ++lo[r.sampled];
    all_js[r.sampled].push_back(r.js);
  }
  auto ranked = [](const std::map<TokenId, std::size_t>& m) {
    std::vector<std::pair<TokenId, std::size_t>> v(m.begin(), m.end());
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    return v;
  };
  TokenFrequencyTables t;
  t.high_thresh = high_thresh;
  t.low_thresh = low_thresh;
  t.high = ranked(hi);
  t.low = ranked(lo);
  auto top = [&](const std::vector<std::pair<TokenId, std::size_t>>& table) {
    std::vector<TokenJsList> out;
    for (std::size_t i = 0; i < table.size() && i < top_n; ++i) {
      out.push_back(TokenJsList{table[i].first, table[i].second, all_js[table[i].first]});
    }
    return out;
  };
  t.high_top = top(t.high);
  t.low_top = top(t.low);
  return t;
}

}  // namespace tokshift
