// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file report.hpp
 * @brief JSON / CSV serialization of analysis results.
 *
 * Floats are written as shortest round-trip decimals so that reruns diff
 * cleanly. Every emitted document carries a metadata block (tool version,
 * config hash, seed): a "meta" object in JSON, a leading "# ..." line in CSV.
 */

#include <charconv>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tokshift/cross_sampling.hpp"
#include "tokshift/mechanics.hpp"
#include "tokshift/rl_weighting.hpp"
#include "tokshift/rng.hpp"
#include "tokshift/seq_bounds.hpp"
#include "tokshift/shift_analysis.hpp"

namespace tokshift {

inline constexpr const char* kToolName = "tokshift";
inline constexpr const char* kToolVersion = "0.1.0";

using ojson = nlohmann::ordered_json;

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct RunMeta {
  std::string subcommand;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
};

/// Hash of a canonical config string (FNV-1a, 64-bit).
inline std::uint64_t config_hash(const std::string& canonical) { return rng::fnv1a(canonical); }

inline ojson meta_json(const RunMeta& m) {
  return ojson{{"tool", kToolName},
               {"version", kToolVersion},
               {"subcommand", m.subcommand},
               {"config_hash", hex64(m.config_hash)},
               {"seed", m.seed}};
}

inline std::string meta_csv_line(const RunMeta& m) {
  return std::string("# tool=") + kToolName + " version=" + kToolVersion + " subcommand=" + m.subcommand +
         " config_hash=" + hex64(m.config_hash) + " seed=" + std::to_string(m.seed);
}

/// Minimal CSV table: header row, then rows of already-formatted cells.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void write(std::ostream& out, const RunMeta& meta) const {
    out << meta_csv_line(meta) << '\n';
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
      out << '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
  }
};

template <typename T>
std::string cell(const T& v) {
  if constexpr (std::is_floating_point_v<T>) {
    return format_double(static_cast<double>(v));
  } else if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_arithmetic_v<T>) {
    return std::to_string(v);
  } else {
    // quote anything that could break the row
    std::string s(v);
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (const char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  }
}

// ---------------------------------------------------------------------------
// shift analysis
// ---------------------------------------------------------------------------

inline ojson to_ojson(const TokenShiftRecord& r) {
  return ojson{{"seq_id", r.seq_id},
               {"pos", r.pos},
               {"seq_len", r.seq_len},
               {"norm_pos", r.norm_pos},
               {"sampled", r.sampled},
               {"js", r.js},
               {"base_entropy", r.base_entropy},
               {"rl_entropy", r.rl_entropy},
               {"base_rank_of_sampled", r.base_rank_of_sampled},
               {"rl_rank_of_sampled", r.rl_rank_of_sampled}};
}

inline CsvTable records_csv(const std::vector<TokenShiftRecord>& records) {
  CsvTable t{{"seq_id", "pos", "seq_len", "norm_pos", "sampled", "js", "base_entropy", "rl_entropy",
              "base_rank_of_sampled", "rl_rank_of_sampled"},
             {}};
  for (const auto& r : records) {
    t.rows.push_back({cell(r.seq_id), cell(r.pos), cell(r.seq_len), cell(r.norm_pos), cell(r.sampled), cell(r.js),
                      cell(r.base_entropy), cell(r.rl_entropy), cell(r.base_rank_of_sampled),
                      cell(r.rl_rank_of_sampled)});
  }
  return t;
}

inline ojson to_ojson(const Histogram& h) { return ojson{{"edges", h.edges}, {"counts", h.counts}}; }

inline ojson percentiles_ojson(const std::vector<std::pair<double, double>>& ps) {
  ojson a = ojson::array();
  for (const auto& [p, v] : ps) a.push_back(ojson{{"p", p}, {"value", v}});
  return a;
}

inline ojson to_ojson(const PositionBin& b) {
  ojson o{{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"empty", b.empty}};
  if (!b.empty) {
    o["mean"] = b.mean;
    o["median"] = b.median;
    o["p5"] = b.p5;
    o["p25"] = b.p25;
    o["p75"] = b.p75;
    o["p95"] = b.p95;
  }
  return o;
}

inline ojson to_ojson(const EntropyGroups& g) {
  auto side = [](const std::vector<std::pair<double, double>>& v) {
    ojson base = ojson::array(), rl = ojson::array();
    for (const auto& [b, r] : v) {
      base.push_back(b);
      rl.push_back(r);
    }
    return ojson{{"count", v.size()}, {"base_entropy", base}, {"rl_entropy", rl}};
  };
  return ojson{{"threshold", g.threshold}, {"low", side(g.low)}, {"high", side(g.high)}};
}

inline ojson to_ojson(const TokenFrequencyTables& t) {
  auto table = [](const std::vector<std::pair<TokenId, std::size_t>>& v) {
    ojson a = ojson::array();
    for (const auto& [id, c] : v) a.push_back(ojson{{"token", id}, {"count", c}});
    return a;
  };
  auto lists = [](const std::vector<TokenJsList>& v) {
    ojson a = ojson::array();
    for (const auto& l : v) a.push_back(ojson{{"token", l.token}, {"count", l.count}, {"js", l.js_values}});
    return a;
  };
  return ojson{{"high_thresh", t.high_thresh}, {"low_thresh", t.low_thresh}, {"high", table(t.high)},
               {"low", table(t.low)},          {"high_top", lists(t.high_top)}, {"low_top", lists(t.low_top)}};
}

// ---------------------------------------------------------------------------
// mechanics
// ---------------------------------------------------------------------------

inline ojson to_ojson(const OverlapCurve& c) {
  return ojson{{"js_thresh", c.js_thresh}, {"positions", c.positions}, {"overlap", c.overlap}};
}

inline ojson to_ojson(const RankHistograms& h) {
  return ojson{{"js_thresh", h.js_thresh}, {"positions", h.positions}, {"by_j", h.by_j}};
}

inline ojson to_ojson(const TailPromotion& t) {
  ojson fr = ojson::array();
  for (const auto& [thr, f] : t.fraction_below) fr.push_back(ojson{{"threshold", thr}, {"fraction", f}});
  return ojson{{"js_thresh", t.js_thresh},
               {"cutoff", t.cutoff},
               {"positions", t.positions},
               {"fraction_below", fr},
               {"subset_size", t.subset_size},
               {"rl_prob_histogram", to_ojson(t.rl_prob_histogram)}};
}

inline ojson to_ojson(const CheckpointStats& s) {
  return ojson{{"index", s.index},
               {"percentiles", percentiles_ojson(s.percentiles)},
               {"divergent_count", s.divergent_count},
               {"jaccard_with_final", s.jaccard_with_final}};
}

// ---------------------------------------------------------------------------
// cross sampling
// ---------------------------------------------------------------------------

inline const char* to_string(Termination t) { return t == Termination::Eos ? "eos" : "max_tokens"; }

inline ojson to_ojson(const CrossSampleTrace& t) {
  ojson ivs = ojson::array();
  for (const auto& iv : t.interventions) {
    ivs.push_back(ojson{{"pos", iv.pos},
                        {"primary_token", iv.primary_token},
                        {"intervention_token", iv.intervention_token},
                        {"divergence", iv.divergence},
                        {"identity", iv.identity()}});
  }
  return ojson{{"seq_id", t.seq_id},
               {"seed", t.seed},
               {"tokens", t.tokens},
               {"interventions", ivs},
               {"effective_count", t.effective_count},
               {"total_count", t.total_count},
               {"terminated_by", to_string(t.terminated_by)}};
}

inline ojson to_ojson(const BudgetPoint& p) {
  return ojson{{"budget", p.budget},
               {"success_rate", p.success_rate},
               {"mean_effective", p.mean_effective},
               {"mean_total", p.mean_total},
               {"mean_effective_pct", p.mean_effective_pct},
               {"mean_length", p.mean_length}};
}

inline ojson to_ojson(const ReplacementPair& r) {
  return ojson{{"primary_token", r.primary_token}, {"intervention_token", r.intervention_token}, {"count", r.count}};
}

// ---------------------------------------------------------------------------
// sequence bounds
// ---------------------------------------------------------------------------

inline ojson to_ojson(const ChainRuleReport& r) {
  return ojson{{"lhs", r.lhs}, {"rhs", r.rhs}, {"diff", r.diff}, {"pass", r.pass}};
}

inline ojson to_ojson(const JsDecompositionReport& r) {
  return ojson{{"lhs", r.lhs}, {"rhs", r.rhs}, {"diff", r.diff}, {"pass", r.pass},
               {"histories", r.alpha_table.size()}};
}

inline ojson to_ojson(const KlBoundReport& r) {
  return ojson{{"epsilon", r.epsilon},
               {"kl_mix_int", r.kl_mix_int},
               {"expected_n0", r.expected_n0},
               {"expected_n0_walk", r.expected_n0_walk},
               {"eps_times_en0", r.eps_times_en0},
               {"kappa_bar", r.kappa_bar},
               {"identity_diff", r.identity_diff},
               {"identity_pass", r.identity_pass},
               {"kappa_le_eps", r.kappa_le_eps},
               {"holds", r.holds}};
}

inline ojson to_ojson(const JsBoundReport& r) {
  return ojson{{"epsilon", r.epsilon},
               {"js_mix_int", r.js_mix_int},
               {"expected_n0_mix", r.expected_n0_mix},
               {"expected_n0_int", r.expected_n0_int},
               {"expected_n0_m", r.expected_n0_m},
               {"expected_n0_m_walk", r.expected_n0_m_walk},
               {"eps_times_en0_m", r.eps_times_en0_m},
               {"j_bar", r.j_bar},
               {"identity_diff", r.identity_diff},
               {"identity_pass", r.identity_pass},
               {"j_le_eps", r.j_le_eps},
               {"holds", r.holds}};
}

inline ojson to_ojson(const HypothesisViolated& e) {
  ojson v = ojson::array();
  for (const auto& x : e.violations()) {
    v.push_back(ojson{{"step", x.step}, {"history", x.history}, {"alpha", x.alpha}, {"skew_js", x.skew_js}});
  }
  return ojson{{"hypothesis_violated", true}, {"violations", v}};
}

// ---------------------------------------------------------------------------
// weights
// ---------------------------------------------------------------------------

inline ojson to_ojson(const WeightedRow& w) {
  return ojson{{"ratio", w.in.ratio},
               {"advantage", w.in.advantage},
               {"kl", w.in.kl},
               {"weight", w.weight},
               {"weighted_advantage", w.weighted_advantage},
               {"objective", w.objective}};
}

/// Document = {"meta": ..., <body fields>}; two-space indent, trailing newline.
inline void write_json(std::ostream& out, const RunMeta& meta, const ojson& body) {
  ojson doc{{"meta", meta_json(meta)}};
  for (const auto& [k, v] : body.items()) doc[k] = v;
  out << doc.dump(2) << '\n';
}

}  // namespace tokshift
