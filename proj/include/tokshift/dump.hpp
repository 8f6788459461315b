// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file dump.hpp
 * @brief Newline-delimited JSON logprob dumps and their replay policies.
 *
 * Line 1 is the header:
 *   {"meta": {"vocab_size": V, "a_name": "...", "b_name": "...",
 *             "top_p": 0.7, "temperature": 1.0}}
 * Every further non-blank line is one token position:
 *   {"seq_id": "s0", "pos": 0, "sampled": 17,
 *    "a_top": [[17, -0.11], [4, -2.3]], "b_top": [[17, -0.02], ...]}
 *
 * Logprobs are natural-log, non-increasing within each list, and each list's
 * exp-sum must not exceed 1 + 1e-6. Positions of a sequence are contiguous
 * from 0 and appear in order (sequences may interleave).
 */

#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tokshift/dist_core.hpp"
#include "tokshift/policies.hpp"

namespace tokshift {

struct DumpMeta {
  std::size_t vocab_size = 0;
  std::string a_name;
  std::string b_name;
  double top_p = 1.0;
  double temperature = 1.0;
};

struct TopEntry {
  TokenId id;
  double logprob;
};

struct DumpRecord {
  std::string seq_id;
  std::size_t pos = 0;
  TokenId sampled = 0;
  std::vector<TopEntry> a_top;
  std::vector<TopEntry> b_top;
  std::size_t line = 0;
};

struct LogprobDump {
  DumpMeta meta;
  std::vector<DumpRecord> records;

  /// Recorded responses, in order of first appearance of each seq_id.
  std::vector<Trajectory> trajectories() const {
    std::vector<Trajectory> out;
    std::map<std::string, std::size_t> index;
    for (const auto& r : records) {
      auto [it, fresh] = index.try_emplace(r.seq_id, out.size());
      if (fresh) out.push_back(Trajectory{r.seq_id, {}, {}});
      out[it->second].response.push_back(r.sampled);
    }
    return out;
  }
};

inline constexpr double kDumpMassTolerance = 1e-6;

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& obj, const char* name,
                                           std::size_t line) {
  auto it = obj.find(name);
  if (it == obj.end()) throw ParseError(line, std::string("missing field \"") + name + "\"");
  return *it;
}

inline double as_real(const nlohmann::json& v, const char* field, std::size_t line) {
  if (!v.is_number()) throw ParseError(line, std::string("field \"") + field + "\" must be a number");
  return v.get<double>();
}

inline std::uint64_t as_index(const nlohmann::json& v, const char* field, std::size_t line) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) {
    if (v.get<std::int64_t>() < 0) {
      throw SchemaError(line, std::string("field \"") + field + "\" must be non-negative");
    }
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  }
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (d >= 0 && std::floor(d) == d && d < 9.0e15) return static_cast<std::uint64_t>(d);
  }
  throw ParseError(line, std::string("field \"") + field + "\" must be a non-negative integer");
}

inline std::string as_string(const nlohmann::json& v, const char* field, std::size_t line) {
  if (!v.is_string()) throw ParseError(line, std::string("field \"") + field + "\" must be a string");
  return v.get<std::string>();
}

inline std::vector<TopEntry> parse_top(const nlohmann::json& v, const char* field,
                                       std::size_t vocab, std::size_t line) {
  if (!v.is_array()) throw ParseError(line, std::string("field \"") + field + "\" must be an array");
  std::vector<TopEntry> out;
  out.reserve(v.size());
  for (const auto& pair : v) {
    if (!pair.is_array() || pair.size() != 2) {
      throw ParseError(line, std::string("entries of \"") + field + "\" must be [id, logprob] pairs");
    }
    const auto id = as_index(pair[0], field, line);
    const double lp = as_real(pair[1], field, line);
    if (id >= vocab) {
      throw SchemaError(line, std::string(field) + ": token id " + std::to_string(id) +
                                  " outside vocabulary");
    }
    if (!std::isfinite(lp)) throw SchemaError(line, std::string(field) + ": non-finite logprob");
    out.push_back({static_cast<TokenId>(id), lp});
  }
  if (out.empty()) throw SchemaError(line, std::string(field) + " is empty");
  CompensatedSum mass;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (i > 0 && out[i].logprob > out[i - 1].logprob) {
      throw SchemaError(line, std::string(field) + ": logprobs increase at entry " + std::to_string(i));
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (out[j].id == out[i].id) {
        throw SchemaError(line, std::string(field) + ": duplicate token id " + std::to_string(out[i].id));
      }
    }
    mass += std::exp(static_cast<long double>(out[i].logprob));
  }
  if (mass.value() > 1.0L + kDumpMassTolerance) {
    throw SchemaError(line, std::string(field) + ": probabilities sum to " +
                                std::to_string(static_cast<double>(mass.value())) + " > 1");
  }
  return out;
}

}  // namespace detail

/// Parses and validates a dump. Throws ParseError / SchemaError with the
/// offending line number.
inline LogprobDump parse_dump(std::istream& in) {
  using nlohmann::json;
  LogprobDump dump;
  std::map<std::string, std::size_t> next_pos;
  bool have_meta = false;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(line, e.what());
    }
    if (!j.is_object()) throw ParseError(line, "line is not a JSON object");

    if (!have_meta) {
      const auto& m = detail::require_field(j, "meta", line);
      if (!m.is_object()) throw ParseError(line, "\"meta\" must be an object");
      dump.meta.vocab_size = detail::as_index(detail::require_field(m, "vocab_size", line), "vocab_size", line);
      dump.meta.a_name = detail::as_string(detail::require_field(m, "a_name", line), "a_name", line);
      dump.meta.b_name = detail::as_string(detail::require_field(m, "b_name", line), "b_name", line);
      dump.meta.top_p = detail::as_real(detail::require_field(m, "top_p", line), "top_p", line);
      dump.meta.temperature =
          detail::as_real(detail::require_field(m, "temperature", line), "temperature", line);
      if (dump.meta.vocab_size == 0) throw SchemaError(line, "vocab_size must be positive");
      if (!(dump.meta.top_p > 0.0 && dump.meta.top_p <= 1.0)) {
        throw SchemaError(line, "top_p must lie in (0, 1]");
      }
      have_meta = true;
      continue;
    }

    DumpRecord r;
    r.line = line;
    r.seq_id = detail::as_string(detail::require_field(j, "seq_id", line), "seq_id", line);
    r.pos = detail::as_index(detail::require_field(j, "pos", line), "pos", line);
    const auto sampled = detail::as_index(detail::require_field(j, "sampled", line), "sampled", line);
    if (sampled >= dump.meta.vocab_size) throw SchemaError(line, "sampled token outside vocabulary");
    r.sampled = static_cast<TokenId>(sampled);
    r.a_top = detail::parse_top(detail::require_field(j, "a_top", line), "a_top", dump.meta.vocab_size, line);
    r.b_top = detail::parse_top(detail::require_field(j, "b_top", line), "b_top", dump.meta.vocab_size, line);

    auto& expected = next_pos[r.seq_id];
    if (r.pos != expected) {
      throw SchemaError(line, "seq " + r.seq_id + ": expected pos " + std::to_string(expected) +
                                  ", got " + std::to_string(r.pos));
    }
    ++expected;
    dump.records.push_back(std::move(r));
  }
  if (!have_meta) throw ParseError(line == 0 ? 1 : line, "missing meta header line");
  return dump;
}

inline LogprobDump load_dump(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PreconditionError("cannot open dump file: " + path);
  return parse_dump(in);
}

/// Renormalized distribution of a stored top-k list.
inline Distribution top_to_distribution(const std::vector<TopEntry>& top, std::size_t vocab_size) {
  std::vector<std::pair<TokenId, double>> e;
  e.reserve(top.size());
  for (const auto& t : top) e.emplace_back(t.id, std::exp(t.logprob));
  return Distribution::from_masses(std::move(e), vocab_size);
}

/// Replays one side of a dump. Defined only on recorded prefixes: the
/// Prefix context must name a recorded seq_id and its tokens must follow that
/// sequence's sampled path.
class ReplayPolicy final : public PolicyProvider {
 public:
  ReplayPolicy(const LogprobDump& dump, bool side_a) : vocab_size_(dump.meta.vocab_size) {
    for (const auto& r : dump.records) {
      auto& s = seqs_[r.seq_id];
      s.path.push_back(r.sampled);
      s.dists.push_back(top_to_distribution(side_a ? r.a_top : r.b_top, vocab_size_));
    }
  }

  Distribution next_dist(const Prefix& prefix) const override {
    auto it = seqs_.find(prefix.context);
    if (it == seqs_.end()) throw PrefixNotRecorded("unknown sequence \"" + prefix.context + "\"");
    const auto& s = it->second;
    const std::size_t n = prefix.tokens.size();
    if (n >= s.path.size() || !std::equal(prefix.tokens.begin(), prefix.tokens.end(), s.path.begin())) {
      throw PrefixNotRecorded("prefix of length " + std::to_string(n) +
                              " is not on the recorded path of \"" + prefix.context + "\"");
    }
    return s.dists[n];
  }

  std::size_t vocab_size() const override { return vocab_size_; }

 private:
  struct Seq {
    std::vector<TokenId> path;
    std::vector<Distribution> dists;
  };
  std::size_t vocab_size_;
  std::map<std::string, Seq> seqs_;
};

/// (side a, side b) replay policies.
inline std::pair<PolicyPtr, PolicyPtr> dump_as_policies(const LogprobDump& dump) {
  return {std::make_shared<ReplayPolicy>(dump, true), std::make_shared<ReplayPolicy>(dump, false)};
}

/// Records both policies along `trajectories`, keeping the `top_k` most
/// likely tokens of each (all of the support when top_k is 0).
inline LogprobDump make_dump(const PolicyProvider& a, const PolicyProvider& b,
                             const std::vector<Trajectory>& trajectories, DumpMeta meta,
                             std::size_t top_k = 0) {
  meta.vocab_size = a.vocab_size();
  LogprobDump dump{std::move(meta), {}};
  auto top_of = [&](const Distribution& d) {
    std::vector<TopEntry> out;
    const auto order = d.rank_order();
    const std::size_t k = top_k == 0 ? order.size() : std::min(top_k, order.size());
    for (std::size_t i = 0; i < k; ++i) {
      out.push_back({d.support()[order[i]], std::log(d.probs()[order[i]])});
    }
    return out;
  };
  for (const auto& tr : trajectories) {
    for (std::size_t pos = 0; pos < tr.response.size(); ++pos) {
      const auto prefix = tr.prefix_at(pos);
      dump.records.push_back(DumpRecord{tr.seq_id, pos, tr.response[pos],
                                        top_of(a.next_dist(prefix)), top_of(b.next_dist(prefix)), 0});
    }
  }
  return dump;
}

inline void write_dump(std::ostream& out, const LogprobDump& dump) {
  using nlohmann::ordered_json;
  ordered_json meta;
  meta["vocab_size"] = dump.meta.vocab_size;
  meta["a_name"] = dump.meta.a_name;
  meta["b_name"] = dump.meta.b_name;
  meta["top_p"] = dump.meta.top_p;
  meta["temperature"] = dump.meta.temperature;
  out << ordered_json{{"meta", meta}}.dump() << '\n';
  auto top_json = [](const std::vector<TopEntry>& top) {
    ordered_json arr = ordered_json::array();
    for (const auto& t : top) arr.push_back({t.id, t.logprob});
    return arr;
  };
  for (const auto& r : dump.records) {
    ordered_json j;
    j["seq_id"] = r.seq_id;
    j["pos"] = r.pos;
    j["sampled"] = r.sampled;
    j["a_top"] = top_json(r.a_top);
    j["b_top"] = top_json(r.b_top);
    out << j.dump() << '\n';
  }
}

}  // namespace tokshift
