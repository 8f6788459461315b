// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file cross_sampling.hpp
 * @brief Mixed-policy generation: sample from the primary policy, switching to
 *        the intervention policy at steps where the divergence between the two
 *        (truncated) next-token distributions exceeds a threshold, subject to
 *        an optional intervention budget.
 *
 * Forward cross-sampling uses (primary=base, intervention=RL); reverse swaps
 * the roles. Every step consumes exactly one uniform from the run's stream.
 * At a switch, the same uniform is also pushed through the primary
 * distribution to obtain the coupled primary token; a switch whose two
 * tokens coincide is an identity swap and does not count as effective.
 */

#include <algorithm>
#include <charconv>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "tokshift/dist_core.hpp"
#include "tokshift/policies.hpp"
#include "tokshift/rng.hpp"

namespace tokshift {

enum class DivergenceKind { JS, KL };

struct SwitchingRule {
  double epsilon = 0.1;
  TruncationSpec trunc;
  DivergenceKind kind = DivergenceKind::JS;

  void validate() const {
    trunc.validate();
    if (!(epsilon >= 0.0)) throw SpecInvalid("epsilon must be >= 0");
    if (kind == DivergenceKind::JS && epsilon > kLn2) throw SpecInvalid("JS epsilon must be <= ln 2");
  }

  /// Divergence between already-truncated distributions. KL is +inf when
  /// absolute continuity fails, which always triggers a switch.
  double divergence(const Distribution& prim, const Distribution& inter) const {
    return kind == DivergenceKind::JS ? js_divergence(prim, inter) : detail::kl_or_inf(prim, inter);
  }
};

struct CrossSampleConfig {
  PolicyPtr primary;
  PolicyPtr intervention;
  SwitchingRule rule;
  std::optional<std::size_t> budget;  // nullopt = unlimited
  GenerationLimits limits;
  std::uint64_t seed = 0;
  std::string seq_id;
  std::vector<TokenId> prompt;

  void validate() const {
    if (!primary || !intervention) throw SpecInvalid("both policies must be set");
    if (primary->vocab_size() != intervention->vocab_size()) {
      throw SpecInvalid("primary and intervention vocabularies differ");
    }
    rule.validate();
    limits.validate();
  }

  /// Same config with primary and intervention swapped.
  CrossSampleConfig reversed() const {
    CrossSampleConfig r = *this;
    std::swap(r.primary, r.intervention);
    return r;
  }
};

struct MixedStep {
  Distribution dist;  // truncated distribution to sample from
  bool switched = false;
  double divergence = 0.0;  // 0 when the budget was already exhausted
};

/// One step of the mixed policy. `used` is the number of switches already
/// spent; once it reaches the budget the divergence is not evaluated.
inline MixedStep mixed_next_distribution(const CrossSampleConfig& cfg, const Prefix& prefix,
                                         std::size_t used = 0) {
  Distribution prim = truncate_top_p(cfg.primary->next_dist(prefix), cfg.rule.trunc);
  if (cfg.budget && used >= *cfg.budget) return MixedStep{std::move(prim), false, 0.0};
  Distribution inter = truncate_top_p(cfg.intervention->next_dist(prefix), cfg.rule.trunc);
  const double div = cfg.rule.divergence(prim, inter);
  if (div > cfg.rule.epsilon) return MixedStep{std::move(inter), true, div};
  return MixedStep{std::move(prim), false, div};
}

struct Intervention {
  std::size_t pos = 0;
  TokenId primary_token = 0;       // coupled draw from the primary distribution
  TokenId intervention_token = 0;  // token actually emitted
  double divergence = 0.0;

  bool identity() const noexcept { return primary_token == intervention_token; }
};

enum class Termination { Eos, MaxTokens };

struct CrossSampleTrace {
  std::string seq_id;
  std::uint64_t seed = 0;
  std::vector<TokenId> tokens;
  std::vector<Intervention> interventions;
  std::size_t effective_count = 0;
  std::size_t total_count = 0;
  Termination terminated_by = Termination::MaxTokens;
};

/// A provider failed mid-generation; carries what was generated so far.
class GenerationAborted : public Error {
 public:
  GenerationAborted(CrossSampleTrace partial, const std::string& cause)
      : Error("generation aborted at position " + std::to_string(partial.tokens.size()) + ": " + cause),
        partial_(std::move(partial)) {}
  const CrossSampleTrace& partial() const noexcept { return partial_; }

 private:
  CrossSampleTrace partial_;
};

inline CrossSampleTrace cross_sample_generate(const CrossSampleConfig& cfg) {
  cfg.validate();
  CrossSampleTrace trace;
  trace.seq_id = cfg.seq_id;
  trace.seed = cfg.seed;
  rng::UniformStream stream(cfg.seed);
  Prefix prefix{cfg.seq_id, cfg.prompt};
  try {
    for (std::size_t t = 0; t < cfg.limits.t_max; ++t) {
      Distribution prim = truncate_top_p(cfg.primary->next_dist(prefix), cfg.rule.trunc);
      bool switched = false;
      double div = 0.0;
      std::optional<Distribution> inter;
      if (!cfg.budget || trace.total_count < *cfg.budget) {
        inter = truncate_top_p(cfg.intervention->next_dist(prefix), cfg.rule.trunc);
        div = cfg.rule.divergence(prim, *inter);
        switched = div > cfg.rule.epsilon;
      }
      const double u = stream.next();
      TokenId tok;
      if (switched) {
        tok = rng::inverse_cdf(*inter, u);
        const Intervention iv{t, rng::inverse_cdf(prim, u), tok, div};
        ++trace.total_count;
        if (!iv.identity()) ++trace.effective_count;
        trace.interventions.push_back(iv);
      } else {
        tok = rng::inverse_cdf(prim, u);
      }
      trace.tokens.push_back(tok);
      prefix.tokens.push_back(tok);
      if (cfg.limits.eos && tok == *cfg.limits.eos) {
        trace.terminated_by = Termination::Eos;
        break;
      }
    }
  } catch (const GenerationAborted&) {
    throw;
  } catch (const Error& e) {
    throw GenerationAborted(std::move(trace), e.what());
  }
  return trace;
}

/// The mixed policy as a PolicyProvider, so its exact sequence law can be
/// enumerated. With a budget, the switches already spent are recomputed from
/// the prefix (the switching rule is a deterministic function of history).
class MixedPolicy final : public PolicyProvider {
 public:
  explicit MixedPolicy(CrossSampleConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  Distribution next_dist(const Prefix& prefix) const override { return step(prefix).dist; }
  std::size_t vocab_size() const override { return cfg_.primary->vocab_size(); }

  MixedStep step(const Prefix& prefix) const {
    std::size_t used = 0;
    if (cfg_.budget) {
      const std::size_t start = std::min(cfg_.prompt.size(), prefix.tokens.size());
      Prefix h{prefix.context, std::vector<TokenId>(prefix.tokens.begin(),
                                                    prefix.tokens.begin() + static_cast<std::ptrdiff_t>(start))};
      for (std::size_t i = start; i < prefix.tokens.size() && used < *cfg_.budget; ++i) {
        if (mixed_next_distribution(cfg_, h, used).switched) ++used;
        h.tokens.push_back(prefix.tokens[i]);
      }
    }
    return mixed_next_distribution(cfg_, prefix, used);
  }

  bool switches_at(const Prefix& prefix) const { return step(prefix).switched; }
  const CrossSampleConfig& config() const noexcept { return cfg_; }

 private:
  CrossSampleConfig cfg_;
};

// ---------------------------------------------------------------------------
// Success predicates
// ---------------------------------------------------------------------------

using SuccessPredicate = std::function<bool(const CrossSampleTrace&)>;

/// Built-in predicates: "contains-token:ID", "ends-with:ID",
/// "count-at-least:ID:N".
inline SuccessPredicate parse_predicate(std::string_view text) {
  auto number = [&](std::string_view s) {
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw SpecInvalid("bad number in predicate: " + std::string(text));
    }
    return v;
  };
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) throw SpecInvalid("unknown predicate: " + std::string(text));
  const auto name = text.substr(0, colon);
  const auto args = text.substr(colon + 1);
  if (name == "contains-token") {
    const auto id = static_cast<TokenId>(number(args));
    return [id](const CrossSampleTrace& t) {
      return std::find(t.tokens.begin(), t.tokens.end(), id) != t.tokens.end();
    };
  }
  if (name == "ends-with") {
    const auto id = static_cast<TokenId>(number(args));
    return [id](const CrossSampleTrace& t) { return !t.tokens.empty() && t.tokens.back() == id; };
  }
  if (name == "count-at-least") {
    const auto c2 = args.find(':');
    if (c2 == std::string_view::npos) throw SpecInvalid("count-at-least needs ID:N");
    const auto id = static_cast<TokenId>(number(args.substr(0, c2)));
    const auto n = number(args.substr(c2 + 1));
    return [id, n](const CrossSampleTrace& t) {
      return static_cast<std::uint64_t>(std::count(t.tokens.begin(), t.tokens.end(), id)) >= n;
    };
  }
  throw SpecInvalid("unknown predicate: " + std::string(text));
}

// ---------------------------------------------------------------------------
// Budget sweeps
// ---------------------------------------------------------------------------

struct BudgetPoint {
  std::size_t budget = 0;
  double success_rate = 0.0;
  double mean_effective = 0.0;
  double mean_total = 0.0;
  double mean_effective_pct = 0.0;  // effective / response length * 100, averaged per sequence
  double mean_length = 0.0;
};

/// Success rate and intervention means over one batch of runs.
inline BudgetPoint summarize_traces(const std::vector<CrossSampleTrace>& traces, const SuccessPredicate& success) {
  if (traces.empty()) throw EmptyInput();
  BudgetPoint p;
  CompensatedSum succ, eff, tot, pct, len;
  for (const auto& t : traces) {
    succ += success(t) ? 1.0L : 0.0L;
    eff += t.effective_count;
    tot += t.total_count;
    len += t.tokens.size();
    pct += t.tokens.empty() ? 0.0L
                            : 100.0L * static_cast<long double>(t.effective_count) /
                                  static_cast<long double>(t.tokens.size());
  }
  const auto n = static_cast<long double>(traces.size());
  p.success_rate = static_cast<double>(succ.value() / n);
  p.mean_effective = static_cast<double>(eff.value() / n);
  p.mean_total = static_cast<double>(tot.value() / n);
  p.mean_effective_pct = static_cast<double>(pct.value() / n);
  p.mean_length = static_cast<double>(len.value() / n);
  return p;
}

/// Runs `n_samples` generations at each budget. Sample i uses seed
/// derive_seed(cfg.seed, i) at every budget point.
inline std::vector<BudgetPoint> budget_sweep(const CrossSampleConfig& cfg_template,
                                             const std::vector<std::size_t>& budgets,
                                             std::size_t n_samples, const SuccessPredicate& success,
                                             std::size_t jobs = 1,
                                             std::vector<std::vector<CrossSampleTrace>>* traces_out = nullptr) {
  cfg_template.validate();
  if (n_samples < 1) throw PreconditionError("n_samples must be >= 1");
  if (!std::is_sorted(budgets.begin(), budgets.end())) throw PreconditionError("budgets must be non-decreasing");
  jobs = std::max<std::size_t>(1, jobs);
  std::vector<BudgetPoint> out;
  if (traces_out) traces_out->clear();
  for (const std::size_t k : budgets) {
    std::vector<CrossSampleTrace> traces(n_samples);
    std::vector<std::future<void>> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t i = w; i < n_samples; i += jobs) {
          CrossSampleConfig cfg = cfg_template;
          cfg.budget = k;
          cfg.seed = rng::derive_seed(cfg_template.seed, i);
          cfg.seq_id = cfg_template.seq_id + "k" + std::to_string(k) + "-" + std::to_string(i);
          traces[i] = cross_sample_generate(cfg);
        }
      }));
    }
    for (auto& f : workers) f.get();
    BudgetPoint p = summarize_traces(traces, success);
    p.budget = k;
    out.push_back(p);
    if (traces_out) traces_out->push_back(std::move(traces));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Replacement pairs
// ---------------------------------------------------------------------------

struct ReplacementPair {
  TokenId primary_token = 0;
  TokenId intervention_token = 0;
  std::size_t count = 0;
};

/// Counts (coupled primary token -> intervention token) over all
/// non-identity interventions; count descending, then pair ascending.
inline std::vector<ReplacementPair> replacement_pair_histogram(const std::vector<CrossSampleTrace>& traces) {
  if (traces.empty()) throw EmptyInput();
  std::map<std::pair<TokenId, TokenId>, std::size_t> counts;
  for (const auto& t : traces) {
    for (const auto& iv : t.interventions) {
      if (!iv.identity()) ++counts[{iv.primary_token, iv.intervention_token}];
    }
  }
  std::vector<ReplacementPair> out;
  for (const auto& [k, c] : counts) out.push_back({k.first, k.second, c});
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.count > b.count; });
  return out;
}

}  // namespace tokshift
