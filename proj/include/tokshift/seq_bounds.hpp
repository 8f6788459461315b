// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file seq_bounds.hpp
 * @brief Exact sequence laws on tiny instances and checks of the
 *        sequence-level divergence decompositions and bounds for the mixed
 *        (cross-sampling) policy.
 *
 * Laws live on the fixed horizon T_max with EOS absorbing: once EOS is
 * emitted every later token is EOS with probability one, so every sequence
 * has length exactly T_max and per-step divergences after termination are 0.
 *
 * Each check computes its two sides along independent routes: the left side
 * from enumerated full-sequence laws, the right side by a forward walk over
 * histories accumulating prefix marginals and per-step divergences.
 */

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tokshift/cross_sampling.hpp"
#include "tokshift/dist_core.hpp"
#include "tokshift/policies.hpp"

namespace tokshift {

using Sequence = std::vector<TokenId>;

inline constexpr double kMaxEnumeratedSequences = 1e7;
inline constexpr double kChainRuleTolerance = 1e-10;
inline constexpr double kBoundSlack = 1e-12;

struct SequenceLaw {
  std::size_t t_max = 0;
  std::optional<TokenId> eos;
  std::map<Sequence, double> probs;  // positive-probability sequences only

  double prob(const Sequence& s) const {
    auto it = probs.find(s);
    return it == probs.end() ? 0.0 : it->second;
  }

  double total() const {
    CompensatedSum s;
    for (const auto& [seq, p] : probs) s += p;
    return static_cast<double>(s.value());
  }

  /// Every sequence has length t_max and nothing but EOS follows an EOS.
  bool is_absorbed() const {
    for (const auto& [seq, p] : probs) {
      if (seq.size() != t_max) return false;
      if (!eos) continue;
      bool seen = false;
      for (const TokenId t : seq) {
        if (seen && t != *eos) return false;
        seen = seen || t == *eos;
      }
    }
    return true;
  }
};

namespace detail {

inline void check_enumerable(std::size_t vocab, std::size_t t_max) {
  double n = 1.0;
  for (std::size_t t = 0; t < t_max; ++t) {
    n *= static_cast<double>(vocab);
    if (n > kMaxEnumeratedSequences) {
      throw InstanceTooLarge("V^T_max = " + std::to_string(vocab) + "^" + std::to_string(t_max) +
                             " exceeds the enumeration limit of 1e7 sequences");
    }
  }
}

inline bool absorbed(const Sequence& h, const std::optional<TokenId>& eos) {
  return eos && std::find(h.begin(), h.end(), *eos) != h.end();
}

inline Prefix as_prefix(const Sequence& h) { return Prefix{{}, h}; }

}  // namespace detail

inline SequenceLaw enumerate_law(const PolicyProvider& policy, const GenerationLimits& limits) {
  limits.validate();
  detail::check_enumerable(policy.vocab_size(), limits.t_max);
  SequenceLaw law{limits.t_max, limits.eos, {}};
  Sequence h;
  std::function<void(long double)> dfs = [&](long double mass) {
    if (h.size() == limits.t_max) {
      law.probs[h] = static_cast<double>(mass);
      return;
    }
    if (detail::absorbed(h, limits.eos)) {
      h.push_back(*limits.eos);
      dfs(mass);
      h.pop_back();
      return;
    }
    const auto d = policy.next_dist(detail::as_prefix(h));
    for (std::size_t i = 0; i < d.size(); ++i) {
      h.push_back(d.support()[i]);
      dfs(mass * d.probs()[i]);
      h.pop_back();
    }
  };
  dfs(1.0L);
  return law;
}

inline double sequence_kl(const SequenceLaw& p, const SequenceLaw& q) {
  CompensatedSum s;
  for (const auto& [seq, pp] : p.probs) {
    const double qq = q.prob(seq);
    if (qq <= 0.0) throw AbsoluteContinuityViolation("sequence with P-mass has zero Q-mass");
    s += static_cast<long double>(pp) * std::log(static_cast<long double>(pp) / qq);
  }
  return static_cast<double>(s.value());
}

inline double sequence_js(const SequenceLaw& p, const SequenceLaw& q) {
  CompensatedSum s;
  auto i = p.probs.begin();
  auto j = q.probs.begin();
  auto term = [](long double a, long double b) {
    const long double m = 0.5L * (a + b);
    long double x = 0.0L, y = 0.0L;
    if (a > 0) x = 0.5L * a * std::log(a / m);
    if (b > 0) y = 0.5L * b * std::log(b / m);
    return x + y;
  };
  while (i != p.probs.end() || j != q.probs.end()) {
    if (j == q.probs.end() || (i != p.probs.end() && i->first < j->first)) {
      s += term(i->second, 0.0L);
      ++i;
    } else if (i == p.probs.end() || j->first < i->first) {
      s += term(0.0L, j->second);
      ++j;
    } else {
      s += term(i->second, j->second);
      ++i;
      ++j;
    }
  }
  return static_cast<double>(s.value());
}

// ---------------------------------------------------------------------------
// Chain rules
// ---------------------------------------------------------------------------

struct ChainRuleReport {
  double lhs = 0.0;
  double rhs = 0.0;
  double diff = 0.0;
  bool pass = false;
};

/// KL(P||Q) over sequences vs the sum over steps of E_{P_<t}[KL(p_t || q_t)].
inline ChainRuleReport verify_kl_chain_rule(const PolicyProvider& p, const PolicyProvider& q,
                                            const GenerationLimits& limits) {
  ChainRuleReport r;
  r.lhs = sequence_kl(enumerate_law(p, limits), enumerate_law(q, limits));

  CompensatedSum rhs;
  Sequence h;
  std::function<void(long double)> walk = [&](long double pm) {
    if (h.size() == limits.t_max || detail::absorbed(h, limits.eos)) return;
    const auto prefix = detail::as_prefix(h);
    const auto pd = p.next_dist(prefix);
    rhs += pm * kl_divergence(pd, q.next_dist(prefix));
    for (std::size_t i = 0; i < pd.size(); ++i) {
      h.push_back(pd.support()[i]);
      walk(pm * pd.probs()[i]);
      h.pop_back();
    }
  };
  walk(1.0L);
  r.rhs = static_cast<double>(rhs.value());
  r.diff = std::fabs(r.lhs - r.rhs);
  r.pass = r.diff <= kChainRuleTolerance;
  return r;
}

struct AlphaEntry {
  std::size_t step = 0;  // 1-based t
  Sequence history;
  double alpha = 0.0;
};

struct JsDecompositionReport {
  double lhs = 0.0;
  double rhs = 0.0;
  double diff = 0.0;
  bool pass = false;
  std::vector<AlphaEntry> alpha_table;
};

namespace detail {

/// Walks every non-absorbed history with positive mixture mass, carrying the
/// prefix marginals (P_<t(h), Q_<t(h)). `p_step` gives P's conditional at h.
/// The visitor sees (h, P_<t, Q_<t, p_t, q_t) with conditionals omitted when
/// the corresponding marginal is zero.
template <typename PStep, typename Visit>
void walk_pair(const PStep& p_step, const PolicyProvider& q, const GenerationLimits& limits, Visit&& visit) {
  Sequence h;
  std::function<void(long double, long double)> rec = [&](long double pm, long double qm) {
    if (h.size() == limits.t_max || absorbed(h, limits.eos)) return;
    const auto prefix = as_prefix(h);
    std::optional<Distribution> pd, qd;
    if (pm > 0) pd = p_step(prefix);
    if (qm > 0) qd = q.next_dist(prefix);
    visit(h, pm, qm, pd, qd);
    std::map<TokenId, std::pair<long double, long double>> next;
    if (pd) {
      for (std::size_t i = 0; i < pd->size(); ++i) next[pd->support()[i]].first = pm * pd->probs()[i];
    }
    if (qd) {
      for (std::size_t i = 0; i < qd->size(); ++i) next[qd->support()[i]].second = qm * qd->probs()[i];
    }
    for (const auto& [tok, masses] : next) {
      h.push_back(tok);
      rec(masses.first, masses.second);
      h.pop_back();
    }
  };
  rec(1.0L, 1.0L);
}

/// alpha-skewed JS where a missing side carries zero weight.
inline double skew_js_partial(const std::optional<Distribution>& pd, const std::optional<Distribution>& qd,
                              double alpha) {
  if (!pd || !qd) return 0.0;
  return skew_js_divergence(*pd, *qd, alpha);
}

}  // namespace detail

/// JS(P||Q) over sequences vs sum over steps of E_{M_<t}[JS^{alpha_t}(p_t || q_t)],
/// alpha_t(h) = P_<t(h) / (P_<t(h) + Q_<t(h)).
inline JsDecompositionReport verify_js_decomposition(const PolicyProvider& p, const PolicyProvider& q,
                                                     const GenerationLimits& limits) {
  JsDecompositionReport r;
  r.lhs = sequence_js(enumerate_law(p, limits), enumerate_law(q, limits));
  CompensatedSum rhs;
  detail::walk_pair([&](const Prefix& h) { return p.next_dist(h); }, q, limits,
                    [&](const Sequence& h, long double pm, long double qm, const auto& pd, const auto& qd) {
                      const double alpha = static_cast<double>(pm / (pm + qm));
                      r.alpha_table.push_back(AlphaEntry{h.size() + 1, h, alpha});
                      rhs += 0.5L * (pm + qm) * detail::skew_js_partial(pd, qd, alpha);
                    });
  r.rhs = static_cast<double>(rhs.value());
  r.diff = std::fabs(r.lhs - r.rhs);
  r.pass = r.diff <= kChainRuleTolerance;
  return r;
}

// ---------------------------------------------------------------------------
// Bounds for the mixed policy
// ---------------------------------------------------------------------------

namespace detail {

/// N_0 of a sequence: steps t <= tau whose history does not switch.
inline std::size_t non_intervention_steps(const MixedPolicy& mix, const Sequence& x,
                                          const std::optional<TokenId>& eos,
                                          std::map<Sequence, bool>& cache) {
  std::size_t n0 = 0;
  Sequence h;
  for (const TokenId tok : x) {
    auto it = cache.find(h);
    if (it == cache.end()) it = cache.emplace(h, mix.switches_at(as_prefix(h))).first;
    if (!it->second) ++n0;
    if (eos && tok == *eos) break;
    h.push_back(tok);
  }
  return n0;
}

inline double expected_n0(const MixedPolicy& mix, const SequenceLaw& law, std::map<Sequence, bool>& cache) {
  CompensatedSum s;
  for (const auto& [x, px] : law.probs) {
    s += static_cast<long double>(px) * non_intervention_steps(mix, x, law.eos, cache);
  }
  return static_cast<double>(s.value());
}

inline CrossSampleConfig unbudgeted(PolicyPtr prim, PolicyPtr inter, double epsilon, DivergenceKind kind,
                                    const GenerationLimits& limits) {
  CrossSampleConfig cfg;
  cfg.primary = std::move(prim);
  cfg.intervention = std::move(inter);
  cfg.rule.epsilon = epsilon;
  cfg.rule.kind = kind;
  cfg.limits = limits;
  return cfg;
}

}  // namespace detail

struct KlBoundReport {
  double epsilon = 0.0;
  double kl_mix_int = 0.0;
  double expected_n0 = 0.0;       // E_{P_mix}[N_0], from the sequence law
  double expected_n0_walk = 0.0;  // same quantity from the history walk
  double eps_times_en0 = 0.0;
  double kappa_bar = 0.0;
  double identity_diff = 0.0;  // |KL - kappa_bar * E[N_0]|
  bool identity_pass = false;
  bool kappa_le_eps = false;
  bool holds = false;
};

/// Switching on token-level KL(prim || int) > epsilon, checks
/// KL(P_mix || P_int) <= epsilon * E_{P_mix}[N_0] and the effective-KL identity.
inline KlBoundReport verify_kl_eps_bound(const PolicyPtr& prim, const PolicyPtr& inter, double epsilon,
                                         const GenerationLimits& limits) {
  const MixedPolicy mix(detail::unbudgeted(prim, inter, epsilon, DivergenceKind::KL, limits));
  const auto p_mix = enumerate_law(mix, limits);
  const auto p_int = enumerate_law(*inter, limits);

  KlBoundReport r;
  r.epsilon = epsilon;
  r.kl_mix_int = sequence_kl(p_mix, p_int);
  std::map<Sequence, bool> cache;
  r.expected_n0 = detail::expected_n0(mix, p_mix, cache);

  CompensatedSum numer, n0_walk;
  Sequence h;
  std::function<void(long double)> walk = [&](long double pm) {
    if (h.size() == limits.t_max || detail::absorbed(h, limits.eos)) return;
    const auto prefix = detail::as_prefix(h);
    const auto st = mix.step(prefix);
    if (!st.switched) {
      numer += pm * kl_divergence(prim->next_dist(prefix), inter->next_dist(prefix));
      n0_walk += pm;
    }
    for (std::size_t i = 0; i < st.dist.size(); ++i) {
      h.push_back(st.dist.support()[i]);
      walk(pm * st.dist.probs()[i]);
      h.pop_back();
    }
  };
  walk(1.0L);
  r.expected_n0_walk = static_cast<double>(n0_walk.value());
  r.eps_times_en0 = epsilon * r.expected_n0;
  r.kappa_bar = r.expected_n0 > 0 ? static_cast<double>(numer.value()) / r.expected_n0 : 0.0;
  r.identity_diff = std::fabs(r.kl_mix_int - r.kappa_bar * r.expected_n0);
  r.identity_pass = r.identity_diff <= kChainRuleTolerance;
  r.kappa_le_eps = r.kappa_bar <= epsilon + kBoundSlack;
  r.holds = r.kl_mix_int <= r.eps_times_en0 + kBoundSlack;
  return r;
}

struct JsBoundReport {
  double epsilon = 0.0;
  double js_mix_int = 0.0;
  double expected_n0_mix = 0.0;
  double expected_n0_int = 0.0;
  double expected_n0_m = 0.0;       // (E_mix + E_int) / 2
  double expected_n0_m_walk = 0.0;  // from the history walk under M
  double eps_times_en0_m = 0.0;     // equals eps/2 * (E_mix + E_int)
  double j_bar = 0.0;
  double identity_diff = 0.0;
  bool identity_pass = false;
  bool j_le_eps = false;
  bool holds = false;
};

/// Switching on plain token-level JS(prim || int) > epsilon, first checks the
/// hypothesis that every non-switch history with positive M-mass has
/// alpha_t-skewed JS <= epsilon (throws HypothesisViolated listing the
/// offenders), then checks JS(P_mix || P_int) <= epsilon * E_M[N_0] and the
/// effective skew-JS identity.
inline JsBoundReport verify_js_eps_bound(const PolicyPtr& prim, const PolicyPtr& inter, double epsilon,
                                         const GenerationLimits& limits) {
  const MixedPolicy mix(detail::unbudgeted(prim, inter, epsilon, DivergenceKind::JS, limits));
  const auto p_mix = enumerate_law(mix, limits);
  const auto p_int = enumerate_law(*inter, limits);

  std::vector<HypothesisViolated::Violation> violations;
  CompensatedSum numer, n0_walk;
  detail::walk_pair([&](const Prefix& h) { return mix.next_dist(h); }, *inter, limits,
                    [&](const Sequence& h, long double pm, long double qm, const auto&, const auto&) {
                      const auto prefix = detail::as_prefix(h);
                      if (mix.switches_at(prefix)) return;
                      const double alpha = static_cast<double>(pm / (pm + qm));
                      const long double m = 0.5L * (pm + qm);
                      const double sj =
                          skew_js_divergence(prim->next_dist(prefix), inter->next_dist(prefix), alpha);
                      if (sj > epsilon + kBoundSlack) {
                        violations.push_back({h.size() + 1, h, alpha, sj});
                      }
                      numer += m * sj;
                      n0_walk += m;
                    });
  if (!violations.empty()) throw HypothesisViolated(std::move(violations), epsilon);

  JsBoundReport r;
  r.epsilon = epsilon;
  r.js_mix_int = sequence_js(p_mix, p_int);
  std::map<Sequence, bool> cache;
  r.expected_n0_mix = detail::expected_n0(mix, p_mix, cache);
  r.expected_n0_int = detail::expected_n0(mix, p_int, cache);
  r.expected_n0_m = 0.5 * (r.expected_n0_mix + r.expected_n0_int);
  r.expected_n0_m_walk = static_cast<double>(n0_walk.value());
  r.eps_times_en0_m = epsilon * r.expected_n0_m;
  r.j_bar = r.expected_n0_m > 0 ? static_cast<double>(numer.value()) / r.expected_n0_m : 0.0;
  r.identity_diff = std::fabs(r.js_mix_int - r.j_bar * r.expected_n0_m);
  r.identity_pass = r.identity_diff <= kChainRuleTolerance;
  r.j_le_eps = r.j_bar <= epsilon + kBoundSlack;
  r.holds = r.js_mix_int <= r.eps_times_en0_m + kBoundSlack;
  return r;
}

}  // namespace tokshift
