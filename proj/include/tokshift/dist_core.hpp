// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file dist_core.hpp
 * @brief Exact probability-vector arithmetic over token vocabularies.
 *
 * Distributions are stored sparsely as (support, probs) pairs with the
 * support strictly ascending, so truncated top-k logprob dumps round-trip
 * losslessly. All logarithms are natural (nats); 0 log 0 := 0 throughout.
 *
 * Accumulation runs in long double with Neumaier compensation.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tokshift/errors.hpp"

namespace tokshift {

using TokenId = std::uint32_t;

inline constexpr double kLn2 = std::numbers::ln2;

/// Neumaier-compensated accumulator in extended precision.
class CompensatedSum {
 public:
  void add(long double x) noexcept {
    const long double t = sum_ + x;
    if (std::fabs(sum_) >= std::fabs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  CompensatedSum& operator+=(long double x) noexcept {
    add(x);
    return *this;
  }
  long double value() const noexcept { return sum_ + comp_; }

 private:
  long double sum_ = 0.0L;
  long double comp_ = 0.0L;
};

/// Finite probability measure over token ids [0, vocab_size).
class Distribution {
 public:
  /// Builds from (id, mass) pairs; masses need not sum to one. Zero-mass
  /// entries are dropped. Throws AllZeroMass when nothing remains.
  static Distribution from_masses(std::vector<std::pair<TokenId, double>> entries,
                                  std::size_t vocab_size) {
    if (vocab_size == 0) throw PreconditionError("vocab_size must be positive");
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    CompensatedSum total;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& [id, mass] = entries[i];
      if (id >= vocab_size) {
        throw PreconditionError("token id " + std::to_string(id) + " outside vocabulary of size " +
                                std::to_string(vocab_size));
      }
      if (!(mass >= 0.0) || !std::isfinite(mass)) {
        throw PreconditionError("masses must be finite and non-negative");
      }
      if (i > 0 && entries[i - 1].first == id) {
        throw PreconditionError("duplicate token id " + std::to_string(id));
      }
      total += mass;
    }
    const long double z = total.value();
    if (!(z > 0.0L)) throw AllZeroMass();

    Distribution d;
    d.vocab_size_ = vocab_size;
    for (const auto& [id, mass] : entries) {
      if (mass > 0.0) {
        d.support_.push_back(id);
        d.probs_.push_back(static_cast<double>(static_cast<long double>(mass) / z));
      }
    }
    return d;
  }

  static Distribution point_mass(TokenId id, std::size_t vocab_size) {
    return from_masses({{id, 1.0}}, vocab_size);
  }

  static Distribution uniform(std::size_t vocab_size) {
    std::vector<std::pair<TokenId, double>> e;
    e.reserve(vocab_size);
    for (std::size_t i = 0; i < vocab_size; ++i) e.emplace_back(static_cast<TokenId>(i), 1.0);
    return from_masses(std::move(e), vocab_size);
  }

  std::span<const TokenId> support() const noexcept { return support_; }
  std::span<const double> probs() const noexcept { return probs_; }
  std::size_t vocab_size() const noexcept { return vocab_size_; }
  std::size_t size() const noexcept { return support_.size(); }

  /// Probability of `id`; 0 when off-support.
  double prob(TokenId id) const noexcept {
    auto it = std::lower_bound(support_.begin(), support_.end(), id);
    if (it == support_.end() || *it != id) return 0.0;
    return probs_[static_cast<std::size_t>(it - support_.begin())];
  }

  /// Dense vector of length vocab_size.
  std::vector<double> dense() const {
    std::vector<double> out(vocab_size_, 0.0);
    for (std::size_t i = 0; i < support_.size(); ++i) out[support_[i]] = probs_[i];
    return out;
  }

  /// Support indices ordered by descending probability, ties by ascending id.
  std::vector<std::size_t> rank_order() const {
    std::vector<std::size_t> idx(support_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(),
                     [this](std::size_t a, std::size_t b) { return probs_[a] > probs_[b]; });
    return idx;
  }

  friend bool operator==(const Distribution&, const Distribution&) = default;

 private:
  Distribution() = default;

  std::vector<TokenId> support_;
  std::vector<double> probs_;
  std::size_t vocab_size_ = 0;
};

struct TruncationSpec {
  double top_p = 1.0;
  std::optional<std::size_t> top_k;

  void validate() const {
    if (!(top_p > 0.0 && top_p <= 1.0)) throw SpecInvalid("top_p must lie in (0, 1]");
    if (top_k && *top_k < 1) throw SpecInvalid("top_k must be >= 1");
  }
  bool is_identity() const noexcept { return top_p >= 1.0 && !top_k; }
};

/// Dense non-negative masses -> Distribution over vocab of size raw.size().
inline Distribution normalize(std::span<const double> raw) {
  std::vector<std::pair<TokenId, double>> e;
  e.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) e.emplace_back(static_cast<TokenId>(i), raw[i]);
  if (raw.empty()) throw AllZeroMass();
  return Distribution::from_masses(std::move(e), raw.size());
}

inline Distribution normalize(std::initializer_list<double> raw) {
  return normalize(std::span<const double>(raw.begin(), raw.size()));
}

/// Nucleus truncation: keep the shortest descending-probability prefix whose
/// cumulative mass reaches top_p (the crossing token is kept), then renormalize.
/// top_k, when set, is applied first.
inline Distribution truncate_top_p(const Distribution& d, const TruncationSpec& spec) {
  spec.validate();
  if (spec.is_identity()) return d;

  const auto order = d.rank_order();
  std::size_t keep = order.size();
  if (spec.top_k) keep = std::min(keep, *spec.top_k);

  if (spec.top_p < 1.0) {
    CompensatedSum head;
    for (std::size_t i = 0; i < keep; ++i) head += d.probs()[order[i]];
    const long double z = head.value();
    CompensatedSum cum;
    for (std::size_t i = 0; i < keep; ++i) {
      cum += d.probs()[order[i]];
      if (cum.value() / z >= static_cast<long double>(spec.top_p)) {
        keep = i + 1;
        break;
      }
    }
  }

  std::vector<std::pair<TokenId, double>> kept;
  kept.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    kept.emplace_back(d.support()[order[i]], d.probs()[order[i]]);
  }
  return Distribution::from_masses(std::move(kept), d.vocab_size());
}

namespace detail {

inline void require_same_vocab(const Distribution& p, const Distribution& q) {
  if (p.vocab_size() != q.vocab_size()) {
    throw PreconditionError("distributions are over different vocabularies (" +
                            std::to_string(p.vocab_size()) + " vs " +
                            std::to_string(q.vocab_size()) + ")");
  }
}

/// Walks the union of two supports in ascending id order.
template <typename Fn>
void for_each_union(const Distribution& p, const Distribution& q, Fn&& fn) {
  const auto ps = p.support();
  const auto qs = q.support();
  std::size_t i = 0, j = 0;
  while (i < ps.size() || j < qs.size()) {
    if (j == qs.size() || (i < ps.size() && ps[i] < qs[j])) {
      fn(ps[i], p.probs()[i], 0.0);
      ++i;
    } else if (i == ps.size() || qs[j] < ps[i]) {
      fn(qs[j], 0.0, q.probs()[j]);
      ++j;
    } else {
      fn(ps[i], p.probs()[i], q.probs()[j]);
      ++i;
      ++j;
    }
  }
}

/// KL(p||q) that returns +inf instead of throwing on off-support mass.
inline double kl_or_inf(const Distribution& p, const Distribution& q) {
  require_same_vocab(p, q);
  CompensatedSum s;
  bool infinite = false;
  for_each_union(p, q, [&](TokenId, double pi, double qi) {
    if (pi <= 0.0) return;
    if (qi <= 0.0) {
      infinite = true;
      return;
    }
    s += static_cast<long double>(pi) * std::log(static_cast<long double>(pi) / qi);
  });
  if (infinite) return std::numeric_limits<double>::infinity();
  return static_cast<double>(std::max(0.0L, s.value()));
}

}  // namespace detail

/// KL(p || q) in nats. Throws AbsoluteContinuityViolation when p puts mass
/// where q has none.
inline double kl_divergence(const Distribution& p, const Distribution& q) {
  const double v = detail::kl_or_inf(p, q);
  if (std::isinf(v)) {
    throw AbsoluteContinuityViolation("p has mass on a token outside the support of q");
  }
  return v;
}

/// alpha*KL(p||m) + (1-alpha)*KL(q||m) with m = alpha*p + (1-alpha)*q.
inline double skew_js_divergence(const Distribution& p, const Distribution& q, double alpha) {
  detail::require_same_vocab(p, q);
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw PreconditionError("alpha must lie in [0, 1]");
  const long double a = alpha;
  const long double b = 1.0L - a;
  CompensatedSum s;
  detail::for_each_union(p, q, [&](TokenId, double pi, double qi) {
    const long double lp = pi, lq = qi;
    const long double m = a * lp + b * lq;
    long double x = 0.0L, y = 0.0L;
    if (a > 0 && lp > 0) x = a * lp * std::log(lp / m);
    if (b > 0 && lq > 0) y = b * lq * std::log(lq / m);
    s += x + y;  // one add per token keeps alpha=1/2 exactly symmetric
  });
  // Bounded by the binary entropy of alpha, itself <= ln 2.
  return static_cast<double>(std::clamp(s.value(), 0.0L, static_cast<long double>(kLn2)));
}

/// Jensen-Shannon divergence in nats; defined for any supports, in [0, ln 2].
inline double js_divergence(const Distribution& p, const Distribution& q) {
  return skew_js_divergence(p, q, 0.5);
}

inline double entropy(const Distribution& d) {
  CompensatedSum s;
  for (const double pi : d.probs()) {
    s += -static_cast<long double>(pi) * std::log(static_cast<long double>(pi));
  }
  return static_cast<double>(std::max(0.0L, s.value()));
}

/// First `k` tokens of the full ranking: support by descending probability
/// (ties by id), then off-support ids ascending. k is clamped to vocab_size.
inline std::vector<TokenId> ranked_tokens(const Distribution& d, std::size_t k) {
  k = std::min(k, d.vocab_size());
  std::vector<TokenId> out;
  out.reserve(k);
  for (const std::size_t i : d.rank_order()) {
    if (out.size() == k) return out;
    out.push_back(d.support()[i]);
  }
  const auto sup = d.support();
  std::size_t j = 0;
  for (TokenId id = 0; out.size() < k && id < d.vocab_size(); ++id) {
    while (j < sup.size() && sup[j] < id) ++j;
    if (j < sup.size() && sup[j] == id) continue;
    out.push_back(id);
  }
  return out;
}

/// 1-based rank of `t` under the ordering of ranked_tokens().
inline std::size_t rank_of(const Distribution& d, TokenId t) {
  if (t >= d.vocab_size()) throw PreconditionError("token id outside vocabulary");
  const double pt = d.prob(t);
  const auto sup = d.support();
  if (pt > 0.0) {
    std::size_t ahead = 0;
    for (std::size_t i = 0; i < sup.size(); ++i) {
      const double pi = d.probs()[i];
      if (pi > pt || (pi == pt && sup[i] < t)) ++ahead;
    }
    return ahead + 1;
  }
  const auto below = static_cast<std::size_t>(std::lower_bound(sup.begin(), sup.end(), t) - sup.begin());
  return sup.size() + (t - below) + 1;
}

/// The k highest-ranked tokens as an ascending set.
inline std::vector<TokenId> top_k_set(const Distribution& d, std::size_t k) {
  if (k < 1) throw PreconditionError("k must be >= 1");
  auto out = ranked_tokens(d, k);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace tokshift
