// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file policies.hpp
 * @brief Next-token policy abstraction and the seeded toy policies used for
 *        exact verification.
 *
 * A PolicyProvider maps a Prefix to a Distribution. Implementations are
 * immutable after construction, so next_dist() is reentrant and providers
 * may be shared across threads.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tokshift/dist_core.hpp"
#include "tokshift/rng.hpp"

namespace tokshift {

/// Tokens seen so far (prompt + generated). `context` names the sequence
/// for providers that are only defined along recorded trajectories.
struct Prefix {
  std::string context;
  std::vector<TokenId> tokens;
};

class PolicyProvider {
 public:
  virtual ~PolicyProvider() = default;
  virtual Distribution next_dist(const Prefix& prefix) const = 0;
  virtual std::size_t vocab_size() const = 0;
};

using PolicyPtr = std::shared_ptr<const PolicyProvider>;

struct GenerationLimits {
  std::size_t t_max = 1;
  std::optional<TokenId> eos;

  void validate() const {
    if (t_max < 1) throw SpecInvalid("t_max must be >= 1");
  }
};

/// A generated response and the prompt it continues.
struct Trajectory {
  std::string seq_id;
  std::vector<TokenId> prompt;
  std::vector<TokenId> response;

  /// Prefix preceding response position `pos`.
  Prefix prefix_at(std::size_t pos) const {
    Prefix p{seq_id, prompt};
    p.tokens.insert(p.tokens.end(), response.begin(),
                    response.begin() + static_cast<std::ptrdiff_t>(pos));
    return p;
  }
};

// ---------------------------------------------------------------------------
// Toy policies
// ---------------------------------------------------------------------------

enum class ToyKind { TabularMarkov, SoftmaxNgram };

struct ToyPolicySpec {
  ToyKind kind = ToyKind::SoftmaxNgram;
  std::size_t vocab_size = 4;
  std::size_t order = 1;  // tokens of context; 0 = memoryless
  std::uint64_t seed = 0;
  double temperature = 1.0;
  TokenId eos_id = 0;

  void validate() const {
    if (vocab_size < 1 || vocab_size > 64) throw SpecInvalid("toy vocab_size must be in [1, 64]");
    if (order > 4) throw SpecInvalid("toy order must be <= 4");
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
      throw SpecInvalid("toy temperature must be positive and finite");
    }
    if (eos_id >= vocab_size) throw SpecInvalid("eos_id must be < vocab_size");
  }
};

/// Stationary n-gram policy whose parameters are a pure function of
/// (kind, vocab_size, order, seed, context). No table is materialized: each
/// query re-derives its row from a counter-based generator keyed by the seed
/// and a hash of the last `order` tokens.
class ToyPolicy final : public PolicyProvider {
 public:
  explicit ToyPolicy(ToyPolicySpec spec) : spec_(spec) { spec_.validate(); }

  const ToyPolicySpec& spec() const noexcept { return spec_; }
  std::size_t vocab_size() const override { return spec_.vocab_size; }

  Distribution next_dist(const Prefix& prefix) const override {
    const std::size_t v = spec_.vocab_size;
    const std::uint64_t key = context_key(prefix.tokens);
    std::vector<double> logits(v);
    for (std::size_t i = 0; i < v; ++i) {
      double raw;
      if (spec_.kind == ToyKind::TabularMarkov) {
        // Exp(1) weights normalize to a flat-Dirichlet row.
        const double w = -std::log(rng::to_open_unit(rng::combine(key, i)));
        raw = std::log(w);
      } else {
        raw = 2.0 * rng::keyed_normal(key, i);
      }
      logits[i] = raw / spec_.temperature;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    for (double& l : logits) l = std::exp(l - mx);
    return normalize(logits);
  }

 private:
  std::uint64_t context_key(const std::vector<TokenId>& tokens) const {
    std::uint64_t h = rng::combine(spec_.seed, 0x7F4A7C15ULL + static_cast<std::uint64_t>(spec_.kind));
    h = rng::combine(h, spec_.vocab_size);
    h = rng::combine(h, spec_.order);
    const std::size_t n = tokens.size();
    for (std::size_t j = 0; j < spec_.order; ++j) {
      // Positions before the start of the prefix hash as a sentinel.
      const std::uint64_t tok = (n >= spec_.order - j)
                                    ? static_cast<std::uint64_t>(tokens[n - (spec_.order - j)])
                                    : 0xFFFFFFFFFFFFULL;
      h = rng::combine(h, tok);
    }
    return h;
  }

  ToyPolicySpec spec_;
};

inline PolicyPtr build_toy_policy(const ToyPolicySpec& spec) {
  return std::make_shared<ToyPolicy>(spec);
}

// ---------------------------------------------------------------------------
// Adapters
// ---------------------------------------------------------------------------

/// Wraps a callable; handy for hand-built test environments.
class FunctionPolicy final : public PolicyProvider {
 public:
  using Fn = std::function<Distribution(const Prefix&)>;
  FunctionPolicy(std::size_t vocab_size, Fn fn) : vocab_size_(vocab_size), fn_(std::move(fn)) {}
  Distribution next_dist(const Prefix& prefix) const override { return fn_(prefix); }
  std::size_t vocab_size() const override { return vocab_size_; }

 private:
  std::size_t vocab_size_;
  Fn fn_;
};

inline PolicyPtr make_policy(std::size_t vocab_size, FunctionPolicy::Fn fn) {
  return std::make_shared<FunctionPolicy>(vocab_size, std::move(fn));
}

/// Applies a truncation to every distribution of the inner policy.
class TruncatedPolicy final : public PolicyProvider {
 public:
  TruncatedPolicy(PolicyPtr inner, TruncationSpec trunc) : inner_(std::move(inner)), trunc_(trunc) {
    trunc_.validate();
  }
  Distribution next_dist(const Prefix& prefix) const override {
    return truncate_top_p(inner_->next_dist(prefix), trunc_);
  }
  std::size_t vocab_size() const override { return inner_->vocab_size(); }

 private:
  PolicyPtr inner_;
  TruncationSpec trunc_;
};

/// Geometric interpolation p^(1-w) q^w (renormalized); w=0 gives `from`,
/// w=1 gives `to`. Used to synthesize training checkpoints between two toys.
class InterpolatedPolicy final : public PolicyProvider {
 public:
  InterpolatedPolicy(PolicyPtr from, PolicyPtr to, double weight)
      : from_(std::move(from)), to_(std::move(to)), weight_(weight) {
    if (from_->vocab_size() != to_->vocab_size()) throw PreconditionError("vocab sizes differ");
    if (!(weight >= 0.0 && weight <= 1.0)) throw PreconditionError("weight must lie in [0, 1]");
  }
  Distribution next_dist(const Prefix& prefix) const override {
    if (weight_ == 0.0) return from_->next_dist(prefix);
    if (weight_ == 1.0) return to_->next_dist(prefix);
    const auto a = from_->next_dist(prefix).dense();
    const auto b = to_->next_dist(prefix).dense();
    std::vector<double> logm(a.size(), -std::numeric_limits<double>::infinity());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i] > 0 && b[i] > 0) {
        logm[i] = (1.0 - weight_) * std::log(a[i]) + weight_ * std::log(b[i]);
        mx = std::max(mx, logm[i]);
      }
    }
    if (!std::isfinite(mx)) throw AllZeroMass();
    std::vector<double> m(a.size(), 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (std::isfinite(logm[i])) m[i] = std::exp(logm[i] - mx);
    }
    return normalize(m);
  }
  std::size_t vocab_size() const override { return from_->vocab_size(); }

 private:
  PolicyPtr from_;
  PolicyPtr to_;
  double weight_;
};

/// A (base, rl) pair of toys: rl is the geometric interpolation, at weight
/// `shift`, from base towards an independent toy of the same shape.
struct ToyPair {
  PolicyPtr base;
  PolicyPtr rl;
};

inline ToyPair make_toy_pair(const ToyPolicySpec& base_spec, double shift) {
  ToyPolicySpec other = base_spec;
  other.seed = rng::combine(base_spec.seed, 0xB5);
  auto base = build_toy_policy(base_spec);
  return {base, std::make_shared<InterpolatedPolicy>(base, build_toy_policy(other), shift)};
}

// ---------------------------------------------------------------------------
// Plain sampling
// ---------------------------------------------------------------------------

/// Samples a response from a single policy: one uniform per step from a
/// stream seeded with `seed`, inverse-CDF over descending-rank order.
inline Trajectory sample_trajectory(const PolicyProvider& policy, const GenerationLimits& limits,
                                    std::uint64_t seed, const TruncationSpec& trunc = {},
                                    std::string seq_id = {}, std::vector<TokenId> prompt = {}) {
  limits.validate();
  Trajectory traj{std::move(seq_id), std::move(prompt), {}};
  rng::UniformStream stream(seed);
  Prefix prefix{traj.seq_id, traj.prompt};
  for (std::size_t t = 0; t < limits.t_max; ++t) {
    const auto d = truncate_top_p(policy.next_dist(prefix), trunc);
    const TokenId tok = rng::inverse_cdf(d, stream.next());
    traj.response.push_back(tok);
    prefix.tokens.push_back(tok);
    if (limits.eos && tok == *limits.eos) break;
  }
  return traj;
}

}  // namespace tokshift
