// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * @file rl_weighting.hpp
 * @brief Group-normalized advantages, the clip-higher per-token surrogate,
 *        the k3 KL estimator and divergence-weighted advantages.
 *
 * Per-token KL values are caller-supplied constants (no gradient flows
 * through them); this header never recomputes full-distribution KLs.
 */

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "tokshift/dist_core.hpp"
#include "tokshift/errors.hpp"

namespace tokshift {

struct RewardGroup {
  std::vector<double> rewards;

  void validate() const {
    if (rewards.size() < 2) throw PreconditionError("a reward group needs G >= 2");
    for (const double r : rewards) {
      if (!std::isfinite(r)) throw PreconditionError("rewards must be finite");
    }
  }
};

/// (R_i - mean) / std with the population standard deviation.
inline std::vector<double> group_advantage(const RewardGroup& group) {
  group.validate();
  const auto n = static_cast<long double>(group.rewards.size());
  CompensatedSum sum;
  for (const double r : group.rewards) sum += r;
  const long double mean = sum.value() / n;
  CompensatedSum sq;
  for (const double r : group.rewards) sq += (r - mean) * (r - mean);
  const long double sd = std::sqrt(sq.value() / n);
  if (!(sd > 1e-12L)) throw GroupDegenerate();
  std::vector<double> out;
  out.reserve(group.rewards.size());
  for (const double r : group.rewards) out.push_back(static_cast<double>((r - mean) / sd));
  return out;
}

inline bool dynamic_sampling_admissible(std::size_t correct_count, std::size_t group_size) {
  if (correct_count > group_size) throw PreconditionError("correct_count exceeds group size");
  return correct_count > 0 && correct_count < group_size;
}

/// r - ln r - 1.
inline double k3_kl_estimate(double ratio) {
  if (!(ratio > 0.0) || !std::isfinite(ratio)) throw NonPositiveRatio();
  return ratio - std::log(ratio) - 1.0;
}

struct WeightingParams {
  double s = 0.3;
  double alpha = 0.0;

  void validate() const {
    if (!std::isfinite(s) || !std::isfinite(alpha)) throw PreconditionError("weighting params must be finite");
  }
};

inline double sigmoid(double x) {
  // split keeps exp() from overflowing for large |x|
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// 1 + s * (sigmoid(alpha * kl) - 1/2).
inline double sigmoid_weight(double kl, const WeightingParams& params) {
  params.validate();
  if (!(kl >= 0.0)) throw PreconditionError("kl must be >= 0");
  return 1.0 + params.s * (sigmoid(params.alpha * kl) - 0.5);
}

inline std::vector<double> divergence_weighted_advantage(std::span<const double> adv, std::span<const double> kls,
                                                         const WeightingParams& params) {
  if (adv.size() != kls.size()) throw LengthMismatch(adv.size(), kls.size());
  std::vector<double> out(adv.size());
  for (std::size_t i = 0; i < adv.size(); ++i) out[i] = sigmoid_weight(kls[i], params) * adv[i];
  return out;
}

struct ClipParams {
  double eps_low = 0.2;
  double eps_high = 0.28;

  void validate() const {
    if (!(eps_low > 0.0) || !(eps_high > 0.0)) throw PreconditionError("clip epsilons must be > 0");
  }
};

/// min(r * A, clip(r, 1 - eps_low, 1 + eps_high) * A).
inline double dapo_token_objective(double ratio, double advantage, const ClipParams& clip) {
  clip.validate();
  if (!(ratio > 0.0)) throw NonPositiveRatio();
  const double clipped = std::clamp(ratio, 1.0 - clip.eps_low, 1.0 + clip.eps_high);
  return std::min(ratio * advantage, clipped * advantage);
}

/// One response's per-token ratios and advantages.
struct ResponseTokens {
  std::vector<double> ratios;
  std::vector<double> advantages;
};

/// Token-level group objective: the sum of per-token terms over all responses
/// divided by the total token count.
inline double dapo_group_objective(const std::vector<ResponseTokens>& responses, const ClipParams& clip) {
  CompensatedSum sum;
  std::size_t tokens = 0;
  for (const auto& o : responses) {
    if (o.ratios.size() != o.advantages.size()) throw LengthMismatch(o.ratios.size(), o.advantages.size());
    for (std::size_t t = 0; t < o.ratios.size(); ++t) sum += dapo_token_objective(o.ratios[t], o.advantages[t], clip);
    tokens += o.ratios.size();
  }
  if (tokens == 0) throw EmptyInput();
  return static_cast<double>(sum.value() / static_cast<long double>(tokens));
}

struct AlphaSchedule {
  long long start_step = 0;
  double end_value = 0.0;
  long long end_step = 1;

  void validate() const {
    if (end_step <= start_step) throw ScheduleInvalid("end_step must exceed start_step");
    if (!std::isfinite(end_value)) throw ScheduleInvalid("end_value must be finite");
  }
};

inline double alpha_schedule(long long step, const AlphaSchedule& sched) {
  sched.validate();
  if (step <= sched.start_step) return 0.0;
  if (step >= sched.end_step) return sched.end_value;
  return sched.end_value * static_cast<double>(step - sched.start_step) /
         static_cast<double>(sched.end_step - sched.start_step);
}

// ---------------------------------------------------------------------------
// Batch evaluation
// ---------------------------------------------------------------------------

struct WeightRow {
  double ratio = 1.0;
  double advantage = 0.0;
  double kl = 0.0;
};

struct WeightedRow {
  WeightRow in;
  double weight = 1.0;
  double weighted_advantage = 0.0;
  double objective = 0.0;  // surrogate with the weighted advantage
};

/// Where the per-token KL values came from; carried into outputs unchanged.
enum class KlProvenance { SampledToken, FullDistribution, Unspecified };

inline const char* to_string(KlProvenance p) {
  switch (p) {
    case KlProvenance::SampledToken: return "sampled-token";
    case KlProvenance::FullDistribution: return "full-distribution";
    case KlProvenance::Unspecified: break;
  }
  return "unspecified";
}

inline KlProvenance parse_kl_provenance(const std::string& s) {
  if (s == "sampled-token") return KlProvenance::SampledToken;
  if (s == "full-distribution") return KlProvenance::FullDistribution;
  if (s == "unspecified" || s.empty()) return KlProvenance::Unspecified;
  throw PreconditionError("unknown KL provenance: " + s);
}

inline std::vector<WeightedRow> evaluate_weight_rows(const std::vector<WeightRow>& rows,
                                                     const WeightingParams& params, const ClipParams& clip) {
  std::vector<WeightedRow> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    WeightedRow w{r, sigmoid_weight(r.kl, params), 0.0, 0.0};
    w.weighted_advantage = w.weight * r.advantage;
    w.objective = dapo_token_objective(r.ratio, w.weighted_advantage, clip);
    out.push_back(w);
  }
  return out;
}

}  // namespace tokshift
