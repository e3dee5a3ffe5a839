#pragma once

#include "mapo/core.hpp"

namespace mapo {

struct EstimatorSpec {
  EstimatorKind kind = EstimatorKind::MAPO;
  double alpha = 0.6;     // GPG valid-sample rescale
  double eps_div = 1e-8;  // guards every denominator

  void validate() const;  // throws ConfigError
};

// z-score: (r_i - mu) / (sigma + eps).
AdvantageVector advantage_grpo(const RewardVector& rewards, const GroupStats& stats,
                               double eps_div);

// Percent deviation: (r_i - mu) / (mu + eps).
AdvantageVector advantage_apd(const RewardVector& rewards, const GroupStats& stats,
                              double eps_div);

// (1 - lambda) * grpo + lambda * apd, with lambda taken from stats.mix_weight.
AdvantageVector advantage_mapo(const RewardVector& rewards, const GroupStats& stats,
                               double eps_div);

// DrGRPO: r_i - mu.  GPG: alpha (r_i - mu).  TreeRPO: (r_i - mu) / (mu(1-mu) + eps).
// Throws ConfigError for any other kind.
AdvantageVector advantage_baseline(const RewardVector& rewards, const GroupStats& stats,
                                   const EstimatorSpec& spec);

// Dispatches on spec.kind.
AdvantageVector compute_advantage(const RewardVector& rewards, const GroupStats& stats,
                                  const EstimatorSpec& spec);

}  // namespace mapo
