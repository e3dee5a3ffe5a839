#pragma once

#include <span>
#include <vector>

#include "mapo/core.hpp"
#include "mapo/env.hpp"
#include "mapo/policy.hpp"

namespace mapo {

enum class Aggregation { TokenMean };

struct ObjectiveConfig {
  double clip_eps = 0.2;  // +infinity disables clipping
  double kl_coef = 1e-2;
  Aggregation aggregation = Aggregation::TokenMean;

  void validate() const;  // throws ConfigError

  // Clipping and KL switched off: the setting of the gradient-ratio analysis.
  static ObjectiveConfig unclipped_without_kl() noexcept;
};

// f_eps(x, y) = min(x y, clip(x, 1-eps, 1+eps) y).
double clipped_term(double ratio, double advantage, double clip_eps) noexcept;

// Decision steps (more than one allowed token) of every trajectory, in batch order.
std::vector<TokenStep> collect_visits(std::span<const RolloutGroup> groups,
                                      const TabularPolicy& policy);

// Exact categorical KL(theta || ref) over the masked support, averaged over
// the visits (a state visited twice counts twice). Zero for no visits.
double kl_divergence(const TabularPolicy& theta, const TabularPolicy& ref,
                     std::span<const TokenStep> visits);

struct ObjectiveValue {
  double objective = 0.0;    // policy_term - kl_coef * kl
  double policy_term = 0.0;  // mean over groups of the token-mean clipped surrogate
  double kl = 0.0;
};

struct ObjectiveGradient {
  ObjectiveValue value;
  std::vector<double> gradient;  // d objective / d logits, laid out like parameters()
};

// Batch objective to be maximized. Group g contributes
//   (1/G) sum_i (1/T_i) sum_t f_eps(exp(logp_theta - logp_old), A_i)
// and the group terms are averaged; the KL penalty covers every visit in the
// batch. Throws ContractViolation on mismatched lengths.
ObjectiveValue surrogate_objective(std::span<const RolloutGroup> groups,
                                   std::span<const AdvantageVector> advantages,
                                   const TabularPolicy& theta, const TabularPolicy& ref,
                                   const ObjectiveConfig& cfg);

// Analytic gradient of surrogate_objective. Clipped tokens are treated as
// constants. Group terms may be evaluated on `jobs` threads; the reduction
// runs in group order, so the result does not depend on `jobs`.
ObjectiveGradient exact_gradient(std::span<const RolloutGroup> groups,
                                 std::span<const AdvantageVector> advantages,
                                 const TabularPolicy& theta, const TabularPolicy& ref,
                                 const ObjectiveConfig& cfg, unsigned jobs = 1);

// Single-group forms.
double surrogate_loss(const RolloutGroup& group, const AdvantageVector& adv,
                      const TabularPolicy& theta, const ObjectiveConfig& cfg,
                      const TabularPolicy& ref);
std::vector<double> exact_gradient(const RolloutGroup& group, const AdvantageVector& adv,
                                   const TabularPolicy& theta, const ObjectiveConfig& cfg,
                                   const TabularPolicy& ref);

}  // namespace mapo
