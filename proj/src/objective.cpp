#include "mapo/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "mapo/errors.hpp"
#include "mapo/parallel.hpp"

namespace mapo {

namespace {

using SparseGradient = std::vector<std::pair<std::size_t, double>>;

void check_batch(std::span<const RolloutGroup> groups, std::span<const AdvantageVector> advantages,
                 const TabularPolicy& theta, const TabularPolicy& ref) {
  if (groups.size() != advantages.size()) {
    throw ContractViolation("advantage batch has " + std::to_string(advantages.size()) +
                            " entries for " + std::to_string(groups.size()) + " groups");
  }
  if (!(theta.shape() == ref.shape())) {
    throw ContractViolation("policy and reference have different shapes");
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (advantages[g].size() != groups[g].size()) {
      throw ContractViolation("group " + std::to_string(g) + ": advantage length " +
                              std::to_string(advantages[g].size()) + " != G " +
                              std::to_string(groups[g].size()));
    }
    for (const auto& traj : groups[g].trajectories) {
      if (traj.logp_old.size() != traj.tokens.size()) {
        throw ContractViolation("trajectory logp_old length differs from token count");
      }
    }
  }
}

// Policy term of one group; appends gradient contributions when `grad` is set.
double group_term(const RolloutGroup& group, const AdvantageVector& adv, const TabularPolicy& theta,
                  double clip_eps, double weight, SparseGradient* grad) {
  const double g_inv = 1.0 / static_cast<double>(group.size());
  const std::uint32_t vocab = theta.vocab_size();
  std::vector<double> probs(vocab);
  double total = 0.0;
  for (std::size_t i = 0; i < group.size(); ++i) {
    const Trajectory& traj = group.trajectories[i];
    if (traj.tokens.empty()) continue;
    const double a = adv[i];
    const double tok_w = weight * g_inv / static_cast<double>(traj.tokens.size());
    const auto steps = trajectory_steps(theta, traj.prompt_id, traj.tokens);
    double traj_sum = 0.0;
    for (std::size_t t = 0; t < steps.size(); ++t) {
      const TokenStep& s = steps[t];
      const double lp_new = theta.log_prob(s.state, s.mask, s.token);
      const double ratio = std::exp(lp_new - traj.logp_old[t]);
      traj_sum += clipped_term(ratio, a, clip_eps);
      if (grad == nullptr || s.forced() || a == 0.0) continue;
      const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * a;
      if (ratio * a > clipped) continue;  // clipped branch is active: constant
      const double c = tok_w * a * ratio;
      theta.probabilities(s.state, s.mask, 1.0, probs);
      for (TokenMask m = s.mask; m != 0; m &= m - 1) {
        const auto b = static_cast<TokenId>(__builtin_ctzll(m));
        const double score = (b == s.token ? 1.0 : 0.0) - probs[b];
        grad->emplace_back(s.state * vocab + b, c * score);
      }
    }
    total += traj_sum / static_cast<double>(traj.tokens.size());
  }
  return weight * total * g_inv;
}

// KL over the visits; adds -coef * dKL/dtheta into `grad` when non-null.
double kl_with_gradient(const TabularPolicy& theta, const TabularPolicy& ref,
                        std::span<const TokenStep> visits, double coef,
                        std::vector<double>* grad) {
  if (visits.empty()) return 0.0;
  const std::uint32_t vocab = theta.vocab_size();
  const double inv_m = 1.0 / static_cast<double>(visits.size());
  std::vector<double> lp(vocab), lq(vocab);
  double total = 0.0;
  for (const TokenStep& v : visits) {
    double kl = 0.0;
    for (TokenMask m = v.mask; m != 0; m &= m - 1) {
      const auto b = static_cast<TokenId>(__builtin_ctzll(m));
      lp[b] = theta.log_prob(v.state, v.mask, b);
      lq[b] = ref.log_prob(v.state, v.mask, b);
      kl += std::exp(lp[b]) * (lp[b] - lq[b]);
    }
    total += kl;
    if (grad == nullptr) continue;
    for (TokenMask m = v.mask; m != 0; m &= m - 1) {
      const auto b = static_cast<TokenId>(__builtin_ctzll(m));
      (*grad)[v.state * vocab + b] -= coef * inv_m * std::exp(lp[b]) * (lp[b] - lq[b] - kl);
    }
  }
  return total * inv_m;
}

}  // namespace

void ObjectiveConfig::validate() const {
  if (!(clip_eps > 0.0)) throw ConfigError("objective.clip_eps must be > 0");
  if (std::isfinite(clip_eps) && clip_eps >= 1.0) {
    throw ConfigError("objective.clip_eps must lie in (0,1) (or be infinite to disable clipping)");
  }
  if (!(kl_coef >= 0.0) || !std::isfinite(kl_coef)) {
    throw ConfigError("objective.kl_coef must be >= 0");
  }
}

ObjectiveConfig ObjectiveConfig::unclipped_without_kl() noexcept {
  ObjectiveConfig cfg;
  cfg.clip_eps = std::numeric_limits<double>::infinity();
  cfg.kl_coef = 0.0;
  return cfg;
}

double clipped_term(double ratio, double advantage, double clip_eps) noexcept {
  const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
  return std::min(ratio * advantage, clipped * advantage);
}

std::vector<TokenStep> collect_visits(std::span<const RolloutGroup> groups,
                                      const TabularPolicy& policy) {
  std::vector<TokenStep> visits;
  for (const auto& group : groups) {
    for (const auto& traj : group.trajectories) {
      for (const auto& s : trajectory_steps(policy, traj.prompt_id, traj.tokens)) {
        if (!s.forced()) visits.push_back(s);
      }
    }
  }
  return visits;
}

double kl_divergence(const TabularPolicy& theta, const TabularPolicy& ref,
                     std::span<const TokenStep> visits) {
  if (!(theta.shape() == ref.shape())) {
    throw ContractViolation("policy and reference have different shapes");
  }
  return kl_with_gradient(theta, ref, visits, 0.0, nullptr);
}

ObjectiveValue surrogate_objective(std::span<const RolloutGroup> groups,
                                   std::span<const AdvantageVector> advantages,
                                   const TabularPolicy& theta, const TabularPolicy& ref,
                                   const ObjectiveConfig& cfg) {
  check_batch(groups, advantages, theta, ref);
  ObjectiveValue out;
  if (groups.empty()) return out;
  const double weight = 1.0 / static_cast<double>(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    out.policy_term += group_term(groups[g], advantages[g], theta, cfg.clip_eps, weight, nullptr);
  }
  if (cfg.kl_coef != 0.0) {
    out.kl = kl_divergence(theta, ref, collect_visits(groups, theta));
  }
  out.objective = out.policy_term - cfg.kl_coef * out.kl;
  return out;
}

ObjectiveGradient exact_gradient(std::span<const RolloutGroup> groups,
                                 std::span<const AdvantageVector> advantages,
                                 const TabularPolicy& theta, const TabularPolicy& ref,
                                 const ObjectiveConfig& cfg, unsigned jobs) {
  check_batch(groups, advantages, theta, ref);
  ObjectiveGradient out;
  out.gradient.assign(theta.parameters().size(), 0.0);
  if (groups.empty()) return out;

  const double weight = 1.0 / static_cast<double>(groups.size());
  std::vector<SparseGradient> partial(groups.size());
  std::vector<double> terms(groups.size());
  parallel_for(groups.size(), jobs, [&](std::size_t g) {
    terms[g] = group_term(groups[g], advantages[g], theta, cfg.clip_eps, weight, &partial[g]);
  });
  for (std::size_t g = 0; g < groups.size(); ++g) {
    out.value.policy_term += terms[g];
    for (const auto& [idx, v] : partial[g]) out.gradient[idx] += v;
  }
  if (cfg.kl_coef != 0.0) {
    out.value.kl =
        kl_with_gradient(theta, ref, collect_visits(groups, theta), cfg.kl_coef, &out.gradient);
  }
  out.value.objective = out.value.policy_term - cfg.kl_coef * out.value.kl;
  return out;
}

double surrogate_loss(const RolloutGroup& group, const AdvantageVector& adv,
                      const TabularPolicy& theta, const ObjectiveConfig& cfg,
                      const TabularPolicy& ref) {
  return surrogate_objective(std::span(&group, 1), std::span(&adv, 1), theta, ref, cfg).objective;
}

std::vector<double> exact_gradient(const RolloutGroup& group, const AdvantageVector& adv,
                                   const TabularPolicy& theta, const ObjectiveConfig& cfg,
                                   const TabularPolicy& ref) {
  return exact_gradient(std::span(&group, 1), std::span(&adv, 1), theta, ref, cfg).gradient;
}

}  // namespace mapo
