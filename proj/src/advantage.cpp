#include "mapo/advantage.hpp"

#include <cmath>
#include <string>

#include "mapo/errors.hpp"

namespace mapo {

namespace {

void check_lengths(const RewardVector& rewards, const GroupStats& stats) {
  if (stats.group_size != static_cast<int>(rewards.size())) {
    throw ContractViolation("group stats computed for G=" + std::to_string(stats.group_size) +
                            " but rewards have G=" + std::to_string(rewards.size()));
  }
}

// Every estimator is (r_i - mu) times a group-constant scale.
AdvantageVector scaled_deviation(const RewardVector& rewards, const GroupStats& stats,
                                 double scale, EstimatorKind kind) {
  check_lengths(rewards, stats);
  AdvantageVector out;
  out.estimator = kind;
  out.values.reserve(rewards.size());
  for (double r : rewards.values()) out.values.push_back((r - stats.mean) * scale);
  return out;
}

}  // namespace

void EstimatorSpec::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("estimator.alpha must be > 0");
  if (!(eps_div > 0.0) || !std::isfinite(eps_div)) {
    throw ConfigError("estimator.eps_div must be > 0");
  }
}

AdvantageVector advantage_grpo(const RewardVector& rewards, const GroupStats& stats,
                               double eps_div) {
  return scaled_deviation(rewards, stats, 1.0 / (stats.stddev + eps_div), EstimatorKind::GRPO);
}

AdvantageVector advantage_apd(const RewardVector& rewards, const GroupStats& stats,
                              double eps_div) {
  return scaled_deviation(rewards, stats, 1.0 / (stats.mean + eps_div), EstimatorKind::APD);
}

AdvantageVector advantage_mapo(const RewardVector& rewards, const GroupStats& stats,
                               double eps_div) {
  const AdvantageVector z = advantage_grpo(rewards, stats, eps_div);
  const AdvantageVector apd = advantage_apd(rewards, stats, eps_div);
  const double lambda = stats.mix_weight;
  AdvantageVector out;
  out.estimator = EstimatorKind::MAPO;
  out.values.resize(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    out.values[i] = (1.0 - lambda) * z[i] + lambda * apd[i];
  }
  return out;
}

AdvantageVector advantage_baseline(const RewardVector& rewards, const GroupStats& stats,
                                   const EstimatorSpec& spec) {
  switch (spec.kind) {
    case EstimatorKind::DrGRPO:
      return scaled_deviation(rewards, stats, 1.0, spec.kind);
    case EstimatorKind::GPG:
      return scaled_deviation(rewards, stats, spec.alpha, spec.kind);
    case EstimatorKind::TreeRPO:
      return scaled_deviation(rewards, stats,
                              1.0 / (stats.mean * (1.0 - stats.mean) + spec.eps_div), spec.kind);
    default:
      throw ConfigError("advantage_baseline does not handle estimator " +
                        std::string(to_string(spec.kind)));
  }
}

AdvantageVector compute_advantage(const RewardVector& rewards, const GroupStats& stats,
                                  const EstimatorSpec& spec) {
  switch (spec.kind) {
    case EstimatorKind::GRPO:
      return advantage_grpo(rewards, stats, spec.eps_div);
    case EstimatorKind::APD:
      return advantage_apd(rewards, stats, spec.eps_div);
    case EstimatorKind::MAPO:
      return advantage_mapo(rewards, stats, spec.eps_div);
    default:
      return advantage_baseline(rewards, stats, spec);
  }
}

}  // namespace mapo
