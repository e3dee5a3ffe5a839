#include "mapo/core.hpp"

#include <array>
#include <algorithm>
#include <cmath>
#include <string>

#include "mapo/errors.hpp"
#include "mapo/rewards.hpp"

namespace mapo {

namespace {

constexpr std::array<std::pair<EstimatorKind, std::string_view>, 6> kEstimatorNames{{
    {EstimatorKind::GRPO, "GRPO"},
    {EstimatorKind::DrGRPO, "DrGRPO"},
    {EstimatorKind::GPG, "GPG"},
    {EstimatorKind::TreeRPO, "TreeRPO"},
    {EstimatorKind::APD, "APD"},
    {EstimatorKind::MAPO, "MAPO"},
}};

void check_group(std::span<const double> values) {
  if (values.size() < 2) {
    throw InvalidGroupError("group size G must be >= 2, got " + std::to_string(values.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] >= 0.0 && values[i] <= 1.0)) {
      throw InvalidGroupError("reward " + std::to_string(i) + " outside [0,1]: " +
                              std::to_string(values[i]));
    }
  }
}

}  // namespace

std::string_view to_string(EstimatorKind kind) {
  for (const auto& [k, name] : kEstimatorNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

EstimatorKind parse_estimator_kind(std::string_view name) {
  for (const auto& [k, n] : kEstimatorNames) {
    if (n == name) return k;
  }
  throw ConfigError("unknown estimator kind '" + std::string(name) +
                    "' (expected GRPO, DrGRPO, GPG, TreeRPO, APD or MAPO)");
}

RewardVector::RewardVector(std::vector<double> values) : values_(std::move(values)) {
  check_group(values_);
}

RewardVector RewardVector::from_components(std::span<const RewardComponents> components,
                                           double beta_r) {
  RewardConfig cfg;
  cfg.beta_r = beta_r;
  cfg.validate();
  std::vector<double> values;
  values.reserve(components.size());
  for (const auto& c : components) {
    if ((c.format != 0 && c.format != 1) || (c.accuracy != 0 && c.accuracy != 1)) {
      throw InvalidGroupError("reward components must be 0 or 1");
    }
    values.push_back(combined_reward(c.format, c.accuracy, cfg));
  }
  RewardVector out(std::move(values));
  out.components_.emplace(components.begin(), components.end());
  out.beta_r_ = beta_r;
  return out;
}

double certainty_mix_weight(double p) noexcept { return 1.0 - 4.0 * p * (1.0 - p); }

GroupStats group_stats(std::span<const double> rewards) {
  check_group(rewards);
  const auto g = static_cast<double>(rewards.size());
  GroupStats s;
  s.group_size = static_cast<int>(rewards.size());
  double sum = 0.0;
  for (double r : rewards) {
    sum += r;
    if (r == 1.0) ++s.success_count;
  }
  // A constant group gets its value back exactly, so sigma and r - mu are 0
  // rather than rounding noise.
  const bool constant =
      std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards[0]; });
  s.mean = constant ? rewards[0] : sum / g;
  double ss = 0.0;
  for (double r : rewards) ss += (r - s.mean) * (r - s.mean);
  s.stddev = std::sqrt(ss / g);
  s.certainty = static_cast<double>(s.success_count) / g;
  s.mix_weight = certainty_mix_weight(s.certainty);
  return s;
}

GroupStats group_stats(const RewardVector& rewards) { return group_stats(rewards.values()); }

}  // namespace mapo
