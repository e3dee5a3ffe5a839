#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mapo {

using TokenId = std::uint32_t;

// Advantage estimators. GRPO, DrGRPO, GPG and TreeRPO are the baselines;
// APD is the mean-relative deviation and MAPO the certainty-weighted mix.
enum class EstimatorKind { GRPO, DrGRPO, GPG, TreeRPO, APD, MAPO };

std::string_view to_string(EstimatorKind kind);
// Throws ConfigError on an unknown name.
EstimatorKind parse_estimator_kind(std::string_view name);

// Per-trajectory reward breakdown; both parts are 0 or 1.
struct RewardComponents {
  int format = 0;
  int accuracy = 0;
};

// Rewards of one prompt group. Values lie in [0,1] and G >= 2.
class RewardVector {
 public:
  // Throws InvalidGroupError when G < 2 or any value is outside [0,1].
  explicit RewardVector(std::vector<double> values);

  // Combines components with (1-beta_r)*format + beta_r*accuracy.
  static RewardVector from_components(std::span<const RewardComponents> components,
                                      double beta_r);

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const noexcept { return values_; }
  const std::optional<std::vector<RewardComponents>>& components() const noexcept {
    return components_;
  }
  std::optional<double> beta_r() const noexcept { return beta_r_; }

 private:
  std::vector<double> values_;
  std::optional<std::vector<RewardComponents>> components_;
  std::optional<double> beta_r_;
};

struct GroupStats {
  double mean = 0.0;
  double stddev = 0.0;      // population form, divides by G
  int success_count = 0;    // entries exactly equal to 1
  double certainty = 0.0;   // p = N / G
  double mix_weight = 0.0;  // lambda(p) = 1 - 4p(1-p)
  int group_size = 0;
};

// lambda(p) = 1 - 4 p (1 - p); zero at p = 1/2, one at p in {0, 1}.
double certainty_mix_weight(double p) noexcept;

// Throws InvalidGroupError when fewer than two rewards are given.
GroupStats group_stats(std::span<const double> rewards);
GroupStats group_stats(const RewardVector& rewards);

struct AdvantageVector {
  std::vector<double> values;
  EstimatorKind estimator = EstimatorKind::GRPO;

  std::size_t size() const noexcept { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
};

// One sampled output. Log-probability vectors run parallel to `tokens`.
struct Trajectory {
  std::uint64_t prompt_id = 0;
  std::vector<TokenId> tokens;
  std::vector<double> logp_old;
  std::vector<double> logp_new;
  std::vector<double> logp_ref;
  RewardComponents components;
  double reward = 0.0;
  bool success = false;  // reward == 1
};

}  // namespace mapo
