#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mapo/advantage.hpp"
#include "mapo/env.hpp"
#include "mapo/objective.hpp"
#include "mapo/policy.hpp"
#include "mapo/rewards.hpp"

namespace mapo {

enum class OptimizerKind { SGD, Adam };
std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view name);

struct TrainConfig {
  int steps = 200;         // E
  int group_size = 8;      // G
  int rollout_batch = 4;   // prompts per step
  double learning_rate = 1.0;
  OptimizerKind optimizer = OptimizerKind::SGD;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  EstimatorSpec estimator;
  ObjectiveConfig objective;
  RewardConfig reward;
  std::uint64_t seed = 0;
  bool drop_zero_std_groups = false;  // DAPO-style filtering of sigma = 0 groups
  int ref_refresh_interval = 0;       // 0: the reference is never refreshed
  unsigned jobs = 1;

  void validate() const;  // throws ConfigError
};

struct TrainRecord {
  int step = 0;
  double mean_reward = 0.0;
  double success_rate = 0.0;
  double mean_kl = 0.0;    // KL(pi_old || pi_ref) over the step's visits
  double grad_norm = 0.0;
  std::vector<int> n_histogram;  // prompts per success count N = 0..G

  friend bool operator==(const TrainRecord&, const TrainRecord&) = default;
};

// Everything the trainer saw in one step, before the update.
struct StepTrace {
  int step = 0;
  const TabularPolicy* old_policy = nullptr;
  std::span<const RolloutGroup> groups;
  std::span<const GroupStats> stats;
  std::span<const AdvantageVector> advantages;
};
using StepObserver = std::function<void(const StepTrace&)>;

struct TrainResult {
  TabularPolicy policy;
  std::vector<TrainRecord> records;
};

// Runs `cfg.steps` iterations of: snapshot pi_old, sample rollout_batch
// prompts with G rollouts each, score, compute advantages per group, take one
// gradient-ascent step on the clipped KL-regularized objective. `initial` is
// also the reference policy. Bitwise reproducible given cfg.seed, for any
// cfg.jobs. Throws NumericalError on a non-finite loss or gradient.
TrainResult train(const TrainConfig& cfg, const TabularPolicy& initial,
                  std::span<const TaskInstance> curriculum, const StepObserver& observer = {});

// Text dump of one group (rewards, tokens, log-probabilities).
std::string describe_group(const RolloutGroup& group, const AdvantageVector* adv = nullptr);

struct EvalReport {
  std::vector<double> in_domain_rates;
  std::vector<double> held_out_rates;
  double a_s = 0.0;                // mean in-domain success rate
  std::optional<double> a_t;       // mean held-out success rate, if any held-out tasks
  double a_bar = 0.0;              // (A^S + A^T) / 2, or A^S without a held-out split
};

// Success rate (reward exactly 1) per task over samples_per_task rollouts at
// `temperature`. Throws ConfigError when in_domain is empty or samples < 1.
EvalReport eval_policy(const TabularPolicy& policy, std::span<const TaskInstance> in_domain,
                       std::span<const TaskInstance> held_out, int samples_per_task,
                       double temperature, std::uint64_t seed, const RewardConfig& reward = {},
                       unsigned jobs = 1);

}  // namespace mapo
