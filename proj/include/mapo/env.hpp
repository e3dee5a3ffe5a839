#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "mapo/core.hpp"
#include "mapo/policy.hpp"
#include "mapo/rewards.hpp"
#include "mapo/rng.hpp"

namespace mapo {

// A synthetic verifiable task. `accepted` holds the reward-equivalent answer
// tokens (ground_truth first); with A answer tokens and k accepted ones a
// uniform answer choice succeeds with probability k / A.
struct TaskInstance {
  std::uint64_t prompt_id = 0;
  std::vector<TokenId> prompt;
  TokenId ground_truth = 0;
  std::vector<TokenId> accepted;
  double difficulty = 0.0;  // 1 - k / A

  friend bool operator==(const TaskInstance&, const TaskInstance&) = default;
};

struct RolloutGroup {
  TaskInstance task;
  std::vector<Trajectory> trajectories;

  std::size_t size() const noexcept { return trajectories.size(); }
  std::vector<double> rewards() const;
  int success_count() const noexcept;
};

// One rollout from `policy` at `temperature`; logp_old holds the sampling
// policy's temperature-1 log-probabilities. Rewards are not filled in.
Trajectory sample_trajectory(const TabularPolicy& policy, const TaskInstance& task,
                             double temperature, Rng& rng);

// G independent rollouts, reproducible from `seed`; rollout i uses the seed
// derive_seed(seed, i). Rewards are scored with `reward_cfg`.
RolloutGroup sample_group(const TabularPolicy& policy_old, const TaskInstance& task, int group_size,
                          std::uint64_t seed, const RewardConfig& reward_cfg = {},
                          double temperature = 1.0);

// Fills components, reward and success of `traj` for `task`.
void score_trajectory(Trajectory& traj, const TaskInstance& task, const RewardConfig& cfg);

// Rewards of a scored group as a RewardVector with components.
RewardVector group_reward_vector(const RolloutGroup& group, const RewardConfig& cfg);

enum class CurriculumProfile { Uniform, Bimodal, HardHeavy, Balanced };

std::string_view to_string(CurriculumProfile profile);
CurriculumProfile parse_curriculum_profile(std::string_view name);  // throws ConfigError

// Tasks with prompt ids 0..n-1. Accepted-answer multiplicity k per task:
//   uniform     k ~ U{1..A-1}
//   bimodal     k = 1 or A-1 with equal odds (needs A >= 4)
//   hard-heavy  k = 1 with probability 3/4, else U{1..A-1}
//   balanced    k = A/2 (needs even A); every task starts at p = 1/2
// A = 1 degenerates to k = 1 for every profile except bimodal/balanced.
std::vector<TaskInstance> make_curriculum(int n_tasks, CurriculumProfile profile,
                                          std::uint64_t seed, const TaskVocab& vocab);

// Probability that a uniform answer choice is accepted: k / A.
double base_success_rate(const TaskInstance& task, const TaskVocab& vocab) noexcept;

}  // namespace mapo
