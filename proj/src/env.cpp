#include "mapo/env.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mapo/errors.hpp"

namespace mapo {

std::vector<double> RolloutGroup::rewards() const {
  std::vector<double> out;
  out.reserve(trajectories.size());
  for (const auto& t : trajectories) out.push_back(t.reward);
  return out;
}

int RolloutGroup::success_count() const noexcept {
  return static_cast<int>(std::count_if(trajectories.begin(), trajectories.end(),
                                        [](const Trajectory& t) { return t.success; }));
}

Trajectory sample_trajectory(const TabularPolicy& policy, const TaskInstance& task,
                             double temperature, Rng& rng) {
  Trajectory traj;
  traj.prompt_id = task.prompt_id;
  GrammarCursor cursor(policy.shape());
  std::vector<double> probs(policy.vocab_size());
  for (TokenMask mask = cursor.allowed(); mask != 0; mask = cursor.allowed()) {
    const std::size_t state = policy.state_index(task.prompt_id, traj.tokens);
    TokenId chosen = static_cast<TokenId>(__builtin_ctzll(mask));
    if (mask_count(mask) > 1) {
      policy.probabilities(state, mask, temperature, probs);
      const double u = rng.uniform();
      double acc = 0.0;
      for (TokenMask m = mask; m != 0; m &= m - 1) {
        const auto b = static_cast<TokenId>(__builtin_ctzll(m));
        chosen = b;  // falls through to the last allowed token on rounding
        acc += probs[b];
        if (u < acc) break;
      }
    }
    const double lp = policy.log_prob(state, mask, chosen);
    traj.tokens.push_back(chosen);
    traj.logp_old.push_back(lp);
    cursor.advance(chosen);
  }
  traj.logp_new = traj.logp_old;
  return traj;
}

void score_trajectory(Trajectory& traj, const TaskInstance& task, const RewardConfig& cfg) {
  traj.components.format = format_reward(traj.tokens);
  traj.components.accuracy = task.accepted.empty()
                                 ? accuracy_reward(traj.tokens, task.ground_truth)
                                 : accuracy_reward(traj.tokens, task.accepted);
  traj.reward = combined_reward(traj.components.format, traj.components.accuracy, cfg);
  traj.success = traj.reward == 1.0;
}

RolloutGroup sample_group(const TabularPolicy& policy_old, const TaskInstance& task, int group_size,
                          std::uint64_t seed, const RewardConfig& reward_cfg, double temperature) {
  if (group_size < 2) {
    throw InvalidGroupError("group size G must be >= 2, got " + std::to_string(group_size));
  }
  RolloutGroup group;
  group.task = task;
  group.trajectories.reserve(static_cast<std::size_t>(group_size));
  for (int i = 0; i < group_size; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    Trajectory traj = sample_trajectory(policy_old, task, temperature, rng);
    score_trajectory(traj, task, reward_cfg);
    group.trajectories.push_back(std::move(traj));
  }
  return group;
}

RewardVector group_reward_vector(const RolloutGroup& group, const RewardConfig& cfg) {
  std::vector<RewardComponents> comps;
  comps.reserve(group.size());
  for (const auto& t : group.trajectories) comps.push_back(t.components);
  return RewardVector::from_components(comps, cfg.beta_r);
}

std::string_view to_string(CurriculumProfile profile) {
  switch (profile) {
    case CurriculumProfile::Uniform:
      return "uniform";
    case CurriculumProfile::Bimodal:
      return "bimodal";
    case CurriculumProfile::HardHeavy:
      return "hard-heavy";
    case CurriculumProfile::Balanced:
      return "balanced";
  }
  return "unknown";
}

CurriculumProfile parse_curriculum_profile(std::string_view name) {
  for (auto p : {CurriculumProfile::Uniform, CurriculumProfile::Bimodal,
                 CurriculumProfile::HardHeavy, CurriculumProfile::Balanced}) {
    if (to_string(p) == name) return p;
  }
  throw ConfigError("unknown curriculum profile '" + std::string(name) +
                    "' (expected uniform, bimodal, hard-heavy or balanced)");
}

std::vector<TaskInstance> make_curriculum(int n_tasks, CurriculumProfile profile,
                                          std::uint64_t seed, const TaskVocab& vocab) {
  if (n_tasks < 1) throw ConfigError("curriculum.n_tasks must be >= 1");
  const std::uint32_t a = vocab.answer_count;
  if (a < 1) throw ConfigError("curriculum needs at least one answer token");
  if (profile == CurriculumProfile::Bimodal && a < 4) {
    throw ConfigError("bimodal curriculum needs policy.answer_tokens >= 4");
  }
  if (profile == CurriculumProfile::Balanced && a % 2 != 0) {
    throw ConfigError("balanced curriculum needs an even policy.answer_tokens");
  }

  Rng rng(seed);
  auto uniform_k = [&] { return a == 1 ? 1U : 1U + static_cast<std::uint32_t>(rng.below(a - 1)); };

  std::vector<TaskInstance> tasks;
  tasks.reserve(static_cast<std::size_t>(n_tasks));
  for (int i = 0; i < n_tasks; ++i) {
    std::uint32_t k = 1;
    switch (profile) {
      case CurriculumProfile::Uniform:
        k = uniform_k();
        break;
      case CurriculumProfile::Bimodal:
        k = rng.below(2) == 0 ? 1U : a - 1;
        break;
      case CurriculumProfile::HardHeavy:
        k = rng.uniform() < 0.75 ? 1U : uniform_k();
        break;
      case CurriculumProfile::Balanced:
        k = a / 2;
        break;
    }
    // Partial Fisher-Yates: the first k answers of a random permutation.
    std::vector<TokenId> answers(a);
    for (std::uint32_t j = 0; j < a; ++j) answers[j] = vocab.answer(j);
    for (std::uint32_t j = 0; j < k; ++j) {
      const auto pick = j + static_cast<std::uint32_t>(rng.below(a - j));
      std::swap(answers[j], answers[pick]);
    }
    TaskInstance task;
    task.prompt_id = static_cast<std::uint64_t>(i);
    task.prompt = {static_cast<TokenId>(i)};
    task.accepted.assign(answers.begin(), answers.begin() + k);
    std::sort(task.accepted.begin() + 1, task.accepted.end());
    task.ground_truth = task.accepted.front();
    task.difficulty = 1.0 - static_cast<double>(k) / a;
    tasks.push_back(std::move(task));
  }
  return tasks;
}

double base_success_rate(const TaskInstance& task, const TaskVocab& vocab) noexcept {
  const std::size_t k = task.accepted.empty() ? 1 : task.accepted.size();
  return static_cast<double>(k) / vocab.answer_count;
}

}  // namespace mapo
