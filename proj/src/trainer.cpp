#include "mapo/trainer.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>

#include "mapo/errors.hpp"
#include "mapo/parallel.hpp"
#include "mapo/rng.hpp"

namespace mapo {

namespace {

bool all_finite(std::span<const double> xs) {
  for (double x : xs) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, std::size_t n) : cfg_(cfg) {
    if (cfg.optimizer == OptimizerKind::Adam) {
      m_.assign(n, 0.0);
      v_.assign(n, 0.0);
    }
  }

  // Ascent step on the objective.
  void step(std::span<double> params, std::span<const double> grad) {
    if (cfg_.optimizer == OptimizerKind::SGD) {
      for (std::size_t i = 0; i < params.size(); ++i) params[i] += cfg_.learning_rate * grad[i];
      return;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.adam_beta1, t_);
    const double c2 = 1.0 - std::pow(cfg_.adam_beta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = cfg_.adam_beta1 * m_[i] + (1.0 - cfg_.adam_beta1) * grad[i];
      v_[i] = cfg_.adam_beta2 * v_[i] + (1.0 - cfg_.adam_beta2) * grad[i] * grad[i];
      params[i] += cfg_.learning_rate * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.adam_eps);
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<double> m_, v_;
  int t_ = 0;
};

[[noreturn]] void numerical_abort(const std::string& what, int step, std::size_t g,
                                  const RolloutGroup& group, const AdvantageVector* adv) {
  std::ostringstream msg;
  msg << what << " at step " << step << ", group " << g << " (prompt " << group.task.prompt_id
      << ")";
  throw NumericalError(msg.str(), msg.str() + "\n" + describe_group(group, adv));
}

}  // namespace

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::SGD ? "sgd" : "adam";
}

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "sgd") return OptimizerKind::SGD;
  if (name == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected sgd or adam)");
}

void TrainConfig::validate() const {
  if (steps < 1) throw ConfigError("train.steps must be >= 1 (E >= 1)");
  if (group_size < 2) throw ConfigError("train.group_size must be >= 2 (G >= 2)");
  if (rollout_batch < 1) throw ConfigError("train.rollout_batch must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("train.learning_rate must be >= 0");
  }
  if (optimizer == OptimizerKind::Adam &&
      !(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 &&
        adam_eps > 0.0)) {
    throw ConfigError("adam moments must lie in [0,1) and adam_eps must be > 0");
  }
  if (ref_refresh_interval < 0) throw ConfigError("train.ref_refresh must be never or >= 1");
  estimator.validate();
  objective.validate();
  reward.validate();
}

TrainResult train(const TrainConfig& cfg, const TabularPolicy& initial,
                  std::span<const TaskInstance> curriculum, const StepObserver& observer) {
  cfg.validate();
  if (curriculum.empty()) throw ConfigError("curriculum must not be empty");

  TrainResult result{initial, {}};
  TabularPolicy& theta = result.policy;
  TabularPolicy ref = initial;
  Optimizer optimizer(cfg, theta.parameters().size());
  const auto batch = static_cast<std::size_t>(cfg.rollout_batch);
  const auto g_size = static_cast<std::size_t>(cfg.group_size);

  for (int step = 1; step <= cfg.steps; ++step) {
    const TabularPolicy old = theta;
    const std::uint64_t step_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(step));

    // q ~ rho_Q: uniform over the curriculum, with replacement.
    Rng prompt_rng(derive_seed(step_seed, 0));
    std::vector<std::size_t> prompts(batch);
    for (auto& p : prompts) p = static_cast<std::size_t>(prompt_rng.below(curriculum.size()));

    std::vector<RolloutGroup> groups(batch);
    std::vector<GroupStats> stats(batch);
    std::vector<AdvantageVector> advantages(batch);
    parallel_for(batch, cfg.jobs, [&](std::size_t b) {
      groups[b] = sample_group(old, curriculum[prompts[b]], cfg.group_size,
                               derive_seed(step_seed, b + 1), cfg.reward);
      for (auto& traj : groups[b].trajectories) {
        traj.logp_ref = policy_logprob(ref, traj);
      }
      const RewardVector rewards = group_reward_vector(groups[b], cfg.reward);
      stats[b] = group_stats(rewards);
      advantages[b] = compute_advantage(rewards, stats[b], cfg.estimator);
    });
    for (std::size_t b = 0; b < batch; ++b) {
      for (const auto& traj : groups[b].trajectories) {
        if (!all_finite(traj.logp_old)) {
          numerical_abort("non-finite rollout log-probability", step, b, groups[b], nullptr);
        }
      }
      if (!all_finite(advantages[b].values)) {
        numerical_abort("non-finite advantage", step, b, groups[b], &advantages[b]);
      }
    }
    if (observer) {
      observer(StepTrace{step, &old, groups, stats, advantages});
    }

    std::vector<RolloutGroup> used_groups;
    std::vector<AdvantageVector> used_adv;
    for (std::size_t b = 0; b < batch; ++b) {
      if (cfg.drop_zero_std_groups && stats[b].stddev == 0.0) continue;
      used_groups.push_back(groups[b]);
      used_adv.push_back(advantages[b]);
    }
    const ObjectiveGradient og =
        exact_gradient(used_groups, used_adv, theta, ref, cfg.objective, cfg.jobs);
    if (!std::isfinite(og.value.objective) || !all_finite(og.gradient)) {
      for (std::size_t g = 0; g < used_groups.size(); ++g) {
        const auto single = exact_gradient(std::span(&used_groups[g], 1),
                                           std::span(&used_adv[g], 1), theta, ref, cfg.objective);
        if (!std::isfinite(single.value.objective) || !all_finite(single.gradient)) {
          numerical_abort("non-finite objective or gradient", step, g, used_groups[g],
                          &used_adv[g]);
        }
      }
      numerical_abort("non-finite objective or gradient", step, 0, used_groups.front(),
                      &used_adv.front());
    }

    TrainRecord rec;
    rec.step = step;
    rec.n_histogram.assign(g_size + 1, 0);
    double reward_sum = 0.0;
    int successes = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      for (const auto& traj : groups[b].trajectories) {
        reward_sum += traj.reward;
        successes += traj.success ? 1 : 0;
      }
      ++rec.n_histogram[static_cast<std::size_t>(stats[b].success_count)];
    }
    const double n_traj = static_cast<double>(batch * g_size);
    rec.mean_reward = reward_sum / n_traj;
    rec.success_rate = successes / n_traj;
    rec.mean_kl = kl_divergence(old, ref, collect_visits(groups, old));
    double sq = 0.0;
    for (double g : og.gradient) sq += g * g;
    rec.grad_norm = std::sqrt(sq);
    result.records.push_back(std::move(rec));

    optimizer.step(theta.parameters(), og.gradient);
    if (cfg.ref_refresh_interval > 0 && step % cfg.ref_refresh_interval == 0) ref = theta;
  }
  return result;
}

std::string describe_group(const RolloutGroup& group, const AdvantageVector* adv) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "prompt_id " << group.task.prompt_id << " ground_truth " << group.task.ground_truth
      << " G " << group.size() << "\n";
  for (std::size_t i = 0; i < group.size(); ++i) {
    const Trajectory& t = group.trajectories[i];
    out << "  [" << i << "] reward " << t.reward << " success " << t.success;
    if (adv != nullptr && i < adv->size()) out << " advantage " << (*adv)[i];
    out << "\n    tokens";
    for (TokenId tok : t.tokens) out << ' ' << tok;
    out << "\n    logp_old";
    for (double lp : t.logp_old) out << ' ' << lp;
    out << "\n";
  }
  return out.str();
}

EvalReport eval_policy(const TabularPolicy& policy, std::span<const TaskInstance> in_domain,
                       std::span<const TaskInstance> held_out, int samples_per_task,
                       double temperature, std::uint64_t seed, const RewardConfig& reward,
                       unsigned jobs) {
  if (in_domain.empty()) throw ConfigError("evaluation needs at least one in-domain task");
  if (samples_per_task < 1) throw ConfigError("eval.samples_per_task must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("eval.temperature must be > 0");

  auto rates = [&](std::span<const TaskInstance> tasks, std::uint64_t split_seed) {
    std::vector<double> out(tasks.size());
    parallel_for(tasks.size(), jobs, [&](std::size_t k) {
      Rng rng(derive_seed(split_seed, tasks[k].prompt_id));
      int hits = 0;
      for (int s = 0; s < samples_per_task; ++s) {
        Trajectory traj = sample_trajectory(policy, tasks[k], temperature, rng);
        score_trajectory(traj, tasks[k], reward);
        hits += traj.success ? 1 : 0;
      }
      out[k] = static_cast<double>(hits) / samples_per_task;
    });
    return out;
  };
  auto mean = [](const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
  };

  EvalReport report;
  report.in_domain_rates = rates(in_domain, derive_seed(seed, 1));
  report.a_s = mean(report.in_domain_rates);
  if (!held_out.empty()) {
    report.held_out_rates = rates(held_out, derive_seed(seed, 2));
    report.a_t = mean(report.held_out_rates);
    report.a_bar = 0.5 * (report.a_s + *report.a_t);
  } else {
    report.a_bar = report.a_s;
  }
  return report;
}

}  // namespace mapo
