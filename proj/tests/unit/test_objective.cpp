#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "mapo/advantage.hpp"
#include "mapo/analysis.hpp"
#include "mapo/env.hpp"
#include "mapo/errors.hpp"
#include "mapo/objective.hpp"
#include "mapo/policy.hpp"
#include "mapo/rng.hpp"

using namespace mapo;

namespace {

PolicyShape generic_shape(std::uint32_t vocab, std::uint32_t len) {
  PolicyShape s;
  s.mode = DecodeMode::Unconstrained;
  s.vocab_size = vocab;
  s.max_len = len;
  s.context_order = 1;
  return s;
}

PolicyShape scaffold_shape() {
  PolicyShape s;
  s.mode = DecodeMode::Scaffold;
  s.vocab = TaskVocab{2, 3};
  s.max_len = 8;
  s.context_order = 2;
  return s;
}

// Group sampled from `policy` with rewards overwritten by `rewards`.
RolloutGroup group_with_rewards(const TabularPolicy& policy, const std::vector<double>& rewards,
                                std::uint64_t seed) {
  TaskInstance task;
  task.ground_truth = 0;
  task.accepted = {0};
  auto group = sample_group(policy, task, static_cast<int>(rewards.size()), seed);
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    group.trajectories[i].reward = rewards[i];
    group.trajectories[i].success = rewards[i] == 1.0;
  }
  return group;
}

AdvantageVector advantages_of(const RolloutGroup& group, EstimatorKind kind) {
  const RewardVector r(group.rewards());
  EstimatorSpec spec;
  spec.kind = kind;
  return compute_advantage(r, group_stats(r), spec);
}

TabularPolicy perturbed(const TabularPolicy& base, double scale, std::uint64_t seed) {
  TabularPolicy out = base;
  Rng rng(seed);
  for (double& x : out.parameters()) x += scale * rng.normal();
  return out;
}

}  // namespace

TEST_CASE("clipped_term examples") {
  CHECK(clipped_term(1.0, 0.7, 0.2) == doctest::Approx(0.7));
  CHECK(clipped_term(1.5, 1.0, 0.2) == doctest::Approx(1.2));
  CHECK(clipped_term(1.5, -1.0, 0.2) == doctest::Approx(-1.5));
  CHECK(clipped_term(0.5, 1.0, 0.2) == doctest::Approx(0.5));
  CHECK(clipped_term(0.5, -1.0, 0.2) == doctest::Approx(-0.8));
  CHECK(clipped_term(3.0, 2.0, std::numeric_limits<double>::infinity()) == doctest::Approx(6.0));
}

TEST_CASE("objective config validation") {
  ObjectiveConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.clip_eps = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.clip_eps = 0.2;
  cfg.kl_coef = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  const auto off = ObjectiveConfig::unclipped_without_kl();
  CHECK(std::isinf(off.clip_eps));
  CHECK(off.kl_coef == 0.0);
}

TEST_CASE("ratio one: objective is the token-weighted mean advantage") {
  const TabularPolicy policy = random_policy(scaffold_shape(), 1.0, 4);
  const auto group = group_with_rewards(policy, {0.0, 0.1, 0.9, 1.0, 1.0, 0.0}, 8);
  const auto adv = advantages_of(group, EstimatorKind::MAPO);
  ObjectiveConfig cfg;
  cfg.kl_coef = 0.0;
  // Every token has ratio 1, so each trajectory contributes A_i and the group
  // term is the mean advantage, which is zero.
  CHECK(std::abs(surrogate_loss(group, adv, policy, cfg, policy)) < 1e-12);
  AdvantageVector ones{std::vector<double>(6, 1.0), EstimatorKind::GRPO};
  CHECK(surrogate_loss(group, ones, policy, cfg, policy) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("exact KL") {
  SUBCASE("one-hot against uniform over 4 tokens is ln 4") {
    const TabularPolicy uniform(generic_shape(4, 1));
    TabularPolicy onehot = uniform;
    onehot.make_deterministic(onehot.state_index(0, {}), 1);
    const auto group = group_with_rewards(onehot, {0.0, 1.0}, 3);
    const std::vector<RolloutGroup> batch = {group};
    const auto visits = collect_visits(batch, onehot);
    REQUIRE(visits.size() == 2);
    CHECK(kl_divergence(onehot, uniform, visits) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(kl_divergence(uniform, uniform, visits) == 0.0);
  }
  SUBCASE("non-negative over random pairs") {
    const auto shape = scaffold_shape();
    for (std::uint64_t n = 0; n < 1000; ++n) {
      const TabularPolicy a = random_policy(shape, 2.0, 2 * n);
      const TabularPolicy b = random_policy(shape, 2.0, 2 * n + 1);
      const std::vector<RolloutGroup> batch = {group_with_rewards(a, {0.0, 1.0}, n)};
      const auto visits = collect_visits(batch, a);
      REQUIRE(kl_divergence(a, b, visits) >= 0.0);
    }
  }
  SUBCASE("no visits") {
    const TabularPolicy p(generic_shape(4, 1));
    CHECK(kl_divergence(p, p, {}) == 0.0);
  }
}

TEST_CASE("gradient at theta = old equals the REINFORCE form") {
  // G = 2, one token per rollout, vocab 4: d/d theta_j of A_i log pi(y_i) is
  // A_i (1[j = y_i] - pi_j). The objective averages over the group.
  const TabularPolicy policy = random_policy(generic_shape(4, 1), 1.0, 12);
  const auto group = group_with_rewards(policy, {1.0, 0.0}, 6);
  const AdvantageVector adv{{0.75, -0.25}, EstimatorKind::GRPO};
  const auto grad = exact_gradient(group, adv, policy, ObjectiveConfig::unclipped_without_kl(),
                                   policy);
  const std::size_t state = policy.state_index(0, {});
  std::vector<double> probs(4);
  policy.probabilities(state, (1ULL << 4) - 1, 1.0, probs);
  std::vector<double> expected(policy.parameters().size(), 0.0);
  for (int i = 0; i < 2; ++i) {
    const TokenId y = group.trajectories[i].tokens[0];
    for (TokenId j = 0; j < 4; ++j) {
      expected[state * 4 + j] += 0.5 * adv[i] * ((j == y ? 1.0 : 0.0) - probs[j]);
    }
  }
  REQUIRE(grad.size() == expected.size());
  for (std::size_t j = 0; j < grad.size(); ++j) CHECK(grad[j] == doctest::Approx(expected[j]).epsilon(1e-12));
}

TEST_CASE("zero advantages and no KL give a zero gradient") {
  const TabularPolicy old_policy = random_policy(scaffold_shape(), 1.0, 3);
  const TabularPolicy theta = perturbed(old_policy, 0.3, 5);
  const auto group = group_with_rewards(old_policy, {1.0, 1.0, 1.0, 1.0}, 2);
  const auto adv = advantages_of(group, EstimatorKind::MAPO);
  for (double a : adv.values) CHECK(a == 0.0);
  ObjectiveConfig cfg;
  cfg.kl_coef = 0.0;
  for (double g : exact_gradient(group, adv, theta, cfg, old_policy)) CHECK(g == 0.0);
}

TEST_CASE("gradient is linear in the advantages without clipping or KL") {
  const TabularPolicy old_policy = random_policy(scaffold_shape(), 1.0, 31);
  const TabularPolicy theta = perturbed(old_policy, 0.3, 32);
  const auto group = group_with_rewards(old_policy, {0.0, 0.1, 0.9, 1.0, 1.0}, 33);
  const AdvantageVector a1{{0.3, -1.2, 0.5, 0.1, 0.3}, EstimatorKind::GRPO};
  const AdvantageVector a2{{-0.7, 0.2, 0.9, -0.4, 0.0}, EstimatorKind::GRPO};
  AdvantageVector combo{{}, EstimatorKind::GRPO};
  for (std::size_t i = 0; i < 5; ++i) combo.values.push_back(a1[i] + 2.0 * a2[i]);
  const auto cfg = ObjectiveConfig::unclipped_without_kl();
  const auto g1 = exact_gradient(group, a1, theta, cfg, old_policy);
  const auto g2 = exact_gradient(group, a2, theta, cfg, old_policy);
  const auto gc = exact_gradient(group, combo, theta, cfg, old_policy);
  for (std::size_t j = 0; j < gc.size(); ++j) {
    CHECK(gc[j] == doctest::Approx(g1[j] + 2.0 * g2[j]).epsilon(1e-12).scale(1.0));
  }
}

TEST_CASE("central finite differences match the analytic gradient") {
  const TabularPolicy old_policy = random_policy(scaffold_shape(), 1.0, 41);
  const TabularPolicy ref = random_policy(scaffold_shape(), 1.0, 42);
  TabularPolicy theta = perturbed(old_policy, 0.3, 43);
  std::vector<RolloutGroup> groups = {
      group_with_rewards(old_policy, {0.0, 0.1, 0.9, 1.0}, 44),
      group_with_rewards(old_policy, {1.0, 1.0, 0.9, 0.0, 0.1, 1.0}, 45)};
  std::vector<AdvantageVector> advs;
  for (const auto& g : groups) advs.push_back(advantages_of(g, EstimatorKind::MAPO));
  ObjectiveConfig cfg;
  cfg.kl_coef = 0.05;
  const auto analytic = exact_gradient(groups, advs, theta, ref, cfg);
  const double h = 1e-6;
  int checked = 0;
  for (std::size_t j = 0; j < analytic.gradient.size(); ++j) {
    if (std::abs(analytic.gradient[j]) <= 1e-8) continue;
    const double keep = theta.parameters()[j];
    theta.parameters()[j] = keep + h;
    const double up = surrogate_objective(groups, advs, theta, ref, cfg).objective;
    theta.parameters()[j] = keep - h;
    const double down = surrogate_objective(groups, advs, theta, ref, cfg).objective;
    theta.parameters()[j] = keep;
    const double fd = (up - down) / (2 * h);
    CHECK(std::abs(fd - analytic.gradient[j]) <= 1e-5 * std::abs(analytic.gradient[j]) + 1e-9);
    ++checked;
  }
  CHECK(checked > 10);
  const auto report = finite_difference_check(20, 2024);
  CHECK(report.pass);
  CHECK(report.max_rel_error <= 1e-5);
}

TEST_CASE("batch gradient does not depend on the number of jobs") {
  const TabularPolicy old_policy = random_policy(scaffold_shape(), 1.0, 51);
  const TabularPolicy theta = perturbed(old_policy, 0.2, 52);
  std::vector<RolloutGroup> groups;
  std::vector<AdvantageVector> advs;
  for (std::uint64_t g = 0; g < 7; ++g) {
    groups.push_back(group_with_rewards(old_policy, {0.0, 1.0, 0.1, 0.9, 1.0, 0.0}, 60 + g));
    advs.push_back(advantages_of(groups.back(), EstimatorKind::MAPO));
  }
  ObjectiveConfig cfg;
  const auto serial = exact_gradient(groups, advs, theta, old_policy, cfg, 1);
  const auto threaded = exact_gradient(groups, advs, theta, old_policy, cfg, 3);
  CHECK(serial.gradient == threaded.gradient);
  CHECK(serial.value.objective == threaded.value.objective);
}

TEST_CASE("mismatched lengths are contract violations") {
  const TabularPolicy policy(generic_shape(4, 2));
  const auto group = group_with_rewards(policy, {0.0, 1.0, 1.0}, 1);
  const AdvantageVector short_adv{{0.5, -0.5}, EstimatorKind::GRPO};
  CHECK_THROWS_AS(surrogate_loss(group, short_adv, policy, ObjectiveConfig{}, policy),
                  ContractViolation);
  const std::vector<RolloutGroup> groups = {group};
  CHECK_THROWS_AS(surrogate_objective(groups, {}, policy, policy, ObjectiveConfig{}),
                  ContractViolation);
}
