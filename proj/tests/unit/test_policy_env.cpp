#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "mapo/analysis.hpp"
#include "mapo/env.hpp"
#include "mapo/errors.hpp"
#include "mapo/policy.hpp"
#include "mapo/rng.hpp"

using namespace mapo;

namespace {

PolicyShape task_shape(DecodeMode mode, std::uint32_t answers, std::uint32_t slots = 1) {
  PolicyShape s;
  s.mode = mode;
  s.vocab = TaskVocab{2, answers};
  s.max_len = 8;
  s.context_order = 1;
  s.prompt_slots = slots;
  return s;
}

PolicyShape generic_shape(std::uint32_t vocab, std::uint32_t len) {
  PolicyShape s;
  s.mode = DecodeMode::Unconstrained;
  s.vocab_size = vocab;
  s.max_len = len;
  s.context_order = 1;
  return s;
}

TaskInstance task_with(std::uint64_t id, std::vector<TokenId> accepted) {
  TaskInstance t;
  t.prompt_id = id;
  t.ground_truth = accepted.front();
  t.accepted = std::move(accepted);
  return t;
}

}  // namespace

TEST_CASE("masked softmax sums to one at every reachable state") {
  const TabularPolicy policy = random_policy(task_shape(DecodeMode::Scaffold, 3, 2), 2.0, 11);
  std::vector<double> probs(policy.vocab_size());
  Rng rng(5);
  const auto tasks = make_curriculum(2, CurriculumProfile::Uniform, 3, policy.shape().vocab);
  for (int n = 0; n < 200; ++n) {
    const auto traj = sample_trajectory(policy, tasks[n % 2], 1.0, rng);
    for (const auto& step : trajectory_steps(policy, traj.prompt_id, traj.tokens)) {
      for (double temp : {1.0, 0.5}) {
        policy.probabilities(step.state, step.mask, temp, probs);
        double sum = 0.0;
        for (double p : probs) sum += p;
        REQUIRE(std::abs(sum - 1.0) <= 1e-12);
      }
    }
    for (double lp : traj.logp_old) REQUIRE(std::isfinite(lp));
  }
}

TEST_CASE("policy_logprob") {
  SUBCASE("uniform policy, vocab 4, length 3") {
    const TabularPolicy uniform(generic_shape(4, 3));
    Trajectory t;
    t.tokens = {0, 3, 2};
    const auto lp = policy_logprob(uniform, t);
    REQUIRE(lp.size() == 3);
    double sum = 0.0;
    for (double x : lp) {
      CHECK(x == doctest::Approx(std::log(0.25)).epsilon(1e-14));
      sum += x;
    }
    CHECK(sum == doctest::Approx(3 * std::log(0.25)).epsilon(1e-14));
  }
  SUBCASE("one-hot policy on its own sample") {
    TabularPolicy policy(generic_shape(4, 3));
    for (std::size_t s = 0; s < policy.state_count(); ++s) policy.make_deterministic(s, 2);
    Rng rng(1);
    const auto traj = sample_trajectory(policy, TaskInstance{}, 1.0, rng);
    CHECK(traj.tokens == std::vector<TokenId>{2, 2, 2});
    for (double x : policy_logprob(policy, traj)) CHECK(std::abs(x) < 1e-20);
  }
  SUBCASE("recorded logp_old equals the sampling policy's log-probabilities") {
    const TabularPolicy policy = random_policy(task_shape(DecodeMode::Free, 3), 1.0, 3);
    const auto group = sample_group(policy, task_with(0, {10}), 8, 42);
    for (const auto& t : group.trajectories) {
      const auto lp = policy_logprob(policy, t);
      REQUIRE(lp.size() == t.logp_old.size());
      for (std::size_t i = 0; i < lp.size(); ++i) CHECK(lp[i] == t.logp_old[i]);
    }
  }
  SUBCASE("tokens outside the vocabulary or grammar are rejected") {
    const TabularPolicy uniform(generic_shape(4, 3));
    Trajectory t;
    t.tokens = {0, 7, 1};
    CHECK_THROWS_AS(policy_logprob(uniform, t), ContractViolation);
    const TabularPolicy forced(task_shape(DecodeMode::Forced, 2));
    Trajectory bad;
    bad.tokens = {TaskVocab::kAnswer};  // forced mode must open with <think>
    CHECK_THROWS_AS(policy_logprob(forced, bad), ContractViolation);
  }
}

TEST_CASE("grammar modes") {
  Rng rng(9);
  SUBCASE("forced mode always formats correctly") {
    const TabularPolicy policy(task_shape(DecodeMode::Forced, 4));
    const auto task = task_with(0, {7});
    for (int n = 0; n < 500; ++n) {
      auto t = sample_trajectory(policy, task, 1.0, rng);
      score_trajectory(t, task, {});
      REQUIRE(t.components.format == 1);
      REQUIRE(t.tokens.size() <= 8);
      REQUIRE(t.tokens.back() == TaskVocab::kEos);
    }
  }
  SUBCASE("scaffold mode reaches every reward value") {
    const TabularPolicy policy(task_shape(DecodeMode::Scaffold, 2));
    const auto task = task_with(0, {7});
    std::set<double> seen;
    for (int n = 0; n < 2000; ++n) {
      auto t = sample_trajectory(policy, task, 1.0, rng);
      score_trajectory(t, task, {});
      seen.insert(t.reward);
      REQUIRE(t.tokens.size() <= 8);
      REQUIRE(t.tokens.back() == TaskVocab::kEos);
    }
    CHECK(seen.size() == 4);
  }
  SUBCASE("free mode ends with eos within max_len") {
    const TabularPolicy policy(task_shape(DecodeMode::Free, 2));
    for (int n = 0; n < 500; ++n) {
      const auto t = sample_trajectory(policy, task_with(0, {7}), 1.0, rng);
      REQUIRE(!t.tokens.empty());
      REQUIRE(t.tokens.size() <= 8);
      REQUIRE(t.tokens.back() == TaskVocab::kEos);
      REQUIRE(std::count(t.tokens.begin(), t.tokens.end(), TaskVocab::kEos) == 1);
    }
  }
  SUBCASE("invalid shapes") {
    auto s = task_shape(DecodeMode::Forced, 2);
    s.max_len = 5;
    CHECK_THROWS_AS(TabularPolicy{s}, ConfigError);
    CHECK_THROWS_AS(TabularPolicy{generic_shape(65, 3)}, ConfigError);
    CHECK_THROWS_AS(parse_decode_mode("greedy"), ConfigError);
  }
}

TEST_CASE("sample_group") {
  const auto task = task_with(3, {9});
  SUBCASE("deterministic policy gives identical rollouts") {
    TabularPolicy policy(task_shape(DecodeMode::Scaffold, 2, 4));
    // Logit gaps of 60 between tokens: the best allowed token always wins.
    for (std::size_t s = 0; s < policy.state_count(); ++s) {
      auto row = policy.row(s);
      for (std::size_t j = 0; j < row.size(); ++j) row[j] = 60.0 * double((j * 5 + s) % row.size());
    }
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
      const auto group = sample_group(policy, task, 8, seed);
      for (const auto& t : group.trajectories) CHECK(t.tokens == group.trajectories[0].tokens);
      const int n = group.success_count();
      CHECK((n == 0 || n == 8));
    }
  }
  SUBCASE("same seed reproduces the group bit for bit") {
    const TabularPolicy policy = random_policy(task_shape(DecodeMode::Scaffold, 3), 1.0, 8);
    const auto a = sample_group(policy, task, 8, 77);
    const auto b = sample_group(policy, task, 8, 77);
    for (std::size_t i = 0; i < 8; ++i) {
      CHECK(a.trajectories[i].tokens == b.trajectories[i].tokens);
      CHECK(a.trajectories[i].logp_old == b.trajectories[i].logp_old);
    }
    const auto c = sample_group(policy, task, 8, 78);
    bool differs = false;
    for (std::size_t i = 0; i < 8; ++i) differs |= a.trajectories[i].tokens != c.trajectories[i].tokens;
    CHECK(differs);
  }
  SUBCASE("G < 2 is rejected") {
    const TabularPolicy policy(task_shape(DecodeMode::Forced, 2));
    CHECK_THROWS_AS(sample_group(policy, task, 1, 0), InvalidGroupError);
  }
  SUBCASE("success count of a uniform two-answer policy is Binomial(8, 1/2)") {
    const TabularPolicy policy(task_shape(DecodeMode::Forced, 2));
    const auto two = task_with(0, {TaskVocab{2, 2}.answer(0)});
    std::vector<int> hist(9, 0);
    double sum = 0.0;
    for (int j = 0; j < 10000; ++j) {
      const int n = sample_group(policy, two, 8, derive_seed(123, j)).success_count();
      ++hist[n];
      sum += n;
    }
    CHECK(std::abs(sum / 10000 - 4.0) <= 0.1);
    CHECK_FALSE(chi_square_binomial(hist, 8, 0.5, 0.01).reject);
  }
}

TEST_CASE("certainty spectrum follows Binomial(G, k/m) for k accepted of m answers") {
  const TaskVocab vocab{2, 4};
  PolicyShape shape = task_shape(DecodeMode::Forced, 4);
  const TabularPolicy policy(shape);
  for (std::uint32_t k : {1U, 2U, 3U}) {
    std::vector<TokenId> accepted;
    for (std::uint32_t j = 0; j < k; ++j) accepted.push_back(vocab.answer(j));
    const std::vector<TaskInstance> tasks = {task_with(0, accepted)};
    const auto spectrum = certainty_spectrum(policy, tasks, 8, 10000, 2000 + k);
    const auto chi = chi_square_binomial(spectrum.pooled, 8, k / 4.0, 0.01);
    CHECK_FALSE(chi.reject);
    CHECK(chi.dof >= 5);
  }
}

TEST_CASE("variance of N/G peaks at the task closest to p = 1/2") {
  const TaskVocab vocab{2, 8};
  const TabularPolicy policy(task_shape(DecodeMode::Forced, 8));
  std::vector<TaskInstance> tasks;
  for (std::uint32_t k = 1; k <= 7; ++k) {
    std::vector<TokenId> accepted;
    for (std::uint32_t j = 0; j < k; ++j) accepted.push_back(vocab.answer(j));
    tasks.push_back(task_with(k, accepted));
  }
  const auto spectrum = certainty_spectrum(policy, tasks, 8, 4000, 5);
  const auto peak = std::max_element(spectrum.var_n.begin(), spectrum.var_n.end());
  CHECK(peak - spectrum.var_n.begin() == 3);  // k = 4 of 8
}

TEST_CASE("curriculum profiles") {
  const TaskVocab vocab{2, 8};
  const TabularPolicy policy(task_shape(DecodeMode::Forced, 8, 100));
  SUBCASE("uniform profile exposes the full success-count spectrum") {
    const auto tasks = make_curriculum(100, CurriculumProfile::Uniform, 1, vocab);
    const auto spectrum = certainty_spectrum(policy, tasks, 8, 100, 2);
    int distinct = 0;
    for (int c : spectrum.pooled) distinct += c > 0 ? 1 : 0;
    CHECK(distinct >= 5);
    for (const auto& t : tasks) {
      CHECK(vocab.is_answer(t.ground_truth));
      CHECK(t.accepted.front() == t.ground_truth);
      CHECK(t.difficulty == doctest::Approx(1.0 - base_success_rate(t, vocab)));
    }
  }
  SUBCASE("hard-heavy profile has a median initial p below 1/4") {
    const auto tasks = make_curriculum(100, CurriculumProfile::HardHeavy, 1, vocab);
    const auto spectrum = certainty_spectrum(policy, tasks, 8, 100, 3);
    std::vector<double> p;
    for (double m : spectrum.mean_n) p.push_back(m / 8.0);
    std::nth_element(p.begin(), p.begin() + 50, p.end());
    CHECK(p[50] < 0.25);
  }
  SUBCASE("bimodal profile gives a bimodal pooled histogram") {
    const auto tasks = make_curriculum(100, CurriculumProfile::Bimodal, 4, vocab);
    const auto spectrum = certainty_spectrum(policy, tasks, 8, 100, 4);
    const auto& h = spectrum.pooled;
    // Mixture of Binomial(8, 1/8) and Binomial(8, 7/8): peaks at both ends,
    // trough in the middle.
    CHECK(h[1] > h[4]);
    CHECK(h[7] > h[4]);
    CHECK(h[4] < h[0]);
    CHECK(h[4] < h[8]);
  }
  SUBCASE("single task and error paths") {
    const auto one = make_curriculum(1, CurriculumProfile::Uniform, 0, vocab);
    CHECK(one.size() == 1);
    CHECK_THROWS_AS(make_curriculum(0, CurriculumProfile::Uniform, 0, vocab), ConfigError);
    CHECK_THROWS_AS(parse_curriculum_profile("easy"), ConfigError);
    CHECK_THROWS_AS(make_curriculum(3, CurriculumProfile::Bimodal, 0, TaskVocab{2, 3}),
                    ConfigError);
    CHECK(make_curriculum(5, CurriculumProfile::Uniform, 9, vocab) ==
          make_curriculum(5, CurriculumProfile::Uniform, 9, vocab));
  }
}
