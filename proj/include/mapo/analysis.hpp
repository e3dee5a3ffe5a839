#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mapo/advantage.hpp"
#include "mapo/core.hpp"
#include "mapo/env.hpp"
#include "mapo/policy.hpp"

namespace mapo {

// Replaces lambda(p) when computing mixed advantages; used to inject faults
// into the verification suite. Empty means the real certainty weight.
using MixWeightFn = std::function<double(double p)>;

// h(p) = sqrt((1-p)/p).
double certainty_ratio_h(double p);

// rho(p) = (1 - lambda(p)) + lambda(p) h(p): ratio of MAPO to GRPO gradients
// for Bernoulli rewards. Throws DomainError unless 0 < p < 1.
double rho_closed_form(double p);

struct GradientRatio {
  int successes = 0;
  int group_size = 0;
  double grpo_norm = 0.0;
  double mapo_norm = 0.0;
  double ratio = 0.0;     // mapo_norm / grpo_norm
  double expected = 0.0;  // rho_closed_form(N / G)
  double rel_error = 0.0;
};

// Builds one group of G rollouts sampled from `policy` (task prompt 0), marks
// the first N as successes (reward 1, others 0), and compares exact gradient
// norms at theta = old with clipping and KL disabled. Throws
// DegenerateGroupError when N is 0 or G, or when the GRPO gradient vanishes.
GradientRatio empirical_gradient_ratio(int successes, int group_size, const TabularPolicy& policy,
                                       std::uint64_t seed = 0, const MixWeightFn& mix = {});
// N = round(p_target * G).
double empirical_gradient_ratio(double p_target, int group_size, const TabularPolicy& policy,
                                std::uint64_t seed = 0);

// Policy used by the ratio checks: random logits over a small unconstrained
// vocabulary so that rollouts differ.
TabularPolicy ratio_probe_policy(std::uint64_t seed = 7);

struct RatioReport {
  std::vector<double> p;
  std::vector<double> rho_closed_form;
  std::vector<double> rho_empirical;
  std::vector<double> lambda_identity_error;  // |rho - (1 + lambda (h - 1))|
  double max_abs_error = 0.0;                 // closed form vs empirical
  bool above_one_below_half = true;
  bool below_one_above_half = true;
  bool non_increasing = true;
  double rho_at_half_error = 0.0;  // |rho(1/2) - 1|, NaN-free; 0 when 1/2 is off the grid
  bool has_half = false;
};

// Grid p = 0.05 .. 0.95 with the given step. The empirical column uses groups
// of G = 1/grid_step rollouts when that is an integer, otherwise it is skipped
// (left empty).
RatioReport rho_case_sweep(double grid_step, const TabularPolicy& policy = ratio_probe_policy());

struct CheckResult {
  std::string name;
  double measured = 0.0;
  double expected = 0.0;
  std::string criterion;  // how measured is compared with expected
  bool pass = false;
};

struct PathologyRow {
  std::string batch;
  std::vector<double> rewards;
  EstimatorKind estimator = EstimatorKind::GRPO;
  std::vector<double> advantages;
};

struct PathologyReport {
  std::vector<PathologyRow> table;
  std::vector<CheckResult> checks;
  bool all_pass() const;
};

// Recomputes the four reference reward batches under all six estimators and
// checks the reversion and mirror pathologies of GRPO and their resolution
// by APD and MAPO.
PathologyReport pathology_report(const MixWeightFn& mix = {});

struct SpectrumReport {
  int group_size = 0;
  int n_groups = 0;
  std::vector<std::vector<int>> per_task;  // per task: counts over N = 0..G
  std::vector<int> pooled;
  std::vector<double> mean_n;               // per task
  std::vector<double> var_n;                // per task, population variance
  std::vector<bool> low_certainty;          // N with lambda(N/G) <= 0.25
};

// Histogram of success counts over n_groups groups per task. Throws
// ConfigError when n_groups < 100.
SpectrumReport certainty_spectrum(const TabularPolicy& policy,
                                  const std::vector<TaskInstance>& curriculum, int group_size,
                                  int n_groups, std::uint64_t seed,
                                  const RewardConfig& reward = {}, unsigned jobs = 1);

struct ChiSquareResult {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
  double critical = 0.0;  // upper alpha quantile
  bool reject = false;
};

// Goodness of fit of counts over N = 0..G against Binomial(G, p). Adjacent
// bins are pooled until every expected count is at least 5.
ChiSquareResult chi_square_binomial(const std::vector<int>& counts, int group_size, double p,
                                    double alpha);

struct GradientCheckReport {
  int cases = 0;
  long coordinates = 0;      // coordinates with |g| > threshold
  double max_rel_error = 0.0;
  double max_abs_error_small = 0.0;  // |g_fd| where |g| <= threshold
  bool pass = false;
};

// Central finite differences of surrogate_objective against exact_gradient
// on random policies, reference policies and rollout batches (theta != old,
// so clipping and KL are active).
GradientCheckReport finite_difference_check(int cases, std::uint64_t seed, double step = 1e-6,
                                            double rel_tol = 1e-5, double threshold = 1e-8);

struct VerifyOptions {
  MixWeightFn mix;  // fault injection hook
  unsigned jobs = 1;
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  PathologyReport pathology;
  RatioReport rho;
  std::vector<GradientRatio> ratio_sweep;
  GradientCheckReport gradient;
  bool all_pass() const;
};

// The full suite: pathology reproductions, endpoint laws, rho case table,
// gradient-ratio exactness over G in {4,8,12,16}, finite-difference check.
VerifyReport run_verification(const VerifyOptions& options = {});

}  // namespace mapo
