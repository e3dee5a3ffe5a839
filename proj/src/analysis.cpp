#include "mapo/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <boost/math/distributions/chi_squared.hpp>

#include "mapo/errors.hpp"
#include "mapo/objective.hpp"
#include "mapo/parallel.hpp"
#include "mapo/rng.hpp"

namespace mapo {

namespace {

double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

GroupStats stats_with_mix(const RewardVector& rewards, const MixWeightFn& mix) {
  GroupStats s = group_stats(rewards);
  if (mix) s.mix_weight = mix(s.certainty);
  return s;
}

double min_of(const std::vector<double>& v) { return *std::min_element(v.begin(), v.end()); }

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

CheckResult check_near(std::string name, double measured, double expected, double tol) {
  return {std::move(name), measured, expected, "|measured - expected| <= " + std::to_string(tol),
          std::abs(measured - expected) <= tol};
}

CheckResult check_above(std::string name, double measured, double bound) {
  return {std::move(name), measured, bound, "measured > expected", measured > bound};
}

CheckResult check_at_most(std::string name, double measured, double bound) {
  return {std::move(name), measured, bound, "measured <= expected", measured <= bound};
}

// Every binary reward vector of length G, as doubles.
std::vector<std::vector<double>> binary_vectors(int g) {
  std::vector<std::vector<double>> out;
  for (unsigned bits = 0; bits < (1U << g); ++bits) {
    std::vector<double> r(static_cast<std::size_t>(g));
    for (int i = 0; i < g; ++i) r[static_cast<std::size_t>(i)] = (bits >> i) & 1U ? 1.0 : 0.0;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

double certainty_ratio_h(double p) {
  if (!(p > 0.0 && p <= 1.0)) throw DomainError("h(p) is undefined for p <= 0");
  return std::sqrt((1.0 - p) / p);
}

double rho_closed_form(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError("rho(p) requires 0 < p < 1, got " + std::to_string(p));
  }
  const double lambda = certainty_mix_weight(p);
  return (1.0 - lambda) + lambda * certainty_ratio_h(p);
}

TabularPolicy ratio_probe_policy(std::uint64_t seed) {
  PolicyShape shape;
  shape.mode = DecodeMode::Unconstrained;
  shape.vocab_size = 6;
  shape.max_len = 4;
  shape.context_order = 1;
  shape.prompt_slots = 1;
  return random_policy(shape, 1.0, seed);
}

GradientRatio empirical_gradient_ratio(int successes, int group_size, const TabularPolicy& policy,
                                       std::uint64_t seed, const MixWeightFn& mix) {
  if (group_size < 2) throw InvalidGroupError("group size G must be >= 2");
  if (successes <= 0 || successes >= group_size) {
    throw DegenerateGroupError("gradient ratio undefined for N = " + std::to_string(successes) +
                               " of G = " + std::to_string(group_size) +
                               " (GRPO gradient vanishes)");
  }
  TaskInstance task;
  RolloutGroup group = sample_group(policy, task, group_size, seed);
  std::vector<double> values;
  for (int i = 0; i < group_size; ++i) {
    Trajectory& t = group.trajectories[static_cast<std::size_t>(i)];
    const bool win = i < successes;
    t.components = {win ? 1 : 0, win ? 1 : 0};
    t.reward = win ? 1.0 : 0.0;
    t.success = win;
    values.push_back(t.reward);
  }
  const RewardVector rewards(values);
  const GroupStats stats = stats_with_mix(rewards, mix);
  const EstimatorSpec spec;
  const AdvantageVector grpo = advantage_grpo(rewards, stats, spec.eps_div);
  const AdvantageVector mapo = advantage_mapo(rewards, stats, spec.eps_div);
  const ObjectiveConfig cfg = ObjectiveConfig::unclipped_without_kl();

  GradientRatio out;
  out.successes = successes;
  out.group_size = group_size;
  out.grpo_norm = l2_norm(exact_gradient(group, grpo, policy, cfg, policy));
  out.mapo_norm = l2_norm(exact_gradient(group, mapo, policy, cfg, policy));
  if (!(out.grpo_norm > 1e-12)) {
    throw DegenerateGroupError("rollouts carry no gradient signal (identical trajectories?)");
  }
  out.ratio = out.mapo_norm / out.grpo_norm;
  out.expected = rho_closed_form(static_cast<double>(successes) / group_size);
  out.rel_error = std::abs(out.ratio - out.expected) / out.expected;
  return out;
}

double empirical_gradient_ratio(double p_target, int group_size, const TabularPolicy& policy,
                                std::uint64_t seed) {
  const int n = static_cast<int>(std::lround(p_target * group_size));
  return empirical_gradient_ratio(n, group_size, policy, seed).ratio;
}

RatioReport rho_case_sweep(double grid_step, const TabularPolicy& policy) {
  if (!(grid_step > 0.0 && grid_step <= 0.45)) {
    throw ConfigError("rho sweep grid step must lie in (0, 0.45]");
  }
  RatioReport report;
  const long n = std::lround(1.0 / grid_step);
  const bool integral = std::abs(static_cast<double>(n) * grid_step - 1.0) < 1e-9;
  if (integral) {
    const long lo = std::lround(std::ceil(0.05 * n - 1e-9));
    const long hi = std::lround(std::floor(0.95 * n + 1e-9));
    for (long k = lo; k <= hi; ++k) report.p.push_back(static_cast<double>(k) / n);
  } else {
    for (double p = 0.05; p <= 0.95 + 1e-12; p += grid_step) report.p.push_back(p);
  }

  for (std::size_t k = 0; k < report.p.size(); ++k) {
    const double p = report.p[k];
    const double rho = rho_closed_form(p);
    report.rho_closed_form.push_back(rho);
    const double lambda = certainty_mix_weight(p);
    report.lambda_identity_error.push_back(
        std::abs(rho - (1.0 + lambda * (certainty_ratio_h(p) - 1.0))));
    if (integral) {
      const int g = static_cast<int>(n);
      const int successes = static_cast<int>(std::lround(p * n));
      const double emp = empirical_gradient_ratio(successes, g, policy, derive_seed(17, k)).ratio;
      report.rho_empirical.push_back(emp);
      report.max_abs_error = std::max(report.max_abs_error, std::abs(emp - rho));
    }
    if (p < 0.5 && !(rho > 1.0)) report.above_one_below_half = false;
    if (p > 0.5 && !(rho > 0.0 && rho < 1.0)) report.below_one_above_half = false;
    if (p == 0.5) {
      report.has_half = true;
      report.rho_at_half_error = std::abs(rho - 1.0);
    }
    if (k > 0 && report.rho_closed_form[k] - report.rho_closed_form[k - 1] > 0.0) {
      report.non_increasing = false;
    }
  }
  return report;
}

bool PathologyReport::all_pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
}

PathologyReport pathology_report(const MixWeightFn& mix) {
  struct Batch {
    const char* name;
    std::vector<double> rewards;
  };
  const std::vector<Batch> batches = {
      {"high_certainty", {0.9, 1.0, 1.0, 1.0}},
      {"low_certainty_intro", {0.1, 0.9, 1.0, 1.0}},
      {"low_certainty", {0.1, 0.1, 1.0, 1.0}},
      {"mirror_low", {0.0, 0.1, 0.1, 0.1}},
  };
  const EstimatorKind kinds[] = {EstimatorKind::GRPO,    EstimatorKind::DrGRPO,
                                 EstimatorKind::GPG,     EstimatorKind::TreeRPO,
                                 EstimatorKind::APD,     EstimatorKind::MAPO};

  PathologyReport report;
  // adv[batch][kind]
  std::vector<std::vector<std::vector<double>>> adv(batches.size());
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const RewardVector rewards(batches[b].rewards);
    const GroupStats stats = stats_with_mix(rewards, mix);
    for (EstimatorKind kind : kinds) {
      EstimatorSpec spec;
      spec.kind = kind;
      std::vector<double> values = compute_advantage(rewards, stats, spec).values;
      adv[b].push_back(values);
      report.table.push_back({batches[b].name, batches[b].rewards, kind, std::move(values)});
    }
  }
  constexpr std::size_t kGrpo = 0, kApd = 4, kMapo = 5;
  constexpr std::size_t kHigh = 0, kLow = 2, kMirror = 3;
  auto& checks = report.checks;

  // Reversion.
  const double grpo_high_min = min_of(adv[kHigh][kGrpo]);
  const double grpo_low_min = min_of(adv[kLow][kGrpo]);
  checks.push_back(check_near("reversion_grpo_min_high", grpo_high_min, -std::sqrt(3.0), 0.01));
  checks.push_back(
      check_near("reversion_grpo_positive_high", adv[kHigh][kGrpo][1], 1.0 / std::sqrt(3.0), 0.01));
  checks.push_back(check_near("reversion_grpo_min_low", grpo_low_min, -1.0, 1e-6));
  checks.push_back(check_above("reversion_grpo_high_exceeds_low",
                               std::abs(grpo_high_min) - std::abs(grpo_low_min), 0.0));
  const double mapo_high_min = min_of(adv[kHigh][kMapo]);
  checks.push_back(check_above("reversion_mapo_less_extreme_than_grpo",
                               std::abs(grpo_high_min) - std::abs(mapo_high_min), 0.0));
  double apd_bound_slack = INFINITY;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const double mean = group_stats(batches[b].rewards).mean;
    double worst = 0.0;
    for (double a : adv[b][kApd]) worst = std::max(worst, std::abs(a));
    apd_bound_slack = std::min(apd_bound_slack, 1.0 / mean - worst);
  }
  checks.push_back({"reversion_apd_bounded_by_inverse_mean", apd_bound_slack, 0.0,
                    "min_b (1/mu_b - max_i |A_i|) >= expected", apd_bound_slack >= 0.0});

  // Mirror: deviating entry is index 0 in both batches.
  checks.push_back(check_at_most("mirror_grpo_equal",
                                 max_abs_diff(adv[kMirror][kGrpo], adv[kHigh][kGrpo]), 1e-9));
  checks.push_back(check_above(
      "mirror_apd_breaks",
      std::abs(std::abs(adv[kMirror][kApd][0]) - std::abs(adv[kHigh][kApd][0])), 0.1));
  // Reference mix uses lambda(p) = 1 - 4p(1-p) directly, independent of `mix`.
  double worst_mix_error = 0.0;
  for (std::size_t b : {kMirror, kHigh}) {
    const GroupStats s = group_stats(batches[b].rewards);
    const double lambda = 1.0 - 4.0 * s.certainty * (1.0 - s.certainty);
    for (std::size_t i = 0; i < adv[b][kMapo].size(); ++i) {
      const double want = (1.0 - lambda) * adv[b][kGrpo][i] + lambda * adv[b][kApd][i];
      worst_mix_error = std::max(worst_mix_error, std::abs(adv[b][kMapo][i] - want));
    }
  }
  checks.push_back(check_at_most("mirror_mapo_matches_certainty_mix", worst_mix_error, 0.01));
  checks.push_back(check_above(
      "mirror_mapo_breaks",
      std::abs(std::abs(adv[kMirror][kMapo][0]) - std::abs(adv[kHigh][kMapo][0])), 0.1));
  return report;
}

SpectrumReport certainty_spectrum(const TabularPolicy& policy,
                                  const std::vector<TaskInstance>& curriculum, int group_size,
                                  int n_groups, std::uint64_t seed, const RewardConfig& reward,
                                  unsigned jobs) {
  if (n_groups < 100) throw ConfigError("certainty spectrum needs n_groups >= 100");
  if (group_size < 2) throw InvalidGroupError("group size G must be >= 2");
  SpectrumReport report;
  report.group_size = group_size;
  report.n_groups = n_groups;
  const auto bins = static_cast<std::size_t>(group_size) + 1;
  report.per_task.assign(curriculum.size(), std::vector<int>(bins, 0));
  report.mean_n.assign(curriculum.size(), 0.0);
  report.var_n.assign(curriculum.size(), 0.0);

  parallel_for(curriculum.size(), jobs, [&](std::size_t k) {
    const std::uint64_t task_seed = derive_seed(seed, k);
    auto& hist = report.per_task[k];
    for (int j = 0; j < n_groups; ++j) {
      const RolloutGroup group = sample_group(policy, curriculum[k], group_size,
                                              derive_seed(task_seed, static_cast<std::uint64_t>(j)),
                                              reward);
      ++hist[static_cast<std::size_t>(group.success_count())];
    }
    double mean = 0.0;
    for (std::size_t n = 0; n < bins; ++n) mean += static_cast<double>(n) * hist[n];
    mean /= n_groups;
    double var = 0.0;
    for (std::size_t n = 0; n < bins; ++n) {
      var += (static_cast<double>(n) - mean) * (static_cast<double>(n) - mean) * hist[n];
    }
    report.mean_n[k] = mean;
    report.var_n[k] = var / n_groups;
  });

  report.pooled.assign(bins, 0);
  for (const auto& hist : report.per_task) {
    for (std::size_t n = 0; n < bins; ++n) report.pooled[n] += hist[n];
  }
  for (std::size_t n = 0; n < bins; ++n) {
    report.low_certainty.push_back(
        certainty_mix_weight(static_cast<double>(n) / group_size) <= 0.25);
  }
  return report;
}

ChiSquareResult chi_square_binomial(const std::vector<int>& counts, int group_size, double p,
                                    double alpha) {
  if (counts.size() != static_cast<std::size_t>(group_size) + 1) {
    throw ContractViolation("histogram must have G + 1 bins");
  }
  double total = 0.0;
  for (int c : counts) total += c;
  // Binomial pmf by the multiplicative recurrence.
  std::vector<double> expected(counts.size());
  double pmf = std::pow(1.0 - p, group_size);
  for (int n = 0; n <= group_size; ++n) {
    expected[static_cast<std::size_t>(n)] = total * pmf;
    if (n < group_size) pmf *= (group_size - n) / (n + 1.0) * p / (1.0 - p);
  }

  std::vector<double> obs_pooled, exp_pooled;
  double o_acc = 0.0, e_acc = 0.0;
  for (std::size_t n = 0; n < counts.size(); ++n) {
    o_acc += counts[n];
    e_acc += expected[n];
    if (e_acc >= 5.0) {
      obs_pooled.push_back(o_acc);
      exp_pooled.push_back(e_acc);
      o_acc = e_acc = 0.0;
    }
  }
  if (e_acc > 0.0 || o_acc > 0.0) {
    if (exp_pooled.empty()) {
      obs_pooled.push_back(o_acc);
      exp_pooled.push_back(e_acc);
    } else {
      obs_pooled.back() += o_acc;
      exp_pooled.back() += e_acc;
    }
  }

  ChiSquareResult out;
  for (std::size_t i = 0; i < obs_pooled.size(); ++i) {
    const double d = obs_pooled[i] - exp_pooled[i];
    out.statistic += d * d / exp_pooled[i];
  }
  out.dof = static_cast<int>(obs_pooled.size()) - 1;
  if (out.dof < 1) return out;
  const boost::math::chi_squared dist(out.dof);
  out.critical = boost::math::quantile(boost::math::complement(dist, alpha));
  out.p_value = boost::math::cdf(boost::math::complement(dist, out.statistic));
  out.reject = out.statistic > out.critical;
  return out;
}

GradientCheckReport finite_difference_check(int cases, std::uint64_t seed, double step,
                                            double rel_tol, double threshold) {
  GradientCheckReport report;
  report.cases = cases;
  const EstimatorKind kinds[] = {EstimatorKind::MAPO, EstimatorKind::GRPO, EstimatorKind::APD,
                                 EstimatorKind::DrGRPO, EstimatorKind::TreeRPO,
                                 EstimatorKind::GPG};
  const double alphabet[] = {0.0, 0.1, 0.9, 1.0};

  for (int c = 0; c < cases; ++c) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    PolicyShape shape;
    if (c % 2 == 0) {
      shape.mode = DecodeMode::Unconstrained;
      shape.vocab_size = 6;
      shape.max_len = 3;
      shape.context_order = 1;
      shape.prompt_slots = 2;
    } else {
      shape.mode = DecodeMode::Scaffold;
      shape.vocab = TaskVocab{1, 3};
      shape.max_len = 8;
      shape.context_order = 1;
      shape.prompt_slots = 2;
    }
    const TabularPolicy old = random_policy(shape, 1.0, rng.below(UINT64_MAX));
    TabularPolicy theta = old;
    for (double& x : theta.parameters()) x += 0.3 * rng.normal();
    const TabularPolicy ref = random_policy(shape, 0.5, rng.below(UINT64_MAX));

    const auto tasks = make_curriculum(2, CurriculumProfile::Uniform, rng.below(UINT64_MAX),
                                       TaskVocab{1, 3});
    std::vector<RolloutGroup> groups;
    std::vector<AdvantageVector> advs;
    EstimatorSpec spec;
    spec.kind = kinds[c % 6];
    for (const auto& task : tasks) {
      RolloutGroup g = sample_group(old, task, 4, rng.below(UINT64_MAX));
      std::vector<double> r;
      for (auto& t : g.trajectories) {
        t.reward = alphabet[rng.below(4)];
        r.push_back(t.reward);
      }
      const RewardVector rv(r);
      advs.push_back(compute_advantage(rv, group_stats(rv), spec));
      groups.push_back(std::move(g));
    }
    ObjectiveConfig cfg;
    cfg.kl_coef = 0.05;

    const ObjectiveGradient analytic = exact_gradient(groups, advs, theta, ref, cfg);
    TabularPolicy probe = theta;
    auto params = probe.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      const double saved = params[k];
      params[k] = saved + step;
      const double up = surrogate_objective(groups, advs, probe, ref, cfg).objective;
      params[k] = saved - step;
      const double down = surrogate_objective(groups, advs, probe, ref, cfg).objective;
      params[k] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double g = analytic.gradient[k];
      if (std::abs(g) > threshold) {
        ++report.coordinates;
        report.max_rel_error =
            std::max(report.max_rel_error, std::abs(fd - g) / std::max(std::abs(g), std::abs(fd)));
      } else {
        report.max_abs_error_small = std::max(report.max_abs_error_small, std::abs(fd));
      }
    }
  }
  report.pass = report.max_rel_error <= rel_tol && report.max_abs_error_small <= 1e-6;
  return report;
}

bool VerifyReport::all_pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
}

VerifyReport run_verification(const VerifyOptions& options) {
  VerifyReport report;
  auto& checks = report.checks;

  report.pathology = pathology_report(options.mix);
  checks.insert(checks.end(), report.pathology.checks.begin(), report.pathology.checks.end());

  // Endpoint laws over every binary reward vector with G <= 8.
  double half_err = 0.0, extreme_err = 0.0;
  for (int g = 2; g <= 8; ++g) {
    for (const auto& r : binary_vectors(g)) {
      const RewardVector rewards(r);
      const GroupStats s = stats_with_mix(rewards, options.mix);
      const auto mapo = advantage_mapo(rewards, s, 1e-8).values;
      if (2 * s.success_count == g) {
        half_err = std::max(half_err, max_abs_diff(mapo, advantage_grpo(rewards, s, 1e-8).values));
      }
      if (s.success_count == 0 || s.success_count == g) {
        extreme_err =
            std::max(extreme_err, max_abs_diff(mapo, advantage_apd(rewards, s, 1e-8).values));
      }
    }
  }
  checks.push_back(check_at_most("endpoint_mapo_equals_grpo_at_half", half_err, 1e-9));
  checks.push_back(check_at_most("endpoint_mapo_equals_apd_at_extremes", extreme_err, 1e-9));

  // Case table of rho(p).
  report.rho = rho_case_sweep(0.05);
  checks.push_back({"rho_above_one_for_p_below_half", report.rho.above_one_below_half ? 1.0 : 0.0,
                    1.0, "all grid points satisfy rho > 1", report.rho.above_one_below_half});
  checks.push_back({"rho_below_one_for_p_above_half", report.rho.below_one_above_half ? 1.0 : 0.0,
                    1.0, "all grid points satisfy 0 < rho < 1", report.rho.below_one_above_half});
  checks.push_back({"rho_non_increasing", report.rho.non_increasing ? 1.0 : 0.0, 1.0,
                    "consecutive differences <= 0", report.rho.non_increasing});
  checks.push_back(check_at_most("rho_equals_one_at_half", report.rho.rho_at_half_error, 1e-12));
  double identity_err = 0.0;
  for (double e : report.rho.lambda_identity_error) identity_err = std::max(identity_err, e);
  checks.push_back(check_at_most("rho_lambda_identity", identity_err, 1e-12));

  // Gradient-norm ratio exactness.
  const TabularPolicy probe = ratio_probe_policy();
  double worst_ratio = 0.0;
  for (int g : {4, 8, 12, 16}) {
    for (int n = 1; n < g; ++n) {
      const auto r = empirical_gradient_ratio(n, g, probe, derive_seed(g, n), options.mix);
      worst_ratio = std::max(worst_ratio, r.rel_error);
      report.ratio_sweep.push_back(r);
    }
  }
  for (int n : {4, 2, 6}) {
    const auto r = empirical_gradient_ratio(n, 8, probe, derive_seed(8, n), options.mix);
    checks.push_back(check_near("gradient_ratio_G8_N" + std::to_string(n), r.ratio,
                                rho_closed_form(n / 8.0), 1e-6 * rho_closed_form(n / 8.0)));
  }
  checks.push_back(check_at_most("gradient_ratio_sweep_max_rel_error", worst_ratio, 1e-6));

  report.gradient = finite_difference_check(20, 2024);
  checks.push_back({"gradient_finite_difference_max_rel_error", report.gradient.max_rel_error,
                    1e-5, "measured <= expected on every |g| > 1e-8 coordinate",
                    report.gradient.pass});
  return report;
}

}  // namespace mapo
