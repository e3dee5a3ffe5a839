#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "mapo/advantage.hpp"
#include "mapo/errors.hpp"

using namespace mapo;

namespace {

constexpr double kEps = 1e-8;

void check_vec(const AdvantageVector& got, const std::vector<double>& want, double tol) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= tol);
}

AdvantageVector run(EstimatorKind kind, const std::vector<double>& r) {
  const RewardVector rv(r);
  EstimatorSpec spec;
  spec.kind = kind;
  return compute_advantage(rv, group_stats(rv), spec);
}

// Enumerates every vector of length g over the {0, 0.1, 0.9, 1} alphabet.
template <typename Fn>
void for_each_alphabet_vector(int g, Fn&& fn) {
  const double alphabet[] = {0.0, 0.1, 0.9, 1.0};
  std::vector<int> idx(static_cast<std::size_t>(g), 0);
  while (true) {
    std::vector<double> r;
    for (int i : idx) r.push_back(alphabet[i]);
    fn(r);
    int k = 0;
    while (k < g && ++idx[static_cast<std::size_t>(k)] == 4) idx[static_cast<std::size_t>(k++)] = 0;
    if (k == g) return;
  }
}

const EstimatorKind kAll[] = {EstimatorKind::GRPO, EstimatorKind::DrGRPO, EstimatorKind::GPG,
                              EstimatorKind::TreeRPO, EstimatorKind::APD, EstimatorKind::MAPO};

}  // namespace

TEST_CASE("GRPO z-score examples") {
  check_vec(run(EstimatorKind::GRPO, {0.9, 1, 1, 1}), {-1.732, 0.577, 0.577, 0.577}, 0.01);
  check_vec(run(EstimatorKind::GRPO, {0, 0.1, 0.1, 0.1}), {-1.732, 0.577, 0.577, 0.577}, 0.01);
  for (double c : {0.0, 0.1, 0.9, 1.0, 0.37}) {
    check_vec(run(EstimatorKind::GRPO, {c, c, c, c}), {0, 0, 0, 0}, 0.0);
  }
}

TEST_CASE("APD examples") {
  check_vec(run(EstimatorKind::APD, {0.9, 1, 1, 1}), {-0.0769, 0.0256, 0.0256, 0.0256}, 1e-3);
  check_vec(run(EstimatorKind::APD, {0, 0.1, 0.1, 0.1}), {-1.0, 0.3333, 0.3333, 0.3333}, 1e-3);
  check_vec(run(EstimatorKind::APD, {1, 1, 1, 1}), {0, 0, 0, 0}, 0.0);
  // All-zero group: numerator is zero, eps keeps it finite.
  check_vec(run(EstimatorKind::APD, {0, 0, 0, 0}), {0, 0, 0, 0}, 0.0);
}

TEST_CASE("MAPO examples") {
  check_vec(run(EstimatorKind::MAPO, {1, 1, 0, 0}), {1, 1, -1, -1}, 1e-6);
  check_vec(run(EstimatorKind::MAPO, {1, 1, 1, 1}), {0, 0, 0, 0}, 0.0);
  check_vec(run(EstimatorKind::MAPO, {0.9, 1, 1, 1}), {-1.318, 0.439, 0.439, 0.439}, 0.01);
}

TEST_CASE("baseline examples") {
  check_vec(run(EstimatorKind::DrGRPO, {0.9, 1, 1, 1}), {-0.075, 0.025, 0.025, 0.025}, 1e-12);
  check_vec(run(EstimatorKind::GPG, {0.9, 1, 1, 1}), {-0.045, 0.015, 0.015, 0.015}, 1e-12);
  check_vec(run(EstimatorKind::TreeRPO, {1, 1, 0, 0}), {2, 2, -2, -2}, 1e-4);
  const RewardVector rv({0.9, 1, 1, 1});
  EstimatorSpec spec;
  spec.kind = EstimatorKind::MAPO;
  CHECK_THROWS_AS(advantage_baseline(rv, group_stats(rv), spec), ConfigError);
}

TEST_CASE("mismatched stats are a contract violation") {
  const RewardVector a({0.9, 1, 1, 1});
  const RewardVector b({0.9, 1, 1});
  CHECK_THROWS_AS(advantage_grpo(a, group_stats(b), kEps), ContractViolation);
}

TEST_CASE("EstimatorSpec validation") {
  EstimatorSpec spec;
  spec.alpha = 0.0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.alpha = 0.6;
  spec.eps_div = 0.0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("sweep: mean zero, finite, ranking preserved, endpoint reductions") {
  long vectors = 0;
  for (int g = 2; g <= 8; ++g) {
    for_each_alphabet_vector(g, [&](const std::vector<double>& r) {
      ++vectors;
      const RewardVector rv(r);
      const GroupStats s = group_stats(rv);
      for (EstimatorKind kind : kAll) {
        EstimatorSpec spec;
        spec.kind = kind;
        const auto adv = compute_advantage(rv, s, spec);
        REQUIRE(adv.size() == r.size());
        double sum = 0.0, scale = 0.0;
        for (double a : adv.values) {
          REQUIRE(std::isfinite(a));
          sum += a;
          scale = std::max(scale, std::abs(a));
        }
        REQUIRE(std::abs(sum / g) <= 1e-12 * std::max(1.0, scale));
        if (s.stddev > 0.0) {
          for (std::size_t i = 0; i < r.size(); ++i)
            for (std::size_t j = 0; j < r.size(); ++j)
              if (r[i] < r[j]) REQUIRE(adv[i] < adv[j]);
        }
      }
      const auto mapo = advantage_mapo(rv, s, kEps);
      if (2 * s.success_count == g) {
        const auto z = advantage_grpo(rv, s, kEps);
        for (std::size_t i = 0; i < r.size(); ++i) REQUIRE(mapo[i] == z[i]);
      }
      if (s.success_count == 0 || s.success_count == g) {
        const auto apd = advantage_apd(rv, s, kEps);
        for (std::size_t i = 0; i < r.size(); ++i) REQUIRE(mapo[i] == apd[i]);
      }
      // |APD| <= 1/mu whenever mu > 0.
      if (s.mean > 0.0) {
        const auto apd = advantage_apd(rv, s, kEps);
        for (double a : apd.values) REQUIRE(std::abs(a) <= 1.0 / s.mean);
      }
    });
  }
  CHECK(vectors == 87376);
}

TEST_CASE("mirror pair: GRPO equal, APD and MAPO differ") {
  const auto za = run(EstimatorKind::GRPO, {0, 0.1, 0.1, 0.1});
  const auto zb = run(EstimatorKind::GRPO, {0.9, 1, 1, 1});
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(za[i] - zb[i]) <= 1e-9);
  for (EstimatorKind k : {EstimatorKind::APD, EstimatorKind::MAPO}) {
    const auto a = run(k, {0, 0.1, 0.1, 0.1});
    const auto b = run(k, {0.9, 1, 1, 1});
    CHECK(std::abs(std::abs(a[0]) - std::abs(b[0])) > 0.1);
  }
}

TEST_CASE("reversion: MAPO minimum is less extreme than GRPO on the high-certainty group") {
  const auto z = run(EstimatorKind::GRPO, {0.9, 1, 1, 1});
  const auto m = run(EstimatorKind::MAPO, {0.9, 1, 1, 1});
  const double zmin = *std::min_element(z.values.begin(), z.values.end());
  const double mmin = *std::min_element(m.values.begin(), m.values.end());
  CHECK(zmin == doctest::Approx(-1.7320508).epsilon(1e-6));
  CHECK(mmin == doctest::Approx(-1.3182686).epsilon(1e-6));
  CHECK(std::abs(mmin) < std::abs(zmin));
}
