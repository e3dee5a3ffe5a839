#include <doctest.h>

#include <cmath>
#include <vector>

#include "mapo/core.hpp"
#include "mapo/errors.hpp"

using namespace mapo;

namespace {

// Naive two-pass recomputation in long double.
struct NaiveStats {
  long double mean, stddev;
  int n;
};

NaiveStats naive(const std::vector<double>& r) {
  long double s = 0;
  int n = 0;
  for (double x : r) {
    s += x;
    if (x == 1.0) ++n;
  }
  const long double mean = s / r.size();
  long double ss = 0;
  for (double x : r) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / r.size()), n};
}

}  // namespace

TEST_CASE("group_stats reproduces the worked examples") {
  const auto s = group_stats(std::vector<double>{0.9, 1, 1, 1});
  CHECK(s.mean == doctest::Approx(0.975).epsilon(1e-12));
  CHECK(s.stddev == doctest::Approx(0.0433012701892219).epsilon(1e-10));
  CHECK(s.success_count == 3);
  CHECK(s.certainty == 0.75);
  CHECK(s.mix_weight == doctest::Approx(0.25).epsilon(1e-15));

  const auto c = group_stats(std::vector<double>{1, 1, 1, 1});
  CHECK(c.mean == 1.0);
  CHECK(c.stddev == 0.0);
  CHECK(c.success_count == 4);
  CHECK(c.certainty == 1.0);
  CHECK(c.mix_weight == 1.0);

  const auto h = group_stats(std::vector<double>{1, 1, 0, 0});
  CHECK(h.mean == 0.5);
  CHECK(h.stddev == 0.5);
  CHECK(h.success_count == 2);
  CHECK(h.certainty == 0.5);
  CHECK(h.mix_weight == 0.0);
}

TEST_CASE("groups smaller than two are rejected") {
  CHECK_THROWS_AS(group_stats(std::vector<double>{1.0}), InvalidGroupError);
  CHECK_THROWS_AS(group_stats(std::vector<double>{}), InvalidGroupError);
  CHECK_THROWS_AS(RewardVector({0.5}), InvalidGroupError);
  CHECK_THROWS_AS(RewardVector({0.5, 1.5}), InvalidGroupError);
  CHECK_THROWS_AS(RewardVector({-0.1, 1.0}), InvalidGroupError);
}

TEST_CASE("brute force: group_stats agrees with a naive recomputation on all binary vectors") {
  for (int g = 2; g <= 8; ++g) {
    for (unsigned bits = 0; bits < (1U << g); ++bits) {
      std::vector<double> r;
      for (int i = 0; i < g; ++i) r.push_back((bits >> i) & 1U ? 1.0 : 0.0);
      const auto s = group_stats(r);
      const auto o = naive(r);
      REQUIRE(s.success_count == o.n);
      REQUIRE(std::abs(s.mean - static_cast<double>(o.mean)) <= 1e-15);
      REQUIRE(std::abs(s.stddev - static_cast<double>(o.stddev)) <= 1e-15);
      const double p = static_cast<double>(o.n) / g;
      REQUIRE(s.certainty == p);
      // Binary rewards: sigma^2 = p(1-p) <= 1/4, maximal at p = 1/2.
      REQUIRE(std::abs(s.stddev * s.stddev - p * (1 - p)) <= 1e-15);
      REQUIRE(s.stddev <= 0.5);
      if (2 * o.n == g) REQUIRE(s.stddev == 0.5);
      REQUIRE(s.mix_weight >= 0.0);
      REQUIRE(s.mix_weight <= 1.0);
      REQUIRE((s.mix_weight == 0.0) == (2 * o.n == g));
    }
  }
}

TEST_CASE("lambda is symmetric about one half") {
  for (int k = 0; k <= 1000; ++k) {
    const double p = k / 1000.0;
    CHECK(certainty_mix_weight(p) == doctest::Approx(certainty_mix_weight(1.0 - p)).epsilon(1e-12));
  }
  CHECK(certainty_mix_weight(0.5) == 0.0);
  CHECK(certainty_mix_weight(0.0) == 1.0);
  CHECK(certainty_mix_weight(1.0) == 1.0);
}

TEST_CASE("reward components combine with the configured weight") {
  const std::vector<RewardComponents> comps = {{1, 1}, {1, 0}, {0, 1}, {0, 0}};
  const auto r = RewardVector::from_components(comps, 0.9);
  CHECK(r[0] == 1.0);
  CHECK(r[1] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(r[2] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(r[3] == 0.0);
  REQUIRE(r.components().has_value());
  CHECK(r.beta_r().value() == 0.9);
  CHECK(group_stats(r).success_count == 1);
}

TEST_CASE("estimator names round-trip") {
  for (auto k : {EstimatorKind::GRPO, EstimatorKind::DrGRPO, EstimatorKind::GPG,
                 EstimatorKind::TreeRPO, EstimatorKind::APD, EstimatorKind::MAPO}) {
    CHECK(parse_estimator_kind(to_string(k)) == k);
  }
  CHECK_THROWS_AS(parse_estimator_kind("PPO"), ConfigError);
}
