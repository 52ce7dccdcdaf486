// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#include <cmath>
#include <random>

#include "doctest.h"
#include "civet/errors.hpp"
#include "civet/gaussian.hpp"
#include "oracles.hpp"

using namespace civet;

TEST_CASE("probability threshold and schedule validation") {
  CHECK_THROWS_AS(ProbabilityThreshold(0.0), DomainError);
  CHECK_THROWS_AS(ProbabilityThreshold(0.5), DomainError);
  CHECK_THROWS_AS(ProbabilityThreshold(-0.1), DomainError);
  const ProbabilityThreshold t(0.05);
  CHECK(t.coverage() == doctest::Approx(0.95));
  CHECK(t.per_dimension(4) == doctest::Approx(std::pow(0.95, 0.25)).epsilon(1e-15));
  CHECK(t.per_dimension(1) == doctest::Approx(0.95));

  CHECK_THROWS_AS(DeltaSchedule({}), DomainError);
  CHECK_THROWS_AS(DeltaSchedule({0.2, 0.35}), DomainError);
  CHECK_THROWS_AS(DeltaSchedule({0.2, 0.2}), DomainError);
}

TEST_CASE("schedule weights telescope") {
  const DeltaSchedule s({0.35, 0.2, 0.05});
  const auto w = s.weights();
  REQUIRE(w.size() == 3);
  CHECK(w[0] == doctest::Approx(0.65).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(0.15).epsilon(1e-12));
  CHECK(w[2] == doctest::Approx(0.15).epsilon(1e-12));
  CHECK(w[0] + w[1] + w[2] == doctest::Approx(0.95).epsilon(1e-12));
  CHECK(DeltaSchedule({0.1}).weights() == std::vector<double>{0.9});
}

TEST_CASE("normal cdf reference values") {
  CHECK(std_normal_cdf(0.0) == 0.5);
  CHECK(std_normal_cdf(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-14));
  CHECK(std_normal_cdf(-3.0) == doctest::Approx(0.0013498980316300946).epsilon(1e-13));
  CHECK(coverage(0.0, 1.0, 1.959963984540054, -1.959963984540054) ==
        doctest::Approx(0.95).epsilon(1e-13));
  CHECK_THROWS_AS(coverage(0.0, 0.0, 1.0, -1.0), DomainError);
}

TEST_CASE("normal quantile agrees with bisection on the cdf") {
  CHECK(std_normal_icdf(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-14));
  CHECK(std_normal_icdf(0.5) == 0.0);
  // The oracle is evaluated on the smaller tail, where 1 - p is exact.
  for (double p : {1e-300, 1e-15, 1e-9, 1e-4, 0.01, 0.1, 0.3, 0.49, 0.51, 0.7, 0.9, 0.99,
                   0.9999, 1.0 - 1e-9, 1.0 - 1e-15}) {
    const double q = std_normal_icdf(p);
    const double ref = p < 0.5 ? oracle::quantile(p) : -oracle::quantile(1.0 - p);
    if (p > 1e-200) CHECK(q == doctest::Approx(ref).epsilon(1e-9));
  }
  for (double p : {1e-4, 0.01, 0.2, 0.45}) {
    CHECK(std_normal_icdf(1.0 - p) == doctest::Approx(-std_normal_icdf(p)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(std_normal_icdf(0.0), DomainError);
  CHECK_THROWS_AS(std_normal_icdf(1.0), DomainError);
  CHECK_THROWS_AS(std_normal_icdf(std::nan("")), DomainError);
}

TEST_CASE("worked example: mu in [0, 1], sigma_ub = 2, delta = 0.05") {
  const Support1d s = find_support_1d(0.0, 1.0, 2.0, 0.95);
  CHECK(s.lower == doctest::Approx(-3.54).epsilon(0.01 / 3.54));
  CHECK(s.upper == doctest::Approx(4.54).epsilon(0.01 / 4.54));
  CHECK(std::fabs(s.lower + 3.54) <= 0.01);
  CHECK(std::fabs(s.upper - 4.54) <= 0.01);
  CHECK(s.upper - 1.0 == doctest::Approx(0.0 - s.lower).epsilon(1e-12));
  const double zeta = oracle::symmetric_margin(0.0, 1.0, 2.0, 0.95);
  CHECK(s.upper - 1.0 == doctest::Approx(zeta).epsilon(1e-9));
}

TEST_CASE("point mean interval gives the two-sided quantile") {
  for (double delta : {0.01, 0.05, 0.2, 0.4}) {
    const Support1d s = find_support_1d(0.3, 0.3, 1.5, 1.0 - delta);
    CHECK(s.p0 == doctest::Approx(1.0 - delta / 2.0).epsilon(1e-12));
    CHECK(s.upper - 0.3 == doctest::Approx(1.5 * oracle::quantile(1.0 - delta / 2)).epsilon(1e-9));
  }
}

TEST_CASE("support search matches the margin oracle and is minimal") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> mu(-3, 3), w(0, 3), sig(0.01, 3), d(0.001, 0.45);
  for (int i = 0; i < 300; ++i) {
    const double lb = mu(rng), ub = lb + w(rng), s = sig(rng), target = 1.0 - d(rng);
    const Support1d sup = find_support_1d(lb, ub, s, target);
    const double zeta = oracle::symmetric_margin(lb, ub, s, target);
    CHECK(sup.upper - ub == doctest::Approx(zeta).epsilon(1e-8));
    // Covers at both worst-case endpoints.
    CHECK(oracle::mass(ub, s, sup.lower, sup.upper) >= target - 1e-12);
    CHECK(oracle::mass(lb, s, sup.lower, sup.upper) >= target - 1e-12);
    // The last rejected probability does not cover.
    if (sup.bracket_low > target) {
      const double q = std_normal_icdf(sup.bracket_low);
      CHECK(oracle::mass(ub, s, lb - s * q, ub + s * q) < target + 1e-12);
    }
  }
}

TEST_CASE("support search argument errors") {
  CHECK_THROWS_AS(find_support_1d(1.0, 0.0, 1.0, 0.9), DomainError);
  CHECK_THROWS_AS(find_support_1d(0.0, 1.0, 0.0, 0.9), DomainError);
  CHECK_THROWS_AS(find_support_1d(0.0, 1.0, 1.0, 0.5), DomainError);
  CHECK_THROWS_AS(find_support_1d(0.0, 1.0, 1.0, 1.0), DomainError);
  CHECK_THROWS_AS(find_support_1d(0.0, 1.0, 1.0, 0.9, 0), DomainError);
  // A target so close to 1 that no probability below 1 - 1e-15 covers it.
  CHECK_THROWS_AS(find_support_1d(0.0, 0.0, 1.0, 1.0 - 1.5e-15), DomainError);
}

TEST_CASE("multi-dimensional supports cover 1 - delta") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> mu(-2, 2), w(0, 1), sig(0.05, 1.5);
  for (std::size_t dims : {1u, 4u, 16u}) {
    LatentBounds b{Tensor(Shape{dims}), Tensor(Shape{dims}), Tensor(Shape{dims}),
                   Tensor(Shape{dims})};
    for (std::size_t i = 0; i < dims; ++i) {
      b.mu_lb[i] = mu(rng);
      b.mu_ub[i] = b.mu_lb[i] + w(rng);
      b.sigma_lb[i] = sig(rng);
      b.sigma_ub[i] = b.sigma_lb[i] + w(rng);
    }
    for (double delta : {0.01, 0.05, 0.3}) {
      const SupportSet s = find_support(b, ProbabilityThreshold(delta));
      CHECK(s.dims() == dims);
      CHECK(verify_support(b, s) >= 1.0 - delta - 1e-9);
      CHECK(endpoint_coverage(b, s) >= 1.0 - delta - 1e-9);
      CHECK(endpoint_coverage(b, s) <= 1.0 - delta + 1e-6);
    }
    // Smaller delta never shrinks the support.
    const SupportSet loose = find_support(b, ProbabilityThreshold(0.2));
    const SupportSet tight = find_support(b, ProbabilityThreshold(0.01));
    for (std::size_t i = 0; i < dims; ++i) {
      CHECK(tight.lower[i] <= loose.lower[i]);
      CHECK(tight.upper[i] >= loose.upper[i]);
    }
  }
}

TEST_CASE("batched quantiles equal per-example searches") {
  const Tensor lb(Shape{2, 2}, {0.0, -1.0, 0.5, 0.2});
  const Tensor ub(Shape{2, 2}, {0.5, -0.5, 0.5, 0.9});
  const Tensor sl(Shape{2, 2}, {0.1, 0.2, 0.3, 0.4});
  const Tensor su(Shape{2, 2}, {0.5, 0.6, 0.7, 0.8});
  const LatentBounds b{lb, ub, sl, su};
  const Tensor q = support_quantiles(b, ProbabilityThreshold(0.05));
  for (std::size_t r = 0; r < 2; ++r) {
    const SupportSet s = find_support(b.row(r), ProbabilityThreshold(0.05));
    for (std::size_t i = 0; i < 2; ++i) CHECK(q[r * 2 + i] == s.quantiles[i]);
  }
}

TEST_CASE("quantile fault hook shifts results") {
  const double clean = std_normal_icdf(0.9);
  testing::set_icdf_fault(0.25);
  CHECK(std_normal_icdf(0.9) == doctest::Approx(clean + 0.25));
  const Support1d s = find_support_1d(0.0, 1.0, 2.0, 0.95);
  testing::set_icdf_fault(0.0);
  CHECK(std::fabs(s.lower + 3.54) > 0.01);
  CHECK(std_normal_icdf(0.9) == clean);
}
