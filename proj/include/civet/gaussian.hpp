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

#pragma once

#include <cstddef>
#include <vector>

#include "civet/interval.hpp"
#include "civet/tensor.hpp"

namespace civet {

/// delta in (0, 0.5), so the covered probability 1 - delta is in (0.5, 1).
class ProbabilityThreshold {
 public:
  explicit ProbabilityThreshold(double delta);

  double delta() const noexcept { return delta_; }
  double coverage() const noexcept { return 1.0 - delta_; }
  /// (1 - delta)^(1 / dims): the share each independent dimension must cover.
  double per_dimension(std::size_t dims) const;

 private:
  double delta_;
};

/// Strictly decreasing list of deltas, largest (smallest support) first.
class DeltaSchedule {
 public:
  explicit DeltaSchedule(std::vector<double> deltas);

  const std::vector<double>& deltas() const noexcept { return deltas_; }
  std::size_t size() const noexcept { return deltas_.size(); }

  /// Loss weights [1 - d1, d1 - d2, ..., d(n-1) - dn]; they sum to 1 - dn.
  std::vector<double> weights() const;

 private:
  std::vector<double> deltas_;
};

/// Standard normal CDF via erfc; absolute error below 1e-12 for |x| <= 8.
double std_normal_cdf(double x);

/// Standard normal quantile. Rational initial guess refined with Halley steps
/// on the CDF. Throws DomainError unless 0 < p < 1.
double std_normal_icdf(double p);

/// P(l <= X <= u) for X ~ N(mu, sigma^2).
double coverage(double mu, double sigma, double upper, double lower);

/// Largest probability handed to the quantile during the support search.
inline constexpr double kMaxSearchProbability = 1.0 - 1e-15;
inline constexpr int kDefaultSearchDepth = 60;

struct Support1d {
  double lower = 0.0;
  double upper = 0.0;
  double p0 = 0.0;        // selected probability, Phi^-1(p0) scales sigma_ub
  double quantile = 0.0;  // Phi^-1(p0)
  double bracket_low = 0.0;  // last infeasible probability seen by the search
};

/// Symmetric support [mu_lb - sigma_ub q, mu_ub + sigma_ub q] covering at
/// least `target` of every N(mu, sigma) with mu in [mu_lb, mu_ub] and
/// sigma <= sigma_ub. q = Phi^-1(p0), p0 found by bisection over
/// [target, 1] for the smallest p with
///   Phi^-1(p) + Phi^-1(p - target) >= (mu_lb - mu_ub) / sigma_ub.
Support1d find_support_1d(double mu_lb, double mu_ub, double sigma_ub, double target,
                          int max_depth = kDefaultSearchDepth);

/// The bisection predicate's left-hand side.
double support_condition(double p, double target);

/// Latent-space box for one example.
struct SupportSet {
  std::vector<double> lower;
  std::vector<double> upper;
  ProbabilityThreshold threshold{0.05};
  std::vector<double> per_dim_p0;
  std::vector<double> quantiles;

  std::size_t dims() const noexcept { return lower.size(); }
};

/// Splits 1 - delta evenly across independent latent dimensions and solves
/// each with find_support_1d. `bounds` must be a single example ([d_l]).
SupportSet find_support(const LatentBounds& bounds, const ProbabilityThreshold& delta,
                        int max_depth = kDefaultSearchDepth);

/// Quantile factors q[b, i] = Phi^-1(p0) for a batch of bounds [B x d_l].
/// The supports are [mu_lb - sigma_ub q, mu_ub + sigma_ub q].
Tensor support_quantiles(const LatentBounds& bounds, const ProbabilityThreshold& delta,
                         int max_depth = kDefaultSearchDepth);

/// Guaranteed minimum coverage of `support` over the bound rectangle:
/// product over dimensions of the minimum coverage on a grid_points x
/// grid_points grid in (mu, sigma), endpoints included.
double verify_support(const LatentBounds& bounds, const SupportSet& support,
                      std::size_t grid_points = 21);

/// Same quantity using only the worst-case endpoint distributions
/// N(mu_lb, sigma_ub) and N(mu_ub, sigma_ub) in every dimension.
double endpoint_coverage(const LatentBounds& bounds, const SupportSet& support);

namespace testing {
/// Adds `offset` to every std_normal_icdf result. Self-test fault injection.
void set_icdf_fault(double offset);
}  // namespace testing

}  // namespace civet
