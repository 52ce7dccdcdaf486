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

#include "civet/gaussian.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "civet/errors.hpp"

namespace civet {

namespace {

std::atomic<double> g_icdf_fault{0.0};

// Acklam's rational approximation to the normal quantile, good to ~1e-9
// relative; used only as the starting point for refinement.
double icdf_initial_guess(double p) {
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549671348850732e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

// Quantile for p <= 0.5, where p carries full relative precision.
double lower_half_icdf(double p) {
  double x = icdf_initial_guess(p);
  const double sqrt_2pi = std::sqrt(2.0 * std::numbers::pi);
  for (int it = 0; it < 3; ++it) {
    const double e = std_normal_cdf(x) - p;
    const double u = e * sqrt_2pi * std::exp(0.5 * x * x);
    const double step = u / (1.0 + 0.5 * x * u);
    x -= step;
    if (std::fabs(step) <= 1e-17 * std::max(1.0, std::fabs(x))) break;
  }
  return x;
}

}  // namespace

namespace testing {
void set_icdf_fault(double offset) { g_icdf_fault.store(offset); }
}  // namespace testing

ProbabilityThreshold::ProbabilityThreshold(double delta) : delta_(delta) {
  if (!(delta > 0.0 && delta < 0.5)) {
    throw DomainError("delta must lie in (0, 0.5), got " + std::to_string(delta));
  }
}

double ProbabilityThreshold::per_dimension(std::size_t dims) const {
  if (dims == 0) throw DomainError("latent dimension must be positive");
  return std::pow(1.0 - delta_, 1.0 / static_cast<double>(dims));
}

DeltaSchedule::DeltaSchedule(std::vector<double> deltas) : deltas_(std::move(deltas)) {
  if (deltas_.empty()) throw DomainError("delta schedule is empty");
  for (std::size_t i = 0; i < deltas_.size(); ++i) {
    ProbabilityThreshold check(deltas_[i]);
    if (i > 0 && !(deltas_[i] < deltas_[i - 1])) {
      throw DomainError("delta schedule must be strictly decreasing");
    }
  }
}

std::vector<double> DeltaSchedule::weights() const {
  std::vector<double> w;
  w.reserve(deltas_.size());
  w.push_back(1.0 - deltas_[0]);
  for (std::size_t i = 1; i < deltas_.size(); ++i) w.push_back(deltas_[i - 1] - deltas_[i]);
  return w;
}

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double std_normal_icdf(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError("normal quantile needs 0 < p < 1, got " + std::to_string(p));
  }
  // 1 - p is exact for p >= 0.5, so the upper half reuses the lower tail.
  const double x = p <= 0.5 ? lower_half_icdf(p) : -lower_half_icdf(1.0 - p);
  return x + g_icdf_fault.load(std::memory_order_relaxed);
}

double coverage(double mu, double sigma, double upper, double lower) {
  if (!(sigma > 0.0)) throw DomainError("coverage needs sigma > 0");
  if (lower > upper) return 0.0;
  return std::max(0.0, std_normal_cdf((upper - mu) / sigma) -
                           std_normal_cdf((lower - mu) / sigma));
}

double support_condition(double p, double target) {
  const double gap = p - target;
  if (!(gap > 0.0)) return -std::numeric_limits<double>::infinity();
  return std_normal_icdf(std::min(p, kMaxSearchProbability)) + std_normal_icdf(gap);
}

Support1d find_support_1d(double mu_lb, double mu_ub, double sigma_ub, double target,
                          int max_depth) {
  if (!(mu_lb <= mu_ub)) {
    throw DomainError("find_support_1d: mu_lb > mu_ub (" + std::to_string(mu_lb) + " > " +
                      std::to_string(mu_ub) + ")");
  }
  if (!(sigma_ub > 0.0)) throw DomainError("find_support_1d: sigma_ub must be positive");
  if (!(target > 0.5 && target < kMaxSearchProbability)) {
    throw DomainError("find_support_1d: target must lie in (0.5, 1), got " +
                      std::to_string(target));
  }
  if (max_depth < 1) throw DomainError("find_support_1d: max_depth must be positive");

  const double threshold = (mu_lb - mu_ub) / sigma_ub;
  double lo = target;
  double hi = 1.0;
  for (int depth = 0; depth < max_depth; ++depth) {
    const double mid = 0.5 * (lo + hi);
    const double s = support_condition(mid, target);
    if (s == threshold) {
      hi = mid;
      break;
    }
    if (s < threshold) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  // Reaching the depth limit keeps the upper bracket, which is always feasible.
  const double p0 = std::min(hi, kMaxSearchProbability);
  if (support_condition(p0, target) < threshold) {
    throw DomainError("find_support_1d: no support below p = 1 - 1e-15 for target " +
                      std::to_string(target));
  }
  const double q = std_normal_icdf(p0);
  return Support1d{mu_lb - sigma_ub * q, mu_ub + sigma_ub * q, p0, q, lo};
}

SupportSet find_support(const LatentBounds& bounds, const ProbabilityThreshold& delta,
                        int max_depth) {
  if (bounds.mu_lb.rank() != 1) {
    throw DimensionError("find_support expects single-example bounds, got " +
                         shape_str(bounds.mu_lb.shape()));
  }
  const std::size_t d = bounds.latent_dim();
  const double target = delta.per_dimension(d);
  SupportSet s{std::vector<double>(d), std::vector<double>(d), delta,
               std::vector<double>(d), std::vector<double>(d)};
  for (std::size_t i = 0; i < d; ++i) {
    const Support1d r =
        find_support_1d(bounds.mu_lb[i], bounds.mu_ub[i], bounds.sigma_ub[i], target, max_depth);
    s.lower[i] = r.lower;
    s.upper[i] = r.upper;
    s.per_dim_p0[i] = r.p0;
    s.quantiles[i] = r.quantile;
  }
  return s;
}

Tensor support_quantiles(const LatentBounds& bounds, const ProbabilityThreshold& delta,
                         int max_depth) {
  const double target = delta.per_dimension(bounds.latent_dim());
  Tensor q(bounds.mu_lb.shape());
  for (std::size_t i = 0; i < q.size(); ++i) {
    q[i] = find_support_1d(bounds.mu_lb[i], bounds.mu_ub[i], bounds.sigma_ub[i], target,
                           max_depth)
               .quantile;
  }
  return q;
}

double verify_support(const LatentBounds& bounds, const SupportSet& support,
                      std::size_t grid_points) {
  if (support.dims() != bounds.latent_dim() || bounds.mu_lb.size() != support.dims()) {
    throw DimensionError("support has " + std::to_string(support.dims()) +
                         " dimensions, bounds " + shape_str(bounds.mu_lb.shape()));
  }
  const std::size_t g = std::max<std::size_t>(grid_points, 2);
  double product = 1.0;
  for (std::size_t i = 0; i < support.dims(); ++i) {
    double worst = 1.0;
    for (std::size_t a = 0; a < g; ++a) {
      const double t = static_cast<double>(a) / static_cast<double>(g - 1);
      const double mu = a + 1 == g ? bounds.mu_ub[i]
                                   : bounds.mu_lb[i] + t * (bounds.mu_ub[i] - bounds.mu_lb[i]);
      for (std::size_t b = 0; b < g; ++b) {
        const double s = static_cast<double>(b) / static_cast<double>(g - 1);
        const double sigma =
            b + 1 == g ? bounds.sigma_ub[i]
                       : bounds.sigma_lb[i] + s * (bounds.sigma_ub[i] - bounds.sigma_lb[i]);
        worst = std::min(worst, coverage(mu, sigma, support.upper[i], support.lower[i]));
      }
    }
    product *= worst;
  }
  return product;
}

double endpoint_coverage(const LatentBounds& bounds, const SupportSet& support) {
  double product = 1.0;
  for (std::size_t i = 0; i < support.dims(); ++i) {
    const double sigma = bounds.sigma_ub[i];
    product *= std::min(coverage(bounds.mu_lb[i], sigma, support.upper[i], support.lower[i]),
                        coverage(bounds.mu_ub[i], sigma, support.upper[i], support.lower[i]));
  }
  return product;
}

}  // namespace civet
