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

#include <cstdint>
#include <string>
#include <vector>

#include "civet/data.hpp"
#include "civet/gaussian.hpp"
#include "civet/interval.hpp"
#include "civet/vae.hpp"

namespace civet {

enum class MetricKind { mse, snr };

std::string metric_name(MetricKind kind);

/// Sound upper bound on the (1 - delta) worst-case squared error for one
/// input region.
struct CertifiedBound {
  double t_ub = 0.0;
  double delta = 0.0;
  double epsilon = 0.0;
  MetricKind metric = MetricKind::mse;
  std::vector<double> support_lower;
  std::vector<double> support_upper;
  std::vector<double> support_widths;
  std::string timestamp;  // UTC, informational only
  std::uint64_t model_checksum = 0;
};

/// Propagates the region through the encoder, picks the delta support set and
/// bounds the decoder output over it. T_ub is the mean over outputs of
/// max((lower - t)^2, (upper - t)^2). Only MetricKind::mse is bounded.
CertifiedBound certify_point(const Model& model, const InputRegion& region, double delta,
                             MetricKind metric, const Tensor& target,
                             int max_depth = kDefaultSearchDepth);

/// T_ub for every row of a batched region [B x d_in] against targets [B x d_out].
std::vector<double> certify_batch(const Model& model, const InputRegion& region, double delta,
                                  const Tensor& targets, int max_depth = kDefaultSearchDepth);

struct MonteCarloResult {
  double min_fraction = 1.0;          // over sampled inputs
  std::vector<double> fractions;      // per sampled input
  std::size_t latent_samples = 0;
};

/// Samples inputs from the region (center, random corners, then uniform
/// points), draws latent samples for each and reports the fraction whose mean
/// squared error against `target` is <= t_ub. Requires >= 1000 latent draws.
MonteCarloResult monte_carlo_validate(const Model& model, const InputRegion& region,
                                      double t_ub, const Tensor& target,
                                      std::size_t n_region_samples,
                                      std::size_t n_latent_samples, std::uint64_t seed);
/// As above with t_ub from certify_point at `delta`.
MonteCarloResult monte_carlo_validate(const Model& model, const InputRegion& region,
                                      double delta, MetricKind metric, const Tensor& target,
                                      std::size_t n_region_samples,
                                      std::size_t n_latent_samples, std::uint64_t seed);

inline constexpr double kSnrCapDb = 300.0;

/// -10 log10(||h - h_gt||^2 / ||h_gt||^2) in dB, capped at kSnrCapDb.
/// Throws DomainError when h_gt is all zero.
double snr(const Tensor& h, const Tensor& h_gt);

double mse(const Tensor& a, const Tensor& b);

struct SuiteOptions {
  double epsilon = 0.1;
  double delta = 0.05;
  bool certify = true;
  std::vector<std::string> attacks;
  int attack_steps = 10;
  double attack_step_frac = 0.1;
  std::uint64_t seed = 0;
  int max_depth = kDefaultSearchDepth;
};

struct ReportRow {
  std::size_t example_id = 0;
  double baseline = 0.0;
  double certified = 0.0;
  std::vector<double> attacked;  // one per SuiteOptions::attacks
};

struct Report {
  SuiteOptions options;
  std::vector<ReportRow> rows;
  std::uint64_t model_checksum = 0;

  double mean_baseline() const;
  double mean_certified() const;
  double mean_attacked(std::size_t attack) const;
  /// Header example_id,baseline[,certified][,<attack>...]
  std::string to_csv() const;
  /// Means, counts and the options used, as JSON.
  std::string summary_json() const;
};

/// Baseline is the MSE of decode(mu(x)) against x; attacked columns use the
/// same metric at the attacked input; certified is T_ub over the epsilon ball.
Report evaluate_suite(const Model& model, const Dataset& dataset, const SuiteOptions& options);

}  // namespace civet
