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

#include "civet/certify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <random>

#include <nlohmann/json.hpp>

#include "civet/errors.hpp"
#include "civet/training.hpp"

namespace civet {

std::string metric_name(MetricKind kind) { return kind == MetricKind::mse ? "mse" : "snr"; }

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Tensor flat_batch(std::size_t width, const Tensor& x) {
  if (x.empty() || x.size() % width != 0) {
    throw DimensionError("tensor " + shape_str(x.shape()) + " is not a batch of width " +
                         std::to_string(width));
  }
  return x.reshaped(Shape{x.size() / width, width});
}

// Per-row mean squared difference of two [B x d] tensors.
std::vector<double> row_mse(const Tensor& a, const Tensor& b) {
  const std::size_t rows = a.dim(0), d = a.size() / rows;
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double e = a[r * d + j] - b[r * d + j];
      s += e * e;
    }
    out[r] = s / static_cast<double>(d);
  }
  return out;
}

struct BatchCertificate {
  std::vector<double> t_ub;
  Tensor support_lower, support_upper;  // [B x d_l]
};

BatchCertificate certify_rows(const Model& model, const InputRegion& region, double delta,
                              const Tensor& targets, int max_depth) {
  const ArchitectureSpec& arch = model.arch;
  InputRegion batched = region;
  batched.center = flat_batch(arch.input_size(), region.center);
  const Tensor t = flat_batch(arch.output_size(), targets);
  if (t.dim(0) != batched.center.dim(0)) {
    throw DimensionError("targets and region centers differ in batch size");
  }
  const LatentBounds bounds = propagate_encoder(arch, model.params, batched);
  const Tensor q = support_quantiles(bounds, ProbabilityThreshold(delta), max_depth);
  Tensor lo = bounds.mu_lb, hi = bounds.mu_ub;
  for (std::size_t i = 0; i < q.size(); ++i) {
    lo[i] -= bounds.sigma_ub[i] * q[i];
    hi[i] += bounds.sigma_ub[i] * q[i];
  }
  const auto [out_lo, out_hi] = propagate_decoder(arch, model.params, lo, hi);
  const std::size_t rows = t.dim(0), d = arch.output_size();
  BatchCertificate cert{std::vector<double>(rows, 0.0), lo, hi};
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t k = r * d + j;
      const double a = out_lo[k] - t[k], b = out_hi[k] - t[k];
      s += std::max(a * a, b * b);
    }
    cert.t_ub[r] = s / static_cast<double>(d);
  }
  return cert;
}

}  // namespace

double mse(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size() || a.empty()) throw DimensionError("mse operands differ in size");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

std::vector<double> certify_batch(const Model& model, const InputRegion& region, double delta,
                                  const Tensor& targets, int max_depth) {
  return certify_rows(model, region, delta, targets, max_depth).t_ub;
}

CertifiedBound certify_point(const Model& model, const InputRegion& region, double delta,
                             MetricKind metric, const Tensor& target, int max_depth) {
  if (metric != MetricKind::mse) {
    throw UsageError("only the mse metric can be certified; snr is a reporting metric");
  }
  if (region.center.size() != model.arch.input_size()) {
    throw DimensionError("certify_point takes a single example, got " +
                         shape_str(region.center.shape()));
  }
  const BatchCertificate cert = certify_rows(model, region, delta, target, max_depth);
  CertifiedBound out;
  out.t_ub = cert.t_ub[0];
  out.delta = delta;
  out.epsilon = region.epsilon;
  out.metric = metric;
  const auto lo = cert.support_lower.values(), hi = cert.support_upper.values();
  out.support_lower.assign(lo.begin(), lo.end());
  out.support_upper.assign(hi.begin(), hi.end());
  for (std::size_t i = 0; i < lo.size(); ++i) out.support_widths.push_back(hi[i] - lo[i]);
  out.timestamp = utc_now();
  out.model_checksum = model.params.checksum();
  return out;
}

MonteCarloResult monte_carlo_validate(const Model& model, const InputRegion& region,
                                      double t_ub, const Tensor& target,
                                      std::size_t n_region_samples,
                                      std::size_t n_latent_samples, std::uint64_t seed) {
  if (n_latent_samples < 1000) throw UsageError("monte carlo needs at least 1000 latent draws");
  if (n_region_samples < 1) throw UsageError("monte carlo needs at least one region sample");
  const std::size_t d = model.arch.input_size(), dl = model.arch.latent_dim;
  const Tensor lo = region_lower(region).reshaped(Shape{d});
  const Tensor hi = region_upper(region).reshaped(Shape{d});
  const Tensor t = flat_batch(model.arch.output_size(), target);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Center, then corners for up to half the budget, then uniform points.
  const std::size_t corners = std::min<std::size_t>(n_region_samples / 2,
                                                    d < 30 ? (std::size_t{1} << d) : 1u << 30);
  MonteCarloResult result;
  result.latent_samples = n_latent_samples;
  Tensor z(Shape{n_latent_samples, dl});
  Tensor targets(Shape{n_latent_samples, t.size()});
  for (std::size_t s = 0; s < n_latent_samples; ++s) {
    std::copy(t.data(), t.data() + t.size(), targets.data() + s * t.size());
  }
  for (std::size_t k = 0; k < n_region_samples; ++k) {
    Tensor x(Shape{d});
    for (std::size_t j = 0; j < d; ++j) {
      if (k == 0) x[j] = 0.5 * (lo[j] + hi[j]);
      else if (k <= corners) x[j] = coin(rng) ? hi[j] : lo[j];
      else x[j] = lo[j] + unit(rng) * (hi[j] - lo[j]);
    }
    const LatentDistribution dist = encode(model, x.reshaped(Shape{1, d}));
    for (std::size_t s = 0; s < n_latent_samples; ++s) {
      for (std::size_t i = 0; i < dl; ++i) {
        z[s * dl + i] = dist.mu[i] + dist.sigma[i] * normal(rng);
      }
    }
    const std::vector<double> errors = row_mse(decode(model, z), targets);
    const auto ok = std::count_if(errors.begin(), errors.end(),
                                  [&](double e) { return e <= t_ub; });
    const double fraction = static_cast<double>(ok) / static_cast<double>(n_latent_samples);
    result.fractions.push_back(fraction);
    result.min_fraction = std::min(result.min_fraction, fraction);
  }
  return result;
}

MonteCarloResult monte_carlo_validate(const Model& model, const InputRegion& region,
                                      double delta, MetricKind metric, const Tensor& target,
                                      std::size_t n_region_samples,
                                      std::size_t n_latent_samples, std::uint64_t seed) {
  const CertifiedBound bound = certify_point(model, region, delta, metric, target);
  return monte_carlo_validate(model, region, bound.t_ub, target, n_region_samples,
                              n_latent_samples, seed);
}

double snr(const Tensor& h, const Tensor& h_gt) {
  if (h.size() != h_gt.size()) throw DimensionError("snr operands differ in size");
  double err = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    err += (h[i] - h_gt[i]) * (h[i] - h_gt[i]);
    ref += h_gt[i] * h_gt[i];
  }
  if (ref == 0.0) throw DomainError("snr is undefined for an all-zero ground truth");
  if (err == 0.0) return kSnrCapDb;
  return std::min(kSnrCapDb, -10.0 * std::log10(err / ref));
}

// ---------------------------------------------------------------------------
// Suite

namespace {

double column_mean(const std::vector<ReportRow>& rows, auto field) {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += field(r);
  return s / static_cast<double>(rows.size());
}

}  // namespace

double Report::mean_baseline() const {
  return column_mean(rows, [](const ReportRow& r) { return r.baseline; });
}

double Report::mean_certified() const {
  return column_mean(rows, [](const ReportRow& r) { return r.certified; });
}

double Report::mean_attacked(std::size_t attack) const {
  return column_mean(rows, [attack](const ReportRow& r) { return r.attacked.at(attack); });
}

std::string Report::to_csv() const {
  std::string out = "example_id,baseline";
  if (options.certify) out += ",certified";
  for (const auto& a : options.attacks) out += "," + a;
  out += "\n";
  char buf[64];
  for (const auto& r : rows) {
    out += std::to_string(r.example_id);
    std::snprintf(buf, sizeof buf, ",%.10g", r.baseline);
    out += buf;
    if (options.certify) {
      std::snprintf(buf, sizeof buf, ",%.10g", r.certified);
      out += buf;
    }
    for (double v : r.attacked) {
      std::snprintf(buf, sizeof buf, ",%.10g", v);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

std::string Report::summary_json() const {
  nlohmann::json j;
  j["count"] = rows.size();
  j["mean"]["baseline"] = mean_baseline();
  if (options.certify) j["mean"]["certified"] = mean_certified();
  for (std::size_t a = 0; a < options.attacks.size(); ++a) {
    j["mean"][options.attacks[a]] = mean_attacked(a);
  }
  char checksum[20];
  std::snprintf(checksum, sizeof checksum, "%016llx",
                static_cast<unsigned long long>(model_checksum));
  j["model_checksum"] = checksum;
  j["config"] = {{"epsilon", options.epsilon},
                 {"delta", options.delta},
                 {"certify", options.certify},
                 {"attacks", options.attacks},
                 {"attack_steps", options.attack_steps},
                 {"attack_step_frac", options.attack_step_frac},
                 {"seed", options.seed},
                 {"max_depth", options.max_depth}};
  return j.dump(2) + "\n";
}

Report evaluate_suite(const Model& model, const Dataset& dataset, const SuiteOptions& options) {
  if (dataset.size() == 0) throw DimensionError("evaluation set is empty");
  const Tensor& x = dataset.examples;
  Report report;
  report.options = options;
  report.model_checksum = model.params.checksum();

  auto mean_recon_error = [&](const Tensor& input) {
    return row_mse(decode(model, encode(model, input).mu), x);
  };
  const std::vector<double> baseline = mean_recon_error(x);
  std::vector<double> certified;
  if (options.certify) {
    certified = certify_batch(model, InputRegion{x, options.epsilon, std::pair{0.0, 1.0}},
                              options.delta, x, options.max_depth);
  }
  std::vector<std::vector<double>> attacked;
  for (const auto& name : options.attacks) {
    AttackOptions ao;
    ao.epsilon = options.epsilon;
    ao.steps = options.attack_steps;
    ao.step_frac = options.attack_step_frac;
    ao.seed = options.seed;
    attacked.push_back(mean_recon_error(run_attack(name, model, x, ao)));
  }
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    ReportRow row{i, baseline[i], options.certify ? certified[i] : 0.0, {}};
    for (const auto& col : attacked) row.attacked.push_back(col[i]);
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace civet
