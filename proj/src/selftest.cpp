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

#include "civet/selftest.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

#include "civet/errors.hpp"
#include "civet/gaussian.hpp"
#include "civet/training.hpp"

namespace civet {

namespace {

std::string fmt(const char* pattern, double a, double b = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, pattern, a, b);
  return buf;
}

SelfTestCheck support_example() {
  const Support1d s = find_support_1d(0.0, 1.0, 2.0, 0.95);
  const bool ok = std::fabs(s.lower + 3.54) <= 0.01 && std::fabs(s.upper - 4.54) <= 0.01;
  return {"support-example", ok, fmt("l = %.4f, u = %.4f", s.lower, s.upper)};
}

struct BoxSample {
  double mu_lb, mu_ub, sigma_lb, sigma_ub, target;
};

BoxSample random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mu(-3.0, 3.0), width(0.0, 2.0), sig(0.05, 2.0),
      delta(0.001, 0.45);
  BoxSample b;
  b.mu_lb = mu(rng);
  b.mu_ub = b.mu_lb + width(rng);
  b.sigma_lb = sig(rng);
  b.sigma_ub = b.sigma_lb + width(rng);
  b.target = 1.0 - delta(rng);
  return b;
}

SelfTestCheck endpoint_equality(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const BoxSample b = random_box(rng);
    const Support1d s = find_support_1d(b.mu_lb, b.mu_ub, b.sigma_ub, b.target);
    const double gap = std::fabs(coverage(b.mu_lb, b.sigma_ub, s.upper, s.lower) -
                                 coverage(b.mu_ub, b.sigma_ub, s.upper, s.lower));
    worst = std::max(worst, gap);
  }
  return {"endpoint-equality", worst <= 1e-12, fmt("max gap %.3g", worst)};
}

SelfTestCheck endpoint_minimality(std::uint64_t seed) {
  std::mt19937_64 rng(seed + 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const BoxSample b = random_box(rng);
    const Support1d s = find_support_1d(b.mu_lb, b.mu_ub, b.sigma_ub, b.target);
    const double edge = coverage(b.mu_ub, b.sigma_ub, s.upper, s.lower);
    for (int k = 0; k < 10; ++k) {
      const double mu = b.mu_lb + unit(rng) * (b.mu_ub - b.mu_lb);
      const double sigma = b.sigma_lb + unit(rng) * (b.sigma_ub - b.sigma_lb);
      worst = std::max(worst, edge - coverage(mu, sigma, s.upper, s.lower));
    }
  }
  return {"endpoint-minimality", worst <= 1e-12, fmt("max excess %.3g", worst)};
}

// A 3 -> 5 -> (2 x 2) -> 5 -> 3 VAE with smooth activations.
Model tiny_model(std::uint64_t seed) {
  using L = LayerSpec;
  ArchitectureSpec a;
  a.name = "selftest";
  a.input_shape = {3};
  a.latent_dim = 2;
  a.encoder = {L::affine(5), L::activation(ActivationKind::tanh)};
  a.decoder = {L::affine(5), L::activation(ActivationKind::tanh), L::affine(3),
               L::activation(ActivationKind::sigmoid)};
  return Model::create(a, seed);
}

// Largest relative error between tape gradients and central differences over
// every parameter scalar.
double gradient_error(Model& model, const std::function<Var(const BoundParams&)>& loss) {
  Tape tape;
  BoundParams bound(tape, model.params, true);
  tape.backward(loss(bound));
  const ParameterSet grads = bound.gradients(model.params);
  auto value = [&] {
    Tape t;
    BoundParams p(t, model.params, false);
    return loss(p).value().item();
  };
  constexpr double h = 1e-5;
  double worst = 0.0;
  for (std::size_t k = 0; k < model.params.size(); ++k) {
    Tensor& p = model.params.entries()[k].value;
    const Tensor& g = grads.entries()[k].value;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double keep = p[i];
      p[i] = keep + h;
      const double up = value();
      p[i] = keep - h;
      const double down = value();
      p[i] = keep;
      const double fd = (up - down) / (2.0 * h);
      const double scale = std::max({std::fabs(fd), std::fabs(g[i]), 1e-5});
      worst = std::max(worst, std::fabs(fd - g[i]) / scale);
    }
  }
  return worst;
}

SelfTestCheck gradient_checks(std::uint64_t seed) {
  Model model = tiny_model(seed);
  const Tensor x(Shape{2, 3}, {0.2, 0.5, 0.9, 0.7, 0.1, 0.4});
  const Tensor noise = standard_normal(Shape{2, 2}, seed + 3);
  const double std_err = gradient_error(model, [&](const BoundParams& p) {
    return standard_loss(model.arch, p, p.tape().constant(x), x, noise, 0.1).total;
  });

  const DeltaSchedule schedule({0.35, 0.2, 0.05});
  const InputRegion region{x, 0.05, std::pair<double, double>{0.0, 1.0}};
  std::vector<Tensor> frozen;
  {
    Tape t;
    BoundParams p(t, model.params, false);
    frozen = civet_loss(model.arch, p, region, x, schedule).quantiles;
  }
  const double civet_err = gradient_error(model, [&](const BoundParams& p) {
    return civet_loss(model.arch, p, region, x, schedule, kDefaultSearchDepth, &frozen).total;
  });
  const double worst = std::max(std_err, civet_err);
  return {"gradients", worst < 1e-4,
          fmt("standard rel err %.2g, certified rel err %.2g", std_err, civet_err)};
}

SelfTestCheck interval_soundness(std::uint64_t seed) {
  std::mt19937_64 rng(seed + 7);
  std::uniform_real_distribution<double> w(-1.0, 1.0), unit(0.0, 1.0);
  const ActivationKind acts[] = {ActivationKind::relu, ActivationKind::sigmoid,
                                 ActivationKind::exp, ActivationKind::tanh};
  std::size_t escapes = 0, samples = 0;
  for (int net = 0; net < 5; ++net) {
    const std::size_t depth = 1 + rng() % 4;
    std::vector<std::size_t> widths{3};
    for (std::size_t l = 0; l < depth; ++l) widths.push_back(2 + rng() % 4);
    std::vector<Tensor> weights, biases;
    std::vector<Activation> act;
    for (std::size_t l = 0; l < depth; ++l) {
      Tensor W(Shape{widths[l + 1], widths[l]}), b(Shape{widths[l + 1]});
      for (double& v : W.values()) v = 0.8 * w(rng);
      for (double& v : b.values()) v = 0.5 * w(rng);
      weights.push_back(W);
      biases.push_back(b);
      act.push_back(Activation{acts[rng() % 4]});
    }
    Tensor center(Shape{1, 3});
    for (double& v : center.values()) v = w(rng);
    const InputRegion region{center, 0.3, std::nullopt};

    Tape tape;
    IntervalVar box = region_to_interval(tape, region);
    for (std::size_t l = 0; l < depth; ++l) {
      box = interval_affine(box, tape.constant(weights[l]), tape.constant(biases[l]));
      box = interval_activation(box, act[l]);
    }
    const Tensor lo = box.lower.value(), hi = box.upper.value();
    const Tensor in_lo = region_lower(region), in_hi = region_upper(region);
    for (int s = 0; s < 2000; ++s) {
      Tensor x(Shape{1, 3});
      for (std::size_t j = 0; j < 3; ++j) x[j] = in_lo[j] + unit(rng) * (in_hi[j] - in_lo[j]);
      for (std::size_t l = 0; l < depth; ++l) {
        x = kernels::affine(x, weights[l], &biases[l]);
        for (double& v : x.values()) v = kernels::activate(act[l], v);
      }
      for (std::size_t j = 0; j < x.size(); ++j) {
        if (x[j] < lo[j] || x[j] > hi[j]) ++escapes;
      }
      ++samples;
    }
  }
  return {"interval-soundness", escapes == 0,
          fmt("%.0f escapes in %.0f samples", static_cast<double>(escapes),
              static_cast<double>(samples))};
}

}  // namespace

std::vector<SelfTestCheck> run_selftest(std::uint64_t seed) {
  const std::vector<std::pair<std::string, std::function<SelfTestCheck()>>> checks{
      {"support-example", support_example},
      {"endpoint-equality", [seed] { return endpoint_equality(seed); }},
      {"endpoint-minimality", [seed] { return endpoint_minimality(seed); }},
      {"gradients", [seed] { return gradient_checks(seed); }},
      {"interval-soundness", [seed] { return interval_soundness(seed); }},
  };
  std::vector<SelfTestCheck> out;
  for (const auto& [name, check] : checks) {
    const auto start = std::chrono::steady_clock::now();
    SelfTestCheck result{name, false, "", 0.0};
    try {
      result = check();
    } catch (const std::exception& e) {
      result.detail = std::string("threw: ") + e.what();
    }
    result.wall_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - start)
                         .count();
    out.push_back(std::move(result));
  }
  return out;
}

}  // namespace civet
