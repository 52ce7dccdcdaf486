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
#include "civet/certify.hpp"
#include "civet/errors.hpp"
#include "civet/training.hpp"
#include "oracles.hpp"

using namespace civet;

namespace {

// mu = x, constant log-variance, identity decoder.
Model identity_vae(double logvar) {
  ArchitectureSpec arch;
  arch.name = "linear";
  arch.input_shape = {1};
  arch.latent_dim = 1;
  Model m{arch, {}};
  m.params.add("enc.mu.weight", Tensor(Shape{1, 1}, 1.0));
  m.params.add("enc.mu.bias", Tensor(Shape{1}, 0.0));
  m.params.add("enc.logvar.weight", Tensor(Shape{1, 1}, 0.0));
  m.params.add("enc.logvar.bias", Tensor(Shape{1}, logvar));
  return m;
}

const Model& trained_synthetic() {
  static const Model model = [] {
    TrainConfig c;
    c.epochs = 5;
    c.learning_rate = 1e-2;
    c.batch_size = 16;
    return train(c, synthetic_dataset(400, 8, 1), preset_architecture("synthetic")).model;
  }();
  return model;
}

}  // namespace

TEST_CASE("snr reference values") {
  const Tensor gt(Shape{2}, {3.0, 4.0});
  CHECK(snr(gt, gt) == kSnrCapDb);
  // error energy equals signal energy
  CHECK(snr(Tensor(Shape{2}, {0.0, 0.0}), gt) == doctest::Approx(0.0).epsilon(1e-12));
  // error energy 2.5 against 25
  CHECK(snr(Tensor(Shape{2}, {3.5, 5.5}), gt) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(snr(Tensor(Shape{2}, {3.0, 4.0 + 1e-160}), gt) == kSnrCapDb);
  CHECK_THROWS_AS(snr(gt, Tensor(Shape{2}, 0.0)), DomainError);
  CHECK_THROWS_AS(snr(gt, Tensor(Shape{3}, 1.0)), DimensionError);
  CHECK(mse(Tensor(Shape{2}, {1.0, 2.0}), Tensor(Shape{2}, {0.0, 0.0})) == 2.5);
}

TEST_CASE("one-dimensional linear model has a closed-form bound") {
  const double sigma = 0.3;
  const Model m = identity_vae(2.0 * std::log(sigma));
  for (double eps : {0.0, 0.05, 0.2}) {
    for (double delta : {0.01, 0.05, 0.3}) {
      const Tensor x(Shape{1}, 0.4);
      const CertifiedBound b =
          certify_point(m, InputRegion{x, eps, {}}, delta, MetricKind::mse, x);
      const double zeta = oracle::symmetric_margin(0.4 - eps, 0.4 + eps, sigma, 1.0 - delta);
      CHECK(b.t_ub == doctest::Approx((eps + zeta) * (eps + zeta)).epsilon(1e-8));
      CHECK(b.t_ub >= (eps + zeta) * (eps + zeta) * (1.0 - 1e-12));
      REQUIRE(b.support_widths.size() == 1);
      CHECK(b.support_widths[0] == doctest::Approx(2.0 * (eps + zeta)).epsilon(1e-8));
      CHECK(b.delta == delta);
      CHECK(b.epsilon == eps);
      CHECK(b.model_checksum == m.params.checksum());
      CHECK(b.timestamp.size() == 20);
    }
  }
}

TEST_CASE("degenerate latent and region reduce to the point error") {
  const Model& trained = trained_synthetic();
  Model m = trained;
  // sigma = e^-69, about 1e-30
  for (double& v : m.params.at("enc.logvar.weight").values()) v = 0.0;
  for (double& v : m.params.at("enc.logvar.bias").values()) v = -138.0;
  const Dataset data = synthetic_dataset(5, 8, 4);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor x = data.example(i);
    const double point = mse(decode(m, encode(m, x.reshaped(Shape{1, 8})).mu), x);
    const CertifiedBound b =
        certify_point(m, InputRegion{x, 0.0, std::pair{0.0, 1.0}}, 0.05, MetricKind::mse, x);
    CHECK(b.t_ub == doctest::Approx(point).epsilon(1e-9));
    CHECK(b.t_ub >= point);
  }
}

TEST_CASE("bound is monotone in delta and epsilon") {
  const Model& m = trained_synthetic();
  const Tensor x = synthetic_dataset(1, 8, 6).example(0);
  auto bound = [&](double eps, double delta) {
    return certify_point(m, InputRegion{x, eps, std::pair{0.0, 1.0}}, delta, MetricKind::mse, x)
        .t_ub;
  };
  double prev = 0.0;
  for (double delta : {0.45, 0.3, 0.1, 0.05, 0.01, 0.001}) {
    const double t = bound(0.05, delta);
    CHECK(t >= prev);
    prev = t;
  }
  prev = 0.0;
  for (double eps : {0.0, 0.01, 0.05, 0.1, 0.2}) {
    const double t = bound(eps, 0.05);
    CHECK(t >= prev);
    prev = t;
  }
  CHECK(bound(0.1, 0.05) == bound(0.1, 0.05));
}

TEST_CASE("certification argument checks") {
  const Model& m = trained_synthetic();
  const Tensor x = synthetic_dataset(2, 8, 6).examples;
  CHECK_THROWS_AS(certify_point(m, InputRegion{x.rows(0, 1), 0.1, {}}, 0.05, MetricKind::snr,
                                x.rows(0, 1)),
                  UsageError);
  CHECK_THROWS_AS(certify_point(m, InputRegion{x, 0.1, {}}, 0.05, MetricKind::mse, x),
                  DimensionError);
  CHECK_THROWS_AS(certify_point(m, InputRegion{x.rows(0, 1), 0.1, {}}, 0.6, MetricKind::mse,
                                x.rows(0, 1)),
                  DomainError);
  const std::vector<double> batch = certify_batch(m, InputRegion{x, 0.1, std::pair{0.0, 1.0}},
                                                  0.05, x);
  REQUIRE(batch.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    const Tensor xi = x.rows(i, 1);
    CHECK(batch[i] == certify_point(m, InputRegion{xi, 0.1, std::pair{0.0, 1.0}}, 0.05,
                                    MetricKind::mse, xi)
                          .t_ub);
  }
}

TEST_CASE("sampled errors respect the bound") {
  const Model& m = trained_synthetic();
  const Dataset data = synthetic_dataset(3, 8, 8);
  for (double delta : {0.05, 0.2, 0.4999}) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      const Tensor x = data.example(i);
      const InputRegion region{x, 0.05, std::pair{0.0, 1.0}};
      const MonteCarloResult r =
          monte_carlo_validate(m, region, delta, MetricKind::mse, x, 10, 4000, i);
      CHECK(r.fractions.size() == 10);
      CHECK(r.latent_samples == 4000);
      const double slack = 3.0 * std::sqrt(delta * (1.0 - delta) / 4000.0);
      CHECK(r.min_fraction >= 1.0 - delta - slack);
    }
  }
  // A zero bound is violated almost surely.
  const Tensor x = data.example(0);
  const MonteCarloResult zero =
      monte_carlo_validate(m, InputRegion{x, 0.05, std::pair{0.0, 1.0}}, 0.0, x, 5, 1000, 1);
  CHECK(zero.min_fraction < 0.01);
  CHECK_THROWS_AS(monte_carlo_validate(m, InputRegion{x, 0.05, {}}, 1.0, x, 5, 999, 1),
                  UsageError);
}

TEST_CASE("evaluation suite report") {
  const Model& m = trained_synthetic();
  const Dataset data = synthetic_dataset(6, 8, 12);
  SuiteOptions o;
  o.epsilon = 0.05;
  o.attacks = {"pgd", "mda"};
  const Report r = evaluate_suite(m, data, o);
  REQUIRE(r.rows.size() == 6);
  const std::string csv = r.to_csv();
  CHECK(csv.rfind("example_id,baseline,certified,pgd,mda\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
  for (const auto& row : r.rows) {
    REQUIRE(row.attacked.size() == 2);
    const double base = mse(decode(m, encode(m, data.example(row.example_id).reshaped(Shape{1, 8})).mu),
                            data.example(row.example_id));
    CHECK(row.baseline == doctest::Approx(base).epsilon(1e-14));
    CHECK(row.certified >= 0.0);
  }
  CHECK(r.mean_certified() > r.mean_baseline());
  CHECK(r.summary_json().find("\"model_checksum\"") != std::string::npos);
  CHECK(evaluate_suite(m, data, o).to_csv() == csv);

  o.certify = false;
  o.attacks = {"lsa"};
  CHECK(evaluate_suite(m, data, o).to_csv().rfind("example_id,baseline,lsa\n", 0) == 0);
  o.epsilon = 0.0;
  const Report zero = evaluate_suite(m, data, o);
  for (const auto& row : zero.rows) CHECK(row.attacked[0] == row.baseline);
}
