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
#include <limits>
#include <random>

#include "doctest.h"
#include "civet/errors.hpp"
#include "civet/training.hpp"
#include "oracles.hpp"

using namespace civet;

namespace {

// Encoder mu = a x + b with a constant log-variance; decoder is the identity.
Model linear_vae(double a, double b, double logvar) {
  ArchitectureSpec arch;
  arch.name = "linear";
  arch.input_shape = {1};
  arch.latent_dim = 1;
  Model m{arch, {}};
  m.params.add("enc.mu.weight", Tensor(Shape{1, 1}, a));
  m.params.add("enc.mu.bias", Tensor(Shape{1}, b));
  m.params.add("enc.logvar.weight", Tensor(Shape{1, 1}, 0.0));
  m.params.add("enc.logvar.bias", Tensor(Shape{1}, logvar));
  return m;
}

Model tiny_model(std::uint64_t seed) {
  using L = LayerSpec;
  ArchitectureSpec a;
  a.name = "tiny";
  a.input_shape = {4};
  a.latent_dim = 2;
  a.encoder = {L::affine(6), L::activation(ActivationKind::tanh)};
  a.decoder = {L::affine(6), L::activation(ActivationKind::tanh), L::affine(4),
               L::activation(ActivationKind::sigmoid)};
  return Model::create(a, seed);
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

double linf(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("train config defaults and validation") {
  TrainConfig c;
  CHECK(c.learning_rate == 1e-4);
  CHECK(c.weight_decay == 1e-5);
  CHECK(c.warmup_standard_iters == 250);
  CHECK(c.warmup_ramp_iters == 250);
  CHECK(c.pgd_steps == 10);
  CHECK(c.pgd_step_frac == 0.1);
  CHECK(c.sabr_tau == 0.1);
  CHECK(c.beta == 1e-3);
  CHECK_NOTHROW(c.validate());
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.deltas = {0.05, 0.2};
  CHECK_NOTHROW(c.validate());  // schedule unused by standard training
  c.method = TrainMethod::civet;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_method("civet-sabr") == TrainMethod::civet_sabr);
  CHECK(method_name(TrainMethod::pgd) == "pgd");
  CHECK_THROWS_AS(parse_method("ibp"), ConfigError);
}

TEST_CASE("KL divergence closed forms") {
  CHECK(kl_divergence(Tensor(Shape{3}, 0.0), Tensor(Shape{3}, 1.0)) == 0.0);
  CHECK(kl_divergence(Tensor(Shape{1}, 1.0), Tensor(Shape{1}, 1.0)) == doctest::Approx(0.5));
  // -1/2 (1 + log 0.25 - 0 - 0.25)
  CHECK(kl_divergence(Tensor(Shape{1}, 0.0), Tensor(Shape{1}, 0.5)) ==
        doctest::Approx(-0.5 * (1.0 + std::log(0.25) - 0.25)));
  CHECK(kl_divergence(Tensor(Shape{1}, 0.0), Tensor(Shape{1}, 0.5)) > 0.0);

  std::mt19937_64 rng(2);
  const Tensor mu = oracle::random_tensor(Shape{3, 2}, rng);
  const Tensor lv = oracle::random_tensor(Shape{3, 2}, rng);
  Tensor sigma = lv;
  for (double& v : sigma.values()) v = std::exp(0.5 * v);
  Tape tape;
  Var m = tape.leaf(mu), l = tape.leaf(lv);
  Var kl = kl_divergence(m, l);
  CHECK(kl.value().item() == doctest::Approx(kl_divergence(mu, sigma)).epsilon(1e-12));
  tape.backward(kl);
  const Tensor fd_mu = oracle::finite_difference(
      [&](const Tensor& v) {
        Tape t;
        return kl_divergence(t.constant(v), t.constant(lv)).value().item();
      },
      mu);
  const Tensor fd_lv = oracle::finite_difference(
      [&](const Tensor& v) {
        Tape t;
        return kl_divergence(t.constant(mu), t.constant(v)).value().item();
      },
      lv);
  CHECK(oracle::max_relative_error(tape.grad(m), fd_mu) < 1e-6);
  CHECK(oracle::max_relative_error(tape.grad(l), fd_lv) < 1e-6);
}

TEST_CASE("Gaussian KL between diagonal distributions") {
  Tape tape;
  const Tensor mu_b(Shape{2}, {0.5, -1.0}), lv_b(Shape{2}, {0.2, -0.4});
  Var same = gaussian_kl(tape.constant(mu_b), tape.constant(lv_b), mu_b, lv_b);
  CHECK(same.value().item() == doctest::Approx(0.0).epsilon(1e-15));
  const Tensor mu_a(Shape{2}, {1.0, 0.0}), lv_a(Shape{2}, {-0.3, 0.1});
  double ref = 0.0;
  for (int i = 0; i < 2; ++i) {
    const double sa = std::exp(0.5 * lv_a[i]), sb = std::exp(0.5 * lv_b[i]);
    ref += std::log(sb / sa) + (sa * sa + (mu_a[i] - mu_b[i]) * (mu_a[i] - mu_b[i])) /
                                   (2 * sb * sb) - 0.5;
  }
  Var kl = gaussian_kl(tape.constant(mu_a), tape.constant(lv_a), mu_b, lv_b);
  CHECK(kl.value().item() == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("standard loss: perfect reconstruction has zero error") {
  const Model m = linear_vae(1.0, 0.0, -200.0);  // sigma = e^-100
  Tape tape;
  BoundParams p(tape, m.params, false);
  const Tensor x(Shape{3, 1}, {0.1, 0.5, 0.9});
  const StandardLoss l = standard_loss(m.arch, p, tape.constant(x), x,
                                       standard_normal(Shape{3, 1}, 0), 1e-3);
  CHECK(l.recon.value().item() < 1e-40);
  // kl = -1/2 (1 - 200 - mu^2 - e^-200) averaged over the batch
  const double kl = -0.5 * (3 * (1.0 - 200.0) - (0.01 + 0.25 + 0.81)) / 3.0;
  CHECK(l.kl.value().item() == doctest::Approx(kl).epsilon(1e-12));
  CHECK(l.total.value().item() == doctest::Approx(1e-3 * kl).epsilon(1e-12));
}

TEST_CASE("decoder bound loss takes the worse endpoint") {
  Tape tape;
  IntervalVar out{tape.constant(Tensor(Shape{1, 3}, {0.0, 0.4, -1.0})),
                  tape.constant(Tensor(Shape{1, 3}, {1.0, 0.6, 0.5}))};
  const Tensor x(Shape{1, 3}, {0.2, 0.5, 0.0});
  // max(0.04, 0.64), max(0.01, 0.01), max(1, 0.25)
  CHECK(decoder_bound_loss(out, x).value().item() ==
        doctest::Approx((0.64 + 0.01 + 1.0) / 3.0).epsilon(1e-15));
}

TEST_CASE("singleton schedule equals (1 - delta) times the support bound") {
  const Model m = tiny_model(3);
  std::mt19937_64 rng(3);
  const Tensor x = oracle::random_tensor(Shape{1, 4}, rng, 0.0, 1.0);
  const double delta = 0.1;
  const InputRegion region{x, 0.05, std::pair{0.0, 1.0}};
  Tape tape;
  BoundParams p(tape, m.params, false);
  const CivetLoss cl = civet_loss(m.arch, p, region, x, DeltaSchedule({delta}));
  CHECK(cl.weights == std::vector<double>{1.0 - delta});

  // Independent pipeline through the value-level API.
  const LatentBounds b = propagate_encoder(m.arch, m.params, region).row(0);
  const SupportSet s = find_support(b, ProbabilityThreshold(delta));
  const auto [lo, hi] = propagate_decoder(m.arch, m.params, Tensor(Shape{2}, s.lower),
                                          Tensor(Shape{2}, s.upper));
  double ldec = 0.0;
  for (std::size_t j = 0; j < 4; ++j) {
    ldec += std::max(std::pow(lo[j] - x[j], 2), std::pow(hi[j] - x[j], 2));
  }
  ldec /= 4.0;
  CHECK(cl.total.value().item() == doctest::Approx((1.0 - delta) * ldec).epsilon(1e-12));

  // Concrete errors of points inside the support never exceed the bound.
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 200; ++k) {
    Tensor z(Shape{2});
    for (std::size_t i = 0; i < 2; ++i) z[i] = s.lower[i] + u(rng) * (s.upper[i] - s.lower[i]);
    const Tensor y = decode(m, z);
    double err = 0.0;
    for (std::size_t j = 0; j < 4; ++j) err += std::pow(y[j] - x[j], 2);
    CHECK(err / 4.0 <= ldec);
  }
}

TEST_CASE("schedule weights in the certified loss") {
  const Model m = tiny_model(4);
  const Tensor x(Shape{2, 4}, 0.5);
  Tape tape;
  BoundParams p(tape, m.params, false);
  const CivetLoss cl = civet_loss(m.arch, p, InputRegion{x, 0.1, std::pair{0.0, 1.0}}, x,
                                  DeltaSchedule({0.35, 0.2, 0.05}));
  REQUIRE(cl.terms.size() == 3);
  double total = 0.0;
  for (std::size_t i = 0; i < 3; ++i) total += cl.weights[i] * cl.terms[i].value().item();
  CHECK(cl.total.value().item() == doctest::Approx(total).epsilon(1e-14));
  // Smaller delta, larger support, larger bound.
  CHECK(cl.terms[0].value().item() <= cl.terms[1].value().item());
  CHECK(cl.terms[1].value().item() <= cl.terms[2].value().item());
}

TEST_CASE("degenerate region and latent: certified loss is the point error") {
  // mu = 0.5 x + 0.1, sigma = e^-50, decoder identity.
  const Model m = linear_vae(0.5, 0.1, -100.0);
  const Tensor x(Shape{3, 1}, {0.2, 0.6, 0.9});
  Tape tape;
  BoundParams p(tape, m.params, false);
  const DeltaSchedule schedule({0.35, 0.2, 0.05});
  const CivetLoss cl = civet_loss(m.arch, p, InputRegion{x, 0.0, {}}, x, schedule);
  double point = 0.0;
  for (double v : x.values()) point += std::pow(0.5 * v + 0.1 - v, 2);
  point /= 3.0;
  CHECK(cl.total.value().item() == doctest::Approx(0.95 * point).epsilon(1e-9));
}

TEST_CASE("certified loss gradients with quantiles held fixed") {
  std::mt19937_64 rng(6);
  for (int seed = 0; seed < 4; ++seed) {
    Model m = tiny_model(seed);
    const Tensor x = oracle::random_tensor(Shape{2, 4}, rng, 0.0, 1.0);
    const InputRegion region{x, 0.05, std::pair{0.0, 1.0}};
    const DeltaSchedule schedule({0.35, 0.2, 0.05});
    std::vector<Tensor> frozen;
    {
      Tape t;
      BoundParams p(t, m.params, false);
      frozen = civet_loss(m.arch, p, region, x, schedule).quantiles;
    }
    Tape tape;
    BoundParams bound(tape, m.params, true);
    tape.backward(civet_loss(m.arch, bound, region, x, schedule, 60, &frozen).total);
    const ParameterSet grads = bound.gradients(m.params);
    for (std::size_t k = 0; k < m.params.size(); ++k) {
      const Tensor fd = oracle::finite_difference(
          [&](const Tensor& v) {
            Model copy = m;
            copy.params.entries()[k].value = v;
            Tape t;
            BoundParams p(t, copy.params, false);
            return civet_loss(copy.arch, p, region, x, schedule, 60, &frozen)
                .total.value()
                .item();
          },
          m.params.entries()[k].value);
      CHECK(oracle::max_relative_error(grads.entries()[k].value, fd) < 1e-4);
    }
  }
}

TEST_CASE("attacks: zero radius is the identity") {
  const Model& m = trained_synthetic();
  const Tensor x = synthetic_dataset(5, 8, 9).examples;
  AttackOptions o;
  o.epsilon = 0.0;
  for (const std::string a : {"pgd", "lsa", "mda"}) CHECK(run_attack(a, m, x, o) == x);
  CHECK_THROWS_AS(run_attack("fgsm", m, x, o), UsageError);
}

TEST_CASE("attacks stay in the ball and the data range") {
  const Model& m = trained_synthetic();
  const Tensor x = synthetic_dataset(20, 8, 9).examples;
  AttackOptions o;
  o.epsilon = 0.2;
  for (const std::string a : {"pgd", "lsa", "mda"}) {
    const Tensor adv = run_attack(a, m, x, o);
    CHECK(adv.shape() == x.shape());
    CHECK(linf(adv, x) <= 0.2 + 1e-15);
    for (double v : adv.values()) CHECK((v >= 0.0 && v <= 1.0));
  }
  const Tensor single = x.rows(0, 1).reshaped(Shape{8});
  CHECK(pgd_attack(m, single, o).shape() == Shape{8});
}

TEST_CASE("attacks do not decrease their objectives") {
  const Model& m = trained_synthetic();
  const Tensor x = synthetic_dataset(30, 8, 11).examples;
  AttackOptions o;
  o.epsilon = 0.1;
  o.seed = 5;
  const Tensor noise = standard_normal(Shape{30, 4}, o.seed);

  auto std_objective = [&](const Tensor& in) {
    Tape t;
    BoundParams p(t, m.params, false);
    return standard_loss(m.arch, p, t.constant(in), x, noise, o.beta).total.value().item();
  };
  CHECK(std_objective(pgd_attack(m, x, o)) >= std_objective(x));

  auto mda_objective = [&](const Tensor& in) {
    const LatentDistribution d = encode(m, in);
    Tensor z = d.mu;
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += d.sigma[i] * noise[i];
    const Tensor y = decode(m, z);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += std::pow(y[i] - x[i], 2);
    return s;
  };
  CHECK(mda_objective(mda_attack(m, x, o)) >= mda_objective(x));

  const LatentDistribution clean = encode(m, x);
  Tensor lv = clean.sigma;
  for (double& v : lv.values()) v = 2.0 * std::log(v);
  auto lsa_objective = [&](const Tensor& in) {
    Tape t;
    BoundParams p(t, m.params, false);
    EncoderOutput e = encode(m.arch, p, t.constant(in));
    return gaussian_kl(e.mu, e.logvar, clean.mu, lv).value().item();
  };
  CHECK(lsa_objective(x) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(lsa_objective(lsa_attack(m, x, o)) > 0.0);
}

TEST_CASE("small-box regions") {
  const Model& m = trained_synthetic();
  const Tensor x = synthetic_dataset(10, 8, 3).examples;
  const InputRegion full = sabr_region(m, x, 0.1, 1.0, 0);
  CHECK(full.center == x);
  CHECK(full.epsilon == 0.1);
  const InputRegion none = sabr_region(m, x, 0.0, 0.1, 0);
  CHECK(none.center == x);
  CHECK(none.epsilon == 0.0);
  const InputRegion small = sabr_region(m, x, 0.1, 0.1, 0);
  CHECK(small.epsilon == doctest::Approx(0.01));
  CHECK(linf(small.center, x) + small.epsilon <= 0.1 + 1e-12);
  const Tensor lo = region_lower(small), hi = region_upper(small);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(lo[i] >= std::max(0.0, x[i] - 0.1) - 1e-12);
    CHECK(hi[i] <= std::min(1.0, x[i] + 0.1) + 1e-12);
  }
  CHECK_THROWS_AS(sabr_region(m, x, 0.1, 0.0, 0), DomainError);
}

TEST_CASE("optimizer updates") {
  ParameterSet p, g;
  p.add("w", Tensor(Shape{2}, {1.0, -2.0}));
  g.add("w", Tensor(Shape{2}, {0.5, -0.25}));
  Optimizer adam(OptimizerKind::adam, 0.1, 0.01);
  adam.step(p, g);
  // First Adam step moves by lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
  const double e = Optimizer::kEps;
  CHECK(p.at("w")[0] == doctest::Approx(1.0 - 0.1 * (0.5 / (0.5 + e) + 0.01 * 1.0)));
  CHECK(p.at("w")[1] == doctest::Approx(-2.0 - 0.1 * (-0.25 / (0.25 + e) + 0.01 * -2.0)));

  ParameterSet q;
  q.add("w", Tensor(Shape{2}, {1.0, -2.0}));
  Optimizer sgd(OptimizerKind::sgd, 0.1, 0.0, 0.9);
  sgd.step(q, g);
  CHECK(q.at("w")[0] == doctest::Approx(1.0 - 0.05));
  sgd.step(q, g);
  CHECK(q.at("w")[0] == doctest::Approx(1.0 - 0.05 - 0.1 * (0.9 * 0.5 + 0.5)));
}

TEST_CASE("warmup epsilon schedule") {
  TrainConfig c;
  c.epsilon = 0.2;
  CHECK(scheduled_epsilon(c, 0) == 0.0);
  CHECK(scheduled_epsilon(c, 249) == 0.0);
  CHECK(scheduled_epsilon(c, 250) == doctest::Approx(0.2 / 250));
  CHECK(scheduled_epsilon(c, 374) == doctest::Approx(0.1));
  CHECK(scheduled_epsilon(c, 499) == doctest::Approx(0.2));
  CHECK(scheduled_epsilon(c, 10000) == 0.2);
}

TEST_CASE("training smoke runs are finite and deterministic") {
  const Dataset data = synthetic_dataset(200, 8, 2);
  const ArchitectureSpec arch = preset_architecture("synthetic");
  for (auto method : {TrainMethod::standard, TrainMethod::pgd, TrainMethod::civet,
                      TrainMethod::civet_sabr}) {
    TrainConfig c;
    c.method = method;
    c.epochs = 2;
    c.learning_rate = 1e-3;
    c.warmup_standard_iters = 5;
    c.warmup_ramp_iters = 5;
    const TrainResult a = train(c, data, arch);
    REQUIRE(a.log.size() == 2);
    for (const auto& row : a.log) {
      CHECK(std::isfinite(row.std_loss));
      CHECK(std::isfinite(row.civet_loss));
    }
    CHECK(a.log.back().iter == 14);
    const bool certified = method == TrainMethod::civet || method == TrainMethod::civet_sabr;
    CHECK((a.log.back().civet_loss > 0.0) == certified);
    const TrainResult b = train(c, data, arch);
    CHECK(a.model.params == b.model.params);
    c.seed = 1;
    CHECK_FALSE(train(c, data, arch).model.params == a.model.params);
  }
}

TEST_CASE("standard training ignores the certified settings") {
  const Dataset data = synthetic_dataset(100, 8, 2);
  TrainConfig c;
  c.epochs = 1;
  const TrainResult a = train(c, data, preset_architecture("synthetic"));
  c.deltas = {0.4, 0.1};
  c.epsilon = 0.3;
  c.warmup_standard_iters = 0;
  const TrainResult b = train(c, data, preset_architecture("synthetic"));
  CHECK(a.model.params == b.model.params);
}

TEST_CASE("non-finite loss aborts with the batch index") {
  Dataset data = synthetic_dataset(64, 8, 2);
  data.examples[8 * 40] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 16;
  try {
    train(c, data, preset_architecture("synthetic"));
    FAIL("expected a training error");
  } catch (const TrainingError& e) {
    CHECK(e.batch_index() < 4);
    CHECK(std::string(e.what()).find("batch " + std::to_string(e.batch_index())) !=
          std::string::npos);
  }
  CHECK_THROWS_AS(train(c, synthetic_dataset(10, 5, 1), preset_architecture("synthetic")),
                  DimensionError);
}

TEST_CASE("training log csv") {
  const std::string csv = train_log_csv({TrainLogRow{1, 10, 0.5, 0.25, 0.1, 12.0}});
  CHECK(csv.rfind("epoch,iter,std_loss,civet_loss,epsilon_current,wall_ms\n", 0) == 0);
  CHECK(csv.find("1,10,0.5,0.25,0.1,12.0") != std::string::npos);
}
