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

#include "civet/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "civet/errors.hpp"

namespace civet {

// ---------------------------------------------------------------------------
// Config

std::string method_name(TrainMethod m) {
  switch (m) {
    case TrainMethod::standard: return "standard";
    case TrainMethod::pgd: return "pgd";
    case TrainMethod::civet: return "civet";
    case TrainMethod::civet_sabr: return "civet-sabr";
  }
  return "?";
}

TrainMethod parse_method(const std::string& name) {
  for (auto m : {TrainMethod::standard, TrainMethod::pgd, TrainMethod::civet,
                 TrainMethod::civet_sabr}) {
    if (method_name(m) == name) return m;
  }
  throw ConfigError("unknown method '" + name + "' (standard, pgd, civet, civet-sabr)", 0);
}

std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + name + "' (adam, sgd)", 0);
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg, 0); };
  if (!(learning_rate > 0.0)) fail("lr: must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay: must be nonnegative");
  if (epochs < 1) fail("epochs: must be at least 1");
  if (batch_size < 1) fail("batch_size: must be at least 1");
  if (!(epsilon >= 0.0)) fail("epsilon: must be nonnegative");
  if (warmup_standard_iters < 0) fail("warmup_standard_iters: must be nonnegative");
  if (warmup_ramp_iters < 0) fail("warmup_ramp_iters: must be nonnegative");
  if (pgd_steps < 0) fail("pgd_steps: must be nonnegative");
  if (!(pgd_step_frac > 0.0)) fail("pgd_step_frac: must be positive");
  if (!(sabr_tau > 0.0 && sabr_tau <= 1.0)) fail("sabr_tau: must lie in (0, 1]");
  if (!(beta >= 0.0)) fail("beta: must be nonnegative");
  if (!(civet_weight >= 0.0)) fail("civet_weight: must be nonnegative");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum: must lie in [0, 1)");
  if (max_depth < 1) fail("max_depth: must be at least 1");
  if (method == TrainMethod::civet || method == TrainMethod::civet_sabr) {
    try {
      DeltaSchedule schedule(deltas);
      for (double d : deltas) ProbabilityThreshold{d};
    } catch (const Error& e) {
      fail(std::string("deltas: ") + e.what());
    }
  }
}

// ---------------------------------------------------------------------------
// Losses

Var kl_divergence(const Var& mu, const Var& logvar) {
  // -1/2 sum(1 + logvar - mu^2 - exp(logvar))
  Var inner = sub(add_scalar(logvar, 1.0), add(square(mu), exp(logvar)));
  const std::size_t batch = mu.value().rank() > 1 ? mu.value().dim(0) : 1;
  return scale(sum(inner), -0.5 / static_cast<double>(batch));
}

double kl_divergence(const Tensor& mu, const Tensor& sigma) {
  if (mu.shape() != sigma.shape()) throw DimensionError("mu and sigma differ in shape");
  double total = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (!(sigma[i] > 0.0)) throw DomainError("sigma must be positive");
    const double s2 = sigma[i] * sigma[i];
    total += 1.0 + std::log(s2) - mu[i] * mu[i] - s2;
  }
  const std::size_t batch = mu.rank() > 1 ? mu.dim(0) : 1;
  return -0.5 * total / static_cast<double>(batch);
}

Var gaussian_kl(const Var& mu_a, const Var& logvar_a, const Tensor& mu_b,
                const Tensor& logvar_b) {
  Tape& tape = mu_a.tape();
  Tensor inv_var_b = logvar_b;
  for (double& v : inv_var_b.values()) v = std::exp(-v);
  // 1/2 [logvar_b - logvar_a + (var_a + (mu_a - mu_b)^2) / var_b - 1]
  Var diff = sub(mu_a, tape.constant(mu_b));
  Var ratio = mul(add(exp(logvar_a), square(diff)), tape.constant(inv_var_b));
  Var inner = add_scalar(add(sub(tape.constant(logvar_b), logvar_a), ratio), -1.0);
  return scale(sum(inner), 0.5);
}

StandardLoss standard_loss(const ArchitectureSpec& arch, const BoundParams& params,
                           const Var& input, const Tensor& target, const Tensor& noise,
                           double beta) {
  EncoderOutput enc = encode(arch, params, input);
  Var z = reparameterize(enc.mu, enc.sigma, noise);
  Var recon_out = decode(arch, params, z);
  Tape& tape = input.tape();
  Var recon = mean(square(sub(recon_out, tape.constant(target.reshaped(recon_out.shape())))));
  Var kl = kl_divergence(enc.mu, enc.logvar);
  return StandardLoss{add(recon, scale(kl, beta)), recon, kl};
}

Var decoder_bound_loss(const IntervalVar& output, const Tensor& target) {
  Tape& tape = output.lower.tape();
  Var x = tape.constant(target.reshaped(output.shape()));
  return mean(maximum(square(sub(output.lower, x)), square(sub(output.upper, x))));
}

CivetLoss civet_loss(const ArchitectureSpec& arch, const BoundParams& params,
                     const InputRegion& region, const Tensor& target,
                     const DeltaSchedule& schedule, int max_depth,
                     const std::vector<Tensor>* frozen_quantiles) {
  if (frozen_quantiles && frozen_quantiles->size() != schedule.size()) {
    throw DimensionError("frozen quantiles do not match the schedule length");
  }
  Tape& tape = params.tape();
  LatentBoundVars latent = propagate_encoder(arch, params, region_to_interval(tape, region));
  const LatentBounds values = latent.values();

  CivetLoss out;
  out.weights = schedule.weights();
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    Tensor q = frozen_quantiles
                   ? (*frozen_quantiles)[i]
                   : support_quantiles(values, ProbabilityThreshold(schedule.deltas()[i]),
                                       max_depth);
    Var spread = mul(latent.sigma.upper, tape.constant(q.reshaped(latent.sigma.upper.shape())));
    IntervalVar support{sub(latent.mu.lower, spread), add(latent.mu.upper, spread)};
    Var term = decoder_bound_loss(propagate_decoder(arch, params, support), target);
    Var weighted = scale(term, out.weights[i]);
    out.total = i == 0 ? weighted : add(out.total, weighted);
    out.terms.push_back(term);
    out.quantiles.push_back(std::move(q));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attacks

namespace {

// [B x d_in] view of x plus what is needed to restore its shape.
Tensor as_batch(const ArchitectureSpec& arch, const Tensor& x) {
  const std::size_t d = arch.input_size();
  if (x.size() % d != 0 || x.empty()) {
    throw DimensionError("input " + shape_str(x.shape()) + " does not match " +
                         shape_str(arch.input_shape));
  }
  return x.reshaped(Shape{x.size() / d, d});
}

template <class Objective>
Tensor projected_sign_ascent(const Model& model, const Tensor& x, Tensor start,
                             const AttackOptions& opts, Objective objective) {
  if (!(opts.epsilon >= 0.0)) throw DomainError("attack epsilon must be nonnegative");
  const double step = opts.step_frac * opts.epsilon;
  auto project = [&](Tensor& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = std::clamp(v[i], x[i] - opts.epsilon, x[i] + opts.epsilon);
      v[i] = std::clamp(v[i], opts.data_min, opts.data_max);
    }
  };
  Tensor adv = std::move(start);
  project(adv);
  if (opts.epsilon == 0.0) return adv;
  for (int s = 0; s < opts.steps; ++s) {
    Tape tape;
    BoundParams params(tape, model.params, false);
    Var xv = tape.leaf(adv);
    Var obj = objective(params, xv);
    tape.backward(obj);
    const Tensor g = tape.grad(xv);
    for (std::size_t i = 0; i < adv.size(); ++i) {
      if (g[i] > 0.0) adv[i] += step;
      else if (g[i] < 0.0) adv[i] -= step;
    }
    project(adv);
  }
  return adv;
}

}  // namespace

Tensor pgd_attack(const Model& model, const Tensor& x, const AttackOptions& opts,
                  PgdObjective objective) {
  const Tensor xb = as_batch(model.arch, x);
  const Tensor noise = standard_normal(Shape{xb.dim(0), model.arch.latent_dim}, opts.seed);
  Tensor adv = projected_sign_ascent(
      model, xb, xb, opts, [&](const BoundParams& p, const Var& xv) {
        if (objective == PgdObjective::standard) {
          return standard_loss(model.arch, p, xv, xb, noise, opts.beta).total;
        }
        EncoderOutput enc = encode(model.arch, p, xv);
        Var y = decode(model.arch, p, enc.mu);
        return sum(square(sub(y, p.tape().constant(xb))));
      });
  return adv.reshaped(x.shape());
}

Tensor lsa_attack(const Model& model, const Tensor& x, const AttackOptions& opts) {
  const Tensor xb = as_batch(model.arch, x);
  Tape clean_tape;
  BoundParams clean_params(clean_tape, model.params, false);
  EncoderOutput clean = encode(model.arch, clean_params, clean_tape.constant(xb));
  const Tensor mu_b = clean.mu.value();
  const Tensor logvar_b = clean.logvar.value();

  // The objective is flat at x' = x, so start from a random point in the ball.
  Tensor start = xb;
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> u(-opts.epsilon, opts.epsilon);
  for (double& v : start.values()) v += u(rng);

  Tensor adv = projected_sign_ascent(model, xb, std::move(start), opts,
                                     [&](const BoundParams& p, const Var& xv) {
                                       EncoderOutput enc = encode(model.arch, p, xv);
                                       return gaussian_kl(enc.mu, enc.logvar, mu_b, logvar_b);
                                     });
  return adv.reshaped(x.shape());
}

Tensor mda_attack(const Model& model, const Tensor& x, const AttackOptions& opts) {
  const Tensor xb = as_batch(model.arch, x);
  const Tensor noise = standard_normal(Shape{xb.dim(0), model.arch.latent_dim}, opts.seed);
  Tensor adv = projected_sign_ascent(model, xb, xb, opts, [&](const BoundParams& p,
                                                             const Var& xv) {
    EncoderOutput enc = encode(model.arch, p, xv);
    Var y = decode(model.arch, p, reparameterize(enc.mu, enc.sigma, noise));
    return sum(square(sub(y, p.tape().constant(xb))));
  });
  return adv.reshaped(x.shape());
}

Tensor run_attack(const std::string& name, const Model& model, const Tensor& x,
                  const AttackOptions& opts) {
  if (name == "pgd") return pgd_attack(model, x, opts);
  if (name == "lsa") return lsa_attack(model, x, opts);
  if (name == "mda") return mda_attack(model, x, opts);
  throw UsageError("unknown attack '" + name + "' (pgd, lsa, mda)");
}

InputRegion sabr_region(const Model& model, const Tensor& x, double epsilon, double tau,
                        std::uint64_t seed) {
  if (!(tau > 0.0 && tau <= 1.0)) throw DomainError("sabr tau must lie in (0, 1]");
  if (!(epsilon >= 0.0)) throw DomainError("epsilon must be nonnegative");
  const std::pair<double, double> range{0.0, 1.0};
  if (tau == 1.0) return InputRegion{x, epsilon, range};
  AttackOptions opts;
  opts.epsilon = (1.0 - tau) * epsilon;
  opts.seed = seed;
  return InputRegion{mda_attack(model, x, opts), tau * epsilon, range};
}

// ---------------------------------------------------------------------------
// Optimizer

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, double weight_decay,
                     double momentum)
    : kind_(kind), lr_(learning_rate), wd_(weight_decay), momentum_(momentum) {}

void Optimizer::step(ParameterSet& params, const ParameterSet& grads) {
  auto& entries = params.entries();
  if (grads.size() != entries.size()) throw DimensionError("gradient set size mismatch");
  if (m_.empty()) {
    for (const auto& e : entries) {
      m_.emplace_back(e.value.shape());
      v_.emplace_back(e.value.shape());
    }
  }
  ++t_;
  const double t = static_cast<double>(t_);
  const double bc1 = 1.0 - std::pow(kBeta1, t);
  const double bc2 = 1.0 - std::pow(kBeta2, t);
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Tensor& p = entries[k].value;
    const Tensor& g = grads.entries()[k].value;
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      double update = 0.0;
      if (kind_ == OptimizerKind::adam) {
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
        update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kEps);
      } else {
        m[i] = momentum_ * m[i] + g[i];
        update = m[i];
      }
      p[i] -= lr_ * (update + wd_ * p[i]);
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop

double scheduled_epsilon(const TrainConfig& config, long iter) {
  if (iter < config.warmup_standard_iters) return 0.0;
  const long ramp_iter = iter - config.warmup_standard_iters;
  if (ramp_iter < config.warmup_ramp_iters) {
    return config.epsilon * static_cast<double>(ramp_iter + 1) /
           static_cast<double>(config.warmup_ramp_iters);
  }
  return config.epsilon;
}

TrainResult train(const TrainConfig& config, const Dataset& dataset,
                  const ArchitectureSpec& arch) {
  config.validate();
  arch.validate();
  if (dataset.size() == 0) throw DimensionError("training set is empty");
  if (dataset.example_size() != arch.input_size()) {
    throw DimensionError("dataset examples have " + std::to_string(dataset.example_size()) +
                         " values, architecture expects " +
                         std::to_string(arch.input_size()));
  }
  const bool robust = config.method != TrainMethod::standard;
  const bool certified =
      config.method == TrainMethod::civet || config.method == TrainMethod::civet_sabr;
  std::optional<DeltaSchedule> schedule;
  if (certified) schedule.emplace(config.deltas);

  TrainResult result{Model::create(arch, config.seed), {}};
  Model& model = result.model;
  Optimizer opt(config.optimizer, config.learning_rate, config.weight_decay, config.momentum);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  long iter = 0;
  const auto start = std::chrono::steady_clock::now();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double std_sum = 0.0, civet_sum = 0.0, eps_now = 0.0;
    long batches = 0, civet_batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += bs, ++iter) {
      const std::vector<std::size_t> idx(order.begin() + b0,
                                         order.begin() + std::min(order.size(), b0 + bs));
      const Tensor xb = dataset.gather(idx);
      const std::size_t n = idx.size();
      const std::uint64_t batch_seed = rng();
      eps_now = robust ? scheduled_epsilon(config, iter) : 0.0;

      Tape tape;
      BoundParams params(tape, model.params, true);
      const Tensor noise = standard_normal(Shape{n, arch.latent_dim}, batch_seed);
      StandardLoss std_loss =
          standard_loss(arch, params, tape.constant(xb), xb, noise, config.beta);
      Var total = std_loss.total;
      double std_value = std_loss.total.value().item();
      double civet_value = 0.0;

      if (config.method == TrainMethod::pgd && eps_now > 0.0) {
        AttackOptions ao;
        ao.epsilon = eps_now;
        ao.steps = config.pgd_steps;
        ao.step_frac = config.pgd_step_frac;
        ao.seed = batch_seed + 1;
        ao.beta = config.beta;
        const Tensor adv = pgd_attack(model, xb, ao);
        StandardLoss adv_loss =
            standard_loss(arch, params, tape.constant(adv), xb, noise, config.beta);
        total = add(total, adv_loss.total);
        std_value += adv_loss.total.value().item();
      }
      if (certified && iter >= config.warmup_standard_iters) {
        InputRegion region =
            config.method == TrainMethod::civet_sabr
                ? sabr_region(model, xb, eps_now, config.sabr_tau, batch_seed + 2)
                : InputRegion{xb, eps_now, std::pair<double, double>{0.0, 1.0}};
        CivetLoss cl = civet_loss(arch, params, region, xb, *schedule, config.max_depth);
        total = add(total, scale(cl.total, config.civet_weight));
        civet_value = cl.total.value().item();
        civet_sum += civet_value;
        ++civet_batches;
      }

      const double total_value = total.value().item();
      if (!std::isfinite(total_value)) {
        throw TrainingError("non-finite loss at batch " + std::to_string(iter) + " (epoch " +
                                std::to_string(epoch + 1) + "): standard " +
                                std::to_string(std_value) + ", certified " +
                                std::to_string(civet_value),
                            static_cast<std::size_t>(iter));
      }
      tape.backward(total);
      ParameterSet grads = params.gradients(model.params);
      for (const auto& e : grads.entries()) {
        if (!e.value.all_finite()) {
          throw TrainingError("non-finite gradient for " + e.name + " at batch " +
                                  std::to_string(iter),
                              static_cast<std::size_t>(iter));
        }
      }
      opt.step(model.params, grads);
      std_sum += std_value;
      ++batches;
    }
    const double ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - start)
                          .count();
    result.log.push_back(TrainLogRow{epoch + 1, iter, std_sum / static_cast<double>(batches),
                                     civet_batches ? civet_sum / civet_batches : 0.0, eps_now,
                                     ms});
  }
  return result;
}

std::string train_log_csv(const std::vector<TrainLogRow>& log) {
  std::string out = "epoch,iter,std_loss,civet_loss,epsilon_current,wall_ms\n";
  char buf[256];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%d,%ld,%.10g,%.10g,%.10g,%.1f\n", r.epoch, r.iter,
                  r.std_loss, r.civet_loss, r.epsilon_current, r.wall_ms);
    out += buf;
  }
  return out;
}

}  // namespace civet
