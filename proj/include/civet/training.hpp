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
#include <optional>
#include <string>
#include <vector>

#include "civet/data.hpp"
#include "civet/gaussian.hpp"
#include "civet/interval.hpp"
#include "civet/train_config.hpp"
#include "civet/vae.hpp"

namespace civet {

/// KL(N(mu, sigma^2) || N(0, 1)) summed over latent dims, averaged over the
/// batch. Takes log sigma^2 directly.
Var kl_divergence(const Var& mu, const Var& logvar);
/// Value form with sigma; [d_l] or [B x d_l].
double kl_divergence(const Tensor& mu, const Tensor& sigma);

/// KL(N(mu_a, sigma_a^2) || N(mu_b, sigma_b^2)) between diagonal Gaussians,
/// summed over every element. The b side is held constant.
Var gaussian_kl(const Var& mu_a, const Var& logvar_a, const Tensor& mu_b,
                const Tensor& logvar_b);

struct StandardLoss {
  Var total;  // recon + beta * kl
  Var recon;  // mean squared reconstruction error
  Var kl;
};

/// Reconstruction of `input` through one reparameterized sample, scored
/// against `target` (flat [B x d_out]).
StandardLoss standard_loss(const ArchitectureSpec& arch, const BoundParams& params,
                           const Var& input, const Tensor& target, const Tensor& noise,
                           double beta);

/// Mean over outputs of max((lower - x)^2, (upper - x)^2).
Var decoder_bound_loss(const IntervalVar& output, const Tensor& target);

struct CivetLoss {
  Var total;
  std::vector<Var> terms;        // unweighted L_dec per delta
  std::vector<double> weights;
  std::vector<Tensor> quantiles; // q[b, i] per delta, held constant
};

/// Weighted sum over the schedule of the decoder bound loss on each support
/// set. Supports are [mu_lb - sigma_ub q, mu_ub + sigma_ub q] with q computed
/// from the current bounds and not differentiated. Passing `frozen_quantiles`
/// reuses earlier q values instead of searching.
CivetLoss civet_loss(const ArchitectureSpec& arch, const BoundParams& params,
                     const InputRegion& region, const Tensor& target,
                     const DeltaSchedule& schedule, int max_depth = kDefaultSearchDepth,
                     const std::vector<Tensor>* frozen_quantiles = nullptr);

enum class PgdObjective {
  standard,     // standard loss with frozen noise
  mean_recon,   // ||decode(mu(x')) - x||^2
};

struct AttackOptions {
  double epsilon = 0.1;
  int steps = 10;
  double step_frac = 0.1;
  std::uint64_t seed = 0;
  double beta = 1e-3;
  double data_min = 0.0;
  double data_max = 1.0;
};

/// Signed-gradient ascent projected onto the epsilon ball around x and the
/// data range after every step. x is [d_in], the input shape, or a batch; each
/// example is attacked independently.
Tensor pgd_attack(const Model& model, const Tensor& x, const AttackOptions& opts,
                  PgdObjective objective = PgdObjective::standard);
/// Maximizes KL(encode(x') || encode(x)) from a seeded random start in the ball.
Tensor lsa_attack(const Model& model, const Tensor& x, const AttackOptions& opts);
/// Maximizes ||decode(reparameterize(encode(x'))) - x||^2 with one noise draw
/// frozen for the whole attack.
Tensor mda_attack(const Model& model, const Tensor& x, const AttackOptions& opts);

/// Runs the named attack ("pgd", "lsa" or "mda"); UsageError otherwise.
Tensor run_attack(const std::string& name, const Model& model, const Tensor& x,
                  const AttackOptions& opts);

/// Small box of radius tau * epsilon around an MDA adversarial example found
/// within (1 - tau) * epsilon of x. tau = 1 returns the full ball at x.
InputRegion sabr_region(const Model& model, const Tensor& x, double epsilon, double tau,
                        std::uint64_t seed);

/// First-order update with decoupled weight decay.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, double weight_decay,
            double momentum = 0.9);

  void step(ParameterSet& params, const ParameterSet& grads);
  std::size_t steps_taken() const noexcept { return t_; }

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

 private:
  OptimizerKind kind_;
  double lr_, wd_, momentum_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct TrainLogRow {
  int epoch = 0;
  long iter = 0;            // batches completed so far
  double std_loss = 0.0;    // epoch mean
  double civet_loss = 0.0;  // epoch mean over batches where it ran, else 0
  double epsilon_current = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<TrainLogRow> log;
};

/// Epsilon used at global batch index `iter` under the warmup protocol.
double scheduled_epsilon(const TrainConfig& config, long iter);

/// Shuffled minibatch training. Robust methods run standard-only batches
/// first, then ramp epsilon linearly, then train at full epsilon.
/// Throws TrainingError naming the batch on a non-finite loss.
TrainResult train(const TrainConfig& config, const Dataset& dataset,
                  const ArchitectureSpec& arch);

std::string train_log_csv(const std::vector<TrainLogRow>& log);

}  // namespace civet
