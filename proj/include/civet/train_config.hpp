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

namespace civet {

enum class TrainMethod { standard, pgd, civet, civet_sabr };
enum class OptimizerKind { adam, sgd };

std::string method_name(TrainMethod m);
TrainMethod parse_method(const std::string& name);
std::string optimizer_name(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& name);

/// Training settings. Defaults: Adam at 1e-4
/// with weight decay 1e-5, 250 standard-only warmup batches, 250 batches of
/// linear epsilon ramp, PGD with 10 steps of 0.1 * epsilon, SABR tau 0.1.
struct TrainConfig {
  TrainMethod method = TrainMethod::standard;
  double epsilon = 0.1;
  std::vector<double> deltas{0.35, 0.2, 0.05};
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  int epochs = 100;
  int batch_size = 32;
  int warmup_standard_iters = 250;
  int warmup_ramp_iters = 250;
  int pgd_steps = 10;
  double pgd_step_frac = 0.1;
  double sabr_tau = 0.1;
  std::uint64_t seed = 0;
  double beta = 1e-3;          // KL weight in the standard loss
  double civet_weight = 1.0;   // multiplier on the certified term
  OptimizerKind optimizer = OptimizerKind::adam;
  double momentum = 0.9;       // sgd only
  int max_depth = 60;          // support bisection depth

  /// Throws ConfigError naming the offending field.
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

}  // namespace civet
