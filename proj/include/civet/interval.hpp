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

#include <optional>
#include <utility>

#include "civet/autodiff.hpp"
#include "civet/network.hpp"

namespace civet {

/// Elementwise box [lower, upper] carried on a tape. Both endpoints are
/// differentiable.
struct IntervalVar {
  Var lower;
  Var upper;

  const Shape& shape() const { return lower.shape(); }
};

/// L-infinity ball around `center`, optionally clipped to a data range.
struct InputRegion {
  Tensor center;
  double epsilon = 0.0;
  std::optional<std::pair<double, double>> clamp;
};

/// Reachable ranges of the latent mean and standard deviation. Tensors are
/// [d_l] for one example or [B x d_l] for a batch.
struct LatentBounds {
  Tensor mu_lb, mu_ub, sigma_lb, sigma_ub;

  std::size_t latent_dim() const { return mu_lb.shape().back(); }
  /// Row `i` of a batched bound as single-example tensors.
  LatentBounds row(std::size_t i) const;
};

/// LatentBounds on a tape.
struct LatentBoundVars {
  IntervalVar mu;
  IntervalVar sigma;

  LatentBounds values() const;
};

/// Absolute tolerance on endpoint inversion before it is treated as a bug.
inline constexpr double kOrderTolerance = 1e-12;

Tensor region_lower(const InputRegion& region);
Tensor region_upper(const InputRegion& region);
IntervalVar region_to_interval(Tape& tape, const InputRegion& region);

/// Center-radius transformers: c = W mid + b, r = |W| rad, result [c - r, c + r].
/// The radius is widened by a bound on the floating-point error of both the
/// interval and the concrete evaluation, so concrete points never escape.
IntervalVar interval_affine(const IntervalVar& x, const Var& weight,
                            const std::optional<Var>& bias);
IntervalVar interval_conv2d(const IntervalVar& x, const Var& kernel,
                            const std::optional<Var>& bias, const ConvGeometry& g);
IntervalVar interval_conv_transpose2d(const IntervalVar& x, const Var& kernel,
                                      const std::optional<Var>& bias,
                                      const ConvGeometry& g);
/// Monotone nondecreasing activations map [l, u] to [act(l), act(u)].
IntervalVar interval_activation(const IntervalVar& x, const Activation& act);
IntervalVar interval_scale(const IntervalVar& x, double positive_factor);
IntervalVar interval_reshape(const IntervalVar& x, Shape shape);

/// Encoder IBP. sigma bounds come from exp(0.5 * logvar bounds).
LatentBoundVars propagate_encoder(const ArchitectureSpec& arch, const BoundParams& params,
                                  const IntervalVar& input);
/// Decoder IBP over a latent box [B x d_l]; result is flat [B x d_out].
IntervalVar propagate_decoder(const ArchitectureSpec& arch, const BoundParams& params,
                              const IntervalVar& latent);

/// Value-only conveniences (fresh tape, no gradients).
LatentBounds propagate_encoder(const ArchitectureSpec& arch, const ParameterSet& params,
                               const InputRegion& region);
std::pair<Tensor, Tensor> propagate_decoder(const ArchitectureSpec& arch,
                                            const ParameterSet& params,
                                            const Tensor& latent_lower,
                                            const Tensor& latent_upper);

}  // namespace civet
