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

#include "civet/interval.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>

#include "civet/errors.hpp"

namespace civet {

namespace {

constexpr double kUnitRoundoff = std::numeric_limits<double>::epsilon() / 2.0;

// Tensor of |mid| + rad, an elementwise bound on |x| over the box.
Tensor magnitude_bound(const Tensor& mid, const Tensor& rad) {
  Tensor out = mid;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(mid[i]) + rad[i];
  return out;
}

// Scales the accumulated magnitude of a length-`terms` dot product (plus bias)
// into a rounding-error allowance for it.
void to_rounding_slack(Tensor& magnitude, const Tensor* bias, std::size_t terms,
                       bool channel_bias) {
  if (bias) {
    const Tensor abs_bias = kernels::abs(*bias);
    if (channel_bias) {
      kernels::add_channel_bias(magnitude, abs_bias);
    } else {
      const std::size_t m = abs_bias.size();
      for (std::size_t i = 0; i < magnitude.size(); ++i) magnitude[i] += abs_bias[i % m];
    }
  }
  const double factor = 4.0 * static_cast<double>(terms + 2) * kUnitRoundoff;
  for (double& v : magnitude.values()) v *= factor;
}

std::pair<Var, Var> center_radius(const IntervalVar& x) {
  Var mid = scale(add(x.lower, x.upper), 0.5);
  Var rad = scale(sub(x.upper, x.lower), 0.5);
  return {mid, rad};
}

IntervalVar from_center_radius(const Var& center, const Var& radius, Tensor slack) {
  Tape& tape = center.tape();
  Var widened = add(radius, tape.constant(std::move(slack)));
  return IntervalVar{sub(center, widened), add(center, widened)};
}

// Repairs endpoint inversions caused by rounding. Larger inversions are bugs.
IntervalVar ordered(const IntervalVar& x) {
  const Tensor& lo = x.lower.value();
  const Tensor& hi = x.upper.value();
  bool inverted = false;
  for (std::size_t i = 0; i < lo.size(); ++i) {
    if (lo[i] > hi[i]) {
      assert(lo[i] - hi[i] <= kOrderTolerance * std::max(1.0, std::fabs(lo[i])));
      inverted = true;
    }
  }
  if (!inverted) return x;
  return IntervalVar{x.lower, maximum(x.upper, x.lower)};
}

Shape with_batch(std::size_t batch, const Shape& per_example) {
  Shape s{batch};
  s.insert(s.end(), per_example.begin(), per_example.end());
  return s;
}

IntervalVar interval_layers(const std::vector<LayerSpec>& layers, const BoundParams& params,
                            const std::string& prefix, IntervalVar x) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const std::string base = prefix + "." + std::to_string(i) + ".";
    switch (l.kind) {
      case LayerKind::affine:
        x = interval_affine(x, params[base + "weight"], params[base + "bias"]);
        break;
      case LayerKind::conv2d:
        x = interval_conv2d(x, params[base + "weight"], params[base + "bias"],
                            ConvGeometry{l.stride, l.padding});
        break;
      case LayerKind::conv_transpose2d:
        x = interval_conv_transpose2d(x, params[base + "weight"], params[base + "bias"],
                                      ConvGeometry{l.stride, l.padding});
        break;
      case LayerKind::activation:
        x = interval_activation(x, l.act);
        break;
      case LayerKind::reshape:
        x = interval_reshape(x, with_batch(x.shape()[0], l.shape));
        break;
    }
  }
  return x;
}

}  // namespace

LatentBounds LatentBounds::row(std::size_t i) const {
  if (mu_lb.rank() == 1) return *this;
  const std::size_t d = latent_dim();
  auto pick = [&](const Tensor& t) { return t.rows(i, 1).reshaped(Shape{d}); };
  return LatentBounds{pick(mu_lb), pick(mu_ub), pick(sigma_lb), pick(sigma_ub)};
}

LatentBounds LatentBoundVars::values() const {
  return LatentBounds{mu.lower.value(), mu.upper.value(), sigma.lower.value(),
                      sigma.upper.value()};
}

Tensor region_lower(const InputRegion& region) {
  if (region.epsilon < 0.0) throw DomainError("region radius must be nonnegative");
  Tensor out = region.center;
  for (double& v : out.values()) {
    v -= region.epsilon;
    if (region.clamp) v = std::clamp(v, region.clamp->first, region.clamp->second);
  }
  return out;
}

Tensor region_upper(const InputRegion& region) {
  if (region.epsilon < 0.0) throw DomainError("region radius must be nonnegative");
  Tensor out = region.center;
  for (double& v : out.values()) {
    v += region.epsilon;
    if (region.clamp) v = std::clamp(v, region.clamp->first, region.clamp->second);
  }
  return out;
}

IntervalVar region_to_interval(Tape& tape, const InputRegion& region) {
  return IntervalVar{tape.constant(region_lower(region)), tape.constant(region_upper(region))};
}

IntervalVar interval_affine(const IntervalVar& x, const Var& weight,
                            const std::optional<Var>& bias) {
  auto [mid, rad] = center_radius(x);
  Var center = affine(mid, weight, bias);
  Var abs_w = abs(weight);
  Var radius = affine(rad, abs_w, std::nullopt);
  Tensor slack = kernels::affine(magnitude_bound(mid.value(), rad.value()), abs_w.value(),
                                 nullptr);
  to_rounding_slack(slack, bias ? &bias->value() : nullptr, weight.value().dim(1), false);
  return ordered(from_center_radius(center, radius, std::move(slack)));
}

IntervalVar interval_conv2d(const IntervalVar& x, const Var& kernel,
                            const std::optional<Var>& bias, const ConvGeometry& g) {
  auto [mid, rad] = center_radius(x);
  Var center = conv2d(mid, kernel, bias, g);
  Var abs_k = abs(kernel);
  Var radius = conv2d(rad, abs_k, std::nullopt, g);
  Tensor slack = kernels::conv2d(magnitude_bound(mid.value(), rad.value()), abs_k.value(), g);
  const Shape& ks = kernel.value().shape();
  to_rounding_slack(slack, bias ? &bias->value() : nullptr, ks[1] * ks[2] * ks[3], true);
  return ordered(from_center_radius(center, radius, std::move(slack)));
}

IntervalVar interval_conv_transpose2d(const IntervalVar& x, const Var& kernel,
                                      const std::optional<Var>& bias,
                                      const ConvGeometry& g) {
  auto [mid, rad] = center_radius(x);
  Var center = conv_transpose2d(mid, kernel, bias, g);
  Var abs_k = abs(kernel);
  Var radius = conv_transpose2d(rad, abs_k, std::nullopt, g);
  Tensor slack =
      kernels::conv_transpose2d(magnitude_bound(mid.value(), rad.value()), abs_k.value(), g);
  const Shape& ks = kernel.value().shape();
  to_rounding_slack(slack, bias ? &bias->value() : nullptr, ks[0] * ks[2] * ks[3], true);
  return ordered(from_center_radius(center, radius, std::move(slack)));
}

IntervalVar interval_activation(const IntervalVar& x, const Activation& act) {
  return ordered(IntervalVar{activation(x.lower, act), activation(x.upper, act)});
}

IntervalVar interval_scale(const IntervalVar& x, double positive_factor) {
  if (!(positive_factor > 0.0)) throw DomainError("interval_scale needs a positive factor");
  return IntervalVar{scale(x.lower, positive_factor), scale(x.upper, positive_factor)};
}

IntervalVar interval_reshape(const IntervalVar& x, Shape shape) {
  return IntervalVar{reshape(x.lower, shape), reshape(x.upper, shape)};
}

LatentBoundVars propagate_encoder(const ArchitectureSpec& arch, const BoundParams& params,
                                  const IntervalVar& input) {
  const Shape& s = input.shape();
  const std::size_t batch = s.size() == arch.input_shape.size() ? 1 : s[0];
  if (shape_size(s) != batch * arch.input_size()) {
    throw DimensionError("encoder input " + shape_str(s) + " does not match " +
                         shape_str(arch.input_shape));
  }
  IntervalVar x = interval_reshape(input, with_batch(batch, arch.input_shape));
  x = interval_layers(arch.encoder, params, "enc", x);
  IntervalVar mu = interval_affine(x, params["enc.mu.weight"], params["enc.mu.bias"]);
  IntervalVar logvar =
      interval_affine(x, params["enc.logvar.weight"], params["enc.logvar.bias"]);
  IntervalVar sigma =
      interval_activation(interval_scale(logvar, 0.5), Activation{ActivationKind::exp});
  return LatentBoundVars{mu, sigma};
}

IntervalVar propagate_decoder(const ArchitectureSpec& arch, const BoundParams& params,
                              const IntervalVar& latent) {
  const Shape& s = latent.shape();
  const std::size_t batch = s.size() == 1 ? 1 : s[0];
  if (shape_size(s) != batch * arch.latent_dim) {
    throw DimensionError("latent box " + shape_str(s) + " does not match latent width " +
                         std::to_string(arch.latent_dim));
  }
  IntervalVar z = interval_reshape(latent, Shape{batch, arch.latent_dim});
  IntervalVar y = interval_layers(arch.decoder, params, "dec", z);
  return interval_reshape(y, Shape{batch, arch.output_size()});
}

LatentBounds propagate_encoder(const ArchitectureSpec& arch, const ParameterSet& params,
                               const InputRegion& region) {
  Tape tape;
  BoundParams bound(tape, params, false);
  LatentBoundVars vars = propagate_encoder(arch, bound, region_to_interval(tape, region));
  LatentBounds out = vars.values();
  if (region.center.rank() == arch.input_shape.size()) {
    // Single example in, single example out.
    const Shape d{arch.latent_dim};
    out = LatentBounds{out.mu_lb.reshaped(d), out.mu_ub.reshaped(d), out.sigma_lb.reshaped(d),
                       out.sigma_ub.reshaped(d)};
  }
  return out;
}

std::pair<Tensor, Tensor> propagate_decoder(const ArchitectureSpec& arch,
                                            const ParameterSet& params,
                                            const Tensor& latent_lower,
                                            const Tensor& latent_upper) {
  if (latent_lower.shape() != latent_upper.shape()) {
    throw DimensionError("latent box endpoints differ in shape");
  }
  Tape tape;
  BoundParams bound(tape, params, false);
  IntervalVar out = propagate_decoder(
      arch, bound, IntervalVar{tape.constant(latent_lower), tape.constant(latent_upper)});
  Tensor lo = out.lower.value(), hi = out.upper.value();
  if (latent_lower.rank() == 1) {
    lo = lo.reshaped(Shape{arch.output_size()});
    hi = hi.reshaped(Shape{arch.output_size()});
  }
  return {lo, hi};
}

}  // namespace civet
