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

#include <cstddef>
#include <string>

#include "civet/tensor.hpp"

// Raw forward/backward kernels shared by the tape ops and the interval
// transformers. No gradient bookkeeping happens here.
namespace civet::kernels {

enum class ActivationKind { relu, leaky_relu, sigmoid, tanh, exp };

struct Activation {
  ActivationKind kind = ActivationKind::relu;
  double slope = 0.01;  // leaky_relu only

  friend bool operator==(const Activation&, const Activation&) = default;
};

std::string activation_name(ActivationKind kind);
ActivationKind parse_activation(const std::string& name);

double activate(const Activation& act, double x);
/// Derivative in terms of the input x and the output y = activate(x).
/// relu'(0) = 0 and leaky_relu'(0) = 1.
double activate_grad(const Activation& act, double x, double y);

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

std::size_t conv_out_dim(std::size_t in, std::size_t kernel,
                         const ConvGeometry& g);
std::size_t conv_transpose_out_dim(std::size_t in, std::size_t kernel,
                                   const ConvGeometry& g);

/// x[B x n], weight[m x n] -> x * weight^T, shape [B x m]. bias may be null.
Tensor affine(const Tensor& x, const Tensor& weight, const Tensor* bias);
/// grad[B x m], weight[m x n] -> grad * weight, shape [B x n].
Tensor affine_backward_input(const Tensor& grad, const Tensor& weight);
/// grad[B x m], x[B x n] -> grad^T * x, shape [m x n].
Tensor affine_backward_weight(const Tensor& grad, const Tensor& x);
/// Sum of grad over every axis except `axis`, result has grad.dim(axis) entries.
Tensor reduce_to_axis(const Tensor& grad, std::size_t axis);

/// Cross-correlation. x[B x C x H x W], kernel[O x C x K x K].
Tensor conv2d(const Tensor& x, const Tensor& kernel, const ConvGeometry& g);
/// Adjoint of conv2d with respect to its input; output [B x C x in_h x in_w].
Tensor conv2d_backward_input(const Tensor& grad, const Tensor& kernel,
                             std::size_t in_h, std::size_t in_w,
                             const ConvGeometry& g);
/// Adjoint of conv2d with respect to the kernel; output [O x C x K x K].
Tensor conv2d_backward_weight(const Tensor& grad, const Tensor& x,
                              std::size_t kernel_size, const ConvGeometry& g);

/// Transposed convolution with kernel[C_in x C_out x K x K].
Tensor conv_transpose2d(const Tensor& x, const Tensor& kernel,
                        const ConvGeometry& g);

/// Adds bias[C] to every element of channel c of x[B x C x ...].
void add_channel_bias(Tensor& x, const Tensor& bias);

Tensor abs(const Tensor& x);

}  // namespace civet::kernels
