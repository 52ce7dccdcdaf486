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

#include "civet/kernels.hpp"

#include <cmath>

#include "civet/errors.hpp"

namespace civet::kernels {

std::string activation_name(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::relu: return "relu";
    case ActivationKind::leaky_relu: return "leaky_relu";
    case ActivationKind::sigmoid: return "sigmoid";
    case ActivationKind::tanh: return "tanh";
    case ActivationKind::exp: return "exp";
  }
  return "unknown";
}

ActivationKind parse_activation(const std::string& name) {
  if (name == "relu") return ActivationKind::relu;
  if (name == "leaky_relu" || name == "leaky-relu") return ActivationKind::leaky_relu;
  if (name == "sigmoid") return ActivationKind::sigmoid;
  if (name == "tanh") return ActivationKind::tanh;
  if (name == "exp") return ActivationKind::exp;
  throw DomainError("unknown activation '" + name + "'");
}

double activate(const Activation& act, double x) {
  switch (act.kind) {
    case ActivationKind::relu: return x > 0.0 ? x : 0.0;
    case ActivationKind::leaky_relu: return x >= 0.0 ? x : act.slope * x;
    case ActivationKind::sigmoid: return 1.0 / (1.0 + std::exp(-x));
    case ActivationKind::tanh: return std::tanh(x);
    case ActivationKind::exp: return std::exp(x);
  }
  return x;
}

double activate_grad(const Activation& act, double x, double y) {
  switch (act.kind) {
    case ActivationKind::relu: return x > 0.0 ? 1.0 : 0.0;
    case ActivationKind::leaky_relu: return x >= 0.0 ? 1.0 : act.slope;
    case ActivationKind::sigmoid: return y * (1.0 - y);
    case ActivationKind::tanh: return 1.0 - y * y;
    case ActivationKind::exp: return y;
  }
  return 1.0;
}

std::size_t conv_out_dim(std::size_t in, std::size_t kernel,
                         const ConvGeometry& g) {
  if (g.stride == 0) throw DomainError("convolution stride must be positive");
  const long span = static_cast<long>(in + 2 * g.padding) - static_cast<long>(kernel);
  if (span < 0) {
    throw DomainError("convolution output is empty: input " + std::to_string(in) +
                      ", kernel " + std::to_string(kernel) + ", padding " +
                      std::to_string(g.padding));
  }
  return static_cast<std::size_t>(span) / g.stride + 1;
}

std::size_t conv_transpose_out_dim(std::size_t in, std::size_t kernel,
                                   const ConvGeometry& g) {
  if (g.stride == 0) throw DomainError("convolution stride must be positive");
  const long out = static_cast<long>((in - 1) * g.stride + kernel) -
                   static_cast<long>(2 * g.padding);
  if (out < 1) {
    throw DomainError("transposed convolution output is empty");
  }
  return static_cast<std::size_t>(out);
}

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + " must have rank " +
                         std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

}  // namespace

Tensor affine(const Tensor& x, const Tensor& weight, const Tensor* bias) {
  require_rank(x, 2, "affine input");
  require_rank(weight, 2, "affine weight");
  const std::size_t batch = x.dim(0), n = x.dim(1), m = weight.dim(0);
  if (weight.dim(1) != n) {
    throw DimensionError("affine: input axis 1 (" + std::to_string(n) +
                         ") != weight axis 1 (" + std::to_string(weight.dim(1)) + ")");
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != m)) {
    throw DimensionError("affine: bias axis 0 " + shape_str(bias->shape()) +
                         " != weight axis 0 (" + std::to_string(m) + ")");
  }
  Tensor out(Shape{batch, m});
  const double* xp = x.data();
  const double* wp = weight.data();
  double* op = out.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xr = xp + b * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double* wr = wp + i * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += wr[j] * xr[j];
      op[b * m + i] = acc + (bias ? (*bias)[i] : 0.0);
    }
  }
  return out;
}

Tensor affine_backward_input(const Tensor& grad, const Tensor& weight) {
  const std::size_t batch = grad.dim(0), m = weight.dim(0), n = weight.dim(1);
  Tensor out(Shape{batch, n});
  for (std::size_t b = 0; b < batch; ++b) {
    double* orow = out.data() + b * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double g = grad[b * m + i];
      if (g == 0.0) continue;
      const double* wr = weight.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += g * wr[j];
    }
  }
  return out;
}

Tensor affine_backward_weight(const Tensor& grad, const Tensor& x) {
  const std::size_t batch = grad.dim(0), m = grad.dim(1), n = x.dim(1);
  Tensor out(Shape{m, n});
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xr = x.data() + b * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double g = grad[b * m + i];
      if (g == 0.0) continue;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += g * xr[j];
    }
  }
  return out;
}

Tensor reduce_to_axis(const Tensor& grad, std::size_t axis) {
  const Shape& s = grad.shape();
  const std::size_t len = grad.dim(axis);
  std::size_t inner = 1;
  for (std::size_t a = axis + 1; a < s.size(); ++a) inner *= s[a];
  const std::size_t outer = grad.size() / (len * inner);
  Tensor out(Shape{len});
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t c = 0; c < len; ++c) {
      const double* p = grad.data() + (o * len + c) * inner;
      double acc = 0.0;
      for (std::size_t k = 0; k < inner; ++k) acc += p[k];
      out[c] += acc;
    }
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, const ConvGeometry& g) {
  require_rank(x, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oc = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != ch) {
    throw DimensionError("conv2d: input axis 1 (" + std::to_string(ch) +
                         ") != kernel axis 1 (" + std::to_string(kernel.dim(1)) + ")");
  }
  if (kernel.dim(3) != k) {
    throw DimensionError("conv2d: kernel axes 2 and 3 must match");
  }
  const std::size_t oh = conv_out_dim(h, k, g), ow = conv_out_dim(w, k, g);
  Tensor out(Shape{batch, oc, oh, ow});
  const long pad = static_cast<long>(g.padding);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < oc; ++o) {
      double* op = out.data() + ((b * oc + o) * oh) * ow;
      for (std::size_t c = 0; c < ch; ++c) {
        const double* xp = x.data() + ((b * ch + c) * h) * w;
        const double* kp = kernel.data() + ((o * ch + c) * k) * k;
        for (std::size_t i = 0; i < oh; ++i) {
          for (std::size_t j = 0; j < ow; ++j) {
            double acc = 0.0;
            for (std::size_t ki = 0; ki < k; ++ki) {
              const long y = static_cast<long>(i * g.stride + ki) - pad;
              if (y < 0 || y >= static_cast<long>(h)) continue;
              for (std::size_t kj = 0; kj < k; ++kj) {
                const long xx = static_cast<long>(j * g.stride + kj) - pad;
                if (xx < 0 || xx >= static_cast<long>(w)) continue;
                acc += kp[ki * k + kj] * xp[y * w + xx];
              }
            }
            op[i * ow + j] += acc;
          }
        }
      }
    }
  }
  return out;
}

Tensor conv2d_backward_input(const Tensor& grad, const Tensor& kernel,
                             std::size_t in_h, std::size_t in_w,
                             const ConvGeometry& g) {
  require_rank(grad, 4, "conv2d gradient");
  const std::size_t batch = grad.dim(0), oc = grad.dim(1), oh = grad.dim(2),
                    ow = grad.dim(3);
  const std::size_t ch = kernel.dim(1), k = kernel.dim(2);
  if (kernel.dim(0) != oc) {
    throw DimensionError("conv2d adjoint: gradient axis 1 (" + std::to_string(oc) +
                         ") != kernel axis 0 (" + std::to_string(kernel.dim(0)) + ")");
  }
  Tensor out(Shape{batch, ch, in_h, in_w});
  const long pad = static_cast<long>(g.padding);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < oc; ++o) {
      const double* gp = grad.data() + ((b * oc + o) * oh) * ow;
      for (std::size_t c = 0; c < ch; ++c) {
        double* xp = out.data() + ((b * ch + c) * in_h) * in_w;
        const double* kp = kernel.data() + ((o * ch + c) * k) * k;
        for (std::size_t i = 0; i < oh; ++i) {
          for (std::size_t j = 0; j < ow; ++j) {
            const double gv = gp[i * ow + j];
            if (gv == 0.0) continue;
            for (std::size_t ki = 0; ki < k; ++ki) {
              const long y = static_cast<long>(i * g.stride + ki) - pad;
              if (y < 0 || y >= static_cast<long>(in_h)) continue;
              for (std::size_t kj = 0; kj < k; ++kj) {
                const long xx = static_cast<long>(j * g.stride + kj) - pad;
                if (xx < 0 || xx >= static_cast<long>(in_w)) continue;
                xp[y * in_w + xx] += gv * kp[ki * k + kj];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor conv2d_backward_weight(const Tensor& grad, const Tensor& x,
                              std::size_t kernel_size, const ConvGeometry& g) {
  const std::size_t batch = grad.dim(0), oc = grad.dim(1), oh = grad.dim(2),
                    ow = grad.dim(3);
  const std::size_t ch = x.dim(1), h = x.dim(2), w = x.dim(3), k = kernel_size;
  Tensor out(Shape{oc, ch, k, k});
  const long pad = static_cast<long>(g.padding);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < oc; ++o) {
      const double* gp = grad.data() + ((b * oc + o) * oh) * ow;
      for (std::size_t c = 0; c < ch; ++c) {
        const double* xp = x.data() + ((b * ch + c) * h) * w;
        double* kp = out.data() + ((o * ch + c) * k) * k;
        for (std::size_t i = 0; i < oh; ++i) {
          for (std::size_t j = 0; j < ow; ++j) {
            const double gv = gp[i * ow + j];
            if (gv == 0.0) continue;
            for (std::size_t ki = 0; ki < k; ++ki) {
              const long y = static_cast<long>(i * g.stride + ki) - pad;
              if (y < 0 || y >= static_cast<long>(h)) continue;
              for (std::size_t kj = 0; kj < k; ++kj) {
                const long xx = static_cast<long>(j * g.stride + kj) - pad;
                if (xx < 0 || xx >= static_cast<long>(w)) continue;
                kp[ki * k + kj] += gv * xp[y * w + xx];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& kernel,
                        const ConvGeometry& g) {
  require_rank(x, 4, "conv_transpose2d input");
  require_rank(kernel, 4, "conv_transpose2d kernel");
  if (kernel.dim(0) != x.dim(1)) {
    throw DimensionError("conv_transpose2d: input axis 1 (" +
                         std::to_string(x.dim(1)) + ") != kernel axis 0 (" +
                         std::to_string(kernel.dim(0)) + ")");
  }
  const std::size_t k = kernel.dim(2);
  const std::size_t oh = conv_transpose_out_dim(x.dim(2), k, g);
  const std::size_t ow = conv_transpose_out_dim(x.dim(3), k, g);
  // The transposed convolution is the input-adjoint of a forward convolution
  // whose output has the shape of x.
  if (conv_out_dim(oh, k, g) != x.dim(2) || conv_out_dim(ow, k, g) != x.dim(3)) {
    throw DimensionError("conv_transpose2d: geometry is not invertible for input " +
                         shape_str(x.shape()));
  }
  return conv2d_backward_input(x, kernel, oh, ow, g);
}

void add_channel_bias(Tensor& x, const Tensor& bias) {
  const std::size_t ch = x.dim(1);
  if (bias.rank() != 1 || bias.dim(0) != ch) {
    throw DimensionError("bias " + shape_str(bias.shape()) +
                         " does not match channel axis 1 of " + shape_str(x.shape()));
  }
  const std::size_t inner = x.size() / (x.dim(0) * ch);
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      double* p = x.data() + (b * ch + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) p[i] += bias[c];
    }
  }
}

Tensor abs(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.values()) v = std::fabs(v);
  return out;
}

}  // namespace civet::kernels
