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

#include "civet/autodiff.hpp"

#include <cmath>
#include <utility>

#include "civet/errors.hpp"

namespace civet {

const Tensor& Var::value() const {
  if (!tape_) throw UsageError("use of an unbound Var");
  return tape_->value(*this);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(*this); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs,
                 Backward backward) {
  bool tracked = false;
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw UsageError("operands live on different tapes");
    tracked = tracked || requires_grad(in);
  }
  nodes_.push_back(Node{std::move(value), Tensor{}, tracked,
                        tracked ? std::move(backward) : Backward{}});
  return Var(this, nodes_.size() - 1);
}

Tape::Node& Tape::node(const Var& v) {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw UsageError("Var does not belong to this tape");
  }
  return nodes_[v.id_];
}

const Tape::Node& Tape::node(const Var& v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw UsageError("Var does not belong to this tape");
  }
  return nodes_[v.id_];
}

const Tensor& Tape::value(const Var& v) const { return node(v).value; }

bool Tape::requires_grad(const Var& v) const { return node(v).requires_grad; }

Tensor Tape::grad(const Var& v) const {
  const Node& n = node(v);
  if (n.grad.empty()) return Tensor(n.value.shape());
  return n.grad;
}

void Tape::accumulate(const Var& v, const Tensor& g) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  if (g.size() != n.value.size()) {
    throw DimensionError("gradient " + shape_str(g.shape()) + " for node of shape " +
                         shape_str(n.value.shape()));
  }
  if (n.grad.empty()) {
    n.grad = Tensor(n.value.shape(), std::vector<double>(g.values().begin(),
                                                         g.values().end()));
    return;
  }
  double* p = n.grad.data();
  for (std::size_t i = 0; i < g.size(); ++i) p[i] += g[i];
}

void Tape::backward(const Var& root) {
  Node& r = node(root);
  if (r.value.size() != 1) {
    throw UsageError("backward needs a scalar root, got shape " +
                     shape_str(r.value.shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor{};
  if (!r.requires_grad) return;
  r.grad = Tensor(r.value.shape(), 1.0);
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.backward) continue;
    // The rule may append to other nodes' grads but never to this one.
    const Tensor g = n.grad;
    n.backward(*this, g);
  }
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()) + " differ");
  }
}

template <class F>
Tensor map(const Tensor& x, F f) {
  Tensor out = x;
  for (double& v : out.values()) v = f(v);
  return out;
}

}  // namespace

Var affine(const Var& x, const Var& weight, const std::optional<Var>& bias) {
  Tensor out = kernels::affine(x.value(), weight.value(),
                               bias ? &bias->value() : nullptr);
  Tape& t = x.tape();
  auto rule = [x, weight, bias](Tape& tape, const Tensor& g) {
    if (x.requires_grad()) tape.accumulate(x, kernels::affine_backward_input(g, weight.value()));
    if (weight.requires_grad()) tape.accumulate(weight, kernels::affine_backward_weight(g, x.value()));
    if (bias && bias->requires_grad()) tape.accumulate(*bias, kernels::reduce_to_axis(g, 1));
  };
  if (bias) return t.record(std::move(out), {x, weight, *bias}, rule);
  return t.record(std::move(out), {x, weight}, rule);
}

Var conv2d(const Var& x, const Var& kernel, const std::optional<Var>& bias,
           const ConvGeometry& geometry) {
  Tensor out = kernels::conv2d(x.value(), kernel.value(), geometry);
  if (bias) kernels::add_channel_bias(out, bias->value());
  Tape& t = x.tape();
  auto rule = [x, kernel, bias, geometry](Tape& tape, const Tensor& g) {
    const Tensor& xv = x.value();
    if (x.requires_grad()) {
      tape.accumulate(x, kernels::conv2d_backward_input(g, kernel.value(), xv.dim(2),
                                                        xv.dim(3), geometry));
    }
    if (kernel.requires_grad()) {
      tape.accumulate(kernel, kernels::conv2d_backward_weight(
                                  g, xv, kernel.value().dim(2), geometry));
    }
    if (bias && bias->requires_grad()) tape.accumulate(*bias, kernels::reduce_to_axis(g, 1));
  };
  if (bias) return t.record(std::move(out), {x, kernel, *bias}, rule);
  return t.record(std::move(out), {x, kernel}, rule);
}

Var conv_transpose2d(const Var& x, const Var& kernel,
                     const std::optional<Var>& bias, const ConvGeometry& geometry) {
  Tensor out = kernels::conv_transpose2d(x.value(), kernel.value(), geometry);
  if (bias) kernels::add_channel_bias(out, bias->value());
  Tape& t = x.tape();
  auto rule = [x, kernel, bias, geometry](Tape& tape, const Tensor& g) {
    if (x.requires_grad()) {
      tape.accumulate(x, kernels::conv2d(g, kernel.value(), geometry));
    }
    if (kernel.requires_grad()) {
      // Roles of input and output swap relative to the forward convolution.
      tape.accumulate(kernel, kernels::conv2d_backward_weight(
                                  x.value(), g, kernel.value().dim(2), geometry));
    }
    if (bias && bias->requires_grad()) tape.accumulate(*bias, kernels::reduce_to_axis(g, 1));
  };
  if (bias) return t.record(std::move(out), {x, kernel, *bias}, rule);
  return t.record(std::move(out), {x, kernel}, rule);
}

Var activation(const Var& x, const Activation& act) {
  Tensor out = map(x.value(), [&](double v) { return kernels::activate(act, v); });
  return x.tape().record(std::move(out), {x}, [x, act](Tape& tape, const Tensor& g) {
    const Tensor& in = x.value();
    Tensor dx(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) {
      const double y = kernels::activate(act, in[i]);
      dx[i] = g[i] * kernels::activate_grad(act, in[i], y);
    }
    tape.accumulate(x, dx);
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& tape, const Tensor& g) {
    tape.accumulate(a, g);
    tape.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& tape, const Tensor& g) {
    tape.accumulate(a, g);
    if (b.requires_grad()) tape.accumulate(b, map(g, [](double v) { return -v; }));
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& tape, const Tensor& g) {
    if (a.requires_grad()) {
      Tensor da = g;
      for (std::size_t i = 0; i < da.size(); ++i) da[i] *= b.value()[i];
      tape.accumulate(a, da);
    }
    if (b.requires_grad()) {
      Tensor db = g;
      for (std::size_t i = 0; i < db.size(); ++i) db[i] *= a.value()[i];
      tape.accumulate(b, db);
    }
  });
}

Var maximum(const Var& a, const Var& b) {
  require_same_shape(a, b, "maximum");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], b.value()[i]);
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& tape, const Tensor& g) {
    Tensor da(g.shape()), db(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (a.value()[i] >= b.value()[i]) {
        da[i] = g[i];
      } else {
        db[i] = g[i];
      }
    }
    tape.accumulate(a, da);
    tape.accumulate(b, db);
  });
}

Var scale(const Var& x, double factor) {
  Tensor out = map(x.value(), [factor](double v) { return v * factor; });
  return x.tape().record(std::move(out), {x}, [x, factor](Tape& tape, const Tensor& g) {
    tape.accumulate(x, map(g, [factor](double v) { return v * factor; }));
  });
}

Var add_scalar(const Var& x, double c) {
  Tensor out = map(x.value(), [c](double v) { return v + c; });
  return x.tape().record(std::move(out), {x},
                         [x](Tape& tape, const Tensor& g) { tape.accumulate(x, g); });
}

Var abs(const Var& x) {
  return x.tape().record(kernels::abs(x.value()), {x}, [x](Tape& tape, const Tensor& g) {
    Tensor dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const double v = x.value()[i];
      dx[i] *= v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
    }
    tape.accumulate(x, dx);
  });
}

Var square(const Var& x) {
  Tensor out = map(x.value(), [](double v) { return v * v; });
  return x.tape().record(std::move(out), {x}, [x](Tape& tape, const Tensor& g) {
    Tensor dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= 2.0 * x.value()[i];
    tape.accumulate(x, dx);
  });
}

Var exp(const Var& x) {
  Tensor out = map(x.value(), [](double v) { return std::exp(v); });
  return x.tape().record(std::move(out), {x}, [x](Tape& tape, const Tensor& g) {
    Tensor dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= std::exp(x.value()[i]);
    tape.accumulate(x, dx);
  });
}

Var log(const Var& x) {
  for (double v : x.value().values()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value");
  }
  Tensor out = map(x.value(), [](double v) { return std::log(v); });
  return x.tape().record(std::move(out), {x}, [x](Tape& tape, const Tensor& g) {
    Tensor dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] /= x.value()[i];
    tape.accumulate(x, dx);
  });
}

Var sum(const Var& x) {
  double acc = 0.0;
  for (double v : x.value().values()) acc += v;
  return x.tape().record(Tensor::scalar(acc), {x}, [x](Tape& tape, const Tensor& g) {
    tape.accumulate(x, Tensor(x.shape(), g[0]));
  });
}

Var mean(const Var& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {x}, [x](Tape& tape, const Tensor& g) {
    tape.accumulate(x, g.reshaped(x.shape()));
  });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t count) {
  const Tensor& in = x.value();
  if (in.rank() != 2 || begin + count > in.dim(1) || count == 0) {
    throw DimensionError("slice_cols [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") on axis 1 of " +
                         shape_str(in.shape()));
  }
  const std::size_t rows = in.dim(0), cols = in.dim(1);
  Tensor out(Shape{rows, count});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < count; ++c) out[r * count + c] = in[r * cols + begin + c];
  }
  return x.tape().record(std::move(out), {x},
                         [x, begin, count, rows, cols](Tape& tape, const Tensor& g) {
                           Tensor dx(Shape{rows, cols});
                           for (std::size_t r = 0; r < rows; ++r) {
                             for (std::size_t c = 0; c < count; ++c) {
                               dx[r * cols + begin + c] = g[r * count + c];
                             }
                           }
                           tape.accumulate(x, dx);
                         });
}

}  // namespace civet
