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
#include <deque>
#include <functional>
#include <initializer_list>
#include <optional>

#include "civet/kernels.hpp"
#include "civet/tensor.hpp"

namespace civet {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool requires_grad() const;
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode computation tape. Nodes are appended in evaluation order, so
/// the node list is always topologically sorted. One tape per thread.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op result. The backward rule is dropped when no input
  /// requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);

  const Tensor& value(const Var& v) const;
  bool requires_grad(const Var& v) const;

  /// Gradient accumulated on v by the last backward(); zeros if v was not reached.
  Tensor grad(const Var& v) const;

  /// Adds g into the gradient buffer of v (no-op for constants).
  void accumulate(const Var& v, const Tensor& g);

  /// Seeds d(root)/d(root) = 1 and runs every recorded rule in reverse order.
  void backward(const Var& root);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };

  Node& node(const Var& v);
  const Node& node(const Var& v) const;

  std::deque<Node> nodes_;
};

using kernels::Activation;
using kernels::ActivationKind;
using kernels::ConvGeometry;

// Differentiable ops. All operands of one op must live on the same tape.

Var affine(const Var& x, const Var& weight, const std::optional<Var>& bias);
Var conv2d(const Var& x, const Var& kernel, const std::optional<Var>& bias,
           const ConvGeometry& geometry);
Var conv_transpose2d(const Var& x, const Var& kernel,
                     const std::optional<Var>& bias, const ConvGeometry& geometry);
Var activation(const Var& x, const Activation& act);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// Elementwise max; ties route the gradient to a.
Var maximum(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var add_scalar(const Var& x, double c);
Var abs(const Var& x);
Var square(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
Var sum(const Var& x);
Var mean(const Var& x);
Var reshape(const Var& x, Shape shape);
/// Columns [begin, begin + count) of a rank-2 tensor.
Var slice_cols(const Var& x, std::size_t begin, std::size_t count);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double c, const Var& x) { return scale(x, c); }

}  // namespace civet
