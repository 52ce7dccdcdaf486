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
#include <map>
#include <string>
#include <vector>

#include "civet/autodiff.hpp"
#include "civet/tensor.hpp"

namespace civet {

enum class LayerKind { affine, conv2d, conv_transpose2d, activation, reshape };

std::string layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(const std::string& name);

/// One layer of an encoder body or a decoder. Only the fields relevant to
/// `kind` are read.
struct LayerSpec {
  LayerKind kind = LayerKind::affine;
  std::size_t out_features = 0;  // affine
  std::size_t out_channels = 0;  // conv2d, conv_transpose2d
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  Activation act{};  // activation
  Shape shape;       // reshape target, per example

  static LayerSpec affine(std::size_t out);
  static LayerSpec conv(std::size_t out_channels, std::size_t kernel,
                        std::size_t stride, std::size_t padding);
  static LayerSpec conv_transpose(std::size_t out_channels, std::size_t kernel,
                                  std::size_t stride, std::size_t padding);
  static LayerSpec activation(ActivationKind kind, double slope = 0.01);
  static LayerSpec reshape(Shape shape);

  bool has_params() const {
    return kind == LayerKind::affine || kind == LayerKind::conv2d ||
           kind == LayerKind::conv_transpose2d;
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// A VAE layout. The encoder body maps the input to a flat feature vector;
/// two affine heads of width latent_dim produce the mean and the
/// log-variance. The decoder maps latent_dim to output_size values.
struct ArchitectureSpec {
  std::string name;
  Shape input_shape;  // per example, e.g. {8} or {1, 28, 28}
  std::size_t latent_dim = 0;
  std::vector<LayerSpec> encoder;
  std::vector<LayerSpec> decoder;

  std::size_t input_size() const { return shape_size(input_shape); }
  /// Flat width the decoder must produce (equals input_size()).
  std::size_t output_size() const { return input_size(); }

  /// Checks every layer's geometry; throws DimensionError or DomainError.
  void validate() const;

  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

/// Per-example shape after each layer, starting with `in`.
std::vector<Shape> infer_shapes(const std::vector<LayerSpec>& layers, const Shape& in);

/// Desk-scale presets: "synthetic" (8 -> 128 -> 2x4), "mnist" (784 -> 256 ->
/// 64 -> 2x16) and "mnist-conv" (two stride-2 convolutions).
ArchitectureSpec preset_architecture(const std::string& name);
std::vector<std::string> preset_names();

struct ParamEntry {
  std::string name;
  Tensor value;
};

/// Named parameter tensors in a fixed manifest order.
class ParameterSet {
 public:
  void add(std::string name, Tensor value);
  bool contains(const std::string& name) const;
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  const std::vector<ParamEntry>& entries() const noexcept { return entries_; }
  std::vector<ParamEntry>& entries() noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const;

  /// FNV-1a over names, shapes and raw value bytes.
  std::uint64_t checksum() const;

  friend bool operator==(const ParameterSet&, const ParameterSet&);

 private:
  std::vector<ParamEntry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Manifest of (name, shape) an architecture requires, in canonical order.
std::vector<std::pair<std::string, Shape>> parameter_manifest(const ArchitectureSpec& arch);

/// Fresh parameters: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0.
ParameterSet init_parameters(const ArchitectureSpec& arch, std::uint64_t seed);

/// Parameters registered on a tape.
class BoundParams {
 public:
  BoundParams(Tape& tape, const ParameterSet& params, bool requires_grad);

  const Var& operator[](const std::string& name) const;
  Tape& tape() const { return *tape_; }
  const std::map<std::string, Var>& vars() const { return vars_; }

  /// Gradients of every parameter after tape.backward(), as a ParameterSet.
  ParameterSet gradients(const ParameterSet& like) const;

 private:
  Tape* tape_;
  std::map<std::string, Var> vars_;
};

/// Runs `layers` on a batched input [B x ...]; parameters are looked up as
/// "<prefix>.<layer index>.weight|bias".
Var forward_layers(const std::vector<LayerSpec>& layers, const BoundParams& params,
                   const std::string& prefix, Var x);

}  // namespace civet
