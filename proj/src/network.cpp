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

#include "civet/network.hpp"

#include <cmath>
#include <cstring>
#include <random>

#include "civet/errors.hpp"

namespace civet {

std::string layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::affine: return "affine";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::conv_transpose2d: return "conv_transpose2d";
    case LayerKind::activation: return "activation";
    case LayerKind::reshape: return "reshape";
  }
  return "unknown";
}

LayerKind parse_layer_kind(const std::string& name) {
  if (name == "affine") return LayerKind::affine;
  if (name == "conv2d") return LayerKind::conv2d;
  if (name == "conv_transpose2d") return LayerKind::conv_transpose2d;
  if (name == "activation") return LayerKind::activation;
  if (name == "reshape") return LayerKind::reshape;
  throw DomainError("unknown layer kind '" + name + "'");
}

LayerSpec LayerSpec::affine(std::size_t out) {
  LayerSpec l;
  l.kind = LayerKind::affine;
  l.out_features = out;
  return l;
}

LayerSpec LayerSpec::conv(std::size_t out_channels, std::size_t kernel,
                          std::size_t stride, std::size_t padding) {
  LayerSpec l;
  l.kind = LayerKind::conv2d;
  l.out_channels = out_channels;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  return l;
}

LayerSpec LayerSpec::conv_transpose(std::size_t out_channels, std::size_t kernel,
                                    std::size_t stride, std::size_t padding) {
  LayerSpec l = conv(out_channels, kernel, stride, padding);
  l.kind = LayerKind::conv_transpose2d;
  return l;
}

LayerSpec LayerSpec::activation(ActivationKind kind, double slope) {
  LayerSpec l;
  l.kind = LayerKind::activation;
  l.act = Activation{kind, slope};
  return l;
}

LayerSpec LayerSpec::reshape(Shape shape) {
  LayerSpec l;
  l.kind = LayerKind::reshape;
  l.shape = std::move(shape);
  return l;
}

std::vector<Shape> infer_shapes(const std::vector<LayerSpec>& layers, const Shape& in) {
  std::vector<Shape> shapes{in};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const Shape& cur = shapes.back();
    const std::string where = "layer " + std::to_string(i) + " (" +
                              layer_kind_name(l.kind) + ")";
    switch (l.kind) {
      case LayerKind::affine:
        if (cur.size() != 1) {
          throw DimensionError(where + " expects a flat input, got " + shape_str(cur));
        }
        if (l.out_features == 0) throw DimensionError(where + " has zero width");
        shapes.push_back(Shape{l.out_features});
        break;
      case LayerKind::conv2d:
      case LayerKind::conv_transpose2d: {
        if (cur.size() != 3) {
          throw DimensionError(where + " expects [C x H x W] input, got " + shape_str(cur));
        }
        if (l.out_channels == 0 || l.kernel == 0) {
          throw DimensionError(where + " has zero channels or kernel");
        }
        const ConvGeometry g{l.stride, l.padding};
        if (l.kind == LayerKind::conv2d) {
          shapes.push_back(Shape{l.out_channels, kernels::conv_out_dim(cur[1], l.kernel, g),
                                 kernels::conv_out_dim(cur[2], l.kernel, g)});
        } else {
          shapes.push_back(Shape{l.out_channels,
                                 kernels::conv_transpose_out_dim(cur[1], l.kernel, g),
                                 kernels::conv_transpose_out_dim(cur[2], l.kernel, g)});
        }
        break;
      }
      case LayerKind::activation:
        shapes.push_back(cur);
        break;
      case LayerKind::reshape:
        if (shape_size(l.shape) != shape_size(cur)) {
          throw DimensionError(where + " cannot reshape " + shape_str(cur) + " to " +
                               shape_str(l.shape));
        }
        shapes.push_back(l.shape);
        break;
    }
  }
  return shapes;
}

void ArchitectureSpec::validate() const {
  if (input_shape.empty() || shape_size(input_shape) == 0) {
    throw DimensionError("architecture '" + name + "' has an empty input shape");
  }
  if (latent_dim == 0) throw DimensionError("latent dimension must be positive");
  const auto enc = infer_shapes(encoder, input_shape);
  if (enc.back().size() != 1) {
    throw DimensionError("encoder body must end flat, got " + shape_str(enc.back()));
  }
  const auto dec = infer_shapes(decoder, Shape{latent_dim});
  if (shape_size(dec.back()) != output_size()) {
    throw DimensionError("decoder output " + shape_str(dec.back()) + " has " +
                         std::to_string(shape_size(dec.back())) + " values, expected " +
                         std::to_string(output_size()));
  }
}

ArchitectureSpec preset_architecture(const std::string& name) {
  using L = LayerSpec;
  using A = ActivationKind;
  ArchitectureSpec a;
  a.name = name;
  if (name == "synthetic") {
    a.input_shape = {8};
    a.latent_dim = 4;
    a.encoder = {L::affine(128), L::activation(A::relu)};
    a.decoder = {L::affine(128), L::activation(A::relu), L::affine(8),
                 L::activation(A::sigmoid)};
  } else if (name == "mnist") {
    a.input_shape = {784};
    a.latent_dim = 16;
    a.encoder = {L::affine(256), L::activation(A::relu), L::affine(64),
                 L::activation(A::relu)};
    a.decoder = {L::affine(64),  L::activation(A::relu), L::affine(256),
                 L::activation(A::relu), L::affine(784), L::activation(A::sigmoid)};
  } else if (name == "mnist-conv") {
    a.input_shape = {1, 28, 28};
    a.latent_dim = 16;
    a.encoder = {L::conv(16, 5, 2, 1), L::activation(A::relu), L::conv(32, 5, 2, 1),
                 L::activation(A::relu), L::reshape({32 * 6 * 6})};
    a.decoder = {L::affine(32 * 7 * 7),
                 L::activation(A::relu),
                 L::reshape({32, 7, 7}),
                 L::conv_transpose(16, 4, 2, 1),
                 L::activation(A::relu),
                 L::conv_transpose(1, 4, 2, 1),
                 L::activation(A::sigmoid)};
  } else {
    throw DomainError("unknown architecture preset '" + name + "'");
  }
  a.validate();
  return a;
}

std::vector<std::string> preset_names() { return {"synthetic", "mnist", "mnist-conv"}; }

void ParameterSet::add(std::string name, Tensor value) {
  if (index_.count(name)) throw UsageError("duplicate parameter name '" + name + "'");
  index_[name] = entries_.size();
  entries_.push_back(ParamEntry{std::move(name), std::move(value)});
}

bool ParameterSet::contains(const std::string& name) const { return index_.count(name) > 0; }

const Tensor& ParameterSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("no parameter named '" + name + "'");
  return entries_[it->second].value;
}

Tensor& ParameterSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("no parameter named '" + name + "'");
  return entries_[it->second].value;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

std::uint64_t ParameterSet::checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& e : entries_) {
    mix(e.name.data(), e.name.size());
    for (std::size_t d : e.value.shape()) {
      const std::uint64_t d64 = d;
      mix(&d64, sizeof d64);
    }
    mix(e.value.data(), e.value.size() * sizeof(double));
  }
  return h;
}

bool operator==(const ParameterSet& a, const ParameterSet& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    const auto& x = a.entries_[i];
    const auto& y = b.entries_[i];
    if (x.name != y.name || x.value.shape() != y.value.shape()) return false;
    if (std::memcmp(x.value.data(), y.value.data(), x.value.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

namespace {

void append_layer_params(std::vector<std::pair<std::string, Shape>>& out,
                         const std::string& prefix, const std::vector<LayerSpec>& layers,
                         const std::vector<Shape>& shapes) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const Shape& in = shapes[i];
    const std::string base = prefix + "." + std::to_string(i) + ".";
    switch (l.kind) {
      case LayerKind::affine:
        out.emplace_back(base + "weight", Shape{l.out_features, in[0]});
        out.emplace_back(base + "bias", Shape{l.out_features});
        break;
      case LayerKind::conv2d:
        out.emplace_back(base + "weight", Shape{l.out_channels, in[0], l.kernel, l.kernel});
        out.emplace_back(base + "bias", Shape{l.out_channels});
        break;
      case LayerKind::conv_transpose2d:
        out.emplace_back(base + "weight", Shape{in[0], l.out_channels, l.kernel, l.kernel});
        out.emplace_back(base + "bias", Shape{l.out_channels});
        break;
      default:
        break;
    }
  }
}

}  // namespace

std::vector<std::pair<std::string, Shape>> parameter_manifest(const ArchitectureSpec& arch) {
  arch.validate();
  std::vector<std::pair<std::string, Shape>> out;
  const auto enc = infer_shapes(arch.encoder, arch.input_shape);
  append_layer_params(out, "enc", arch.encoder, enc);
  const std::size_t feat = enc.back()[0];
  out.emplace_back("enc.mu.weight", Shape{arch.latent_dim, feat});
  out.emplace_back("enc.mu.bias", Shape{arch.latent_dim});
  out.emplace_back("enc.logvar.weight", Shape{arch.latent_dim, feat});
  out.emplace_back("enc.logvar.bias", Shape{arch.latent_dim});
  append_layer_params(out, "dec", arch.decoder, infer_shapes(arch.decoder, {arch.latent_dim}));
  return out;
}

ParameterSet init_parameters(const ArchitectureSpec& arch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParameterSet params;
  const auto manifest = parameter_manifest(arch);
  for (const auto& [name, shape] : manifest) {
    Tensor t(shape);
    const bool is_bias = name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0;
    if (!is_bias) {
      // fan_in: weight axis 1 times the kernel area; for transposed conv the
      // input channels sit on axis 0.
      std::size_t fan_in = shape.size() == 2 ? shape[1] : shape[1] * shape[2] * shape[3];
      const bool transposed = shape.size() == 4 && name.rfind("dec.", 0) == 0 &&
                              !arch.decoder.empty() &&
                              arch.decoder[std::stoul(name.substr(4))].kind ==
                                  LayerKind::conv_transpose2d;
      if (transposed) fan_in = shape[0] * shape[2] * shape[3];
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (double& v : t.values()) v = dist(rng);
    }
    params.add(name, std::move(t));
  }
  return params;
}

BoundParams::BoundParams(Tape& tape, const ParameterSet& params, bool requires_grad)
    : tape_(&tape) {
  for (const auto& e : params.entries()) {
    vars_.emplace(e.name, tape.leaf(e.value, requires_grad));
  }
}

const Var& BoundParams::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw UsageError("no bound parameter named '" + name + "'");
  return it->second;
}

ParameterSet BoundParams::gradients(const ParameterSet& like) const {
  ParameterSet out;
  for (const auto& e : like.entries()) out.add(e.name, tape_->grad((*this)[e.name]));
  return out;
}

Var forward_layers(const std::vector<LayerSpec>& layers, const BoundParams& params,
                   const std::string& prefix, Var x) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const std::string base = prefix + "." + std::to_string(i) + ".";
    switch (l.kind) {
      case LayerKind::affine:
        x = affine(x, params[base + "weight"], params[base + "bias"]);
        break;
      case LayerKind::conv2d:
        x = conv2d(x, params[base + "weight"], params[base + "bias"],
                   ConvGeometry{l.stride, l.padding});
        break;
      case LayerKind::conv_transpose2d:
        x = conv_transpose2d(x, params[base + "weight"], params[base + "bias"],
                             ConvGeometry{l.stride, l.padding});
        break;
      case LayerKind::activation:
        x = activation(x, l.act);
        break;
      case LayerKind::reshape: {
        Shape s{x.shape()[0]};
        s.insert(s.end(), l.shape.begin(), l.shape.end());
        x = reshape(x, std::move(s));
        break;
      }
    }
  }
  return x;
}

}  // namespace civet
