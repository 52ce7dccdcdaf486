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

#include "civet/vae.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

#include <nlohmann/json.hpp>

#include "civet/errors.hpp"

namespace civet {

using nlohmann::json;

Model Model::create(ArchitectureSpec arch, std::uint64_t seed) {
  arch.validate();
  ParameterSet params = init_parameters(arch, seed);
  return Model{std::move(arch), std::move(params)};
}

std::size_t batch_size_of(const ArchitectureSpec& arch, const Tensor& x) {
  if (x.rank() == arch.input_shape.size() && x.shape() == arch.input_shape) return 1;
  if (x.empty() || x.size() % arch.input_size() != 0 || x.dim(0) * arch.input_size() != x.size()) {
    throw DimensionError("input " + shape_str(x.shape()) + " does not hold examples of shape " +
                         shape_str(arch.input_shape));
  }
  return x.dim(0);
}

namespace {

Shape batched(std::size_t batch, const Shape& per_example) {
  Shape s{batch};
  s.insert(s.end(), per_example.begin(), per_example.end());
  return s;
}

}  // namespace

EncoderOutput encode(const ArchitectureSpec& arch, const BoundParams& params, const Var& x) {
  const std::size_t batch = batch_size_of(arch, x.value());
  Var h = reshape(x, batched(batch, arch.input_shape));
  h = forward_layers(arch.encoder, params, "enc", h);
  Var mu = affine(h, params["enc.mu.weight"], params["enc.mu.bias"]);
  Var logvar = affine(h, params["enc.logvar.weight"], params["enc.logvar.bias"]);
  Var sigma = activation(scale(logvar, 0.5), Activation{ActivationKind::exp});
  return EncoderOutput{mu, logvar, sigma};
}

Var decode(const ArchitectureSpec& arch, const BoundParams& params, const Var& z) {
  const Tensor& zv = z.value();
  if (zv.size() % arch.latent_dim != 0) {
    throw DimensionError("latent " + shape_str(zv.shape()) + " is not a multiple of width " +
                         std::to_string(arch.latent_dim));
  }
  const std::size_t batch = zv.size() / arch.latent_dim;
  Var y = forward_layers(arch.decoder, params, "dec", reshape(z, Shape{batch, arch.latent_dim}));
  return reshape(y, Shape{batch, arch.output_size()});
}

Var reparameterize(const Var& mu, const Var& sigma, const Tensor& noise) {
  return add(mu, mul(sigma, mu.tape().constant(noise.reshaped(sigma.shape()))));
}

Tensor standard_normal(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor out(std::move(shape));
  for (double& v : out.values()) v = dist(rng);
  return out;
}

LatentDistribution encode(const Model& model, const Tensor& x) {
  Tape tape;
  BoundParams params(tape, model.params, false);
  EncoderOutput out = encode(model.arch, params, tape.constant(x));
  LatentDistribution dist{out.mu.value(), out.sigma.value()};
  if (x.shape() == model.arch.input_shape) {
    const Shape d{model.arch.latent_dim};
    dist.mu = dist.mu.reshaped(d);
    dist.sigma = dist.sigma.reshaped(d);
  }
  return dist;
}

Tensor reparameterize(const LatentDistribution& dist, std::uint64_t seed) {
  Tensor noise = standard_normal(dist.mu.shape(), seed);
  Tensor z = dist.mu;
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += dist.sigma[i] * noise[i];
  return z;
}

Tensor decode(const Model& model, const Tensor& z) {
  Tape tape;
  BoundParams params(tape, model.params, false);
  Tensor y = decode(model.arch, params, tape.constant(z)).value();
  if (z.rank() == 1) y = y.reshaped(Shape{model.arch.output_size()});
  return y;
}

// ---------------------------------------------------------------------------
// Architecture <-> JSON

namespace {

json layer_to_json(const LayerSpec& l) {
  json j;
  j["kind"] = layer_kind_name(l.kind);
  switch (l.kind) {
    case LayerKind::affine:
      j["out"] = l.out_features;
      break;
    case LayerKind::conv2d:
    case LayerKind::conv_transpose2d:
      j["out_channels"] = l.out_channels;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      break;
    case LayerKind::activation:
      j["act"] = kernels::activation_name(l.act.kind);
      if (l.act.kind == ActivationKind::leaky_relu) j["slope"] = l.act.slope;
      break;
    case LayerKind::reshape:
      j["shape"] = l.shape;
      break;
  }
  return j;
}

LayerSpec layer_from_json(const json& j) {
  const LayerKind kind = parse_layer_kind(j.at("kind").get<std::string>());
  switch (kind) {
    case LayerKind::affine:
      return LayerSpec::affine(j.at("out").get<std::size_t>());
    case LayerKind::conv2d:
    case LayerKind::conv_transpose2d: {
      LayerSpec l = LayerSpec::conv(j.at("out_channels").get<std::size_t>(),
                                    j.at("kernel").get<std::size_t>(),
                                    j.at("stride").get<std::size_t>(),
                                    j.at("padding").get<std::size_t>());
      l.kind = kind;
      return l;
    }
    case LayerKind::activation:
      return LayerSpec::activation(kernels::parse_activation(j.at("act").get<std::string>()),
                                   j.value("slope", 0.01));
    case LayerKind::reshape:
      return LayerSpec::reshape(j.at("shape").get<Shape>());
  }
  throw DomainError("unreachable layer kind");
}

json arch_json(const ArchitectureSpec& a) {
  json j;
  j["name"] = a.name;
  j["input_shape"] = a.input_shape;
  j["latent_dim"] = a.latent_dim;
  j["encoder"] = json::array();
  for (const auto& l : a.encoder) j["encoder"].push_back(layer_to_json(l));
  j["decoder"] = json::array();
  for (const auto& l : a.decoder) j["decoder"].push_back(layer_to_json(l));
  return j;
}

ArchitectureSpec arch_from(const json& j) {
  ArchitectureSpec a;
  a.name = j.at("name").get<std::string>();
  a.input_shape = j.at("input_shape").get<Shape>();
  a.latent_dim = j.at("latent_dim").get<std::size_t>();
  for (const auto& l : j.at("encoder")) a.encoder.push_back(layer_from_json(l));
  for (const auto& l : j.at("decoder")) a.decoder.push_back(layer_from_json(l));
  return a;
}

template <class T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
  }
}

template <class T>
T get_le(const std::string& in, std::size_t offset) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  }
  return static_cast<T>(v);
}

constexpr std::array<char, 4> kMagic{'C', 'V', 'C', 'K'};

}  // namespace

std::string architecture_to_json(const ArchitectureSpec& arch) { return arch_json(arch).dump(); }

ArchitectureSpec architecture_from_json(const std::string& text) {
  ArchitectureSpec a = arch_from(json::parse(text));
  a.validate();
  return a;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  json header;
  header["architecture"] = arch_json(model.arch);
  header["manifest"] = json::array();
  for (const auto& e : model.params.entries()) {
    header["manifest"].push_back(json{{"name", e.name}, {"shape", e.value.shape()}});
  }
  const std::string text = header.dump();

  std::string bytes(kMagic.begin(), kMagic.end());
  put_le<std::uint32_t>(bytes, kCheckpointVersion);
  put_le<std::uint64_t>(bytes, text.size());
  bytes += text;
  for (const auto& e : model.params.entries()) {
    for (double v : e.value.values()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      put_le<std::uint64_t>(bytes, bits);
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointErrc::io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointErrc::io, "write failed for " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrc::io, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  constexpr std::size_t preamble = 4 + 4 + 8;
  if (bytes.size() < preamble || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw CheckpointError(CheckpointErrc::corrupt_header,
                          path.string() + ": missing CVCK magic or truncated preamble");
  }
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrc::version_mismatch,
                          path.string() + ": format version " + std::to_string(version) +
                              ", expected " + std::to_string(kCheckpointVersion));
  }
  const auto header_len = get_le<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - preamble) {
    throw CheckpointError(CheckpointErrc::corrupt_header, path.string() + ": truncated header");
  }

  Model model;
  std::vector<std::pair<std::string, Shape>> manifest;
  try {
    const json header = json::parse(bytes.substr(preamble, header_len));
    model.arch = arch_from(header.at("architecture"));
    for (const auto& e : header.at("manifest")) {
      manifest.emplace_back(e.at("name").get<std::string>(), e.at("shape").get<Shape>());
    }
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointErrc::corrupt_header,
                          path.string() + ": unreadable header: " + e.what());
  }
  try {
    if (parameter_manifest(model.arch) != manifest) {
      throw CheckpointError(CheckpointErrc::shape_mismatch,
                            path.string() + ": manifest does not match its architecture");
    }
  } catch (const CheckpointError&) {
    throw;
  } catch (const Error& e) {
    throw CheckpointError(CheckpointErrc::corrupt_header,
                          path.string() + ": invalid architecture: " + e.what());
  }

  std::size_t offset = preamble + header_len;
  for (const auto& [name, shape] : manifest) {
    const std::size_t n = shape_size(shape);
    if (bytes.size() - offset < n * 8) {
      throw CheckpointError(CheckpointErrc::corrupt_header,
                            path.string() + ": payload truncated in '" + name + "'");
    }
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i, offset += 8) {
      const auto bits = get_le<std::uint64_t>(bytes, offset);
      std::memcpy(&values[i], &bits, sizeof bits);
    }
    model.params.add(name, Tensor(shape, std::move(values)));
  }
  if (offset != bytes.size()) {
    throw CheckpointError(CheckpointErrc::corrupt_header,
                          path.string() + ": trailing bytes after payload");
  }
  return model;
}

Model load_checkpoint(const std::filesystem::path& path, const ArchitectureSpec& expected) {
  Model model = load_checkpoint(path);
  if (!(model.arch == expected)) {
    const auto want = parameter_manifest(expected);
    std::string detail = "architecture differs";
    const auto& have = model.params.entries();
    for (std::size_t i = 0; i < std::min(want.size(), have.size()); ++i) {
      if (want[i].first != have[i].name || want[i].second != have[i].value.shape()) {
        detail = "'" + have[i].name + "' is " + shape_str(have[i].value.shape()) +
                 ", expected '" + want[i].first + "' " + shape_str(want[i].second);
        break;
      }
    }
    throw CheckpointError(CheckpointErrc::shape_mismatch, path.string() + ": " + detail);
  }
  return model;
}

}  // namespace civet
