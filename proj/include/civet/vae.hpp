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
#include <filesystem>
#include <string>

#include "civet/autodiff.hpp"
#include "civet/network.hpp"

namespace civet {

struct Model {
  ArchitectureSpec arch;
  ParameterSet params;

  static Model create(ArchitectureSpec arch, std::uint64_t seed);
};

/// Diagonal Gaussian over the latent space; sigma > 0.
struct LatentDistribution {
  Tensor mu;
  Tensor sigma;
};

struct EncoderOutput {
  Var mu;
  Var logvar;
  Var sigma;  // exp(0.5 * logvar)
};

/// Number of examples in x: a single example has the arch's input rank.
std::size_t batch_size_of(const ArchitectureSpec& arch, const Tensor& x);

EncoderOutput encode(const ArchitectureSpec& arch, const BoundParams& params, const Var& x);
/// z [B x d_l] -> reconstruction flattened to [B x d_out].
Var decode(const ArchitectureSpec& arch, const BoundParams& params, const Var& z);
/// z = mu + sigma * noise.
Var reparameterize(const Var& mu, const Var& sigma, const Tensor& noise);

/// Independent N(0, 1) draws from a seeded generator.
Tensor standard_normal(Shape shape, std::uint64_t seed);

/// Value-level forward passes. Shapes follow the input: [d_in] gives [d_l],
/// [B x d_in] gives [B x d_l].
LatentDistribution encode(const Model& model, const Tensor& x);
Tensor reparameterize(const LatentDistribution& dist, std::uint64_t seed);
Tensor decode(const Model& model, const Tensor& z);

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout: "CVCK", u32 version, u64 header length, UTF-8 JSON header
/// (architecture + ordered (name, shape) manifest), then little-endian f64
/// buffers in manifest order.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);
/// As above, and the stored architecture must equal `expected`.
Model load_checkpoint(const std::filesystem::path& path, const ArchitectureSpec& expected);

std::string architecture_to_json(const ArchitectureSpec& arch);
ArchitectureSpec architecture_from_json(const std::string& text);

}  // namespace civet
