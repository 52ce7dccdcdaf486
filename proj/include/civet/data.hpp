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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "civet/tensor.hpp"
#include "civet/train_config.hpp"

namespace civet {

/// Examples stacked row-wise in a [N x d_in] tensor, values in [0, 1].
struct Dataset {
  Tensor examples;
  Shape example_shape;
  std::string split;
  std::string source;

  std::size_t size() const { return examples.empty() ? 0 : examples.dim(0); }
  std::size_t example_size() const { return shape_size(example_shape); }
  /// Row i as a [d_in] tensor.
  Tensor example(std::size_t i) const;
  /// Rows at `indices` as a [k x d_in] tensor.
  Tensor gather(const std::vector<std::size_t>& indices) const;
};

/// IDX image file (magic 0x00000803, big-endian u32 dims, u8 pixels); pixels
/// are scaled by 1/255. Throws ParseError with the failing byte offset.
Dataset load_idx(const std::filesystem::path& images, std::optional<std::size_t> limit = {});

/// Writes images [N x rows x cols] with values in [0, 1] rounded to bytes.
void write_idx(const std::filesystem::path& path, const Tensor& images);

/// Points on a smooth one-parameter curve:
/// x_d = clamp(0.5 + 0.4 sin(omega_d t + phi_d), 0, 1), t ~ U[0, 2 pi).
/// omega_d and phi_d are drawn from `seed`; t from the same stream.
Dataset synthetic_dataset(std::size_t n, std::size_t d_in, std::uint64_t seed);

/// Everything a CLI run needs: the training protocol plus data and output
/// locations.
struct RunConfig {
  TrainConfig train;
  std::string dataset = "synthetic";  // synthetic | idx
  std::string train_images;
  std::string test_images;
  std::size_t train_n = 1000;
  std::size_t test_n = 200;
  std::size_t synthetic_dim = 8;
  std::uint64_t data_seed = 1;
  std::string profile = "desk";  // desk caps idx loads at train_n / test_n
  std::string arch = "synthetic";
  std::string output_dir = "out";
  double cert_delta = 0.05;
  std::vector<std::string> attacks{"pgd", "lsa", "mda"};
  int attack_steps = 10;
  double attack_step_frac = 0.1;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Parses "key = value" lines; '#' starts a comment. Unknown or duplicate
/// keys and unparsable values throw ConfigError with the line number.
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config(const std::filesystem::path& path);

/// Applies one "key=value" assignment on top of `config`.
void apply_override(RunConfig& config, const std::string& assignment);

/// Serializes every key; parse_config_text(to_config_text(c)) == c.
std::string to_config_text(const RunConfig& config);

std::vector<std::string> config_keys();

/// Loads the train or test split described by the config.
Dataset load_split(const RunConfig& config, const std::string& split);

}  // namespace civet
