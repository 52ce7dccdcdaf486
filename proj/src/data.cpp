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

#include "civet/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "civet/errors.hpp"
#include "civet/network.hpp"

namespace civet {

Tensor Dataset::example(std::size_t i) const {
  return examples.rows(i, 1).reshaped(Shape{example_size()});
}

Tensor Dataset::gather(const std::vector<std::size_t>& indices) const {
  const std::size_t d = example_size();
  Tensor out(Shape{indices.size(), d});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= size()) throw DimensionError("example index out of range");
    std::copy_n(examples.data() + indices[r] * d, d, out.data() + r * d);
  }
  return out;
}

// ---------------------------------------------------------------------------
// IDX

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;

std::uint32_t read_be32(const std::string& bytes, std::size_t offset) {
  if (bytes.size() < offset + 4) {
    throw ParseError(ParseError::Kind::truncated, bytes.size(),
                     "file ends inside the header field at offset " + std::to_string(offset));
  }
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  }
  return v;
}

void write_be32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) {
    out.push_back(static_cast<char>((v >> shift) & 0xff));
  }
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, std::optional<std::size_t> limit) {
  std::ifstream in(images, std::ios::binary);
  if (!in) throw ParseError(ParseError::Kind::io, 0, "cannot open " + images.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != kIdxImageMagic) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", magic);
    throw ParseError(ParseError::Kind::bad_magic, 0,
                     std::string("expected IDX image magic 0x00000803, found ") + buf);
  }
  const std::size_t count = read_be32(bytes, 4);
  const std::size_t rows = read_be32(bytes, 8);
  const std::size_t cols = read_be32(bytes, 12);
  if (count == 0 || rows == 0 || cols == 0) {
    throw ParseError(ParseError::Kind::bad_dims, 4, "IDX file declares an empty image set");
  }
  const std::size_t keep = limit ? std::min(*limit, count) : count;
  if (keep == 0) throw ParseError(ParseError::Kind::bad_dims, 4, "limit of zero images");
  const std::size_t pixels = rows * cols;
  constexpr std::size_t header = 16;
  if (bytes.size() < header + keep * pixels) {
    throw ParseError(ParseError::Kind::truncated, bytes.size(),
                     "payload ends early: need " + std::to_string(header + keep * pixels) +
                         " bytes for " + std::to_string(keep) + " images");
  }
  Tensor data(Shape{keep, pixels});
  for (std::size_t i = 0; i < keep * pixels; ++i) {
    data[i] = static_cast<unsigned char>(bytes[header + i]) / 255.0;
  }
  return Dataset{std::move(data), Shape{pixels}, "", "idx:" + images.string()};
}

void write_idx(const std::filesystem::path& path, const Tensor& images) {
  if (images.rank() != 3) {
    throw DimensionError("write_idx expects [N x rows x cols], got " + shape_str(images.shape()));
  }
  std::string bytes;
  write_be32(bytes, kIdxImageMagic);
  for (std::size_t d : images.shape()) write_be32(bytes, static_cast<std::uint32_t>(d));
  for (double v : images.values()) {
    bytes.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Dataset synthetic_dataset(std::size_t n, std::size_t d_in, std::uint64_t seed) {
  if (n == 0 || d_in == 0) throw DimensionError("synthetic dataset needs n > 0 and d_in > 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> freq(1.0, 3.0);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::vector<double> omega(d_in), phase(d_in);
  for (std::size_t d = 0; d < d_in; ++d) {
    omega[d] = freq(rng);
    phase[d] = angle(rng);
  }
  Tensor data(Shape{n, d_in});
  for (std::size_t i = 0; i < n; ++i) {
    const double t = angle(rng);
    for (std::size_t d = 0; d < d_in; ++d) {
      data[i * d_in + d] = std::clamp(0.5 + 0.4 * std::sin(omega[d] * t + phase[d]), 0.0, 1.0);
    }
  }
  return Dataset{std::move(data), Shape{d_in}, "", "synthetic:seed=" + std::to_string(seed)};
}

// ---------------------------------------------------------------------------
// Run configuration

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("'" + v + "' is not a number", 0);
  }
  return out;
}

template <class Int>
Int to_int(const std::string& v) {
  Int out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("'" + v + "' is not an integer", 0);
  }
  return out;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
std::string join(const std::vector<T>& items, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    out += f(items[i]);
  }
  return out;
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class F>
Key dbl(std::string name, F field) {
  return Key{std::move(name),
             [field](RunConfig& c, const std::string& v) { field(c) = to_double(v); },
             [field](const RunConfig& c) { return fmt_double(field(const_cast<RunConfig&>(c))); }};
}

template <class Int, class F>
Key integer(std::string name, F field) {
  return Key{std::move(name),
             [field](RunConfig& c, const std::string& v) { field(c) = to_int<Int>(v); },
             [field](const RunConfig& c) {
               return std::to_string(field(const_cast<RunConfig&>(c)));
             }};
}

template <class F>
Key text(std::string name, F field) {
  return Key{std::move(name), [field](RunConfig& c, const std::string& v) { field(c) = v; },
             [field](const RunConfig& c) { return field(const_cast<RunConfig&>(c)); }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back(Key{"method",
                    [](RunConfig& c, const std::string& v) { c.train.method = parse_method(v); },
                    [](const RunConfig& c) { return method_name(c.train.method); }});
    k.push_back(dbl("epsilon", [](RunConfig& c) -> double& { return c.train.epsilon; }));
    k.push_back(Key{"deltas",
                    [](RunConfig& c, const std::string& v) {
                      c.train.deltas.clear();
                      for (const auto& s : split_list(v)) c.train.deltas.push_back(to_double(s));
                    },
                    [](const RunConfig& c) {
                      return join<double>(c.train.deltas, [](const double& d) { return fmt_double(d); });
                    }});
    k.push_back(dbl("lr", [](RunConfig& c) -> double& { return c.train.learning_rate; }));
    k.push_back(dbl("weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; }));
    k.push_back(integer<int>("epochs", [](RunConfig& c) -> int& { return c.train.epochs; }));
    k.push_back(integer<int>("batch_size", [](RunConfig& c) -> int& { return c.train.batch_size; }));
    k.push_back(integer<int>("warmup_standard_iters",
                             [](RunConfig& c) -> int& { return c.train.warmup_standard_iters; }));
    k.push_back(integer<int>("warmup_ramp_iters",
                             [](RunConfig& c) -> int& { return c.train.warmup_ramp_iters; }));
    k.push_back(integer<int>("pgd_steps", [](RunConfig& c) -> int& { return c.train.pgd_steps; }));
    k.push_back(dbl("pgd_step_frac", [](RunConfig& c) -> double& { return c.train.pgd_step_frac; }));
    k.push_back(dbl("sabr_tau", [](RunConfig& c) -> double& { return c.train.sabr_tau; }));
    k.push_back(integer<std::uint64_t>("seed",
                                       [](RunConfig& c) -> std::uint64_t& { return c.train.seed; }));
    k.push_back(dbl("beta", [](RunConfig& c) -> double& { return c.train.beta; }));
    k.push_back(dbl("civet_weight", [](RunConfig& c) -> double& { return c.train.civet_weight; }));
    k.push_back(Key{"optimizer",
                    [](RunConfig& c, const std::string& v) { c.train.optimizer = parse_optimizer(v); },
                    [](const RunConfig& c) { return optimizer_name(c.train.optimizer); }});
    k.push_back(dbl("momentum", [](RunConfig& c) -> double& { return c.train.momentum; }));
    k.push_back(integer<int>("max_depth", [](RunConfig& c) -> int& { return c.train.max_depth; }));
    k.push_back(text("dataset", [](RunConfig& c) -> std::string& { return c.dataset; }));
    k.push_back(text("train_images", [](RunConfig& c) -> std::string& { return c.train_images; }));
    k.push_back(text("test_images", [](RunConfig& c) -> std::string& { return c.test_images; }));
    k.push_back(integer<std::size_t>("train_n", [](RunConfig& c) -> std::size_t& { return c.train_n; }));
    k.push_back(integer<std::size_t>("test_n", [](RunConfig& c) -> std::size_t& { return c.test_n; }));
    k.push_back(integer<std::size_t>("synthetic_dim",
                                     [](RunConfig& c) -> std::size_t& { return c.synthetic_dim; }));
    k.push_back(integer<std::uint64_t>("data_seed",
                                       [](RunConfig& c) -> std::uint64_t& { return c.data_seed; }));
    k.push_back(text("profile", [](RunConfig& c) -> std::string& { return c.profile; }));
    k.push_back(text("arch", [](RunConfig& c) -> std::string& { return c.arch; }));
    k.push_back(text("output_dir", [](RunConfig& c) -> std::string& { return c.output_dir; }));
    k.push_back(dbl("cert_delta", [](RunConfig& c) -> double& { return c.cert_delta; }));
    k.push_back(Key{"attacks",
                    [](RunConfig& c, const std::string& v) { c.attacks = split_list(v); },
                    [](const RunConfig& c) {
                      return join<std::string>(c.attacks, [](const std::string& s) { return s; });
                    }});
    k.push_back(integer<int>("attack_steps", [](RunConfig& c) -> int& { return c.attack_steps; }));
    k.push_back(dbl("attack_step_frac", [](RunConfig& c) -> double& { return c.attack_step_frac; }));
    return k;
  }();
  return table;
}

const Key* find_key(const std::string& name) {
  for (const auto& k : keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

void assign(RunConfig& config, const std::string& key, const std::string& value,
            std::size_t line) {
  const Key* k = find_key(key);
  if (!k) throw ConfigError("unknown key '" + key + "'", line);
  try {
    k->set(config, value);
  } catch (const Error& e) {
    throw ConfigError(key + ": " + e.what(), line);
  }
}

// First field name in a validation message, e.g. "lr: must be positive".
std::string field_of(const std::string& message) {
  return message.substr(0, message.find(':'));
}

void validate_run(const RunConfig& c) {
  c.train.validate();
  if (c.dataset != "synthetic" && c.dataset != "idx") {
    throw ConfigError("dataset: expected synthetic or idx, got '" + c.dataset + "'", 0);
  }
  if (c.profile != "desk" && c.profile != "full") {
    throw ConfigError("profile: expected desk or full, got '" + c.profile + "'", 0);
  }
  const auto presets = preset_names();
  if (std::find(presets.begin(), presets.end(), c.arch) == presets.end()) {
    throw ConfigError("arch: unknown architecture '" + c.arch + "'", 0);
  }
  if (!(c.cert_delta > 0.0 && c.cert_delta < 0.5)) {
    throw ConfigError("cert_delta: must lie in (0, 0.5)", 0);
  }
  for (const auto& a : c.attacks) {
    if (a != "pgd" && a != "lsa" && a != "mda") {
      throw ConfigError("attacks: unknown attack '" + a + "'", 0);
    }
  }
  if (c.train_n == 0 || c.test_n == 0) throw ConfigError("train_n: must be positive", 0);
  if (c.attack_steps < 0) throw ConfigError("attack_steps: must be nonnegative", 0);
  if (c.output_dir.empty()) throw ConfigError("output_dir: must not be empty", 0);
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : keys()) out.push_back(k.name);
  return out;
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig config;
  std::map<std::string, std::size_t> seen;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value'", line_no);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("missing key before '='", line_no);
    if (seen.count(key)) {
      throw ConfigError("duplicate key '" + key + "' (first set on line " +
                            std::to_string(seen[key]) + ")",
                        line_no);
    }
    assign(config, key, value, line_no);
    seen[key] = line_no;
  }
  try {
    validate_run(config);
  } catch (const ConfigError& e) {
    const auto it = seen.find(field_of(e.what()));
    throw ConfigError(e.what(), it == seen.end() ? 0 : it->second);
  }
  return config;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string(), 0);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' is not key=value", 0);
  }
  RunConfig next = config;
  assign(next, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)), 0);
  validate_run(next);
  config = std::move(next);
}

std::string to_config_text(const RunConfig& config) {
  std::string out;
  for (const auto& k : keys()) out += k.name + " = " + k.get(config) + "\n";
  return out;
}

Dataset load_split(const RunConfig& config, const std::string& split) {
  const bool train = split == "train";
  if (!train && split != "test") throw UsageError("split must be train or test");
  const std::size_t n = train ? config.train_n : config.test_n;
  Dataset ds;
  if (config.dataset == "synthetic") {
    // One draw, so both splits lie on the same curve; test rows follow train rows.
    const Dataset all =
        synthetic_dataset(config.train_n + config.test_n, config.synthetic_dim, config.data_seed);
    ds = all;
    ds.examples = all.examples.rows(train ? 0 : config.train_n, n);
  } else {
    const std::string& path = train ? config.train_images : config.test_images;
    if (path.empty()) {
      throw ConfigError(std::string(train ? "train_images" : "test_images") +
                            ": required when dataset = idx",
                        0);
    }
    std::optional<std::size_t> limit;
    if (config.profile == "desk") limit = n;
    ds = load_idx(path, limit);
  }
  ds.split = split;
  return ds;
}

}  // namespace civet
