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

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "civet/certify.hpp"
#include "civet/errors.hpp"
#include "civet/selftest.hpp"
#include "civet/training.hpp"

namespace fs = std::filesystem;
using namespace civet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string output_dir;
  std::string checkpoint;
};

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

RunConfig resolve_config(const Common& c) {
  RunConfig config = c.config_path.empty() ? RunConfig{} : parse_config(c.config_path);
  for (const auto& o : c.overrides) apply_override(config, o);
  if (!c.output_dir.empty()) apply_override(config, "output_dir=" + c.output_dir);
  return config;
}

fs::path prepare_output(const RunConfig& config) {
  fs::path dir(config.output_dir);
  fs::create_directories(dir);
  return dir;
}

Model load_model(const Common& c, const RunConfig& config) {
  const fs::path path = c.checkpoint.empty() ? fs::path(config.output_dir) / "model.ckpt"
                                             : fs::path(c.checkpoint);
  return load_checkpoint(path, preset_architecture(config.arch));
}

SuiteOptions suite_options(const RunConfig& config) {
  SuiteOptions o;
  o.epsilon = config.train.epsilon;
  o.delta = config.cert_delta;
  o.attack_steps = config.attack_steps;
  o.attack_step_frac = config.attack_step_frac;
  o.seed = config.train.seed;
  o.max_depth = config.train.max_depth;
  return o;
}

void write_report(const fs::path& dir, const std::string& stem, const Report& report) {
  write_file(dir / (stem + "_report.csv"), report.to_csv());
  write_file(dir / (stem + "_summary.json"), report.summary_json());
}

int cmd_train(const Common& c) {
  const RunConfig config = resolve_config(c);
  const fs::path dir = prepare_output(config);
  const Dataset data = load_split(config, "train");
  TrainResult result = train(config.train, data, preset_architecture(config.arch));
  save_checkpoint(result.model, dir / "model.ckpt");
  write_file(dir / "train_log.csv", train_log_csv(result.log));
  write_file(dir / "config.txt", to_config_text(config));
  const TrainLogRow& last = result.log.back();
  std::printf("trained %s on %zu examples: %d epochs, %ld batches, std_loss %.6g, civet_loss %.6g\n",
              method_name(config.train.method).c_str(), data.size(), last.epoch, last.iter,
              last.std_loss, last.civet_loss);
  std::printf("wrote %s\n", (dir / "model.ckpt").c_str());
  return kExitOk;
}

int cmd_certify(const Common& c) {
  const RunConfig config = resolve_config(c);
  const Model model = load_model(c, config);
  const fs::path dir = prepare_output(config);
  SuiteOptions o = suite_options(config);
  const Report report = evaluate_suite(model, load_split(config, "test"), o);
  write_report(dir, "certify", report);
  std::printf("examples %zu  epsilon %g  delta %g  baseline %.6g  certified %.6g\n",
              report.rows.size(), o.epsilon, o.delta, report.mean_baseline(),
              report.mean_certified());
  return kExitOk;
}

int cmd_attack(const Common& c, const std::string& attack) {
  if (attack != "pgd" && attack != "lsa" && attack != "mda") {
    throw UsageError("unknown attack '" + attack + "' (pgd, lsa, mda)");
  }
  const RunConfig config = resolve_config(c);
  const Model model = load_model(c, config);
  const fs::path dir = prepare_output(config);
  SuiteOptions o = suite_options(config);
  o.certify = false;
  o.attacks = {attack};
  const Report report = evaluate_suite(model, load_split(config, "test"), o);
  write_report(dir, "attack_" + attack, report);
  std::printf("examples %zu  epsilon %g  baseline %.6g  %s %.6g\n", report.rows.size(),
              o.epsilon, report.mean_baseline(), attack.c_str(), report.mean_attacked(0));
  return kExitOk;
}

int cmd_eval(const Common& c) {
  const RunConfig config = resolve_config(c);
  const Model model = load_model(c, config);
  const fs::path dir = prepare_output(config);
  SuiteOptions o = suite_options(config);
  o.attacks = config.attacks;
  const Report report = evaluate_suite(model, load_split(config, "test"), o);
  write_report(dir, "eval", report);
  std::printf("examples %zu  baseline %.6g  certified %.6g", report.rows.size(),
              report.mean_baseline(), report.mean_certified());
  for (std::size_t a = 0; a < o.attacks.size(); ++a) {
    std::printf("  %s %.6g", o.attacks[a].c_str(), report.mean_attacked(a));
  }
  std::printf("\n");
  return kExitOk;
}

int cmd_selftest(std::uint64_t seed) {
  bool ok = true;
  for (const auto& check : run_selftest(seed)) {
    std::printf("%s %-20s %8.1f ms  %s\n", check.passed ? "PASS" : "FAIL", check.name.c_str(),
                check.wall_ms, check.detail.c_str());
    ok = ok && check.passed;
  }
  std::printf("%s\n", ok ? "selftest passed" : "selftest FAILED");
  return ok ? kExitOk : kExitFailure;
}

// "--key=value" for any config key becomes an override; everything else is
// left for the option parser.
std::vector<std::string> extract_key_flags(std::vector<std::string>& args) {
  const std::vector<std::string> keys = config_keys();
  std::vector<std::string> overrides, rest;
  for (const auto& a : args) {
    const auto eq = a.find('=');
    if (a.rfind("--", 0) == 0 && eq != std::string::npos) {
      std::string key = a.substr(2, eq - 2);
      std::replace(key.begin(), key.end(), '-', '_');
      if (key != "output_dir" && std::find(keys.begin(), keys.end(), key) != keys.end()) {
        overrides.push_back(key + "=" + a.substr(eq + 1));
        continue;
      }
    }
    rest.push_back(a);
  }
  args = std::move(rest);
  return overrides;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  const std::vector<std::string> key_flags = extract_key_flags(args);

  CLI::App app{"Certified VAE training and evaluation"};
  app.require_subcommand(1);
  Common common;
  std::string attack;
  std::uint64_t selftest_seed = 0;
  double icdf_fault = 0.0;

  auto add_common = [&](CLI::App* sub, bool checkpoint) {
    sub->add_option("-c,--config", common.config_path, "Config file (key = value lines)")
        ->check(CLI::ExistingFile);
    sub->add_option("-o,--override", common.overrides, "key=value applied after the config")
        ->take_all();
    sub->add_option("--output-dir", common.output_dir, "Directory for every output file");
    if (checkpoint) {
      sub->add_option("--checkpoint", common.checkpoint,
                      "Checkpoint to load (default <output_dir>/model.ckpt)");
    }
  };
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_common(train_cmd, false);
  CLI::App* certify_cmd = app.add_subcommand("certify", "Certified bounds on the test split");
  add_common(certify_cmd, true);
  CLI::App* attack_cmd = app.add_subcommand("attack", "Attack the test split");
  add_common(attack_cmd, true);
  attack_cmd->add_option("attack", attack, "pgd, lsa or mda")->required();
  CLI::App* eval_cmd = app.add_subcommand("eval", "Baseline, certified and attacked metrics");
  add_common(eval_cmd, true);
  CLI::App* selftest_cmd = app.add_subcommand("selftest", "Run internal consistency checks");
  selftest_cmd->add_option("--seed", selftest_seed, "Seed for randomized checks");
  selftest_cmd->add_option("--icdf-fault", icdf_fault, "Offset added to every normal quantile")
      ->group("");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  // Key flags come last so they win over --override and the config file.
  common.overrides.insert(common.overrides.end(), key_flags.begin(), key_flags.end());

  try {
    if (*train_cmd) return cmd_train(common);
    if (*certify_cmd) return cmd_certify(common);
    if (*attack_cmd) return cmd_attack(common, attack);
    if (*eval_cmd) return cmd_eval(common);
    if (*selftest_cmd) {
      if (!key_flags.empty()) throw UsageError("selftest takes no configuration");
      testing::set_icdf_fault(icdf_fault);
      return cmd_selftest(selftest_seed);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}
