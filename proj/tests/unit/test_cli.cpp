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

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
};

fs::path workdir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "civet_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Run civet(const fs::path& dir, const std::string& args) {
  const fs::path log = dir / "stdout.txt";
  const std::string cmd = std::string("\"") + CIVET_CLI_PATH + "\" " + args + " > \"" +
                          log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

const std::string kSmall = "--epochs=2 --train-n=200 --test-n=10 --batch-size=32 ";

}  // namespace

TEST_CASE("train writes a checkpoint and a log quickly") {
  const fs::path dir = workdir("train");
  const auto start = std::chrono::steady_clock::now();
  const Run r = civet(dir, "train --output-dir " + dir.string() + " " + kSmall);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  INFO(r.out);
  CHECK(r.code == 0);
  CHECK(secs < 60.0);
  CHECK(fs::file_size(dir / "model.ckpt") > 0);
  const std::string log = slurp(dir / "train_log.csv");
  CHECK(log.rfind("epoch,iter,std_loss,civet_loss,epsilon_current,wall_ms\n", 0) == 0);
  CHECK(std::count(log.begin(), log.end(), '\n') == 3);
  CHECK(fs::exists(dir / "config.txt"));
}

TEST_CASE("configuration errors exit with status 2") {
  const fs::path dir = workdir("badcfg");
  std::ofstream(dir / "bad.cfg") << "method = civet\nbogus = 1\n";
  Run r = civet(dir, "train -c " + (dir / "bad.cfg").string() + " --output-dir " + dir.string());
  CHECK(r.code == 2);
  CHECK(r.out.find("line 2") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "model.ckpt"));
  CHECK(civet(dir, "train --epochs=zero --output-dir " + dir.string()).code == 2);
  CHECK(civet(dir, "train --no-such-flag").code == 2);
  CHECK(civet(dir, "").code == 2);
  CHECK(civet(dir, "certify --checkpoint " + (dir / "none.ckpt").string()).code == 1);
}

TEST_CASE("seeded runs are reproducible") {
  const fs::path a = workdir("seed_a"), b = workdir("seed_b"), c = workdir("seed_c");
  REQUIRE(civet(a, "train --output-dir " + a.string() + " " + kSmall).code == 0);
  REQUIRE(civet(b, "train --output-dir " + b.string() + " " + kSmall).code == 0);
  REQUIRE(civet(c, "train --output-dir " + c.string() + " " + kSmall + "--seed=7").code == 0);
  CHECK(slurp(a / "model.ckpt") == slurp(b / "model.ckpt"));
  CHECK(slurp(a / "model.ckpt") != slurp(c / "model.ckpt"));

  const std::string eval = "eval --test-n=10 --attack-steps=3 --output-dir ";
  REQUIRE(civet(a, eval + a.string()).code == 0);
  REQUIRE(civet(b, eval + b.string()).code == 0);
  CHECK(slurp(a / "eval_report.csv") == slurp(b / "eval_report.csv"));
  CHECK(slurp(a / "eval_summary.json") == slurp(b / "eval_summary.json"));
  CHECK(slurp(a / "eval_report.csv").rfind("example_id,baseline,certified,pgd,lsa,mda\n", 0) == 0);
}

TEST_CASE("certify and attack subcommands") {
  const fs::path dir = workdir("attack");
  REQUIRE(civet(dir, "train --output-dir " + dir.string() + " " + kSmall).code == 0);
  const std::string common = " --test-n=10 --output-dir " + dir.string();
  CHECK(civet(dir, "certify" + common).code == 0);
  CHECK(slurp(dir / "certify_report.csv").rfind("example_id,baseline,certified\n", 0) == 0);
  CHECK(civet(dir, "attack fgsm" + common).code == 2);
  REQUIRE(civet(dir, "attack mda --epsilon=0" + common).code == 0);
  std::istringstream csv(slurp(dir / "attack_mda_report.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "example_id,baseline,mda");
  int rows = 0;
  while (std::getline(csv, line)) {
    const auto c1 = line.find(','), c2 = line.rfind(',');
    CHECK(line.substr(c1 + 1, c2 - c1 - 1) == line.substr(c2 + 1));
    ++rows;
  }
  CHECK(rows == 10);
}

TEST_CASE("selftest passes and detects a broken quantile") {
  const fs::path dir = workdir("selftest");
  const Run ok = civet(dir, "selftest");
  INFO(ok.out);
  CHECK(ok.code == 0);
  CHECK(ok.out.find("FAIL") == std::string::npos);
  const Run bad = civet(dir, "selftest --icdf-fault 0.1");
  CHECK(bad.code != 0);
  CHECK(bad.out.find("FAIL support-example") != std::string::npos);
}
