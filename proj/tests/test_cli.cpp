/*
 * Copyright 2026 The dcpseg Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string err;
};

fs::path scratch() {
  static const fs::path p = [] {
    fs::path d = fs::temp_directory_path() / ("dcpseg_cli_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome run(const std::string& args) {
  const fs::path err = scratch() / "stderr.txt";
  const std::string cmd = std::string(DCPSEG_CLI) + " " + args + " >/dev/null 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

const char* kSmallSpec =
    R"({"n_total": 10, "labeled_fraction": 0.2, "val_count": 1, "test_count": 2,)"
    R"( "phantom": {"dims": [8, 8, 8], "min_radius": 1.5, "max_radius": 3.0}})";

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  CHECK(run("").code == 2);
  CHECK(run("no-such-command").code == 2);
  CHECK(run("train --config x").code == 2);
}

TEST_CASE("missing output directory is reported") {
  const Outcome o = run("gen-data --out " + (scratch() / "absent").string());
  CHECK(o.code == 2);
  CHECK(o.err.find("output directory") != std::string::npos);
}

TEST_CASE("unknown config key is named") {
  const fs::path d = scratch() / "bad";
  fs::create_directories(d);
  write(d / "spec.json", kSmallSpec);
  REQUIRE(run("gen-data --spec " + (d / "spec.json").string() + " --out " + d.string()).code == 0);
  write(d / "cfg.txt", "alpha_ = 0.5\n");
  const Outcome o = run("train --config " + (d / "cfg.txt").string() + " --data " + (d / "manifest.json").string() +
                        " --out " + d.string());
  CHECK(o.code == 2);
  CHECK(o.err.find("alpha_") != std::string::npos);
}

TEST_CASE("unreadable checkpoint exits with the io code") {
  const fs::path d = scratch() / "io";
  fs::create_directories(d);
  write(d / "junk.ckpt", "not a checkpoint");
  write(d / "spec.json", kSmallSpec);
  REQUIRE(run("gen-data --spec " + (d / "spec.json").string() + " --out " + d.string()).code == 0);
  CHECK(run("eval --checkpoint " + (d / "junk.ckpt").string() + " --data " + (d / "manifest.json").string()).code == 4);
}

TEST_CASE("dataset generation is byte-identical across reruns") {
  const fs::path a = scratch() / "gen_a", b = scratch() / "gen_b";
  fs::create_directories(a);
  fs::create_directories(b);
  write(scratch() / "spec.json", kSmallSpec);
  const std::string spec = " --spec " + (scratch() / "spec.json").string() + " --seed 5";
  REQUIRE(run("gen-data --out " + a.string() + spec).code == 0);
  REQUIRE(run("gen-data --out " + b.string() + spec).code == 0);
  int files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    CHECK(slurp(e.path()) == slurp(b / e.path().filename()));
  }
  CHECK(files == 15);  // 10 volumes, 4 label maps, manifest
}

TEST_CASE("smoke run writes log, checkpoint and report, echoing ablation flags") {
  const fs::path d = scratch() / "smoke";
  fs::create_directories(d);
  write(d / "spec.json", kSmallSpec);
  REQUIRE(run("gen-data --spec " + (d / "spec.json").string() + " --out " + d.string()).code == 0);
  write(d / "cfg.txt", "pretrain_iters = 3\ntrain_iters = 6\ndcp_mode = step2-only\nensemble_mode = sum-gt-1\n");
  const std::string data = " --data " + (d / "manifest.json").string();
  REQUIRE(run("train --quiet --config " + (d / "cfg.txt").string() + data + " --out " + d.string()).code == 0);
  for (const char* f : {"train_log.csv", "final.ckpt", "eval.json"}) CHECK(fs::exists(d / f));
  const std::string log = slurp(d / "train_log.csv");
  CHECK(log.find("# dcp_mode=step2-only\n") != std::string::npos);
  CHECK(log.find("# ensemble_mode=sum-gt-1\n") != std::string::npos);
  CHECK(log.find("# path_mode=random\n") != std::string::npos);

  CHECK(run("eval --checkpoint " + (d / "final.ckpt").string() + data + " --out " + (d / "e.json").string()).code == 0);
  CHECK(fs::exists(d / "e.json"));
  CHECK(run("report --logs " + d.string() + " --csv " + (d / "r.csv").string()).code == 0);
  CHECK(slurp(d / "r.csv").find(",complete,") != std::string::npos);
  CHECK(run("diversity-report --samples 4 --checkpoint " + (d / "final.ckpt").string() + data).code == 0);
  fs::remove_all(scratch());
}
