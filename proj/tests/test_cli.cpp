// Copyright 2026 The nice Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "nice/data_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int status = -1;
  std::string out;
};

Run nice(const std::string& args) {
  const std::string cmd = std::string(NICE_CLI_PATH) + " " + args + " 2>/dev/null";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.out.append(buf, n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

// A small planted dataset in `dir`, generated once per test binary.
const fs::path& workspace() {
  static const fs::path dir = [] {
    const auto d = fs::temp_directory_path() / "nice_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    const json spec = {{"n_concepts", 20},  {"images_per_concept", 2}, {"repetitions", 2},
                       {"channels", 16},    {"samples", 100},          {"feature_dim", 12},
                       {"window_start", 10}, {"window_end", 60},       {"n_categories", 3},
                       {"test_concepts", 6}, {"test_repetitions", 2}};
    std::ofstream(d / "spec.json") << spec.dump();
    return d;
  }();
  return dir;
}

std::string small_model_flags() {
  return "-s hyper.k=6 -s hyper.m1=5 -s hyper.m2=9 -s hyper.s2=3 -s train.n_val=8 "
         "--epochs 2 --batch-size 16";
}

}  // namespace

TEST_CASE("synth, train, eval and analyses end to end") {
  const auto& d = workspace();
  const std::string out = "-o " + d.string();

  auto synth = nice("synth --spec " + (d / "spec.json").string() + " " + out);
  REQUIRE(synth.status == 0);
  for (auto name : {"train.eegt", "test.eegt", "images.feat", "templates.feat", "categories.json",
                    "synth_spec.json", "synth.config.json", "log.jsonl"}) {
    CHECK_MESSAGE(fs::exists(d / name), name);
  }
  const auto test_set = nicekit::load_epochs(d / "test.eegt");
  CHECK(test_set.trials() == 12);
  CHECK(test_set.channels == 16);

  auto train = nice("train " + small_model_flags() + " " + out);
  REQUIRE(train.status == 0);
  CHECK(fs::exists(d / "model.ckpt"));
  CHECK(line_count(d / "train_log.jsonl") == 2);
  const auto first = json::parse(slurp(d / "train_log.jsonl").substr(0, slurp(d / "train_log.jsonl").find('\n')));
  CHECK(first.contains("val_loss"));
  CHECK(first.contains("exp_t"));

  auto eval = nice("eval " + out);
  REQUIRE(eval.status == 0);
  CHECK(eval.out.rfind("top1 ", 0) == 0);
  CHECK(fs::exists(d / "eval_report.json"));
  CHECK(fs::exists(d / "eval_summary.csv"));
  const auto effective = json::parse(slurp(d / "eval.config.json"));
  CHECK(effective["paths"]["output_dir"] == d.string());

  SUBCASE("space ablation writes one row per point") {
    REQUIRE(nice("ablate --mode space " + out).status == 0);
    // The first 16 montage electrodes only cover frontal and temporal regions.
    const auto csv = slurp(d / "ablate_space.csv");
    CHECK(line_count(d / "ablate_space.csv") == 1 + 1 + 2 + 1);
    CHECK(csv.find(",baseline,") != std::string::npos);
    CHECK(csv.find(",frontal,") != std::string::npos);
    CHECK(csv.find(",temporal,") != std::string::npos);
    CHECK(csv.find(",all,") != std::string::npos);
    const auto manifest = json::parse(slurp(d / "ablate_space.manifest.json"));
    CHECK(manifest["sweep"] == "ablate_space");
  }
  SUBCASE("time ablation") {
    REQUIRE(nice("ablate --mode time -s analysis.time_step_ms=100 " + out).status == 0);
    CHECK(line_count(d / "ablate_time_forward.csv") == 1 + 1 + 4);
  }
  SUBCASE("rdm and time-frequency") {
    REQUIRE(nice("rdm " + out).status == 0);
    CHECK(line_count(d / "rdm.csv") == 1 + 6);
    REQUIRE(nice("tfr -s analysis.tfr_freqs=[4,8,16] -s 'analysis.tfr_channels=[\"Fp1\",\"F3\"]' " + out).status == 0);
    CHECK(line_count(d / "tfr.csv") == 1 + 3);
  }
  SUBCASE("gradcam needs a spatial module") {
    CHECK(nice("gradcam " + out).status == 4);
  }
}

TEST_CASE("preprocess writes whitened epochs and the whitener") {
  const auto& d = workspace();
  if (!fs::exists(d / "train.eegt")) {
    REQUIRE(nice("synth --spec " + (d / "spec.json").string() + " -o " + d.string()).status == 0);
  }
  const auto pre = d / "pre";
  const auto r = nice("preprocess -o " + pre.string() + " -s paths.raw_train_epochs=" +
                      (d / "train.eegt").string() + " -s paths.raw_test_epochs=" +
                      (d / "test.eegt").string());
  REQUIRE(r.status == 0);
  CHECK(fs::exists(pre / "train.eegt"));
  CHECK(fs::exists(pre / "test.eegt"));
  CHECK(line_count(pre / "whitener.csv") >= 16);
  CHECK(nicekit::load_epochs(pre / "train.eegt").trials() == nicekit::load_epochs(d / "train.eegt").trials());
}

TEST_CASE("gradient check suite passes") {
  const auto dir = fs::temp_directory_path() / "nice_test_cli_gradcheck";
  const auto r = nice("gradcheck -o " + dir.string());
  CHECK(r.status == 0);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(r.out.find("PASS") != std::string::npos);
  CHECK(fs::exists(dir / "gradcheck.csv"));
}

TEST_CASE("exit codes") {
  const auto dir = fs::temp_directory_path() / "nice_test_cli_errors";
  CHECK(nice("frobnicate").status == 2);
  CHECK(nice("").status == 2);
  CHECK(nice("ablate --mode diagonal -o " + dir.string()).status == 2);
  CHECK(nice("eval -s train.epochz=3 -o " + dir.string()).status == 3);
  CHECK(nice("eval -s train.epochs=\\\"many\\\" -o " + dir.string()).status == 3);
  CHECK(nice("eval --module transformer -o " + dir.string()).status == 3);
  fs::create_directories(dir);
  std::ofstream(dir / "bad.json") << R"({"train": {"lr": 1e-3, "momentum": 0.9}})";
  CHECK(nice("eval -c " + (dir / "bad.json").string() + " -o " + dir.string()).status == 3);
  // Missing inputs are a runtime failure, reported in the log.
  fs::remove_all(dir / "empty");
  CHECK(nice("eval -o " + (dir / "empty").string()).status != 0);
  CHECK(slurp(dir / "empty" / "log.jsonl").find("\"error\"") != std::string::npos);
}
