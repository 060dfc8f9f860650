// Copyright (c) 2026 The Duplex Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "duplex/runcfg.hpp"
#include "duplex/text.hpp"

using namespace duplex;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("duplex_rc_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

// A complete config exercising every section.
const char* kFullConfig = R"({
  "model": {"preset": "toy", "dropout": 0.0, "vocab_size": 32},
  "symbols": "abcd efgh",
  "dtype": "f64",
  "seed": 7,
  "mel": {"n_mels": 80, "hop": 160},
  "decode": {"beam": 4, "ctc_weight": 0.3, "stop_threshold": 0.6},
  "data": {"ASR": "corpus/train.tsv", "TTS": "corpus/train.tsv"},
  "schedule": {
    "total_updates": 40,
    "update_frequency": 2,
    "lr": {"peak": 0.001, "phase_ratios": [0.25, 0.4, 0.35]},
    "optimizer": {"beta1": 0.9, "beta2": 0.98, "clip_norm": 1.0},
    "stages": [
      {"until": 10, "task_mix": {"TTS": 1.0}},
      {"until": 40, "task_mix": {"ASR": 0.5, "TTS": 0.5}}
    ]
  },
  "train": {"out_dir": "runs/demo", "ckpt_every": 20, "max_tokens": 512}
})";

}  // namespace

TEST_SUITE("runcfg") {

TEST_CASE("full config parses with preset overrides and injected datasets") {
  const RunConfig cfg = run_config_from_json(kFullConfig);
  CHECK(cfg.model.d_model == 64);  // from the toy preset
  CHECK(cfg.model.vocab_size == 32);
  CHECK(cfg.model.dropout == doctest::Approx(0.0));
  CHECK(cfg.symbols == "abcd efgh");
  CHECK(cfg.dtype == "f64");
  CHECK(cfg.seed == 7);
  CHECK(cfg.decode.beam == 4);
  CHECK(cfg.decode.ctc_weight == doctest::Approx(0.3));
  CHECK(cfg.decode.stop_threshold == doctest::Approx(0.6));
  CHECK(cfg.data.at(TaskId::ASR) == "corpus/train.tsv");
  CHECK(cfg.out_dir == "runs/demo");
  CHECK(cfg.ckpt_every == 20);
  CHECK(cfg.max_tokens == 512);
  CHECK(cfg.val_every == 500);  // untouched default

  REQUIRE(cfg.schedule.stages.size() == 2);
  // Stage datasets were filled from the run-level data map.
  CHECK(cfg.schedule.stages[0].datasets.at(TaskId::TTS) == "corpus/train.tsv");
  CHECK(cfg.schedule.stages[0].datasets.count(TaskId::ASR) == 0);
  CHECK(cfg.schedule.stages[1].datasets.at(TaskId::ASR) == "corpus/train.tsv");
  CHECK(cfg.schedule.stages[1].datasets.at(TaskId::TTS) == "corpus/train.tsv");
  CHECK(cfg.schedule.update_frequency == 2);
}

TEST_CASE("explicit stage datasets win over the run-level data map") {
  std::string text = kFullConfig;
  const std::string tag = "\"until\": 10, \"task_mix\": {\"TTS\": 1.0}";
  const std::string with_ds =
      tag + ", \"datasets\": {\"TTS\": \"elsewhere.tsv\"}";
  text.replace(text.find(tag), tag.size(), with_ds);
  const RunConfig cfg = run_config_from_json(text);
  CHECK(cfg.schedule.stages[0].datasets.at(TaskId::TTS) == "elsewhere.tsv");
}

TEST_CASE("defaults: empty object is a valid inference-only config") {
  const RunConfig cfg = run_config_from_json("{}");
  CHECK(cfg.model.d_model == 64);
  CHECK(cfg.symbols == "abcd");
  CHECK(cfg.dtype == "f32");
  CHECK(cfg.schedule.total_updates == 0);
  CHECK(cfg.schedule.stages.empty());
  CHECK(cfg.decode.beam == 10);
}

TEST_CASE("round trip preserves every field") {
  const RunConfig cfg = run_config_from_json(kFullConfig);
  const RunConfig back = run_config_from_json(run_config_to_json(cfg));
  CHECK(model_config_to_json(back.model) == model_config_to_json(cfg.model));
  CHECK(train_schedule_to_json(back.schedule) ==
        train_schedule_to_json(cfg.schedule));
  CHECK(back.data == cfg.data);
  CHECK(back.symbols == cfg.symbols);
  CHECK(back.dtype == cfg.dtype);
  CHECK(back.seed == cfg.seed);
  CHECK(back.mel.n_fft == cfg.mel.n_fft);
  CHECK(back.mel.hop == cfg.mel.hop);
  CHECK(back.decode.beam == cfg.decode.beam);
  CHECK(back.decode.ctc_weight == doctest::Approx(cfg.decode.ctc_weight));
  CHECK(back.out_dir == cfg.out_dir);
  CHECK(back.ckpt_every == cfg.ckpt_every);
  CHECK(back.val_every == cfg.val_every);
  CHECK(back.max_tokens == cfg.max_tokens);
  CHECK(back.eval_rows == cfg.eval_rows);
}

TEST_CASE("unknown keys are rejected at every level") {
  CHECK_THROWS_WITH_AS(run_config_from_json(R"({"beam": 3})"),
                       doctest::Contains("unknown key in run config"), Error);
  CHECK_THROWS_WITH_AS(
      run_config_from_json(R"({"model": {"preset": "toy", "width": 3}})"),
      doctest::Contains("unknown key in model"), Error);
  CHECK_THROWS_WITH_AS(run_config_from_json(R"({"mel": {"hop_ms": 10}})"),
                       doctest::Contains("unknown key in mel"), Error);
  CHECK_THROWS_WITH_AS(run_config_from_json(R"({"decode": {"width": 3}})"),
                       doctest::Contains("unknown key in decode"), Error);
  CHECK_THROWS_WITH_AS(run_config_from_json(R"({"train": {"lr": 0.1}})"),
                       doctest::Contains("unknown key in train"), Error);
}

TEST_CASE("malformed input maps to Parse, bad fields to BadConfig") {
  try {
    run_config_from_json("{nope");
    FAIL("expected Parse");
  } catch (const Error& e) {
    CHECK(std::string(e.kind()) == "Parse");
  }
  try {
    run_config_from_json(R"({"model": {"preset": "huge"}})");
    FAIL("expected BadConfig");
  } catch (const Error& e) {
    CHECK(std::string(e.kind()) == "BadConfig");
  }
  CHECK_THROWS_WITH_AS(run_config_from_json(R"({"data": {"ASR": ""}})"),
                       doctest::Contains("non-empty path"), Error);
  CHECK_THROWS_WITH_AS(run_config_from_json(R"({"data": {"STT": "x.tsv"}})"),
                       doctest::Contains("no task named"), Error);
}

TEST_CASE("cross-field validation") {
  // Vocab must fit the embedding table: toy has 16 slots, 4 are special.
  CHECK_THROWS_WITH_AS(
      run_config_from_json(R"({"symbols": "abcdefghijklm"})"),
      doctest::Contains("embedding table"), Error);
  // 12 printable symbols exactly fill it.
  CHECK_NOTHROW(run_config_from_json(R"({"symbols": "abcdefghijkl"})"));

  CHECK_THROWS_WITH_AS(run_config_from_json(R"({"mel": {"n_mels": 40}})"),
                       doctest::Contains("n_mels"), Error);
  CHECK_THROWS_WITH_AS(run_config_from_json(R"({"decode": {"beam": 0}})"),
                       doctest::Contains("beam"), Error);
  CHECK_THROWS_WITH_AS(
      run_config_from_json(R"({"decode": {"stop_threshold": 1.0}})"),
      doctest::Contains("stop_threshold"), Error);
  CHECK_THROWS_WITH_AS(run_config_from_json(R"({"dtype": "f16"})"),
                       doctest::Contains("dtype"), Error);

  // Scheduled task outside the model task_set.
  const char* text = R"({
    "model": {"preset": "toy", "task_set": ["ASR"]},
    "data": {"TTS": "x.tsv"},
    "schedule": {"total_updates": 5, "lr": {"peak": 0.001},
                 "stages": [{"until": 5, "task_mix": {"TTS": 1.0}}]}
  })";
  CHECK_THROWS_WITH_AS(run_config_from_json(text),
                       doctest::Contains("task_set"), Error);
}

TEST_CASE("environment interpolation") {
  setenv("DUPLEX_RC_ROOT", "/data/corpora", 1);
  CHECK(interpolate_env("a ${DUPLEX_RC_ROOT}/x b") == "a /data/corpora/x b");
  CHECK(interpolate_env("no refs here") == "no refs here");
  CHECK(interpolate_env("$DUPLEX_RC_ROOT stays") == "$DUPLEX_RC_ROOT stays");

  unsetenv("DUPLEX_RC_UNSET");
  CHECK_THROWS_WITH_AS(interpolate_env("${DUPLEX_RC_UNSET}"),
                       doctest::Contains("not set"), Error);
  CHECK_THROWS_WITH_AS(interpolate_env("oops ${DUPLEX_RC_ROOT"),
                       doctest::Contains("unterminated"), Error);
  CHECK_THROWS_WITH_AS(interpolate_env("${1BAD}"),
                       doctest::Contains("variable name"), Error);
}

TEST_CASE("load_run_config reads, interpolates, and validates") {
  const std::string dir = temp_dir("load");
  setenv("DUPLEX_RC_DIR", "/data/run", 1);
  write_file(dir + "/run.json",
             R"({"data": {"ASR": "${DUPLEX_RC_DIR}/train.tsv"}})");
  const RunConfig cfg = load_run_config(dir + "/run.json");
  CHECK(cfg.data.at(TaskId::ASR) == "/data/run/train.tsv");

  try {
    load_run_config(dir + "/missing.json");
    FAIL("expected Io");
  } catch (const Error& e) {
    CHECK(std::string(e.kind()) == "Io");
  }
  fs::remove_all(dir);
}

}  // TEST_SUITE
