// Copyright (c) 2026 The Duplex Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration files: one JSON document describing an experiment
// end to end (architecture, schedule, data, decoding defaults), the
// on-disk mirror of a run-ledger row.

#ifndef DUPLEX_RUNCFG_HPP_
#define DUPLEX_RUNCFG_HPP_

#include <cstdint>
#include <map>
#include <string>

#include "duplex/audio.hpp"
#include "duplex/common.hpp"
#include "duplex/model.hpp"
#include "duplex/train.hpp"

namespace duplex {

struct DecodeConfig {
  int beam = 10;
  double ctc_weight = 0.5;
  double stop_threshold = 0.5;
};

struct RunConfig {
  ModelConfig model = ModelConfig::toy();
  TrainSchedule schedule;  // empty for inference-only configs
  std::map<TaskId, std::string> data;  // manifest path per task
  MelConfig mel;
  DecodeConfig decode;
  std::string symbols = "abcd";  // printable vocab characters
  std::string dtype = "f32";     // parameter scalar: "f32" or "f64"
  std::uint64_t seed = 0;

  // Training IO knobs, forwarded into TrainOpts; an empty out_dir
  // disables checkpoint and metrics files.
  std::string out_dir;
  std::int64_t ckpt_every = 500;
  std::int64_t val_every = 500;
  std::int64_t max_tokens = 2000;
  std::int64_t eval_rows = 32;

  /// Cross-field checks: the vocab (symbols plus specials) must fit the
  /// model embedding table, every scheduled task must be in the model
  /// task_set, and mel.n_mels must equal model.n_mels. Throws
  /// Error("BadConfig").
  void validate() const;
};

/// Replaces each ${NAME} with the named environment variable. Throws
/// Error("BadConfig") for an unset variable, a malformed name, or an
/// unterminated reference. `$NAME` without braces passes through.
std::string interpolate_env(const std::string& text);

/// Parses a run config. The "model" object may name a "preset"
/// (paper_shared, paper_y, toy) that remaining keys override; "mel",
/// "decode", and "train" accept partial objects; stages of "schedule"
/// may omit "datasets", which is then filled per task from "data".
/// Unknown keys are rejected. Throws Error("Parse") on malformed JSON
/// and Error("BadConfig") on bad fields; validate() runs last.
RunConfig run_config_from_json(const std::string& json_text);

std::string run_config_to_json(const RunConfig& cfg);

/// Reads the file, applies interpolate_env, parses, and validates.
/// Throws Error("Io") when the file cannot be read.
RunConfig load_run_config(const std::string& path);

}  // namespace duplex

#endif  // DUPLEX_RUNCFG_HPP_
