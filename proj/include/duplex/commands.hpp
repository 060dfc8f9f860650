// Copyright (c) 2026 The Duplex Authors
// SPDX-License-Identifier: Apache-2.0
//
// Subcommand bodies behind the duplex binary, separated from argv
// parsing so tests can drive them in process. Every command returns the
// process exit code: 0 success, 1 runtime failure, 2 usage or config
// error. Diagnostics go to `err`; results go to `out` or to files.

#ifndef DUPLEX_COMMANDS_HPP_
#define DUPLEX_COMMANDS_HPP_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace duplex {

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Error = 3 };

void set_log_level(LogLevel level);
LogLevel log_level();
/// Parses "debug", "info", "warn", "error"; throws Error("BadConfig").
LogLevel log_level_from_name(const std::string& name);

struct GenDataArgs {
  std::string spec_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;  // overrides the spec's seed
};

struct TrainArgs {
  std::string config_path;
  std::string resume;  // checkpoint to continue from; empty starts fresh
  std::optional<std::uint64_t> seed;  // overrides the config seed
  std::string out_dir;                // overrides train.out_dir
};

struct AsrArgs {
  std::string config_path;
  std::string ckpt;
  std::string wav;       // single-utterance mode
  std::string manifest;  // batch mode; exactly one of wav / manifest
  std::optional<int> beam;
  std::optional<double> ctc_weight;
  int max_len = 200;
};

struct TtsArgs {
  std::string config_path;
  std::string ckpt;
  std::string text;
  std::string spk_path;  // speaker embedding file
  std::string out_mel;
  std::string out_wav;  // empty skips Griffin-Lim
  int gl_iters = 32;
  int max_steps = 0;  // 0 uses the per-task default
};

struct VcArgs {
  std::string config_path;
  std::string ckpt;
  std::string src_wav;
  std::string spk_path;
  std::string out_mel;
  std::string out_wav;
  int gl_iters = 32;
  int max_steps = 0;
};

struct EvalArgs {
  std::string config_path;
  std::string ckpt;
  int rows = 0;      // per-task row cap; 0 uses the config's eval_rows
  int max_len = 40;  // ASR decode budget
};

struct CountParamsArgs {
  std::string config_path;  // exactly one of config_path / preset
  std::string preset;
};

int cmd_gen_data(const GenDataArgs& args, std::ostream& out,
                 std::ostream& err);
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);
int cmd_asr(const AsrArgs& args, std::ostream& out, std::ostream& err);
int cmd_tts(const TtsArgs& args, std::ostream& out, std::ostream& err);
int cmd_vc(const VcArgs& args, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);
int cmd_count_params(const CountParamsArgs& args, std::ostream& out,
                     std::ostream& err);

}  // namespace duplex

#endif  // DUPLEX_COMMANDS_HPP_
