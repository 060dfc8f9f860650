// Copyright (c) 2026 The Duplex Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "duplex/commands.hpp"
#include "duplex/common.hpp"

int main(int argc, char** argv) {
  CLI::App app{"duplex: unified speech recognition and synthesis"};
  app.require_subcommand(1);

  std::string config_path;
  std::string log_level = "info";
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "run config JSON path");
  app.add_option("--log-level", log_level, "debug|info|warn|error")
      ->capture_default_str();
  app.add_option("--seed", seed, "override the configured seed");

  duplex::GenDataArgs gen;
  auto* sc_gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  sc_gen->add_option("--spec", gen.spec_path, "synthetic corpus spec JSON")
      ->required();
  sc_gen->add_option("--out", gen.out_dir, "output directory")->required();

  duplex::TrainArgs train;
  auto* sc_train = app.add_subcommand("train", "run a training schedule");
  sc_train->add_option("--resume", train.resume, "checkpoint to resume from");
  sc_train->add_option("--out-dir", train.out_dir, "override train.out_dir");

  duplex::AsrArgs asr;
  auto* sc_asr = app.add_subcommand("asr", "transcribe audio");
  sc_asr->add_option("--ckpt", asr.ckpt, "model checkpoint")->required();
  sc_asr->add_option("--wav", asr.wav, "single waveform to transcribe");
  sc_asr->add_option("--manifest", asr.manifest, "manifest of rows to score");
  sc_asr->add_option("--beam", asr.beam, "beam size");
  sc_asr->add_option("--ctc-weight", asr.ctc_weight, "CTC interpolation weight");
  sc_asr->add_option("--max-len", asr.max_len, "maximum output length")
      ->capture_default_str();

  duplex::TtsArgs tts;
  auto* sc_tts = app.add_subcommand("tts", "synthesize speech from text");
  sc_tts->add_option("--ckpt", tts.ckpt, "model checkpoint")->required();
  sc_tts->add_option("--text", tts.text, "text to synthesize")->required();
  sc_tts->add_option("--spk", tts.spk_path, "speaker embedding file")->required();
  sc_tts->add_option("--out", tts.out_mel, "output mel path")->required();
  sc_tts->add_option("--wav", tts.out_wav, "optional output waveform path");
  sc_tts->add_option("--gl-iters", tts.gl_iters, "Griffin-Lim iterations")
      ->capture_default_str();
  sc_tts->add_option("--max-steps", tts.max_steps, "decoder step budget");

  duplex::VcArgs vc;
  auto* sc_vc = app.add_subcommand("vc", "convert a voice to a target speaker");
  sc_vc->add_option("--ckpt", vc.ckpt, "model checkpoint")->required();
  sc_vc->add_option("--src", vc.src_wav, "source waveform")->required();
  sc_vc->add_option("--spk", vc.spk_path, "target speaker embedding")->required();
  sc_vc->add_option("--out", vc.out_mel, "output mel path")->required();
  sc_vc->add_option("--wav", vc.out_wav, "optional output waveform path");
  sc_vc->add_option("--gl-iters", vc.gl_iters, "Griffin-Lim iterations")
      ->capture_default_str();
  sc_vc->add_option("--max-steps", vc.max_steps, "decoder step budget");

  duplex::EvalArgs eval;
  auto* sc_eval = app.add_subcommand("eval", "score a checkpoint on a corpus");
  sc_eval->add_option("--ckpt", eval.ckpt, "model checkpoint")->required();
  sc_eval->add_option("--rows", eval.rows, "row cap per task (0: config value)")
      ->capture_default_str();
  sc_eval->add_option("--max-len", eval.max_len, "ASR maximum output length")
      ->capture_default_str();

  duplex::CountParamsArgs count;
  auto* sc_count = app.add_subcommand("count-params", "print parameter counts");
  sc_count->add_option("--preset", count.preset, "model preset name");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    duplex::set_log_level(duplex::log_level_from_name(log_level));
  } catch (const duplex::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  gen.seed = seed;
  train.config_path = config_path;
  train.seed = seed;
  asr.config_path = config_path;
  tts.config_path = config_path;
  vc.config_path = config_path;
  eval.config_path = config_path;
  count.config_path = config_path;

  if (sc_gen->parsed()) return duplex::cmd_gen_data(gen, std::cout, std::cerr);
  if (sc_train->parsed()) return duplex::cmd_train(train, std::cout, std::cerr);
  if (sc_asr->parsed()) return duplex::cmd_asr(asr, std::cout, std::cerr);
  if (sc_tts->parsed()) return duplex::cmd_tts(tts, std::cout, std::cerr);
  if (sc_vc->parsed()) return duplex::cmd_vc(vc, std::cout, std::cerr);
  if (sc_eval->parsed()) return duplex::cmd_eval(eval, std::cout, std::cerr);
  if (sc_count->parsed()) return duplex::cmd_count_params(count, std::cout, std::cerr);
  return 2;
}
