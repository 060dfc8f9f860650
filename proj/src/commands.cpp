// Copyright (c) 2026 The Duplex Authors
// SPDX-License-Identifier: Apache-2.0

#include "duplex/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <ostream>
#include <sstream>
#include <type_traits>
#include <vector>

#include "duplex/ckpt.hpp"
#include "duplex/datakit.hpp"
#include "duplex/infer.hpp"
#include "duplex/runcfg.hpp"
#include "duplex/train.hpp"
#include "json.hpp"

namespace duplex {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

LogLevel g_log_level = LogLevel::Info;

bool logs(LogLevel level) {
  return static_cast<int>(level) >= static_cast<int>(g_log_level);
}

// Usage and configuration problems exit 2; failures the program only
// discovers while computing exit 1.
int exit_code_for(const Error& e) {
  static const char* runtime[] = {"NonFinite", "EmptyStep", "LengthMismatch",
                                  "EmptyReference"};
  for (const char* k : runtime)
    if (e.kind() == k) return 1;
  return 2;
}

int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("Io", "cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig need_config(const std::string& path) {
  if (path.empty()) throw Error("BadConfig", "--config is required");
  return load_run_config(path);
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

SyntheticSpec spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw Error("Parse", std::string("synthetic spec: ") + e.what());
  }
  if (!j.is_object()) throw Error("Parse", "synthetic spec: not an object");
  static const char* allowed[] = {"n_utts",  "n_speakers", "alphabet",
                                  "min_len", "max_len",    "char_duration_s",
                                  "d_spk",   "sample_rate", "seed",
                                  "tone_map"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok)
      throw Error("BadConfig", "unknown key in synthetic spec: " + key);
  }
  SyntheticSpec s;
  try {
    s.n_utts = j.value("n_utts", s.n_utts);
    s.n_speakers = j.value("n_speakers", s.n_speakers);
    s.alphabet = j.value("alphabet", s.alphabet);
    s.min_len = j.value("min_len", s.min_len);
    s.max_len = j.value("max_len", s.max_len);
    s.char_duration_s = j.value("char_duration_s", s.char_duration_s);
    s.d_spk = j.value("d_spk", s.d_spk);
    s.sample_rate = j.value("sample_rate", s.sample_rate);
    s.seed = j.value("seed", s.seed);
    if (j.contains("tone_map")) {
      for (const auto& [sym, hz] : j.at("tone_map").items()) {
        if (sym.size() != 1)
          throw Error("BadConfig",
                      "tone_map keys must be single ascii symbols: " + sym);
        s.tone_map[static_cast<char32_t>(sym[0])] = hz.get<double>();
      }
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error("Parse", std::string("synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

template <class Fn>
int with_dtype(const std::string& dtype, Fn&& fn) {
  if (dtype == "f64") return fn(std::type_identity<double>{});
  return fn(std::type_identity<float>{});
}

template <class S>
std::unique_ptr<Model<S>> model_from_ckpt(const Checkpoint<S>& ck) {
  auto model = std::make_unique<Model<S>>(ck.config, 0);
  load_params(ck, model->params());
  return model;
}

template <class S>
Vec<S> load_spk(const std::string& path) {
  const VecF e = load_speaker_embedding(path);
  return normalize_speaker<S>(e.template cast<S>());
}

template <class S>
nn::Var<S> text_memory(const Model<S>& m, const std::vector<int>& ids,
                       TaskId task) {
  nn::Fwd<S> f{};
  nn::Var<S> enc = m.encode(m.text_encoder_prenet(ids, f),
                            static_cast<Eigen::Index>(ids.size()), f);
  return m.config().uses_fusion() ? m.task_fuse(enc, task, f) : enc;
}

template <class S>
nn::Var<S> speech_memory(const Model<S>& m, const Waveform& w, TaskId task) {
  nn::Fwd<S> f{};
  nn::Var<S> lat = m.speech_encoder_prenet(w, f);
  nn::Var<S> enc = m.encode(lat, lat.rows(), f);
  return m.config().uses_fusion() ? m.task_fuse(enc, task, f) : enc;
}

// Teacher-forced masked L1 between the post-net output and the target
// mel, averaged over the target's own frames.
template <class S>
double forced_l1(const Model<S>& model, const nn::Var<S>& memory,
                 const Mat<S>& mel, const Vec<S>& spk, TaskId task) {
  nn::Fwd<S> f{};
  const Mat<S> dec_in =
      make_speech_decoder_inputs(mel, model.config().reduction_factor);
  nn::Var<S> lat = model.speech_decoder_prenet(dec_in, spk, f);
  DecoderOutput<S> dec = model.decode(lat, memory, memory.rows(), task, f);
  SpeechPostnetOutput<S> post = model.speech_decoder_postnet(dec.states);
  const Mat<S>& after = post.mel_after.value();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < mel.rows(); ++i)
    acc += (after.row(i).template cast<double>() -
            mel.row(i).template cast<double>())
               .cwiseAbs()
               .sum();
  return acc / (static_cast<double>(mel.rows()) *
                static_cast<double>(mel.cols()));
}

int save_synth(const SynthesisResult& res, const MelConfig& mel_cfg,
               const std::string& out_mel, const std::string& out_wav,
               int gl_iters, std::uint64_t seed, std::ostream& out,
               std::ostream& err) {
  if (out_mel.empty()) throw Error("BadConfig", "--out is required");
  save_mel(out_mel, res.mel);
  if (res.max_steps_exceeded && logs(LogLevel::Warn))
    err << "warning: stop threshold never crossed within " << res.steps_used
        << " steps\n";
  out << out_mel << "\n";
  if (!out_wav.empty()) {
    save_wav(out_wav, griffin_lim(res.mel, mel_cfg, gl_iters, seed));
    out << out_wav << "\n";
  }
  return 0;
}

}  // namespace

void set_log_level(LogLevel level) { g_log_level = level; }

LogLevel log_level() { return g_log_level; }

LogLevel log_level_from_name(const std::string& name) {
  if (name == "debug") return LogLevel::Debug;
  if (name == "info") return LogLevel::Info;
  if (name == "warn") return LogLevel::Warn;
  if (name == "error") return LogLevel::Error;
  throw Error("BadConfig", "unknown log level: " + name);
}

int cmd_gen_data(const GenDataArgs& args, std::ostream& out,
                 std::ostream& err) {
  return guarded(err, [&] {
    if (args.out_dir.empty()) throw Error("BadConfig", "--out is required");
    SyntheticSpec spec = spec_from_json(read_file(args.spec_path));
    if (args.seed) spec.seed = *args.seed;
    const Manifest m = gen_synthetic(spec, args.out_dir);
    if (logs(LogLevel::Info))
      err << "generated " << m.rows.size() << " utterances in "
          << args.out_dir << "\n";
    out << (fs::path(args.out_dir) / "manifest.tsv").string() << "\n";
    return 0;
  });
}

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    RunConfig rc = need_config(args.config_path);
    if (args.seed) rc.seed = *args.seed;
    if (!args.out_dir.empty()) rc.out_dir = args.out_dir;
    return with_dtype(rc.dtype, [&](auto tag) {
      using S = typename decltype(tag)::type;
      Model<S> model(rc.model, rc.seed);
      TrainOpts topts;
      topts.seed = rc.seed;
      topts.out_dir = rc.out_dir;
      topts.ckpt_every = rc.ckpt_every;
      topts.val_every = rc.val_every;
      topts.max_tokens = rc.max_tokens;
      topts.eval_rows = rc.eval_rows;
      topts.log_stdout = g_log_level == LogLevel::Debug;
      Trainer<S> trainer(model, rc.schedule, Vocab::from_symbols(rc.symbols),
                         topts);
      if (!args.resume.empty()) trainer.resume(args.resume);
      trainer.run();
      if (logs(LogLevel::Info))
        err << "trained to update " << trainer.global_update() << " (skipped "
            << trainer.skipped_updates() << ")\n";
      if (!rc.out_dir.empty())
        out << (fs::path(rc.out_dir) /
                ("ckpt_" + std::to_string(trainer.global_update()) + ".stt"))
                   .string()
            << "\n";
      return 0;
    });
  });
}

int cmd_asr(const AsrArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.wav.empty() == args.manifest.empty())
      throw Error("BadConfig", "pass exactly one of --wav or --manifest");
    const RunConfig rc = need_config(args.config_path);
    const Vocab vocab = Vocab::from_symbols(rc.symbols);
    AsrDecodeOpts d;
    d.beam_size = args.beam.value_or(rc.decode.beam);
    d.ctc_weight = args.ctc_weight.value_or(rc.decode.ctc_weight);
    d.max_len = args.max_len;
    return with_dtype(rc.dtype, [&](auto tag) {
      using S = typename decltype(tag)::type;
      const Checkpoint<S> ck = load_checkpoint<S>(args.ckpt);
      const auto model = model_from_ckpt(ck);
      if (!args.wav.empty()) {
        const AsrDecodeResult res =
            asr_decode(load_wav(args.wav), *model, vocab, d);
        out << detokenize(res.best, vocab) << "\n";
        return 0;
      }
      const Manifest m = load_manifest(args.manifest);
      std::vector<std::string> refs, hyps;
      bool have_refs = !m.rows.empty();
      for (const ManifestRow& row : m.rows) {
        const AsrDecodeResult res =
            asr_decode(load_wav(m.resolve(row.audio_path)), *model, vocab, d);
        const std::string hyp = detokenize(res.best, vocab);
        out << row.utt_id << "\t" << hyp << "\n";
        hyps.push_back(hyp);
        refs.push_back(row.transcript);
        if (row.transcript.empty()) have_refs = false;
      }
      if (have_refs) {
        out << "WER " << num(error_rate(refs, hyps, ErrorUnit::Word)) << "\n";
        out << "CER " << num(error_rate(refs, hyps, ErrorUnit::Char)) << "\n";
      }
      return 0;
    });
  });
}

int cmd_tts(const TtsArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig rc = need_config(args.config_path);
    const Vocab vocab = Vocab::from_symbols(rc.symbols);
    return with_dtype(rc.dtype, [&](auto tag) {
      using S = typename decltype(tag)::type;
      const Checkpoint<S> ck = load_checkpoint<S>(args.ckpt);
      const auto model = model_from_ckpt(ck);
      SynthOpts so;
      so.stop_threshold = rc.decode.stop_threshold;
      so.max_steps = args.max_steps;
      const SynthesisResult res =
          tts_generate(args.text, load_spk<S>(args.spk_path), *model, vocab,
                       so);
      return save_synth(res, rc.mel, args.out_mel, args.out_wav, args.gl_iters,
                        rc.seed, out, err);
    });
  });
}

int cmd_vc(const VcArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig rc = need_config(args.config_path);
    return with_dtype(rc.dtype, [&](auto tag) {
      using S = typename decltype(tag)::type;
      const Checkpoint<S> ck = load_checkpoint<S>(args.ckpt);
      const auto model = model_from_ckpt(ck);
      SynthOpts so;
      so.stop_threshold = rc.decode.stop_threshold;
      so.max_steps = args.max_steps;
      const SynthesisResult res = vc_generate(
          load_wav(args.src_wav), load_spk<S>(args.spk_path), *model, so);
      return save_synth(res, rc.mel, args.out_mel, args.out_wav, args.gl_iters,
                        rc.seed, out, err);
    });
  });
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig rc = need_config(args.config_path);
    const Vocab vocab = Vocab::from_symbols(rc.symbols);
    const int cap = args.rows > 0 ? args.rows
                                  : static_cast<int>(rc.eval_rows);
    return with_dtype(rc.dtype, [&](auto tag) {
      using S = typename decltype(tag)::type;
      const Checkpoint<S> ck = load_checkpoint<S>(args.ckpt);
      const auto model = model_from_ckpt(ck);
      json j = json::object();
      auto asr_it = rc.data.find(TaskId::ASR);
      if (asr_it != rc.data.end() && ck.config.has_task(TaskId::ASR)) {
        const Manifest m = load_manifest(asr_it->second);
        AsrDecodeOpts d;
        d.beam_size = rc.decode.beam;
        d.ctc_weight = rc.decode.ctc_weight;
        d.max_len = args.max_len;
        std::vector<std::string> refs, hyps;
        for (int i = 0; i < static_cast<int>(m.rows.size()) && i < cap; ++i) {
          const ManifestRow& row = m.rows[static_cast<std::size_t>(i)];
          hyps.push_back(detokenize(
              asr_decode(load_wav(m.resolve(row.audio_path)), *model, vocab, d)
                  .best,
              vocab));
          refs.push_back(row.transcript);
        }
        if (!refs.empty()) {
          j["wer"] = error_rate(refs, hyps, ErrorUnit::Word);
          j["cer"] = error_rate(refs, hyps, ErrorUnit::Char);
        }
      }
      auto tts_it = rc.data.find(TaskId::TTS);
      if (tts_it != rc.data.end() && ck.config.has_task(TaskId::TTS)) {
        const Manifest m = load_manifest(tts_it->second);
        double acc = 0.0;
        int n = 0;
        for (int i = 0; i < static_cast<int>(m.rows.size()) && i < cap; ++i) {
          const ManifestRow& row = m.rows[static_cast<std::size_t>(i)];
          if (row.spk_emb_path.empty())
            throw Error("BadSpeaker",
                        "row lacks a speaker embedding: " + row.utt_id);
          const std::vector<int> ids =
              tokenize(normalize(row.transcript, {}), vocab).ids;
          const Mat<S> mel = logmel(load_wav(m.resolve(row.audio_path)), rc.mel)
                                 .frames.template cast<S>();
          acc += forced_l1(*model, text_memory(*model, ids, TaskId::TTS), mel,
                           load_spk<S>(m.resolve(row.spk_emb_path)),
                           TaskId::TTS);
          ++n;
        }
        if (n > 0) j["tts_l1"] = acc / n;
      }
      auto vc_it = rc.data.find(TaskId::VC);
      if (vc_it != rc.data.end() && ck.config.has_task(TaskId::VC)) {
        const Manifest m = load_manifest(vc_it->second);
        const std::vector<std::pair<int, int>> pairs = vc_pairs(m);
        double acc = 0.0;
        int n = 0;
        for (int i = 0; i < static_cast<int>(pairs.size()) && i < cap; ++i) {
          const ManifestRow& src =
              m.rows[static_cast<std::size_t>(pairs[static_cast<std::size_t>(i)].first)];
          const ManifestRow& tgt =
              m.rows[static_cast<std::size_t>(pairs[static_cast<std::size_t>(i)].second)];
          if (tgt.spk_emb_path.empty())
            throw Error("BadSpeaker",
                        "row lacks a speaker embedding: " + tgt.utt_id);
          const Mat<S> mel = logmel(load_wav(m.resolve(tgt.audio_path)), rc.mel)
                                 .frames.template cast<S>();
          acc += forced_l1(
              *model,
              speech_memory(*model, load_wav(m.resolve(src.audio_path)),
                            TaskId::VC),
              mel, load_spk<S>(m.resolve(tgt.spk_emb_path)), TaskId::VC);
          ++n;
        }
        if (n > 0) j["vc_l1"] = acc / n;
      }
      out << j.dump() << "\n";
      return 0;
    });
  });
}

int cmd_count_params(const CountParamsArgs& args, std::ostream& out,
                     std::ostream& err) {
  return guarded(err, [&] {
    if (args.preset.empty() == args.config_path.empty())
      throw Error("BadConfig", "pass exactly one of --preset or --config");
    const ModelConfig cfg = args.preset.empty()
                                ? need_config(args.config_path).model
                                : ModelConfig::preset(args.preset);
    const CountBreakdown bd = count_params(cfg);
    char line[80];
    for (const auto& [name, count] : bd.items) {
      std::snprintf(line, sizeof line, "%-32s %14zu\n", name.c_str(), count);
      out << line;
    }
    std::snprintf(line, sizeof line, "%-32s %14zu\n", "total", bd.total);
    out << line;
    return 0;
  });
}

}  // namespace duplex
