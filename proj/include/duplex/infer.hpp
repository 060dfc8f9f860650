// Copyright (c) 2026 The Duplex Authors
// SPDX-License-Identifier: Apache-2.0
//
// Inference entry points: joint CTC/attention beam search for speech
// recognition and autoregressive mel synthesis for TTS and voice
// conversion. Everything here runs the model in eval mode; the only
// stochastic knob is the optional decoder-prenet dropout during
// synthesis.

#ifndef DUPLEX_INFER_HPP_
#define DUPLEX_INFER_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "duplex/audio.hpp"
#include "duplex/common.hpp"
#include "duplex/model.hpp"
#include "duplex/text.hpp"

namespace duplex {

// ---------------------------------------------------------------------------
// CTC prefix scoring
// ---------------------------------------------------------------------------

/// Incremental prefix scorer over a fixed T x V matrix of log-softmax
/// rows. score(p) is the log probability mass of alignments whose
/// collapsed output begins with p; termination(p) is the mass of
/// alignments that collapse to exactly p. The empty prefix scores 0
/// (log 1). Prefixes no alignment can start with score -inf.
class CtcPrefixScorer {
 public:
  struct State {
    // Forward variables indexed by consumed frame count 0..T: gn holds
    // paths whose collapse equals the prefix and end on its last symbol,
    // gb those ending on blank.
    std::vector<double> gn;
    std::vector<double> gb;
    double score = 0.0;
    int last = -1;  // last symbol of the prefix, -1 for the empty prefix
  };

  /// Throws Error("ShapeMismatch") on a degenerate matrix or bad blank
  /// id, Error("BadConfig") when rows are not log-normalized.
  CtcPrefixScorer(Mat<double> log_probs, int blank = 0);

  State initial() const;
  /// Appends one non-blank symbol. Throws Error("ShapeMismatch") for an
  /// out-of-range symbol and Error("BadConfig") for the blank.
  State extend(const State& s, int symbol) const;
  double termination(const State& s) const;

  Eigen::Index frames() const { return lp_.rows(); }
  Eigen::Index classes() const { return lp_.cols(); }

 private:
  Mat<double> lp_;
  int blank_;
};

/// One-shot wrapper around CtcPrefixScorer.
double ctc_prefix_score(const Mat<double>& log_probs,
                        const std::vector<int>& prefix, int blank = 0);

// ---------------------------------------------------------------------------
// ASR beam search
// ---------------------------------------------------------------------------

/// Scores are per-token averages, where the token count includes the
/// closing eos emission, so `combined == (1-w)*att + w*ctc` holds for
/// the stored fields and ranking by `combined` is length-normalized.
struct BeamHypothesis {
  TokenSeq tokens;  // printable ids only, no bos/eos
  double att_logprob = 0.0;
  double ctc_logprob = 0.0;
  double combined = 0.0;
};

struct AsrDecodeOpts {
  int beam_size = 10;
  double ctc_weight = 0.5;  // in [0, 1]; 0 is pure attention decoding
  int max_len = 200;        // printable tokens per hypothesis
};

struct AsrDecodeResult {
  TokenSeq best;  // tokens of nbest.front()
  std::vector<BeamHypothesis> nbest;
};

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

struct SynthOpts {
  double stop_threshold = 0.5;  // in (0, 1)
  int max_steps = 0;  // 0 picks a per-task default, see tts/vc_generate
  bool prenet_dropout = false;  // keep decoder-prenet dropout live
  std::uint64_t seed = 0;       // rng seed for prenet_dropout
  bool want_attention = false;  // retain cross-attention of the last pass
};

struct SynthesisResult {
  MelSpec mel;  // steps_used * reduction_factor frames
  std::vector<double> stop_probs;  // sigmoid stop per emitted frame
  int steps_used = 0;
  bool max_steps_exceeded = false;  // stop head never crossed threshold
  TaskId task = TaskId::TTS;        // task id the decode was routed with
  std::vector<std::vector<MatF>> attention;  // [layer][head], L x T'
};

namespace detail {

inline double neg_inf() { return -std::numeric_limits<double>::infinity(); }

/// Log-softmax of the last logits row, computed in double.
template <class Scalar>
Vec<double> last_row_logprobs(const Mat<Scalar>& logits) {
  Vec<double> row = logits.row(logits.rows() - 1).template cast<double>();
  const double m = row.maxCoeff();
  const double lse = m + std::log((row.array() - m).exp().sum());
  return row.array() - lse;
}

/// Shared autoregressive decoder loop. `memory` is the (possibly task
/// fused) encoder output. The go frame is all zeros; each step feeds the
/// last post-net frame of the running output back through the speech
/// decoder prenet. Generation halts once any frame of a step crosses
/// stop_threshold, else after max_steps with the flag set.
template <class Scalar>
SynthesisResult synthesize(const Model<Scalar>& model,
                           const nn::Var<Scalar>& memory, TaskId task,
                           const Vec<Scalar>& spk, int max_steps,
                           const SynthOpts& opts) {
  const ModelConfig& cfg = model.config();
  if (!(opts.stop_threshold > 0.0 && opts.stop_threshold < 1.0))
    throw Error("BadConfig", "stop_threshold must lie in (0, 1)");
  if (max_steps < 0) throw Error("BadConfig", "max_steps must be >= 0");
  const int r = cfg.reduction_factor;
  Rng rng(opts.seed);
  nn::Fwd<Scalar> f{};  // eval mode for everything but the prenet
  SynthesisResult out;
  out.task = task;
  Mat<Scalar> feedback = Mat<Scalar>::Zero(1, cfg.n_mels);
  Mat<Scalar> mel_final(0, cfg.n_mels);
  DecoderOutput<Scalar> last_dec;
  bool halted = false;
  int steps = 0;
  while (steps < max_steps) {
    nn::Fwd<Scalar> fpre{opts.prenet_dropout, static_cast<Scalar>(cfg.dropout),
                         &rng};
    nn::Var<Scalar> dec_in = model.speech_decoder_prenet(feedback, spk, fpre);
    DecoderOutput<Scalar> dec = model.decode(dec_in, memory, memory.rows(),
                                             task, f, opts.want_attention);
    SpeechPostnetOutput<Scalar> post = model.speech_decoder_postnet(dec.states);
    ++steps;
    const Mat<Scalar>& mel_after = post.mel_after.value();
    const Mat<Scalar>& stop = post.stop_logits.value();
    bool fire = false;
    for (Eigen::Index i = static_cast<Eigen::Index>(steps - 1) * r;
         i < static_cast<Eigen::Index>(steps) * r; ++i) {
      const double p =
          1.0 / (1.0 + std::exp(-static_cast<double>(stop(i, 0))));
      out.stop_probs.push_back(p);
      if (p > opts.stop_threshold) fire = true;
    }
    // The post-net convolution is acausal over time, so earlier rows
    // keep refining as steps accumulate; the returned mel is the final
    // pass over the full sequence.
    mel_final = mel_after;
    if (opts.want_attention) last_dec = std::move(dec);
    if (fire) {
      halted = true;
      break;
    }
    if (steps == max_steps) break;
    Mat<Scalar> next(steps + 1, cfg.n_mels);
    next.topRows(steps) = feedback;
    next.row(steps) = mel_after.row(static_cast<Eigen::Index>(steps) * r - 1);
    feedback = std::move(next);
  }
  out.steps_used = steps;
  out.max_steps_exceeded = !halted;
  if (!mel_final.allFinite())
    throw Error("NonFinite", "synthesis produced a non-finite mel frame");
  for (double p : out.stop_probs)
    if (!std::isfinite(p))
      throw Error("NonFinite", "synthesis produced a non-finite stop prob");
  const MelConfig mc{};
  out.mel.frames = mel_final.template cast<float>();
  out.mel.frame_shift_s = static_cast<double>(mc.hop) / mc.sample_rate;
  out.mel.frame_length_s = static_cast<double>(mc.win) / mc.sample_rate;
  if (opts.want_attention) {
    for (const auto& layer : last_dec.cross_attention) {
      out.attention.emplace_back();
      for (const auto& head : layer)
        out.attention.back().push_back(head.value().template cast<float>());
    }
  }
  return out;
}

}  // namespace detail

/// Joint CTC/attention beam search over the ASR decoder. Hypotheses are
/// extended one printable token per round; an eos extension that wins a
/// beam slot finalizes the hypothesis and leaves the beam, so the search
/// ends when the beam empties or every survivor reaches max_len (the
/// final round admits only eos). With ctc_weight 0 and beam_size 1 this
/// is exact greedy attention decoding, ties broken toward the smaller
/// token id. Throws Error("EmptyAudio") for an empty waveform and
/// Error("BadConfig") for out-of-range options.
template <class Scalar>
AsrDecodeResult asr_decode(const Waveform& wave, const Model<Scalar>& model,
                           const Vocab& vocab, const AsrDecodeOpts& opts = {}) {
  if (wave.samples.empty())
    throw Error("EmptyAudio", "asr_decode needs a non-empty waveform");
  if (!(opts.ctc_weight >= 0.0 && opts.ctc_weight <= 1.0))
    throw Error("BadConfig", "ctc_weight must lie in [0, 1]");
  if (opts.beam_size < 1) throw Error("BadConfig", "beam_size must be >= 1");
  if (opts.max_len < 0) throw Error("BadConfig", "max_len must be >= 0");
  if (vocab.size() > model.config().vocab_size)
    throw Error("BadConfig", "vocab does not fit the model embedding table");
  const double w = opts.ctc_weight;
  nn::Fwd<Scalar> f{};
  nn::Var<Scalar> lat = model.speech_encoder_prenet(wave, f);
  nn::Var<Scalar> enc = model.encode(lat, lat.rows(), f);
  nn::Var<Scalar> fused = model.config().uses_fusion()
                              ? model.task_fuse(enc, TaskId::ASR, f)
                              : enc;
  std::optional<CtcPrefixScorer> scorer;
  if (w > 0.0) {
    nn::Var<Scalar> clp =
        model.ctc_head(model.config().ctc_on_fused ? fused : enc);
    scorer.emplace(clp.value().template cast<double>(), vocab.blank_id());
  }

  struct Hyp {
    std::vector<int> ids;
    double att = 0.0;  // raw attention log prob of the emitted ids
    CtcPrefixScorer::State st;
  };
  struct Cand {
    Hyp hyp;
    double raw = 0.0;  // (1-w)*att + w*ctc, unnormalized
    double ctc = 0.0;
    bool is_eos = false;
  };
  std::vector<Hyp> active(1);
  if (scorer) active[0].st = scorer->initial();
  std::vector<BeamHypothesis> done;
  for (int round = 0; !active.empty(); ++round) {
    const bool last_round = round >= opts.max_len;
    std::vector<Cand> cands;
    for (const Hyp& h : active) {
      std::vector<int> in;
      in.reserve(h.ids.size() + 1);
      in.push_back(vocab.bos_id());
      in.insert(in.end(), h.ids.begin(), h.ids.end());
      nn::Var<Scalar> dec_in = model.text_decoder_prenet(in, f);
      DecoderOutput<Scalar> dec =
          model.decode(dec_in, fused, fused.rows(), TaskId::ASR, f);
      nn::Var<Scalar> logits = model.text_decoder_postnet(dec.states);
      Vec<double> lp = detail::last_row_logprobs(logits.value());
      Cand eos;
      eos.hyp.ids = h.ids;
      eos.hyp.att = h.att + lp(vocab.eos_id());
      eos.ctc = scorer ? scorer->termination(h.st) : 0.0;
      eos.raw = (1.0 - w) * eos.hyp.att + w * eos.ctc;
      eos.is_eos = true;
      cands.push_back(std::move(eos));
      if (last_round) continue;
      for (int c = Vocab::kEos + 1; c < vocab.size(); ++c) {
        Cand n;
        n.hyp.ids = h.ids;
        n.hyp.ids.push_back(c);
        n.hyp.att = h.att + lp(c);
        if (scorer) {
          n.hyp.st = scorer->extend(h.st, c);
          n.ctc = n.hyp.st.score;
        }
        n.raw = (1.0 - w) * n.hyp.att + w * n.ctc;
        cands.push_back(std::move(n));
      }
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Cand& a, const Cand& b) { return a.raw > b.raw; });
    const std::size_t keep =
        std::min<std::size_t>(cands.size(), static_cast<std::size_t>(opts.beam_size));
    std::vector<Hyp> next;
    for (std::size_t i = 0; i < keep; ++i) {
      Cand& c = cands[i];
      if (c.is_eos) {
        const double n = static_cast<double>(c.hyp.ids.size()) + 1.0;
        BeamHypothesis bh;
        bh.tokens.ids = std::move(c.hyp.ids);
        bh.att_logprob = c.hyp.att / n;
        bh.ctc_logprob = c.ctc / n;
        bh.combined = (1.0 - w) * bh.att_logprob + w * bh.ctc_logprob;
        done.push_back(std::move(bh));
      } else {
        next.push_back(std::move(c.hyp));
      }
    }
    active = std::move(next);
  }
  std::stable_sort(done.begin(), done.end(),
                   [](const BeamHypothesis& a, const BeamHypothesis& b) {
                     return a.combined > b.combined;
                   });
  if (done.size() > static_cast<std::size_t>(opts.beam_size))
    done.resize(static_cast<std::size_t>(opts.beam_size));
  AsrDecodeResult out;
  out.nbest = std::move(done);
  out.best = out.nbest.front().tokens;
  return out;
}

/// Synthesizes a mel spectrogram from text. The default step budget is
/// 20 * ceil(len / r) decoder steps with a floor of 10, which also
/// bounds generation for empty text (conditioned on a lone eos row so
/// the encoder has something to attend to). Decoder-prenet dropout is
/// off unless opts.prenet_dropout is set.
template <class Scalar>
SynthesisResult tts_generate(const std::string& text, const Vec<Scalar>& spk,
                             const Model<Scalar>& model, const Vocab& vocab,
                             const SynthOpts& opts = {}) {
  const ModelConfig& cfg = model.config();
  if (vocab.size() > cfg.vocab_size)
    throw Error("BadConfig", "vocab does not fit the model embedding table");
  std::vector<int> ids = tokenize(normalize(text, {}), vocab).ids;
  const int len = static_cast<int>(ids.size());
  if (ids.empty()) ids.push_back(vocab.eos_id());
  const int r = cfg.reduction_factor;
  int max_steps = opts.max_steps;
  if (max_steps <= 0) max_steps = std::max(10, 20 * ((len + r - 1) / r));
  nn::Fwd<Scalar> f{};
  nn::Var<Scalar> enc = model.encode(model.text_encoder_prenet(ids, f),
                                     static_cast<Eigen::Index>(ids.size()), f);
  nn::Var<Scalar> fused =
      cfg.uses_fusion() ? model.task_fuse(enc, TaskId::TTS, f) : enc;
  return detail::synthesize(model, fused, TaskId::TTS, spk, max_steps, opts);
}

/// Re-synthesizes source speech with a target speaker embedding. The
/// default step budget allows twice the source mel frame count. Throws
/// Error("UnknownTask") when the model was not built with VC and
/// Error("EmptyAudio") for an empty source.
template <class Scalar>
SynthesisResult vc_generate(const Waveform& source, const Vec<Scalar>& target_spk,
                            const Model<Scalar>& model,
                            const SynthOpts& opts = {}) {
  if (source.samples.empty())
    throw Error("EmptyAudio", "vc_generate needs a non-empty waveform");
  const ModelConfig& cfg = model.config();
  if (!cfg.has_task(TaskId::VC))
    throw Error("UnknownTask", "voice conversion is not in the task set");
  nn::Fwd<Scalar> f{};
  nn::Var<Scalar> lat = model.speech_encoder_prenet(source, f);
  nn::Var<Scalar> enc = model.encode(lat, lat.rows(), f);
  nn::Var<Scalar> fused =
      cfg.uses_fusion() ? model.task_fuse(enc, TaskId::VC, f) : enc;
  const int r = cfg.reduction_factor;
  const int src_frames = mel_frame_count(
      static_cast<std::int64_t>(source.samples.size()), MelConfig{});
  int max_steps = opts.max_steps;
  if (max_steps <= 0) max_steps = std::max(10, (2 * src_frames + r - 1) / r);
  return detail::synthesize(model, fused, TaskId::VC, target_spk, max_steps,
                            opts);
}

/// Cosine similarity between two speaker embeddings. Throws
/// Error("ShapeMismatch") on size mismatch and Error("BadSpeaker") for a
/// zero-norm input.
template <class Scalar>
double speaker_similarity(const Vec<Scalar>& a, const Vec<Scalar>& b) {
  if (a.size() != b.size() || a.size() == 0)
    throw Error("ShapeMismatch", "speaker embeddings must share a nonzero size");
  Vec<double> x = a.template cast<double>();
  Vec<double> y = b.template cast<double>();
  const double nx = x.norm(), ny = y.norm();
  if (!(nx > 0.0) || !(ny > 0.0))
    throw Error("BadSpeaker", "speaker embedding has zero norm");
  return x.dot(y) / (nx * ny);
}

}  // namespace duplex

#endif  // DUPLEX_INFER_HPP_
