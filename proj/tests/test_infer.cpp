// Copyright (c) 2026 The Duplex Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "duplex/infer.hpp"

using namespace duplex;

namespace {

Waveform tone_wave(double freq, int len) {
  Waveform w;
  w.sample_rate = 16000;
  w.samples.resize(static_cast<std::size_t>(len));
  for (int n = 0; n < len; ++n)
    w.samples[static_cast<std::size_t>(n)] =
        static_cast<float>(0.4 * std::sin(2.0 * M_PI * freq * n / 16000.0));
  return w;
}

Mat<double> rand_logsm(Rng& rng, int t, int v) {
  Mat<double> m(t, v);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < v; ++j) m(i, j) = 4.0 * rng.uniform() - 2.0;
  for (int i = 0; i < t; ++i) {
    const double mx = m.row(i).maxCoeff();
    const double lse = mx + std::log((m.row(i).array() - mx).exp().sum());
    m.row(i).array() -= lse;
  }
  return m;
}

std::vector<int> collapse(const std::vector<int>& path, int blank) {
  std::vector<int> out;
  int prev = -1;
  for (int s : path) {
    if (s == prev) continue;
    prev = s;
    if (s != blank) out.push_back(s);
  }
  return out;
}

bool starts_with(const std::vector<int>& seq, const std::vector<int>& prefix) {
  if (seq.size() < prefix.size()) return false;
  return std::equal(prefix.begin(), prefix.end(), seq.begin());
}

// Total probability over all V^T alignment paths whose collapse begins
// with (or, for exact mode, equals) the prefix.
double brute_mass(const Mat<double>& lp, const std::vector<int>& prefix,
                  int blank, bool exact) {
  const int t_max = static_cast<int>(lp.rows());
  const int v = static_cast<int>(lp.cols());
  std::vector<int> path(static_cast<std::size_t>(t_max), 0);
  double total = 0.0;
  while (true) {
    double logp = 0.0;
    for (int t = 0; t < t_max; ++t)
      logp += lp(t, path[static_cast<std::size_t>(t)]);
    const std::vector<int> c = collapse(path, blank);
    const bool hit = exact ? c == prefix : starts_with(c, prefix);
    if (hit) total += std::exp(logp);
    int i = t_max - 1;
    while (i >= 0 && ++path[static_cast<std::size_t>(i)] == v) {
      path[static_cast<std::size_t>(i)] = 0;
      --i;
    }
    if (i < 0) break;
  }
  return total;
}

// All prefixes of length <= max_len over the non-blank symbols of a
// V-class alphabet with blank 0.
std::vector<std::vector<int>> all_prefixes(int v, int max_len) {
  std::vector<std::vector<int>> out{{}};
  std::size_t lo = 0;
  for (int l = 1; l <= max_len; ++l) {
    const std::size_t hi = out.size();
    for (std::size_t i = lo; i < hi; ++i)
      for (int c = 1; c < v; ++c) {
        std::vector<int> p = out[i];
        p.push_back(c);
        out.push_back(std::move(p));
      }
    lo = hi;
  }
  return out;
}

// Raw attention log prob of emitting `seq` then eos, teacher forced in
// one decoder pass over [bos] + seq.
template <class Scalar>
double att_raw(const Model<Scalar>& model, const nn::Var<Scalar>& memory,
               const Vocab& vocab, const std::vector<int>& seq) {
  nn::Fwd<Scalar> f{};
  std::vector<int> in{vocab.bos_id()};
  in.insert(in.end(), seq.begin(), seq.end());
  DecoderOutput<Scalar> dec = model.decode(model.text_decoder_prenet(in, f),
                                           memory, memory.rows(), TaskId::ASR,
                                           f);
  const Mat<Scalar> logits = model.text_decoder_postnet(dec.states).value();
  double total = 0.0;
  for (std::size_t i = 0; i <= seq.size(); ++i) {
    const Vec<double> lp = detail::last_row_logprobs(
        Mat<Scalar>(logits.topRows(static_cast<Eigen::Index>(i) + 1)));
    total += lp(i < seq.size() ? seq[i] : vocab.eos_id());
  }
  return total;
}

template <class Scalar>
nn::Var<Scalar> asr_memory(const Model<Scalar>& model, const Waveform& wave) {
  nn::Fwd<Scalar> f{};
  nn::Var<Scalar> lat = model.speech_encoder_prenet(wave, f);
  nn::Var<Scalar> enc = model.encode(lat, lat.rows(), f);
  return model.config().uses_fusion() ? model.task_fuse(enc, TaskId::ASR, f)
                                      : enc;
}

template <class Scalar>
Vec<Scalar> unit_spk(int d, int hot) {
  Vec<Scalar> v = Vec<Scalar>::Zero(d);
  v(hot) = Scalar(1);
  return v;
}

}  // namespace

TEST_CASE("ctc prefix score: empty prefix, uniform example, infeasible") {
  Mat<double> uni(2, 2);
  uni.setConstant(std::log(0.5));
  CHECK(ctc_prefix_score(uni, {}) == 0.0);
  // Paths starting output "a": (a,*) mass 0.5, (blank,a) mass 0.25.
  CHECK(ctc_prefix_score(uni, {1}) == doctest::Approx(std::log(0.75)).epsilon(1e-12));
  // "aa" needs a separating blank, impossible in two frames.
  CHECK(ctc_prefix_score(uni, {1, 1}) == -std::numeric_limits<double>::infinity());
  CHECK(ctc_prefix_score(uni, {1, 1, 1}) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("ctc prefix score rejects bad inputs") {
  Mat<double> uni(2, 2);
  uni.setConstant(std::log(0.5));
  CHECK_THROWS_WITH_AS(ctc_prefix_score(uni, {0}), doctest::Contains("blank"),
                       Error);
  CHECK_THROWS_WITH_AS(ctc_prefix_score(uni, {2}),
                       doctest::Contains("out of range"), Error);
  CHECK_THROWS_AS(CtcPrefixScorer(uni, 5), Error);
  Mat<double> bad = uni;
  bad(0, 0) = 0.5;  // rows no longer normalized
  CHECK_THROWS_WITH_AS(ctc_prefix_score(bad, {1}),
                       doctest::Contains("log-normalized"), Error);
  Mat<double> one_class(2, 1);
  one_class.setZero();
  CHECK_THROWS_AS(CtcPrefixScorer(one_class, 0), Error);
}

TEST_CASE("ctc prefix score matches path enumeration") {
  Rng rng(314);
  for (int t = 2; t <= 4; ++t) {
    for (int v = 2; v <= 3; ++v) {
      const Mat<double> lp = rand_logsm(rng, t, v);
      CtcPrefixScorer scorer(lp, 0);
      for (const auto& p : all_prefixes(v, 3)) {
        const double got = ctc_prefix_score(lp, p);
        const double want = brute_mass(lp, p, 0, false);
        if (want == 0.0) {
          CHECK(got == -std::numeric_limits<double>::infinity());
        } else {
          CHECK(std::exp(got) == doctest::Approx(want).epsilon(1e-9));
        }
        if (p.size() <= 2) {
          CtcPrefixScorer::State st = scorer.initial();
          for (int sym : p) st = scorer.extend(st, sym);
          const double exact = brute_mass(lp, p, 0, true);
          CHECK(std::exp(scorer.termination(st)) ==
                doctest::Approx(exact).epsilon(1e-9));
        }
      }
    }
  }
}

TEST_CASE("ctc prefix score: extensions and termination partition the mass") {
  Rng rng(99);
  const Mat<double> lp = rand_logsm(rng, 4, 3);
  CtcPrefixScorer scorer(lp, 0);
  const std::vector<std::vector<int>> prefixes{{}, {1}, {2}, {1, 2}, {2, 2}};
  for (const auto& p : prefixes) {
    CtcPrefixScorer::State st = scorer.initial();
    for (int sym : p) st = scorer.extend(st, sym);
    double mass = std::exp(scorer.termination(st));
    for (int c = 1; c < 3; ++c) mass += std::exp(scorer.extend(st, c).score);
    CHECK(mass == doctest::Approx(std::exp(st.score)).epsilon(1e-6));
    // Extending never gains probability.
    for (int c = 1; c < 3; ++c)
      CHECK(scorer.extend(st, c).score <= st.score + 1e-12);
  }
}

TEST_CASE("speaker similarity is cosine") {
  Vec<double> v(4);
  v << 0.5, -1.0, 2.0, 0.25;
  CHECK(speaker_similarity<double>(v, v) == doctest::Approx(1.0).epsilon(1e-12));
  Vec<double> neg = -v;
  CHECK(speaker_similarity<double>(v, neg) == doctest::Approx(-1.0).epsilon(1e-12));
  Vec<double> a(2), b(2);
  a << 1.0, 0.0;
  b << 0.0, -3.0;
  CHECK(speaker_similarity<double>(a, b) == doctest::Approx(0.0).epsilon(1e-12));
  VecF af(3), bf(3);
  af << 1.f, 2.f, 3.f;
  bf << 2.f, 4.f, 6.f;
  CHECK(speaker_similarity<float>(af, bf) == doctest::Approx(1.0).epsilon(1e-6));
  Vec<double> wrong(3);
  wrong.setOnes();
  CHECK_THROWS_WITH_AS(speaker_similarity<double>(v, wrong),
                       doctest::Contains("size"), Error);
  Vec<double> zero = Vec<double>::Zero(4);
  CHECK_THROWS_WITH_AS(speaker_similarity<double>(v, zero),
                       doctest::Contains("zero norm"), Error);
}

TEST_CASE("asr_decode validates inputs") {
  ModelConfig cfg = ModelConfig::toy();
  cfg.task_set = {TaskId::ASR};
  Model<float> model(cfg, 4);
  const Vocab vocab = Vocab::from_symbols("abcd");
  const Waveform wave = tone_wave(440.0, 3200);
  Waveform empty;
  CHECK_THROWS_WITH_AS(asr_decode(empty, model, vocab),
                       doctest::Contains("non-empty"), Error);
  AsrDecodeOpts bad;
  bad.ctc_weight = -0.1;
  CHECK_THROWS_AS(asr_decode(wave, model, vocab, bad), Error);
  bad.ctc_weight = 1.5;
  CHECK_THROWS_AS(asr_decode(wave, model, vocab, bad), Error);
  bad = {};
  bad.beam_size = 0;
  CHECK_THROWS_AS(asr_decode(wave, model, vocab, bad), Error);
  const Vocab big = Vocab::from_symbols("abcdefghijklmnop");
  CHECK_THROWS_WITH_AS(asr_decode(wave, model, big), doctest::Contains("vocab"),
                       Error);
}

TEST_CASE("asr_decode with beam one and no ctc is greedy attention decoding") {
  ModelConfig cfg = ModelConfig::toy();
  Model<float> model(cfg, 11);
  const Vocab vocab = Vocab::from_symbols("abcd");
  const Waveform wave = tone_wave(330.0, 3200);
  AsrDecodeOpts opts;
  opts.beam_size = 1;
  opts.ctc_weight = 0.0;
  opts.max_len = 6;
  const AsrDecodeResult got = asr_decode(wave, model, vocab, opts);

  // Greedy oracle over the same incremental decoder calls; ties go to
  // the smaller id with eos first, matching the beam's ordering.
  nn::Fwd<float> f{};
  const nn::Var<float> memory = asr_memory(model, wave);
  std::vector<int> ids;
  double att = 0.0;
  for (int step = 0; step <= opts.max_len; ++step) {
    std::vector<int> in{vocab.bos_id()};
    in.insert(in.end(), ids.begin(), ids.end());
    DecoderOutput<float> dec = model.decode(model.text_decoder_prenet(in, f),
                                            memory, memory.rows(), TaskId::ASR,
                                            f);
    const Vec<double> lp =
        detail::last_row_logprobs(model.text_decoder_postnet(dec.states).value());
    int best = vocab.eos_id();
    if (step < opts.max_len)
      for (int c = Vocab::kEos + 1; c < vocab.size(); ++c)
        if (lp(c) > lp(best)) best = c;
    att += lp(best);
    if (best == vocab.eos_id()) break;
    ids.push_back(best);
  }
  CHECK(got.best.ids == ids);
  REQUIRE(got.nbest.size() >= 1);
  const double norm = att / (static_cast<double>(ids.size()) + 1.0);
  CHECK(got.nbest[0].att_logprob == doctest::Approx(norm).epsilon(1e-12));
  CHECK(got.nbest[0].combined == doctest::Approx(norm).epsilon(1e-12));
  for (const BeamHypothesis& h : got.nbest) {
    CHECK(got.nbest[0].combined >= h.combined);
    CHECK(h.combined ==
          doctest::Approx((1.0 - opts.ctc_weight) * h.att_logprob +
                          opts.ctc_weight * h.ctc_logprob)
              .epsilon(1e-12));
  }
}

TEST_CASE("asr_decode with a wide beam equals exhaustive search") {
  // With a two-letter alphabet, beam 16 and max_len 3 no candidate is
  // ever pruned, so the search must return the true argmax over all
  // token sequences of length <= 3 for any model, trained or not.
  ModelConfig cfg = ModelConfig::toy();
  Model<double> model(cfg, 3);
  const Vocab vocab = Vocab::from_symbols("ab");
  const Waveform wave = tone_wave(523.0, 3200);
  const nn::Var<double> memory = asr_memory(model, wave);

  std::vector<std::vector<int>> seqs{{}};
  for (int l = 1; l <= 3; ++l) {
    const std::size_t n = seqs.size();
    for (std::size_t i = 0; i < n; ++i)
      if (static_cast<int>(seqs[i].size()) == l - 1)
        for (int c = Vocab::kEos + 1; c < vocab.size(); ++c) {
          std::vector<int> s = seqs[i];
          s.push_back(c);
          seqs.push_back(std::move(s));
        }
  }

  for (double w : {0.0, 0.5}) {
    CAPTURE(w);
    std::optional<CtcPrefixScorer> scorer;
    if (w > 0.0) {
      nn::Fwd<double> f{};
      scorer.emplace(model.ctc_head(memory).value(), vocab.blank_id());
    }
    double best_score = -std::numeric_limits<double>::infinity();
    std::vector<int> best_seq;
    for (const auto& s : seqs) {
      double ctc = 0.0;
      if (scorer) {
        CtcPrefixScorer::State st = scorer->initial();
        for (int sym : s) st = scorer->extend(st, sym);
        ctc = scorer->termination(st);
      }
      const double att = att_raw(model, memory, vocab, s);
      const double norm = ((1.0 - w) * att + w * ctc) /
                          (static_cast<double>(s.size()) + 1.0);
      if (norm > best_score) {
        best_score = norm;
        best_seq = s;
      }
    }
    AsrDecodeOpts opts;
    opts.beam_size = 16;
    opts.ctc_weight = w;
    opts.max_len = 3;
    const AsrDecodeResult got = asr_decode(wave, model, vocab, opts);
    CHECK(got.best.ids == best_seq);
    CHECK(got.nbest[0].combined == doctest::Approx(best_score).epsilon(1e-9));
    // All fifteen sequences finalize, capped to the beam width.
    CHECK(got.nbest.size() == 15);
  }
}

TEST_CASE("tts_generate runs the autoregressive loop") {
  ModelConfig cfg = ModelConfig::toy();
  cfg.reduction_factor = 2;
  Model<float> model(cfg, 7);
  const Vocab vocab = Vocab::from_symbols("abcd");
  const Vec<float> spk = unit_spk<float>(cfg.d_spk, 0);
  SynthOpts opts;
  opts.max_steps = 4;
  opts.stop_threshold = 0.999;  // an untrained stop head stays near 0.5
  opts.want_attention = true;
  const SynthesisResult out = tts_generate("abca", spk, model, vocab, opts);
  CHECK(out.task == TaskId::TTS);
  CHECK(out.steps_used == 4);
  CHECK(out.max_steps_exceeded);
  CHECK(out.mel.rows() == 8);
  CHECK(out.mel.cols() == cfg.n_mels);
  CHECK(out.mel.frames.allFinite());
  CHECK(out.mel.frame_shift_s == doctest::Approx(0.01));
  CHECK(out.mel.frame_length_s == doctest::Approx(0.025));
  REQUIRE(out.stop_probs.size() == 8);
  for (double p : out.stop_probs) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
  REQUIRE(out.attention.size() == static_cast<std::size_t>(cfg.dec_layers));
  REQUIRE(out.attention[0].size() == static_cast<std::size_t>(cfg.heads));
  CHECK(out.attention[0][0].rows() == 4);  // decoder steps of the last pass
  CHECK(out.attention[0][0].cols() == 4);  // four text tokens

  // Speaker identity flows into the output.
  const Vec<float> spk2 = unit_spk<float>(cfg.d_spk, 3);
  const SynthesisResult other = tts_generate("abca", spk2, model, vocab, opts);
  CHECK((other.mel.frames - out.mel.frames).cwiseAbs().maxCoeff() > 0.0f);

  CHECK_THROWS_WITH_AS(
      tts_generate("abca", spk, model, vocab, SynthOpts{1.0, 4, false, 0, false}),
      doctest::Contains("stop_threshold"), Error);
}

TEST_CASE("tts_generate bounds empty text and keeps prenet dropout reproducible") {
  ModelConfig cfg = ModelConfig::toy();
  Model<float> model(cfg, 21);
  const Vocab vocab = Vocab::from_symbols("abcd");
  const Vec<float> spk = unit_spk<float>(cfg.d_spk, 1);
  const SynthesisResult empty = tts_generate("", spk, model, vocab);
  CHECK(empty.steps_used <= 10);
  CHECK(empty.mel.rows() == empty.steps_used * cfg.reduction_factor);

  SynthOpts drop;
  drop.max_steps = 3;
  drop.stop_threshold = 0.999;
  drop.prenet_dropout = true;
  drop.seed = 5;
  const SynthesisResult a = tts_generate("ab", spk, model, vocab, drop);
  const SynthesisResult b = tts_generate("ab", spk, model, vocab, drop);
  CHECK((a.mel.frames.array() == b.mel.frames.array()).all());
  drop.seed = 6;
  const SynthesisResult c = tts_generate("ab", spk, model, vocab, drop);
  CHECK((c.mel.frames - a.mel.frames).cwiseAbs().maxCoeff() > 0.0f);
}

TEST_CASE("vc_generate routes VC and bounds output length") {
  ModelConfig cfg = ModelConfig::toy();
  Model<float> model(cfg, 13);
  const Vec<float> spk = unit_spk<float>(cfg.d_spk, 2);
  const Waveform src = tone_wave(392.0, 3200);
  SynthOpts opts;
  opts.stop_threshold = 0.999;
  const SynthesisResult out = vc_generate(src, spk, model, opts);
  CHECK(out.task == TaskId::VC);
  const int src_frames =
      mel_frame_count(static_cast<std::int64_t>(src.samples.size()), MelConfig{});
  CHECK(out.mel.rows() <= 2 * src_frames + cfg.reduction_factor);
  CHECK(out.mel.rows() == out.steps_used * cfg.reduction_factor);
  CHECK(out.mel.frames.allFinite());

  Waveform empty;
  CHECK_THROWS_WITH_AS(vc_generate(empty, spk, model),
                       doctest::Contains("non-empty"), Error);
  ModelConfig two = ModelConfig::toy();
  two.task_set = {TaskId::ASR, TaskId::TTS};
  Model<float> no_vc(two, 13);
  CHECK_THROWS_WITH_AS(vc_generate(src, spk, no_vc),
                       doctest::Contains("voice conversion"), Error);
}
