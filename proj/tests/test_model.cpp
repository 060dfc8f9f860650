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

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "duplex/model.hpp"

using namespace duplex;
using nn::Var;

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

MatF random_mel(Rng& rng, int t, int n_mels = 80) {
  MatF m(t, n_mels);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < n_mels; ++j)
      m(i, j) = static_cast<float>(rng.normal());
  return m;
}

VecF unit_spk(Rng& rng, int d) {
  VecF v(d);
  for (int i = 0; i < d; ++i) v[i] = static_cast<float>(rng.normal());
  return normalize_speaker(v);
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("conv stack length arithmetic") {
  CHECK(speech_prenet_out_len(16000) == 99);
  CHECK(speech_prenet_out_len(32000) == 199);  // doubling within +-1 of 2x
  CHECK(speech_prenet_out_len(239) == 0);
  CHECK(speech_prenet_out_len(240) == 1);

  // Composition oracle, layer by layer.
  std::int64_t len = 16000;
  const int ks[6] = {10, 3, 3, 3, 3, 2}, ss[6] = {5, 2, 2, 2, 2, 2};
  for (int i = 0; i < 6; ++i) len = (len - ks[i]) / ss[i] + 1;
  CHECK(speech_prenet_out_len(16000) == len);
}

TEST_CASE("speech encoder prenet shapes and finiteness") {
  Model<float> model(ModelConfig::toy(), 1);
  nn::Fwd<float> f;
  Waveform w = tone_wave(440.0, 4000);
  auto h = model.speech_encoder_prenet(w, f);
  CHECK(h.rows() == speech_prenet_out_len(4000));
  CHECK(h.cols() == 64);

  Waveform zero;
  zero.samples.assign(2000, 0.0f);
  auto hz = model.speech_encoder_prenet(zero, f);
  CHECK(hz.value().allFinite());

  Waveform tiny;
  tiny.samples.assign(100, 0.1f);
  CHECK_THROWS_AS(model.speech_encoder_prenet(tiny, f), Error);
}

TEST_CASE("text encoder prenet embeds and adds positions") {
  Model<float> model(ModelConfig::toy(), 2);
  nn::Fwd<float> f;
  std::vector<int> ids = {4, 7, 4};
  auto h = model.text_encoder_prenet(ids, f);
  CHECK(h.rows() == 3);
  CHECK(h.cols() == 64);
  // Identical tokens give identical rows once positions are removed.
  MatF pe = nn::sinusoidal_pe<float>(3, 64);
  MatF raw = h.value() - pe;
  CHECK((raw.row(0) - raw.row(2)).norm() == doctest::Approx(0.0f));
  CHECK((raw.row(0) - raw.row(1)).norm() > 1e-3f);
  CHECK_THROWS_AS(model.text_encoder_prenet({99}, f), Error);
}

TEST_CASE("embedding is tied across prenet and postnet") {
  Model<float> model(ModelConfig::toy(), 3);
  nn::Fwd<float> f;
  std::vector<int> ids = {5};
  auto before_pre = model.text_encoder_prenet(ids, f).value();
  auto states = Var<float>::constant(MatF::Ones(2, 64));
  auto before_post = model.text_decoder_postnet(states).value();

  model.params().at("text_emb").value().row(5).array() += 0.5f;
  auto after_pre = model.text_encoder_prenet(ids, f).value();
  auto after_post = model.text_decoder_postnet(states).value();

  CHECK((after_pre - before_pre).norm() > 1e-3f);
  // Only logits column 5 moves.
  for (int col = 0; col < 16; ++col) {
    float delta = std::abs(after_post(0, col) - before_post(0, col));
    if (col == 5)
      CHECK(delta > 1e-3f);
    else
      CHECK(delta == doctest::Approx(0.0f));
  }
}

TEST_CASE("encoder masks padded tail") {
  Model<float> model(ModelConfig::toy(), 4);
  nn::Fwd<float> f;
  Rng rng(5);
  MatF base(6, 64);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 64; ++j)
      base(i, j) = static_cast<float>(rng.normal());

  auto out1 = model.encode(Var<float>::constant(base), 4, f).value();
  MatF permuted = base;
  permuted.row(4) = base.row(5);
  permuted.row(5) = base.row(4);
  auto out2 = model.encode(Var<float>::constant(permuted), 4, f).value();
  CHECK((out1.topRows(4) - out2.topRows(4)).norm() == doctest::Approx(0.0f));

  auto single = model.encode(Var<float>::constant(base.topRows(1)), 1, f);
  CHECK(single.rows() == 1);
  CHECK(single.cols() == 64);

  // Eval mode is deterministic.
  auto rep = model.encode(Var<float>::constant(base), 4, f).value();
  CHECK((rep - out1).norm() == doctest::Approx(0.0f));

  CHECK_THROWS_AS(model.encode(Var<float>::constant(base), 0, f), Error);
  CHECK_THROWS_AS(model.encode(Var<float>::constant(base), 7, f), Error);
}

TEST_CASE("task fusion conditions on the task") {
  Model<float> model(ModelConfig::toy(), 6);
  nn::Fwd<float> f;
  Rng rng(7);
  MatF states(5, 64);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 64; ++j)
      states(i, j) = static_cast<float>(rng.normal());
  auto enc = Var<float>::constant(states);

  auto asr = model.task_fuse(enc, TaskId::ASR, f);
  auto tts = model.task_fuse(enc, TaskId::TTS, f);
  CHECK(asr.rows() == 5);
  CHECK(asr.cols() == 64);
  CHECK((asr.value() - tts.value()).norm() > 1e-3f);

  // Identity construction: W = [I; 0], b = 0.
  auto& w = model.params().at("fusion.fc.w");
  auto& b = model.params().at("fusion.fc.b");
  MatF ident = MatF::Zero(64 + 16, 64);
  ident.topRows(64) = MatF::Identity(64, 64);
  MatF saved_w = w.value();
  MatF saved_b = b.value();
  w.value() = ident;
  b.value().setZero();
  auto fused = model.task_fuse(enc, TaskId::VC, f);
  CHECK((fused.value() - states).norm() == doctest::Approx(0.0f));
  w.value() = saved_w;
  b.value() = saved_b;

  ModelConfig asr_only = ModelConfig::toy();
  asr_only.task_set = {TaskId::ASR};
  Model<float> single(asr_only, 8);
  CHECK_THROWS_AS(single.task_fuse(enc, TaskId::ASR, f), Error);
}

TEST_CASE("fusion parameter count closed form") {
  ModelConfig cfg = ModelConfig::toy();
  auto breakdown = count_params(cfg);
  const std::size_t expected =
      (64 + 16) * 64 + 64 + cfg.task_set.size() * 16;
  CHECK(breakdown.component("fusion") == expected);

  Model<float> model(cfg, 9);
  CHECK(model.params().prefix_size("fusion.") == expected);
}

TEST_CASE("speech decoder prenet zero chain and speaker sensitivity") {
  Model<float> model(ModelConfig::toy(), 10);
  nn::Fwd<float> f;
  MatF zero_mel = MatF::Zero(4, 80);
  VecF zero_spk = VecF::Zero(32);
  auto out = model.speech_decoder_prenet(zero_mel, zero_spk, f);
  CHECK(out.rows() == 4);
  CHECK(out.cols() == 64);
  CHECK(out.value().norm() == doctest::Approx(0.0f));

  Rng rng(11);
  MatF mel = random_mel(rng, 4);
  VecF spk1 = unit_spk(rng, 32);
  VecF spk2 = unit_spk(rng, 32);
  auto o1 = model.speech_decoder_prenet(mel, spk1, f).value();
  auto o2 = model.speech_decoder_prenet(mel, spk2, f).value();
  for (int i = 0; i < 4; ++i)
    CHECK((o1.row(i) - o2.row(i)).norm() > 1e-4f);

  CHECK_THROWS_AS(model.speech_decoder_prenet(MatF::Zero(4, 40), spk1, f),
                  Error);
}

TEST_CASE("speaker embedding normalization") {
  VecF v(4);
  v << 3.f, 0.f, 4.f, 0.f;
  VecF n = normalize_speaker(v);
  CHECK(n.norm() == doctest::Approx(1.0f).epsilon(1e-5));
  CHECK(n[0] == doctest::Approx(0.6f));
  VecF zeros = VecF::Zero(4);
  CHECK_THROWS_AS(normalize_speaker(zeros), Error);
}

TEST_CASE("decoder causality") {
  Model<float> model(ModelConfig::toy(), 12);
  nn::Fwd<float> f;
  Rng rng(13);
  MatF enc_states(6, 64), dec_in(5, 64);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 64; ++j)
      enc_states(i, j) = static_cast<float>(rng.normal());
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 64; ++j)
      dec_in(i, j) = static_cast<float>(rng.normal());
  auto enc = Var<float>::constant(enc_states);

  auto out1 = model.decode(Var<float>::constant(dec_in), enc, 6,
                           TaskId::ASR, f);
  MatF mutated = dec_in;
  mutated.row(4).setConstant(10.0f);
  auto out2 = model.decode(Var<float>::constant(mutated), enc, 6,
                           TaskId::ASR, f);
  CHECK((out1.states.value().topRows(4) - out2.states.value().topRows(4))
            .norm() == doctest::Approx(0.0f));
  CHECK((out1.states.value().row(4) - out2.states.value().row(4)).norm() >
        1e-3f);

  auto single = model.decode(Var<float>::constant(dec_in.topRows(1)), enc, 6,
                             TaskId::TTS, f);
  CHECK(single.states.rows() == 1);
}

TEST_CASE("decoder cross attention maps") {
  Model<float> model(ModelConfig::toy(), 14);
  nn::Fwd<float> f;
  Rng rng(15);
  MatF enc_states(7, 64), dec_in(3, 64);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 64; ++j)
      enc_states(i, j) = static_cast<float>(rng.normal());
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 64; ++j)
      dec_in(i, j) = static_cast<float>(rng.normal());

  auto out = model.decode(Var<float>::constant(dec_in),
                          Var<float>::constant(enc_states), 5, TaskId::ASR, f,
                          true);
  REQUIRE(out.cross_attention.size() == 2);   // dec_layers
  REQUIRE(out.cross_attention[0].size() == 4);  // heads
  for (const auto& layer : out.cross_attention)
    for (const auto& head : layer) {
      CHECK(head.rows() == 3);
      CHECK(head.cols() == 7);
      for (int i = 0; i < 3; ++i) {
        CHECK(head.value().row(i).sum() == doctest::Approx(1.0f));
        // Masked encoder tail gets zero attention.
        CHECK(head.value()(i, 5) == doctest::Approx(0.0f));
        CHECK(head.value()(i, 6) == doctest::Approx(0.0f));
      }
    }
}

TEST_CASE("text decoder postnet distributions") {
  Model<float> model(ModelConfig::toy(), 16);
  auto zero_states = Var<float>::constant(MatF::Zero(3, 64));
  auto logits = model.text_decoder_postnet(zero_states);
  // Zero states and zero bias: uniform distribution.
  auto probs = nn::softmax_rows(logits);
  for (int i = 0; i < 3; ++i)
    for (int v = 0; v < 16; ++v)
      CHECK(probs.value()(i, v) == doctest::Approx(1.0f / 16.0f));

  Rng rng(17);
  MatF states(4, 64);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 64; ++j)
      states(i, j) = static_cast<float>(rng.normal());
  auto p2 = nn::softmax_rows(
      model.text_decoder_postnet(Var<float>::constant(states)));
  for (int i = 0; i < 4; ++i)
    CHECK(p2.value().row(i).sum() == doctest::Approx(1.0f).epsilon(1e-6));
}

TEST_CASE("speech decoder postnet residual starts at zero") {
  ModelConfig cfg = ModelConfig::toy();
  cfg.reduction_factor = 2;
  Model<float> model(cfg, 18);
  Rng rng(19);
  MatF states(3, 64);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 64; ++j)
      states(i, j) = static_cast<float>(rng.normal());
  auto out = model.speech_decoder_postnet(Var<float>::constant(states));
  CHECK(out.mel_before.rows() == 6);  // L * r
  CHECK(out.mel_before.cols() == 80);
  CHECK(out.mel_after.rows() == 6);
  CHECK(out.stop_logits.rows() == 6);
  CHECK(out.stop_logits.cols() == 1);
  // Final conv is zero-initialized.
  CHECK((out.mel_after.value() - out.mel_before.value()).norm() ==
        doctest::Approx(0.0f));
}

TEST_CASE("speech decoder postnet residual gradients flow") {
  Model<double> model(ModelConfig::toy(), 20);
  // Give the zero-initialized last conv real values so gradient reaches
  // the whole stack.
  auto& last_w = model.params().at("speech_dec_postnet.conv4.w");
  Rng rng(21);
  for (Eigen::Index i = 0; i < last_w.value().rows(); ++i)
    for (Eigen::Index j = 0; j < last_w.value().cols(); ++j)
      last_w.value()(i, j) = rng.normal() * 0.05;

  MatD states(4, 64);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 64; ++j)
      states(i, j) = rng.normal();
  auto out = model.speech_decoder_postnet(Var<double>::constant(states));
  nn::backward(nn::sum_all(out.mel_after));
  for (int i = 0; i < 5; ++i) {
    const auto& g = model.params()
                        .at("speech_dec_postnet.conv" + std::to_string(i) +
                            ".w")
                        .grad();
    REQUIRE(g.size() > 0);
    CHECK(g.norm() > 0.0);
  }
}

TEST_CASE("ctc head log probabilities") {
  Model<float> model(ModelConfig::toy(), 22);
  auto zero = Var<float>::constant(MatF::Zero(5, 64));
  auto lp = model.ctc_head(zero);
  for (int i = 0; i < 5; ++i)
    for (int v = 0; v < 16; ++v)
      CHECK(lp.value()(i, v) == doctest::Approx(std::log(1.0f / 16.0f)));

  Rng rng(23);
  MatF states(4, 64);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 64; ++j)
      states(i, j) = static_cast<float>(rng.normal());
  auto lp2 = model.ctc_head(Var<float>::constant(states));
  for (int i = 0; i < 4; ++i) {
    float lse = std::log(lp2.value().row(i).array().exp().sum());
    CHECK(lse == doctest::Approx(0.0f).epsilon(1e-5));
  }
}

TEST_CASE("y decoder topology instantiates two stacks") {
  ModelConfig cfg = ModelConfig::toy();
  cfg.decoder_topology = DecoderTopology::YDecoder;
  Model<float> model(cfg, 24);
  CHECK(model.params().prefix_size("decoder_text.") > 0);
  CHECK(model.params().prefix_size("decoder_speech.") > 0);
  CHECK(model.params().prefix_size("decoder.") == 0);
  CHECK(model.params().prefix_size("fusion.") == 0);

  nn::Fwd<float> f;
  Rng rng(25);
  MatF enc_states(4, 64), dec_in(2, 64);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 64; ++j)
      enc_states(i, j) = static_cast<float>(rng.normal());
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 64; ++j)
      dec_in(i, j) = static_cast<float>(rng.normal());
  auto enc = Var<float>::constant(enc_states);
  auto din = Var<float>::constant(dec_in);

  auto asr = model.decode(din, enc, 4, TaskId::ASR, f);
  auto touched_asr = nn::reachable_params(nn::sum_all(asr.states));
  CHECK(touched_asr.count("decoder_text.l0.self.q.w") == 1);
  CHECK(touched_asr.count("decoder_speech.l0.self.q.w") == 0);

  auto tts = model.decode(din, enc, 4, TaskId::TTS, f);
  auto touched_tts = nn::reachable_params(nn::sum_all(tts.states));
  CHECK(touched_tts.count("decoder_speech.l0.self.q.w") == 1);
  CHECK(touched_tts.count("decoder_text.l0.self.q.w") == 0);
}

TEST_CASE("shared backbone touches identical tensors for ASR and TTS") {
  Model<float> model(ModelConfig::toy(), 26);
  nn::Fwd<float> f;

  Waveform w = tone_wave(440.0, 1200);
  auto asr_latents = model.speech_encoder_prenet(w, f);
  auto asr_enc = model.encode(asr_latents, asr_latents.rows(), f);
  auto asr_fused = model.task_fuse(asr_enc, TaskId::ASR, f);
  auto asr_dec = model.decode(model.text_decoder_prenet({2, 4, 5}, f),
                              asr_fused, asr_fused.rows(), TaskId::ASR, f);
  auto asr_logits = model.text_decoder_postnet(asr_dec.states);
  auto asr_touched = nn::reachable_params(nn::sum_all(asr_logits));

  Rng rng(27);
  auto tts_latents = model.text_encoder_prenet({4, 5, 6}, f);
  auto tts_enc = model.encode(tts_latents, tts_latents.rows(), f);
  auto tts_fused = model.task_fuse(tts_enc, TaskId::TTS, f);
  MatF mel_in = make_speech_decoder_inputs<float>(random_mel(rng, 4), 1);
  auto dec_in = model.speech_decoder_prenet(mel_in, unit_spk(rng, 32), f);
  auto tts_dec = model.decode(dec_in, tts_fused, tts_fused.rows(),
                              TaskId::TTS, f);
  auto tts_post = model.speech_decoder_postnet(tts_dec.states);
  auto tts_touched = nn::reachable_params(nn::sum_all(tts_post.mel_after));

  auto filter = [](const std::set<std::string>& names) {
    std::set<std::string> out;
    for (const auto& n : names)
      if (n.rfind("encoder.", 0) == 0 || n.rfind("decoder.", 0) == 0)
        out.insert(n);
    return out;
  };
  auto asr_backbone = filter(asr_touched);
  auto tts_backbone = filter(tts_touched);
  CHECK(!asr_backbone.empty());
  CHECK(asr_backbone == tts_backbone);
}

TEST_CASE("decoder input helper") {
  MatF mel(6, 3);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 3; ++j) mel(i, j) = float(10 * i + j);
  MatF in2 = make_speech_decoder_inputs<float>(mel, 2);
  REQUIRE(in2.rows() == 3);
  CHECK(in2.row(0).norm() == doctest::Approx(0.0f));
  CHECK(in2(1, 0) == 10.0f);  // frame 1
  CHECK(in2(2, 0) == 30.0f);  // frame 3

  MatF in1 = make_speech_decoder_inputs<float>(mel, 1);
  REQUIRE(in1.rows() == 6);
  CHECK(in1.row(0).norm() == doctest::Approx(0.0f));
  CHECK(in1(1, 0) == 0.0f);   // frame 0
  CHECK(in1(5, 0) == 40.0f);  // frame 4

  MatF in5 = make_speech_decoder_inputs<float>(MatF::Ones(5, 3), 2);
  CHECK(in5.rows() == 3);  // ceil(5/2)
}

TEST_CASE("paper scale parameter counts") {
  auto shared = count_params(ModelConfig::paper_shared());
  const double shared_m = double(shared.total) / 1e6;
  CHECK(shared_m >= 155.0 * 0.95);
  CHECK(shared_m <= 155.0 * 1.05);

  auto y = count_params(ModelConfig::paper_y());
  const double y_m = double(y.total) / 1e6;
  CHECK(y_m >= 211.0 * 0.95);
  CHECK(y_m <= 211.0 * 1.05);

  ModelConfig asr_only = ModelConfig::paper_shared();
  asr_only.task_set = {TaskId::ASR};
  ModelConfig tts_only = ModelConfig::paper_shared();
  tts_only.task_set = {TaskId::TTS};
  ModelConfig both = ModelConfig::paper_shared();
  both.task_set = {TaskId::ASR, TaskId::TTS};
  ModelConfig both_y = ModelConfig::paper_y();
  both_y.task_set = {TaskId::ASR, TaskId::TTS};

  const auto a = count_params(asr_only).total;
  const auto t = count_params(tts_only).total;
  const auto b = count_params(both).total;
  const auto by = count_params(both_y).total;
  CHECK(b < by);
  CHECK(by < a + t);
  CHECK(double(b) / double(a + t) <= 0.55);
}

TEST_CASE("count ordering holds at toy width too") {
  ModelConfig asr_only = ModelConfig::toy();
  asr_only.task_set = {TaskId::ASR};
  ModelConfig tts_only = ModelConfig::toy();
  tts_only.task_set = {TaskId::TTS};
  ModelConfig both = ModelConfig::toy();
  both.task_set = {TaskId::ASR, TaskId::TTS};
  ModelConfig both_y = ModelConfig::toy();
  both_y.decoder_topology = DecoderTopology::YDecoder;
  both_y.task_set = {TaskId::ASR, TaskId::TTS};

  const auto a = count_params(asr_only).total;
  const auto t = count_params(tts_only).total;
  const auto b = count_params(both).total;
  const auto by = count_params(both_y).total;
  CHECK(b < by);
  CHECK(by < a + t);
}

TEST_CASE("analytic counts match registry enumeration") {
  for (DecoderTopology topo :
       {DecoderTopology::Shared, DecoderTopology::YDecoder}) {
    ModelConfig cfg = ModelConfig::toy();
    cfg.decoder_topology = topo;
    Model<float> model(cfg, 28);
    auto breakdown = count_params(cfg);
    CHECK(model.params().total_size() == breakdown.total);
  }

  ModelConfig tts_only = ModelConfig::toy();
  tts_only.task_set = {TaskId::TTS};
  tts_only.reduction_factor = 4;
  Model<float> m2(tts_only, 29);
  CHECK(m2.params().total_size() == count_params(tts_only).total);

  // Per-component agreement on the shared toy model.
  ModelConfig cfg = ModelConfig::toy();
  Model<float> m3(cfg, 30);
  auto bd = count_params(cfg);
  CHECK(m3.params().prefix_size("encoder.") == bd.component("encoder"));
  CHECK(m3.params().prefix_size("decoder.") == bd.component("decoder"));
  CHECK(m3.params().prefix_size("speech_enc_prenet.") ==
        bd.component("speech_enc_prenet"));
  CHECK(m3.params().prefix_size("speech_dec_prenet.") ==
        bd.component("speech_dec_prenet"));
  CHECK(m3.params().prefix_size("speech_dec_postnet.") ==
        bd.component("speech_dec_postnet"));
  CHECK(m3.params().prefix_size("ctc.") == bd.component("ctc"));
  CHECK(m3.params().prefix_size("fusion.") == bd.component("fusion"));
  CHECK(m3.params().prefix_size("text_emb") +
            m3.params().prefix_size("text_out_bias") ==
        bd.component("text_emb"));
}

TEST_CASE("adding vc grows the registry by one task row only") {
  ModelConfig two = ModelConfig::toy();
  two.task_set = {TaskId::ASR, TaskId::TTS};
  ModelConfig three = ModelConfig::toy();
  three.task_set = {TaskId::ASR, TaskId::TTS, TaskId::VC};
  const auto n2 = count_params(two).total;
  const auto n3 = count_params(three).total;
  CHECK(n3 - n2 == static_cast<std::size_t>(two.d_task));
}

TEST_CASE("model construction is seed deterministic") {
  Model<float> a(ModelConfig::toy(), 7), b(ModelConfig::toy(), 7),
      c(ModelConfig::toy(), 8);
  CHECK(a.params().content_hash() == b.params().content_hash());
  CHECK(a.params().content_hash() != c.params().content_hash());
}

TEST_CASE("config validation") {
  ModelConfig bad = ModelConfig::toy();
  bad.heads = 5;  // 64 % 5 != 0
  CHECK_THROWS_AS(bad.validate(), Error);
  ModelConfig bad2 = ModelConfig::toy();
  bad2.task_set = {};
  CHECK_THROWS_AS(bad2.validate(), Error);
  ModelConfig bad3 = ModelConfig::toy();
  bad3.task_set = {TaskId::ASR, TaskId::ASR};
  CHECK_THROWS_AS(bad3.validate(), Error);
}

TEST_SUITE_END();
