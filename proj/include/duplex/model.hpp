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

#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "duplex/audio.hpp"
#include "duplex/nn/layers.hpp"
#include "duplex/text.hpp"

namespace duplex {

enum class FusionPosition { PostEncoder, PreEncoder };
enum class DecoderTopology { Shared, YDecoder };

/// Architecture hyperparameters. The paper-scale presets reproduce the
/// published configuration; the toy preset is what the test suite runs.
struct ModelConfig {
  int d_model = 768;
  int d_ffn = 3072;
  int enc_layers = 12;
  int dec_layers = 6;
  int heads = 12;
  int vocab_size = 98;
  int n_mels = 80;
  int d_task = 128;
  int d_spk = 512;
  int conv_channels = 512;    // speech encoder prenet width
  int prenet_hidden = 256;    // speech decoder prenet width
  int postnet_channels = 256; // residual conv stack width
  int postnet_kernel = 5;
  int postnet_layers = 5;
  std::vector<TaskId> task_set = {TaskId::ASR, TaskId::TTS, TaskId::VC};
  FusionPosition fusion_position = FusionPosition::PostEncoder;
  DecoderTopology decoder_topology = DecoderTopology::Shared;
  int reduction_factor = 1;
  double dropout = 0.1;
  bool ctc_on_fused = true;

  void validate() const;
  bool has_task(TaskId t) const {
    return std::find(task_set.begin(), task_set.end(), t) != task_set.end();
  }
  int task_index(TaskId t) const {
    for (std::size_t i = 0; i < task_set.size(); ++i)
      if (task_set[i] == t) return static_cast<int>(i);
    throw Error("UnknownTask",
                std::string("task not in task_set: ") + task_name(t));
  }
  bool uses_fusion() const {
    return decoder_topology == DecoderTopology::Shared &&
           task_set.size() >= 2;
  }
  bool needs_speech_input() const {
    return has_task(TaskId::ASR) || has_task(TaskId::VC);
  }
  bool needs_speech_output() const {
    return has_task(TaskId::TTS) || has_task(TaskId::VC);
  }

  static ModelConfig paper_shared();
  static ModelConfig paper_y();
  static ModelConfig toy();

  /// Named preset lookup: "paper_shared", "paper_y", "toy".
  static ModelConfig preset(const std::string& name);
};

/// Exact analytic parameter counts, one entry per named component.
struct CountBreakdown {
  std::vector<std::pair<std::string, std::size_t>> items;
  std::size_t total = 0;

  std::size_t component(const std::string& name) const {
    for (const auto& [n, c] : items)
      if (n == name) return c;
    return 0;
  }
};

CountBreakdown count_params(const ModelConfig& cfg);

/// JSON round trip for configs (checkpoint headers, run config files).
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& json_text);

/// Kernels and strides of the speech encoder conv stack (6 layers).
struct ConvStackSpec {
  static constexpr int kLayers = 6;
  static constexpr int kKernels[kLayers] = {10, 3, 3, 3, 3, 2};
  static constexpr int kStrides[kLayers] = {5, 2, 2, 2, 2, 2};
};

/// Output length of the conv stack: per-layer floor((L-k)/s)+1 composed
/// over all six layers. Returns 0 when the input is too short.
std::int64_t speech_prenet_out_len(std::int64_t samples);

/// Decoder input rows for teacher forcing at reduction factor r: a zero
/// "go" frame followed by target frames r-1, 2r-1, ... The result has
/// ceil(T/r) rows for a T-frame target.
template <class Scalar>
Mat<Scalar> make_speech_decoder_inputs(const Mat<Scalar>& target_mel, int r) {
  const Eigen::Index t = target_mel.rows();
  const Eigen::Index steps = (t + r - 1) / r;
  Mat<Scalar> in = Mat<Scalar>::Zero(steps, target_mel.cols());
  for (Eigen::Index i = 1; i < steps; ++i)
    in.row(i) = target_mel.row(i * r - 1);
  return in;
}

template <class Scalar>
Vec<Scalar> normalize_speaker(Vec<Scalar> v) {
  const Scalar n = v.norm();
  if (!(n > Scalar(0)))
    throw Error("BadSpeaker", "speaker embedding has zero norm");
  return v / n;
}

template <class Scalar>
struct DecoderOutput {
  nn::Var<Scalar> states;  // L x d_model
  // cross_attention[layer][head]: L x T' attention, attached to the graph.
  std::vector<std::vector<nn::Var<Scalar>>> cross_attention;
};

template <class Scalar>
struct SpeechPostnetOutput {
  nn::Var<Scalar> mel_before;   // (L*r) x n_mels
  nn::Var<Scalar> mel_after;    // (L*r) x n_mels
  nn::Var<Scalar> stop_logits;  // (L*r) x 1
};

template <class Scalar>
class Model {
 public:
  using V = nn::Var<Scalar>;
  using FwdT = nn::Fwd<Scalar>;

  Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    build(rng);
  }

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore<Scalar>& params() { return params_; }
  const nn::ParamStore<Scalar>& params() const { return params_; }

  // -- Pre-nets ------------------------------------------------------------

  /// Raw waveform to encoder latents, T' x d_model.
  V speech_encoder_prenet(const Waveform& wave, const FwdT& f) const {
    if (!cfg_.needs_speech_input())
      throw Error("UnknownTask", "model has no speech-input task");
    if (speech_prenet_out_len(
            static_cast<std::int64_t>(wave.samples.size())) < 1)
      throw Error("TooShort", "waveform shorter than the conv receptive field");
    Mat<Scalar> x(static_cast<Eigen::Index>(wave.samples.size()), 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      x(i, 0) = Scalar(wave.samples[static_cast<std::size_t>(i)]);
    V h = V::constant(std::move(x));
    for (const auto& conv : prenet_convs_) h = nn::gelu(conv(h));
    h = prenet_ln_(h);
    h = prenet_proj_(h);
    return f.drop(nn::add_position_encoding(h));
  }

  /// Token ids to encoder latents, L x d_model. The embedding table is
  /// shared with the text decoder pre-net and post-net.
  V text_encoder_prenet(const std::vector<int>& ids, const FwdT& f) const {
    return f.drop(nn::add_position_encoding(text_emb_(ids)));
  }

  /// Decoder-side prenets emit raw latents; decode() adds the position
  /// encoding once for both modalities.
  V text_decoder_prenet(const std::vector<int>& ids, const FwdT& f) const {
    return f.drop(text_emb_(ids));
  }

  /// Mel decoder inputs (first row all-zero go frame, one row per step)
  /// plus a unit-norm speaker embedding to decoder latents.
  V speech_decoder_prenet(const Mat<Scalar>& mel_in, const Vec<Scalar>& spk,
                          const FwdT& f) const {
    if (!cfg_.needs_speech_output())
      throw Error("UnknownTask", "model has no speech-output task");
    if (mel_in.cols() != cfg_.n_mels)
      throw Error("ShapeMismatch", "mel input must have n_mels columns");
    if (spk.size() != cfg_.d_spk)
      throw Error("ShapeMismatch", "speaker embedding dim disagrees");
    V h = V::constant(mel_in);
    h = nn::relu(sdp_fc1_(h));
    h = nn::relu(sdp_fc2_(h));
    h = sdp_fc3_(h);
    Mat<Scalar> spk_rows = spk.transpose().replicate(mel_in.rows(), 1);
    h = nn::relu(sdp_spk_(nn::hstack({h, V::constant(std::move(spk_rows))})));
    return f.drop(h);
  }

  // -- Backbone ------------------------------------------------------------

  /// Pre-norm transformer encoder. valid_len masks the padded tail of the
  /// input (rows valid_len..T-1); pass rows() for unpadded input.
  V encode(const V& latents, Eigen::Index valid_len, const FwdT& f) const {
    if (latents.cols() != cfg_.d_model)
      throw Error("ShapeMismatch", "encoder input dim disagrees");
    if (valid_len < 1 || valid_len > latents.rows())
      throw Error("ShapeMismatch", "valid_len out of range");
    const Eigen::Index t = latents.rows();
    Mat<Scalar> mask;
    const Mat<Scalar>* mask_ptr = nullptr;
    if (valid_len < t) {
      mask = nn::padding_mask<Scalar>(t, t, valid_len);
      mask_ptr = &mask;
    }
    V h = latents;
    for (const auto& layer : enc_layers_) {
      V n1 = layer.ln1(h);
      h = nn::add(h, f.drop(layer.attn(n1, n1, mask_ptr)));
      h = nn::add(h, f.drop(layer.ffn(layer.ln2(h), f)));
    }
    return enc_final_ln_(h);
  }

  /// Concatenates the task embedding to every state row and projects back
  /// to d_model. Identity op count: W (d_model+d_task) x d_model.
  V task_fuse(const V& states, TaskId task, const FwdT& f) const {
    if (!cfg_.uses_fusion())
      throw Error("BadConfig", "task fusion is absent in this topology");
    const int idx = cfg_.task_index(task);
    V row = nn::embedding_rows(task_table_, {idx});  // 1 x d_task
    V tiled = nn::matmul(
        V::constant(Mat<Scalar>::Ones(states.rows(), 1)), row);
    return f.drop(fusion_fc_(nn::hstack({states, tiled})));
  }

  /// Pre-norm transformer decoder with causal self-attention. Routes to
  /// the per-modality stack under the Y-decoder topology. Cross-attention
  /// maps are retained when want_attention is set.
  DecoderOutput<Scalar> decode(const V& dec_in, const V& enc_states,
                               Eigen::Index enc_valid, TaskId task,
                               const FwdT& f,
                               bool want_attention = false) const {
    if (!cfg_.has_task(task))
      throw Error("UnknownTask",
                  std::string("task not in task_set: ") + task_name(task));
    const DecStack& stack = pick_stack(task);
    const Eigen::Index l = dec_in.rows(), t = enc_states.rows();
    if (enc_valid < 1 || enc_valid > t)
      throw Error("ShapeMismatch", "enc_valid out of range");
    Mat<Scalar> self_mask = nn::causal_mask<Scalar>(l);
    Mat<Scalar> cross_mask;
    const Mat<Scalar>* cross_ptr = nullptr;
    if (enc_valid < t) {
      cross_mask = nn::padding_mask<Scalar>(l, t, enc_valid);
      cross_ptr = &cross_mask;
    }
    DecoderOutput<Scalar> out;
    V h = nn::add_position_encoding(dec_in);
    for (const auto& layer : stack.layers) {
      V n1 = layer.ln1(h);
      h = nn::add(h, f.drop(layer.self_attn(n1, n1, &self_mask)));
      std::vector<V>* attn_sink = nullptr;
      if (want_attention) {
        out.cross_attention.emplace_back();
        attn_sink = &out.cross_attention.back();
      }
      h = nn::add(h, f.drop(layer.cross_attn(layer.ln2(h), enc_states,
                                             cross_ptr, attn_sink)));
      h = nn::add(h, f.drop(layer.ffn(layer.ln3(h), f)));
    }
    out.states = stack.final_ln(h);
    return out;
  }

  // -- Post-nets -----------------------------------------------------------

  /// Decoder states to token logits; the projection is the transposed
  /// shared embedding table.
  V text_decoder_postnet(const V& states) const {
    return nn::add_rowvec(nn::matmul_nt(states, text_emb_.table),
                          text_out_bias_);
  }

  SpeechPostnetOutput<Scalar> speech_decoder_postnet(const V& states) const {
    if (!cfg_.needs_speech_output())
      throw Error("UnknownTask", "model has no speech-output task");
    const int r = cfg_.reduction_factor;
    SpeechPostnetOutput<Scalar> out;
    out.mel_before = nn::unfold_rows(sdpost_mel_(states), r);
    V h = pad_rows(out.mel_before, (cfg_.postnet_kernel - 1) / 2);
    for (std::size_t i = 0; i < sdpost_convs_.size(); ++i) {
      h = sdpost_convs_[i](h);
      if (i + 1 < sdpost_convs_.size())
        h = pad_rows(nn::tanh_op(h), (cfg_.postnet_kernel - 1) / 2);
    }
    out.mel_after = nn::add(out.mel_before, h);
    out.stop_logits = nn::unfold_rows(sdpost_stop_(states), r);
    return out;
  }

  /// Log-probability matrix for CTC, rows log-softmax over the vocab.
  V ctc_head(const V& enc_states) const {
    if (!cfg_.has_task(TaskId::ASR))
      throw Error("UnknownTask", "ctc head requires the ASR task");
    return nn::log_softmax_rows(ctc_fc_(enc_states));
  }

 private:
  struct EncLayer {
    nn::LayerNorm<Scalar> ln1;
    nn::MultiHeadAttention<Scalar> attn;
    nn::LayerNorm<Scalar> ln2;
    nn::FeedForward<Scalar> ffn;
  };
  struct DecLayer {
    nn::LayerNorm<Scalar> ln1;
    nn::MultiHeadAttention<Scalar> self_attn;
    nn::LayerNorm<Scalar> ln2;
    nn::MultiHeadAttention<Scalar> cross_attn;
    nn::LayerNorm<Scalar> ln3;
    nn::FeedForward<Scalar> ffn;
  };
  struct DecStack {
    std::vector<DecLayer> layers;
    nn::LayerNorm<Scalar> final_ln;
  };

  static V pad_rows(const V& x, Eigen::Index pad) {
    V z = V::constant(Mat<Scalar>::Zero(pad, x.cols()));
    return nn::vstack({z, x, z});
  }

  const DecStack& pick_stack(TaskId task) const {
    if (cfg_.decoder_topology == DecoderTopology::Shared) return dec_shared_;
    return task == TaskId::ASR ? dec_text_ : dec_speech_;
  }

  DecStack build_dec_stack(const std::string& prefix, Rng& rng) {
    DecStack stack;
    for (int i = 0; i < cfg_.dec_layers; ++i) {
      const std::string base = prefix + ".l" + std::to_string(i);
      stack.layers.push_back(DecLayer{
          nn::LayerNorm<Scalar>::make(params_, base + ".ln1", cfg_.d_model,
                                      rng),
          nn::MultiHeadAttention<Scalar>::make(params_, base + ".self",
                                               cfg_.d_model, cfg_.heads, rng),
          nn::LayerNorm<Scalar>::make(params_, base + ".ln2", cfg_.d_model,
                                      rng),
          nn::MultiHeadAttention<Scalar>::make(params_, base + ".cross",
                                               cfg_.d_model, cfg_.heads, rng),
          nn::LayerNorm<Scalar>::make(params_, base + ".ln3", cfg_.d_model,
                                      rng),
          nn::FeedForward<Scalar>::make(params_, base + ".ffn", cfg_.d_model,
                                        cfg_.d_ffn, rng)});
    }
    stack.final_ln = nn::LayerNorm<Scalar>::make(params_, prefix + ".final_ln",
                                                 cfg_.d_model, rng);
    return stack;
  }

  void build(Rng& rng) {
    const int d = cfg_.d_model;
    if (cfg_.needs_speech_input()) {
      int cin = 1;
      for (int i = 0; i < ConvStackSpec::kLayers; ++i) {
        prenet_convs_.push_back(nn::Conv1dLayer<Scalar>::make(
            params_, "speech_enc_prenet.conv" + std::to_string(i), cin,
            cfg_.conv_channels, ConvStackSpec::kKernels[i],
            ConvStackSpec::kStrides[i], rng));
        cin = cfg_.conv_channels;
      }
      prenet_ln_ = nn::LayerNorm<Scalar>::make(params_, "speech_enc_prenet.ln",
                                               cfg_.conv_channels, rng);
      prenet_proj_ = nn::Linear<Scalar>::make(
          params_, "speech_enc_prenet.proj", cfg_.conv_channels, d, rng);
    }

    text_emb_ = nn::Embedding<Scalar>::make(params_, "text_emb",
                                            cfg_.vocab_size, d, rng);
    text_out_bias_ =
        params_.create("text_out_bias", 1, cfg_.vocab_size, nn::Init::kZeros,
                       rng);

    for (int i = 0; i < cfg_.enc_layers; ++i) {
      const std::string base = "encoder.l" + std::to_string(i);
      enc_layers_.push_back(EncLayer{
          nn::LayerNorm<Scalar>::make(params_, base + ".ln1", d, rng),
          nn::MultiHeadAttention<Scalar>::make(params_, base + ".attn", d,
                                               cfg_.heads, rng),
          nn::LayerNorm<Scalar>::make(params_, base + ".ln2", d, rng),
          nn::FeedForward<Scalar>::make(params_, base + ".ffn", d, cfg_.d_ffn,
                                        rng)});
    }
    enc_final_ln_ =
        nn::LayerNorm<Scalar>::make(params_, "encoder.final_ln", d, rng);

    if (cfg_.decoder_topology == DecoderTopology::Shared) {
      dec_shared_ = build_dec_stack("decoder", rng);
    } else {
      dec_text_ = build_dec_stack("decoder_text", rng);
      dec_speech_ = build_dec_stack("decoder_speech", rng);
    }

    if (cfg_.uses_fusion()) {
      task_table_ = params_.create("fusion.task_table",
                                   static_cast<Eigen::Index>(
                                       cfg_.task_set.size()),
                                   cfg_.d_task, nn::Init::kNormalByDim, rng);
      fusion_fc_ = nn::Linear<Scalar>::make(params_, "fusion.fc",
                                            d + cfg_.d_task, d, rng);
    }

    if (cfg_.needs_speech_output()) {
      sdp_fc1_ = nn::Linear<Scalar>::make(params_, "speech_dec_prenet.fc1",
                                          cfg_.n_mels, cfg_.prenet_hidden,
                                          rng);
      sdp_fc2_ = nn::Linear<Scalar>::make(params_, "speech_dec_prenet.fc2",
                                          cfg_.prenet_hidden,
                                          cfg_.prenet_hidden, rng);
      sdp_fc3_ = nn::Linear<Scalar>::make(params_, "speech_dec_prenet.fc3",
                                          cfg_.prenet_hidden, d, rng);
      sdp_spk_ = nn::Linear<Scalar>::make(params_, "speech_dec_prenet.spk",
                                          d + cfg_.d_spk, d, rng);

      const int r = cfg_.reduction_factor;
      sdpost_mel_ = nn::Linear<Scalar>::make(params_, "speech_dec_postnet.mel",
                                             d, cfg_.n_mels * r, rng);
      int pin = cfg_.n_mels;
      for (int i = 0; i < cfg_.postnet_layers; ++i) {
        const bool last = i + 1 == cfg_.postnet_layers;
        const int pout = last ? cfg_.n_mels : cfg_.postnet_channels;
        sdpost_convs_.push_back(nn::Conv1dLayer<Scalar>::make(
            params_, "speech_dec_postnet.conv" + std::to_string(i), pin, pout,
            cfg_.postnet_kernel, 1, rng,
            last ? nn::Init::kZeros : nn::Init::kXavierUniform));
        pin = pout;
      }
      sdpost_stop_ = nn::Linear<Scalar>::make(params_,
                                              "speech_dec_postnet.stop", d, r,
                                              rng);
    }

    if (cfg_.has_task(TaskId::ASR))
      ctc_fc_ = nn::Linear<Scalar>::make(params_, "ctc.fc", d,
                                         cfg_.vocab_size, rng);
  }

  ModelConfig cfg_;
  nn::ParamStore<Scalar> params_;

  std::vector<nn::Conv1dLayer<Scalar>> prenet_convs_;
  nn::LayerNorm<Scalar> prenet_ln_;
  nn::Linear<Scalar> prenet_proj_;
  nn::Embedding<Scalar> text_emb_;
  V text_out_bias_;
  std::vector<EncLayer> enc_layers_;
  nn::LayerNorm<Scalar> enc_final_ln_;
  DecStack dec_shared_, dec_text_, dec_speech_;
  V task_table_;
  nn::Linear<Scalar> fusion_fc_;
  nn::Linear<Scalar> sdp_fc1_, sdp_fc2_, sdp_fc3_, sdp_spk_;
  nn::Linear<Scalar> sdpost_mel_;
  std::vector<nn::Conv1dLayer<Scalar>> sdpost_convs_;
  nn::Linear<Scalar> sdpost_stop_;
  nn::Linear<Scalar> ctc_fc_;
};

}  // namespace duplex
