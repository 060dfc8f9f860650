// Copyright (c) 2026 The Duplex Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Multi-task training loop: task-interleaved micro-batches, gradient
// accumulation with update frequency k, tri-stage learning rate, staged
// schedules with freeze/unfreeze, checkpointing and deterministic resume.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "duplex/audio.hpp"
#include "duplex/ckpt.hpp"
#include "duplex/common.hpp"
#include "duplex/datakit.hpp"
#include "duplex/losses.hpp"
#include "duplex/model.hpp"
#include "duplex/text.hpp"

namespace duplex {

// ---------------------------------------------------------------------------
// Schedule
// ---------------------------------------------------------------------------

struct LrConfig {
  double peak = 1e-4;
  std::array<double, 3> phase_ratios{0.25, 0.4, 0.35};
  double init_scale = 0.01;
  double final_scale = 0.01;
};

/// Tri-stage learning rate at a 0-based update index: linear warmup from
/// init_scale*peak to peak, hold, then exponential decay to
/// final_scale*peak at update == total. Continuous at both boundaries.
double tri_stage_lr(std::int64_t update, const LrConfig& cfg,
                    std::int64_t total);

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double clip_norm = 1.0;
};

/// One contiguous run of updates. `until` is the exclusive end of the
/// stage's update range; the first stage starts at 0 and each stage picks
/// up where the previous one ended.
struct TrainStage {
  std::int64_t until = 0;
  std::map<TaskId, double> task_mix;
  std::map<TaskId, std::string> datasets;      // manifest path per task
  std::map<TaskId, std::int64_t> caps;         // optional row cap per task
  std::map<TaskId, std::vector<std::string>> loss_set;  // optional subset
  std::vector<std::string> frozen_groups;

  std::vector<TaskId> tasks() const {
    std::vector<TaskId> out;
    for (const auto& [t, w] : task_mix) out.push_back(t);
    return out;
  }
};

struct TrainSchedule {
  std::int64_t total_updates = 0;
  int update_frequency = 1;  // accumulation steps per optimizer update
  LrConfig lr;
  OptimizerConfig optimizer;
  std::vector<TrainStage> stages;

  void validate() const;
  /// Index of the stage covering an update. Throws BadConfig past the end.
  int stage_index_at(std::int64_t update) const;
};

TrainSchedule train_schedule_from_json(const std::string& json_text);
std::string train_schedule_to_json(const TrainSchedule& s);
TrainSchedule load_train_schedule(const std::string& path);

/// Which loss terms a task contributes, after applying a stage's
/// loss_set restriction (everything on when the stage names none).
struct LossFlags {
  bool ce = true, ctc = true;           // ASR terms
  bool l1 = true, bce = true, attn = true;  // TTS / VC terms
};
LossFlags loss_flags_for(const TrainStage& st, TaskId task);

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

struct TrainOpts {
  std::uint64_t seed = 0;
  std::string out_dir;            // metrics + checkpoints; empty disables IO
  std::int64_t ckpt_every = 500;  // 0 disables periodic checkpoints
  std::int64_t val_every = 500;   // 0 disables periodic validation
  std::int64_t max_tokens = 2000;  // micro-batch budget in source frames
  std::int64_t eval_rows = 32;     // per-task cap on validation examples
  double label_smoothing = 0.1;
  bool log_stdout = false;
};

/// One task's slice of a micro-step. Items index rows of the stage's
/// (possibly capped) manifest for ASR and TTS, and vc_pairs entries for
/// VC.
struct MicroBatch {
  TaskId task;
  std::vector<int> items;
};

struct ValMetrics {
  std::optional<double> asr_acc;  // teacher-forced token accuracy
  std::optional<double> tts_l1;   // masked L1, before+after terms
  std::optional<double> vc_l1;
  std::string to_json() const;
};

namespace detail {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                       std::uint64_t c);
/// Stateless uniform draw deciding task inclusion at (update, micro).
double inclusion_u01(std::uint64_t seed, std::int64_t update, int micro,
                     TaskId task);
std::string metrics_line(std::int64_t update, double lr,
                         const LossReport* rep, bool skipped,
                         std::int64_t skipped_total, const ValMetrics* val);
std::string stage_line(std::int64_t update, int stage,
                       const std::vector<TaskId>& tasks);

}  // namespace detail

/// Owns the optimizer state and data streams for one model. Losses are
/// normalized per family (recognition vs synthesis, matching joint_loss)
/// over the whole accumulation window, so regrouping the same samples
/// into a different number of micro-batches applies the same update.
template <class Scalar>
class Trainer {
 public:
  using V = nn::Var<Scalar>;
  using MatS = Mat<Scalar>;
  using FwdT = nn::Fwd<Scalar>;

  Trainer(Model<Scalar>& model, TrainSchedule schedule, Vocab vocab,
          TrainOpts opts)
      : model_(model),
        sched_(std::move(schedule)),
        vocab_(std::move(vocab)),
        opts_(opts),
        rng_(opts.seed) {
    sched_.validate();
    if (vocab_.size() > model_.config().vocab_size)
      throw Error("BadConfig", "vocabulary exceeds the model embedding table");
    for (const auto& st : sched_.stages)
      for (const auto& [t, w] : st.task_mix)
        if (!model_.config().has_task(t))
          throw Error("BadConfig", std::string("stage trains task ") +
                                       task_name(t) +
                                       " absent from the model task_set");
    const auto& items = model_.params().items();
    adam_m_.reserve(items.size());
    adam_v_.reserve(items.size());
    for (const auto& p : items) {
      adam_m_.push_back(MatS::Zero(p.rows(), p.cols()));
      adam_v_.push_back(MatS::Zero(p.rows(), p.cols()));
    }
    frozen_mask_.assign(items.size(), 0);
    if (!opts_.out_dir.empty())
      std::filesystem::create_directories(opts_.out_dir);
    if (!sched_.stages.empty()) enter_stage(0);
  }

  const TrainSchedule& schedule() const { return sched_; }
  std::int64_t global_update() const { return global_update_; }
  std::int64_t adam_step() const { return adam_step_; }
  std::int64_t skipped_updates() const { return skipped_updates_; }
  int stage_index() const { return stage_idx_; }
  bool done() const { return global_update_ >= sched_.total_updates; }
  double current_lr() const {
    return tri_stage_lr(std::min(global_update_, sched_.total_updates),
                        sched_.lr, sched_.total_updates);
  }

  // -- Window-level API (also the unit-test surface) -----------------------

  /// Accumulates gradients for one micro-step worth of batches. Sample
  /// losses stay unscaled here; normalization happens in finish_window.
  void accumulate_micro(const std::vector<MicroBatch>& micro) {
    for (const auto& mb : micro) {
      auto it = streams_.find(mb.task);
      if (it == streams_.end())
        throw Error("UnknownTask", std::string("no data stream for task ") +
                                       task_name(mb.task));
      const LossFlags lf =
          loss_flags_for(sched_.stages[std::size_t(stage_idx_)], mb.task);
      for (int item : mb.items) accumulate_sample(it->second, mb.task, item, lf);
      fold_grads(family_of(mb.task));
    }
  }

  /// Applies one optimizer update from the accumulated window and clears
  /// the accumulator. Returns the window's loss report, or nullopt when
  /// the update was skipped (non-finite loss or gradient, or no samples).
  std::optional<LossReport> finish_window(double lr) {
    std::optional<LossReport> rep;
    if (!win_poisoned_ && !(win_asr_.empty() && win_tts_.empty()))
      rep = joint_loss(win_asr_, win_tts_);
    if (rep && !apply_update(lr)) rep.reset();
    if (!rep) ++skipped_updates_;
    clear_window();
    ++global_update_;
    return rep;
  }

  // -- Streaming API --------------------------------------------------------

  /// One accumulation micro-step; performs the optimizer update (and
  /// periodic validation / checkpointing) on the k-th call. Returns the
  /// window report at update boundaries, nullopt otherwise or when the
  /// update was skipped.
  std::optional<LossReport> train_micro_step() {
    if (done())
      throw Error("BadConfig", "training already ran to total_updates");
    const int want = sched_.stage_index_at(global_update_);
    if (want != stage_idx_) enter_stage(want);
    const TrainStage& st = sched_.stages[std::size_t(stage_idx_)];
    std::vector<MicroBatch> micro;
    for (TaskId t : st.tasks())
      if (task_included(global_update_, micro_in_window_, t))
        micro.push_back({t, next_batch(t)});
    accumulate_micro(micro);
    if (++micro_in_window_ < sched_.update_frequency) return std::nullopt;
    micro_in_window_ = 0;
    const double lr =
        tri_stage_lr(global_update_, sched_.lr, sched_.total_updates);
    auto rep = finish_window(lr);
    after_update(lr, rep);
    return rep;
  }

  /// Runs from the current state to total_updates, writing an initial
  /// checkpoint first so a 0-update schedule still leaves one behind.
  void run() {
    save_ckpt();
    while (!done()) train_micro_step();
    save_ckpt();
  }

  // -- Checkpointing ---------------------------------------------------------

  /// Writes ckpt_{update}.stt (parameters, Adam moments, data positions,
  /// RNG state) into out_dir and returns the path.
  std::string save_ckpt() {
    if (opts_.out_dir.empty())
      throw Error("BadConfig", "cannot checkpoint without an out_dir");
    Checkpoint<Scalar> ck;
    ck.config = model_.config();
    ck.has_train = true;
    ck.train.global_update = global_update_;
    ck.train.micro_step = 0;
    ck.train.stage_index = stage_idx_;
    ck.train.adam_step = adam_step_;
    ck.train.skipped_updates = skipped_updates_;
    ck.train.rng_state = rng_.save_state();
    for (const auto& [t, s] : streams_) {
      const std::string base = std::string("data.") + task_name(t);
      ck.train.kv[base + ".epoch"] = std::to_string(s.epoch);
      ck.train.kv[base + ".pos"] = std::to_string(s.pos);
    }
    store_params(ck, model_.params());
    const auto& items = model_.params().items();
    for (std::size_t i = 0; i < items.size(); ++i) {
      const std::string& name = items[i].node()->name;
      ck.tensors.emplace_back("adam_m." + name, adam_m_[i]);
      ck.tensors.emplace_back("adam_v." + name, adam_v_[i]);
    }
    const std::string path =
        (std::filesystem::path(opts_.out_dir) /
         ("ckpt_" + std::to_string(global_update_) + ".stt"))
            .string();
    save_checkpoint(path, ck);
    return path;
  }

  /// Restores parameters, optimizer moments and stream positions from a
  /// checkpoint produced by save_ckpt. The model configuration must match
  /// bit for bit; a missing train section or moment tensor is an error.
  void resume(const std::string& path) {
    Checkpoint<Scalar> ck = load_checkpoint<Scalar>(path);
    if (model_config_to_json(ck.config) != model_config_to_json(model_.config()))
      throw Error("BadConfig", "checkpoint was written for a different model");
    if (!ck.has_train)
      throw Error("BadConfig", "checkpoint carries no training state");
    load_params(ck, model_.params());
    const auto& items = model_.params().items();
    for (std::size_t i = 0; i < items.size(); ++i) {
      const std::string& name = items[i].node()->name;
      const MatS* m = ck.find("adam_m." + name);
      const MatS* v = ck.find("adam_v." + name);
      if (!m || !v)
        throw Error("MissingParam", "checkpoint lacks Adam moments for " + name);
      if (m->rows() != items[i].rows() || m->cols() != items[i].cols() ||
          v->rows() != items[i].rows() || v->cols() != items[i].cols())
        throw Error("ShapeMismatch", "Adam moment shape differs for " + name);
      adam_m_[i] = *m;
      adam_v_[i] = *v;
    }
    global_update_ = ck.train.global_update;
    adam_step_ = ck.train.adam_step;
    skipped_updates_ = ck.train.skipped_updates;
    rng_.load_state(ck.train.rng_state);
    micro_in_window_ = 0;
    clear_window();
    stage_idx_ = -1;
    if (!done()) {
      const int want = sched_.stage_index_at(global_update_);
      enter_stage(want);
      // A checkpoint written on a stage boundary the run had not crossed
      // yet carries the old stage's positions; the new stage's streams
      // start fresh by construction, so there is nothing to restore.
      if (ck.train.stage_index == want) {
        for (auto& [t, s] : streams_) {
          const std::string base = std::string("data.") + task_name(t);
          auto ep = ck.train.kv.find(base + ".epoch");
          auto po = ck.train.kv.find(base + ".pos");
          if (ep == ck.train.kv.end() || po == ck.train.kv.end())
            throw Error("BadConfig", std::string("checkpoint lacks stream "
                                                 "position for task ") +
                                         task_name(t));
          s.epoch = std::stoll(ep->second);
          build_plan(t, s);
          s.pos = std::size_t(std::stoll(po->second));
          if (s.pos > s.plan.size())
            throw Error("BadConfig",
                        "checkpoint stream position out of range");
        }
      }
    }
  }

  // -- Validation -------------------------------------------------------------

  /// Teacher-forced metrics over the head of each active task's data:
  /// token accuracy for ASR, masked L1 for TTS and VC.
  ValMetrics evaluate() {
    ValMetrics out;
    const FwdT f{};  // eval mode, no dropout
    for (auto& [t, s] : streams_) {
      const LossFlags lf{};  // metrics ignore loss_set restrictions
      if (t == TaskId::ASR) {
        std::int64_t hit = 0, n = 0;
        const int rows = int(std::min<std::int64_t>(
            std::int64_t(s.data.rows.size()), opts_.eval_rows));
        for (int i = 0; i < rows; ++i) {
          const Feat& ft = feat(s.data, i, true, false, false);
          V logits = asr_logits(ft, f);
          std::vector<int> tgt = ft.tokens;
          tgt.push_back(vocab_.eos_id());
          for (Eigen::Index r = 0; r < logits.rows(); ++r) {
            Eigen::Index arg = 0;
            logits.value().row(r).maxCoeff(&arg);
            hit += int(arg) == tgt[std::size_t(r)] ? 1 : 0;
            ++n;
          }
        }
        if (n > 0) out.asr_acc = double(hit) / double(n);
      } else {
        double total = 0.0;
        int n = 0;
        if (t == TaskId::TTS) {
          const int rows = int(std::min<std::int64_t>(
              std::int64_t(s.data.rows.size()), opts_.eval_rows));
          for (int i = 0; i < rows; ++i) {
            total += tts_l1_value(s.data, i, f);
            ++n;
          }
          if (n > 0) out.tts_l1 = total / n;
        } else {
          const int rows = int(std::min<std::int64_t>(
              std::int64_t(s.pairs.size()), opts_.eval_rows));
          for (int i = 0; i < rows; ++i) {
            total += vc_l1_value(s.data, s.pairs[std::size_t(i)], f);
            ++n;
          }
          if (n > 0) out.vc_l1 = total / n;
        }
      }
      (void)lf;
    }
    return out;
  }

  /// Manifest rows backing a task in the active stage (test hook).
  const Manifest& stage_data(TaskId t) const { return streams_.at(t).data; }
  const std::vector<std::pair<int, int>>& stage_pairs(TaskId t) const {
    return streams_.at(t).pairs;
  }

 private:
  enum class Family { kAsr = 0, kTts = 1 };
  static Family family_of(TaskId t) {
    return t == TaskId::ASR ? Family::kAsr : Family::kTts;
  }

  struct Stream {
    Manifest data;
    std::vector<std::pair<int, int>> pairs;  // VC only
    std::vector<BatchPlanEntry> plan;
    std::int64_t epoch = 0;
    std::size_t pos = 0;
  };

  struct Feat {
    bool tokenized = false;
    std::vector<int> tokens;
    bool has_wave = false;
    Waveform wave;
    bool has_mel = false;
    MatS mel;
    bool has_spk = false;
    Vec<Scalar> spk;
  };

  // -- Stages and data -------------------------------------------------------

  void enter_stage(int idx) {
    stage_idx_ = idx;
    const TrainStage& st = sched_.stages[std::size_t(idx)];
    resolve_frozen(st);
    streams_.clear();
    for (TaskId t : st.tasks()) {
      Stream s;
      s.data = load_manifest(st.datasets.at(t));
      auto cap = st.caps.find(t);
      if (cap != st.caps.end() &&
          std::int64_t(s.data.rows.size()) > cap->second)
        s.data = subsample(s.data, std::size_t(cap->second),
                           detail::mix_seed(opts_.seed, 0x5355B5u,
                                            std::uint64_t(idx),
                                            std::uint64_t(t)));
      if (t == TaskId::VC) {
        s.pairs = vc_pairs(s.data);
        if (s.pairs.empty())
          throw Error("BadConfig",
                      "VC stage data has no cross-speaker transcript pairs");
      }
      build_plan(t, s);
      streams_[t] = std::move(s);
    }
    log_line(detail::stage_line(global_update_, idx, st.tasks()));
  }

  void build_plan(TaskId t, Stream& s) {
    const std::uint64_t es =
        detail::mix_seed(opts_.seed, std::uint64_t(stage_idx_),
                         std::uint64_t(t), std::uint64_t(s.epoch));
    if (t == TaskId::VC) {
      std::vector<int> order(s.pairs.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
      Rng rng(es);
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[std::size_t(rng.below(i))]);
      s.plan.clear();
      BatchPlanEntry cur;
      std::int64_t cost = 0;
      for (int pi : order) {
        const auto& row =
            s.data.rows[std::size_t(s.pairs[std::size_t(pi)].first)];
        const std::int64_t c = source_length(row, TaskId::ASR);
        if (!cur.rows.empty() && cost + c > opts_.max_tokens) {
          s.plan.push_back(cur);
          cur = {};
          cost = 0;
        }
        cur.rows.push_back(pi);
        cost += c;
      }
      if (!cur.rows.empty()) s.plan.push_back(cur);
    } else {
      s.plan = make_batches(s.data, t, opts_.max_tokens, es);
    }
  }

  std::vector<int> next_batch(TaskId t) {
    Stream& s = streams_.at(t);
    if (s.pos >= s.plan.size()) {  // epoch wrap with reshuffle
      ++s.epoch;
      s.pos = 0;
      build_plan(t, s);
    }
    return s.plan[s.pos++].rows;
  }

  bool task_included(std::int64_t update, int micro, TaskId t) const {
    const TrainStage& st = sched_.stages[std::size_t(stage_idx_)];
    double maxw = 0.0;
    for (const auto& [k, w] : st.task_mix) maxw = std::max(maxw, w);
    const double p = st.task_mix.at(t) / maxw;
    if (p >= 1.0) return true;
    return detail::inclusion_u01(opts_.seed, update, micro, t) < p;
  }

  // -- Features ----------------------------------------------------------------

  const Feat& feat(const Manifest& m, int row_idx, bool need_wave,
                   bool need_mel, bool need_spk) {
    const ManifestRow& row = m.rows[std::size_t(row_idx)];
    Feat& ft = feat_[m.base_dir + "\x1f" + row.utt_id];
    if (!ft.tokenized) {
      ft.tokens = tokenize(normalize(row.transcript, {}), vocab_).ids;
      ft.tokenized = true;
    }
    if ((need_wave || need_mel) && !ft.has_wave) {
      ft.wave = load_wav(m.resolve(row.audio_path));
      ft.has_wave = true;
    }
    if (need_mel && !ft.has_mel) {
      ft.mel = logmel(ft.wave, MelConfig{}).frames.template cast<Scalar>();
      ft.has_mel = true;
    }
    if (need_spk && !ft.has_spk) {
      if (row.spk_emb_path.empty())
        throw Error("BadSpeaker", "row lacks a speaker embedding: " + row.utt_id);
      VecF e = load_speaker_embedding(m.resolve(row.spk_emb_path));
      ft.spk = normalize_speaker<Scalar>(e.template cast<Scalar>());
      ft.has_spk = true;
    }
    return ft;
  }

  // -- Per-sample losses --------------------------------------------------------

  V asr_logits(const Feat& ft, const FwdT& f, V* fused_out = nullptr,
               V* enc_out = nullptr) {
    V enc_in = model_.speech_encoder_prenet(ft.wave, f);
    V enc = model_.encode(enc_in, enc_in.rows(), f);
    V fused = model_.config().uses_fusion()
                  ? model_.task_fuse(enc, TaskId::ASR, f)
                  : enc;
    if (fused_out) *fused_out = fused;
    if (enc_out) *enc_out = enc;
    std::vector<int> in_ids;
    in_ids.reserve(ft.tokens.size() + 1);
    in_ids.push_back(vocab_.bos_id());
    in_ids.insert(in_ids.end(), ft.tokens.begin(), ft.tokens.end());
    V dec = model_
                .decode(model_.text_decoder_prenet(in_ids, f), fused,
                        fused.rows(), TaskId::ASR, f)
                .states;
    return model_.text_decoder_postnet(dec);
  }

  void accumulate_sample(Stream& s, TaskId t, int item, const LossFlags& lf) {
    if (win_poisoned_) return;  // window is discarded anyway
    const FwdT f{true, Scalar(model_.config().dropout), &rng_};
    switch (t) {
      case TaskId::ASR: asr_sample(s.data, item, lf, f); break;
      case TaskId::TTS: tts_sample(s.data, item, lf, f); break;
      case TaskId::VC: vc_sample(s.data, s.pairs.at(std::size_t(item)), lf, f);
    }
  }

  void asr_sample(const Manifest& m, int row_idx, const LossFlags& lf,
                  const FwdT& f) {
    const Feat& ft = feat(m, row_idx, true, false, false);
    if (lf.ctc) {
      // Feasibility from lengths alone, so skipping is deterministic and
      // costs no forward pass.
      std::int64_t need = std::int64_t(ft.tokens.size());
      for (std::size_t i = 1; i < ft.tokens.size(); ++i)
        if (ft.tokens[i] == ft.tokens[i - 1]) ++need;
      if (speech_prenet_out_len(std::int64_t(ft.wave.samples.size())) < need)
        return;
    }
    V fused, enc;
    V logits = asr_logits(ft, f, &fused, &enc);
    V loss;
    double ce_rep = 0.0, ctc_rep = 0.0;
    if (lf.ce) {
      std::vector<int> tgt = ft.tokens;
      tgt.push_back(vocab_.eos_id());
      auto ce = ce_loss(logits, tgt, vocab_.pad_id(),
                        Scalar(opts_.label_smoothing));
      loss = ce.loss;
      ce_rep = ce.nll;
    }
    if (lf.ctc) {
      V lp = model_.ctc_head(model_.config().ctc_on_fused ? fused : enc);
      auto ctc = ctc_loss(lp, ft.tokens, vocab_.blank_id());
      if (ctc.infeasible) return;  // belt and braces; lengths were checked
      loss = loss.defined() ? nn::add(loss, ctc.loss) : ctc.loss;
      ctc_rep = double(ctc.loss.item());
    }
    if (!loss.defined()) return;
    if (!std::isfinite(double(loss.item()))) {
      win_poisoned_ = true;
      return;
    }
    nn::backward(loss);
    win_asr_.push_back(asr_sample_report(ce_rep, ctc_rep));
  }

  struct SynthTarget {
    const MatS* mel;
    const Vec<Scalar>* spk;
  };

  /// Shared synthesis-side loss: teacher-forced decode of the target mel
  /// conditioned on `fused`, with L1 + stop BCE + guided attention.
  bool synth_loss(const V& fused, const SynthTarget& tgt, TaskId task,
                  Eigen::Index attn_t_valid, const LossFlags& lf,
                  const FwdT& f, double* l1_out = nullptr) {
    const int r = model_.config().reduction_factor;
    const Eigen::Index T = tgt.mel->rows();
    const Eigen::Index steps = (T + r - 1) / r;
    const Eigen::Index P = steps * r;
    MatS dec_in = make_speech_decoder_inputs(*tgt.mel, r);
    V dec_latents = model_.speech_decoder_prenet(dec_in, *tgt.spk, f);
    auto dec = model_.decode(dec_latents, fused, fused.rows(), task, f,
                             lf.attn);
    auto post = model_.speech_decoder_postnet(dec.states);
    V loss;
    double l1_rep = 0.0, bce_rep = 0.0, attn_rep = 0.0;
    if (lf.l1) {
      MatS padded = MatS::Zero(P, tgt.mel->cols());
      padded.topRows(T) = *tgt.mel;
      std::vector<int> mask(std::size_t(P), 0);
      for (Eigen::Index i = 0; i < T; ++i) mask[std::size_t(i)] = 1;
      V l1 = l1_mel_loss(post.mel_before, post.mel_after, padded, mask);
      l1_rep = double(l1.item());
      loss = l1;
    }
    if (lf.bce) {
      Vec<Scalar> st = Vec<Scalar>::Zero(P);
      for (Eigen::Index i = std::max<Eigen::Index>(T - 1, 0); i < P; ++i)
        st[i] = Scalar(1);
      V bce = stop_bce_loss(post.stop_logits, st);
      bce_rep = double(bce.item());
      loss = loss.defined() ? nn::add(loss, bce) : bce;
    }
    if (lf.attn) {
      V ga = guided_attention_loss(dec.cross_attention, GuidedAttnConfig{},
                                   steps, attn_t_valid);
      attn_rep = double(ga.item());
      loss = loss.defined() ? nn::add(loss, ga) : ga;
    }
    if (!loss.defined()) return false;
    if (!std::isfinite(double(loss.item()))) {
      win_poisoned_ = true;
      return false;
    }
    nn::backward(loss);
    win_tts_.push_back(tts_sample_report(l1_rep, bce_rep, attn_rep));
    if (l1_out) *l1_out = l1_rep;
    return true;
  }

  void tts_sample(const Manifest& m, int row_idx, const LossFlags& lf,
                  const FwdT& f) {
    const Feat& ft = feat(m, row_idx, true, true, true);
    if (ft.tokens.empty()) return;
    V enc = model_.encode(model_.text_encoder_prenet(ft.tokens, f),
                          Eigen::Index(ft.tokens.size()), f);
    V fused = model_.config().uses_fusion()
                  ? model_.task_fuse(enc, TaskId::TTS, f)
                  : enc;
    synth_loss(fused, {&ft.mel, &ft.spk}, TaskId::TTS,
               Eigen::Index(ft.tokens.size()), lf, f);
  }

  void vc_sample(const Manifest& m, const std::pair<int, int>& pr,
                 const LossFlags& lf, const FwdT& f) {
    const Feat& src = feat(m, pr.first, true, false, false);
    const Feat& tgt = feat(m, pr.second, true, true, true);
    V enc_in = model_.speech_encoder_prenet(src.wave, f);
    V enc = model_.encode(enc_in, enc_in.rows(), f);
    V fused = model_.config().uses_fusion()
                  ? model_.task_fuse(enc, TaskId::VC, f)
                  : enc;
    synth_loss(fused, {&tgt.mel, &tgt.spk}, TaskId::VC, fused.rows(), lf, f);
  }

  double tts_l1_value(const Manifest& m, int row_idx, const FwdT& f) {
    const Feat& ft = feat(m, row_idx, true, true, true);
    V enc = model_.encode(model_.text_encoder_prenet(ft.tokens, f),
                          Eigen::Index(ft.tokens.size()), f);
    V fused = model_.config().uses_fusion()
                  ? model_.task_fuse(enc, TaskId::TTS, f)
                  : enc;
    return synth_l1_value(fused, {&ft.mel, &ft.spk}, TaskId::TTS, f);
  }

  double vc_l1_value(const Manifest& m, const std::pair<int, int>& pr,
                     const FwdT& f) {
    const Feat& src = feat(m, pr.first, true, false, false);
    const Feat& tgt = feat(m, pr.second, true, true, true);
    V enc_in = model_.speech_encoder_prenet(src.wave, f);
    V enc = model_.encode(enc_in, enc_in.rows(), f);
    V fused = model_.config().uses_fusion()
                  ? model_.task_fuse(enc, TaskId::VC, f)
                  : enc;
    return synth_l1_value(fused, {&tgt.mel, &tgt.spk}, TaskId::VC, f);
  }

  double synth_l1_value(const V& fused, const SynthTarget& tgt, TaskId task,
                        const FwdT& f) {
    const int r = model_.config().reduction_factor;
    const Eigen::Index T = tgt.mel->rows();
    const Eigen::Index P = ((T + r - 1) / r) * r;
    MatS dec_in = make_speech_decoder_inputs(*tgt.mel, r);
    V dec_latents = model_.speech_decoder_prenet(dec_in, *tgt.spk, f);
    auto dec = model_.decode(dec_latents, fused, fused.rows(), task, f);
    auto post = model_.speech_decoder_postnet(dec.states);
    MatS padded = MatS::Zero(P, tgt.mel->cols());
    padded.topRows(T) = *tgt.mel;
    std::vector<int> mask(std::size_t(P), 0);
    for (Eigen::Index i = 0; i < T; ++i) mask[std::size_t(i)] = 1;
    return double(
        l1_mel_loss(post.mel_before, post.mel_after, padded, mask).item());
  }

  // -- Accumulation and optimizer ------------------------------------------------

  void fold_grads(Family fam) {
    const auto& items = model_.params().items();
    auto& acc = accum_[int(fam)];
    if (acc.empty()) {
      acc.reserve(items.size());
      for (const auto& p : items) acc.push_back(MatS::Zero(p.rows(), p.cols()));
    }
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& g = items[i].node()->grad;
      if (g.size() != 0) acc[i] += g;
    }
    model_.params().zero_grad();
  }

  bool apply_update(double lr) {
    const auto& items = model_.params().items();
    const int n_fam[2] = {int(win_asr_.size()), int(win_tts_.size())};
    std::vector<MatS> grad;
    grad.reserve(items.size());
    for (const auto& p : items) grad.push_back(MatS::Zero(p.rows(), p.cols()));
    for (int fam = 0; fam < 2; ++fam) {
      if (accum_[fam].empty() || n_fam[fam] == 0) continue;
      const Scalar inv = Scalar(1) / Scalar(n_fam[fam]);
      for (std::size_t i = 0; i < grad.size(); ++i)
        grad[i] += accum_[fam][i] * inv;
    }
    double norm2 = 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i) {
      if (frozen_mask_[i]) continue;
      norm2 += double(grad[i].squaredNorm());
    }
    if (!std::isfinite(norm2)) return false;
    const double norm = std::sqrt(norm2);
    const double clip = sched_.optimizer.clip_norm;
    const Scalar scale = Scalar(norm > clip ? clip / norm : 1.0);
    ++adam_step_;
    const Scalar b1 = Scalar(sched_.optimizer.beta1);
    const Scalar b2 = Scalar(sched_.optimizer.beta2);
    const Scalar bc1 =
        Scalar(1.0 - std::pow(sched_.optimizer.beta1, double(adam_step_)));
    const Scalar bc2 =
        Scalar(1.0 - std::pow(sched_.optimizer.beta2, double(adam_step_)));
    const Scalar eps = Scalar(sched_.optimizer.eps);
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (frozen_mask_[i]) continue;
      const MatS g = grad[i] * scale;
      adam_m_[i] = b1 * adam_m_[i] + (Scalar(1) - b1) * g;
      adam_v_[i] =
          (b2 * adam_v_[i].array() + (Scalar(1) - b2) * g.array().square())
              .matrix();
      items[i].node()->value.array() -=
          Scalar(lr) * (adam_m_[i].array() / bc1) /
          ((adam_v_[i].array() / bc2).sqrt() + eps);
    }
    return true;
  }

  void clear_window() {
    for (auto& acc : accum_) acc.clear();
    win_asr_.clear();
    win_tts_.clear();
    win_poisoned_ = false;
    model_.params().zero_grad();
  }

  void resolve_frozen(const TrainStage& st) {
    const auto& items = model_.params().items();
    frozen_mask_.assign(items.size(), 0);
    for (const std::string& g : st.frozen_groups) {
      std::vector<std::string> prefixes;
      if (g == "encoder")
        prefixes = {"encoder."};
      else if (g == "decoder")
        prefixes = {"decoder.", "decoder_text.", "decoder_speech."};
      else
        prefixes = {g};
      bool any = false;
      for (std::size_t i = 0; i < items.size(); ++i) {
        const std::string& name = items[i].node()->name;
        for (const std::string& p : prefixes)
          if (name.rfind(p, 0) == 0) {
            frozen_mask_[i] = 1;
            any = true;
            break;
          }
      }
      if (!any)
        throw Error("BadConfig", "frozen group matches no parameters: " + g);
    }
  }

  // -- Bookkeeping -------------------------------------------------------------

  void after_update(double lr, const std::optional<LossReport>& rep) {
    const std::int64_t u = global_update_;  // counts completed updates
    std::optional<ValMetrics> val;
    if (opts_.val_every > 0 && (u % opts_.val_every == 0 || done()))
      val = evaluate();
    log_line(detail::metrics_line(u, lr, rep ? &*rep : nullptr, !rep,
                                  skipped_updates_, val ? &*val : nullptr));
    if (!opts_.out_dir.empty() && opts_.ckpt_every > 0 &&
        u % opts_.ckpt_every == 0 && !done())
      save_ckpt();
  }

  void log_line(const std::string& line) {
    if (!opts_.out_dir.empty()) {
      if (!metrics_.is_open())
        metrics_.open(
            (std::filesystem::path(opts_.out_dir) / "metrics.jsonl").string(),
            std::ios::app);
      metrics_ << line << "\n";
      metrics_.flush();
    }
    if (opts_.log_stdout) std::cout << line << std::endl;
  }

  Model<Scalar>& model_;
  TrainSchedule sched_;
  Vocab vocab_;
  TrainOpts opts_;
  Rng rng_;  // dropout stream; checkpointed

  std::int64_t global_update_ = 0;
  int micro_in_window_ = 0;
  std::int64_t adam_step_ = 0;
  std::int64_t skipped_updates_ = 0;
  int stage_idx_ = -1;

  std::vector<MatS> adam_m_, adam_v_;
  std::array<std::vector<MatS>, 2> accum_;  // per loss family
  std::vector<LossReport> win_asr_, win_tts_;
  bool win_poisoned_ = false;
  std::vector<char> frozen_mask_;

  std::map<TaskId, Stream> streams_;
  std::map<std::string, Feat> feat_;
  std::ofstream metrics_;
};

}  // namespace duplex
