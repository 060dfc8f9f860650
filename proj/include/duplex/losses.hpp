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
//
// Training objectives. The recognition side pairs decoder cross entropy
// with a CTC term on the encoder; the synthesis side combines an L1 mel
// reconstruction term, a stop-token BCE, and a guided attention penalty.
// Per-task sums are normalized by the number of samples of that task in
// the step before being added together.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "duplex/common.hpp"
#include "duplex/nn/graph.hpp"
#include "duplex/nn/ops.hpp"

namespace duplex {

/// Scalar summary of one step (or one sample) for logging. Component
/// fields are absent when the step carried no such term.
struct LossReport {
  std::optional<double> ce, ctc, l1, bce, attn;
  double asr_total = 0.0;
  double tts_total = 0.0;
  double joint = 0.0;
  int n_asr = 0;
  int n_tts = 0;

  std::string to_json() const;
};

/// Per-sample report for a recognition sample: asr_total = ce + ctc.
LossReport asr_sample_report(double ce, double ctc);

/// Per-sample report for a synthesis sample: tts_total = l1 + bce + attn.
LossReport tts_sample_report(double l1, double bce, double attn);

/// Combines per-sample reports into the step loss, normalizing each task
/// by its own sample count. Throws EmptyStep when both lists are empty
/// and NonFinite when any input total is not a real number.
LossReport joint_loss(const std::vector<LossReport>& asr_reports,
                      const std::vector<LossReport>& tts_reports);

struct GuidedAttnConfig {
  double g = 0.2;
};

template <class Scalar>
struct CeResult {
  nn::Var<Scalar> loss;  // smoothed, differentiable
  double nll = 0.0;      // unsmoothed mean NLL, for reporting
  int n_tokens = 0;
};

/// Mean cross entropy over non-pad positions with uniform label
/// smoothing. The reported nll is always unsmoothed so that runs with
/// different smoothing stay comparable.
template <class Scalar>
CeResult<Scalar> ce_loss(const nn::Var<Scalar>& logits,
                         const std::vector<int>& targets, int pad_id,
                         Scalar label_smoothing = Scalar(0)) {
  const Eigen::Index L = logits.rows();
  const Eigen::Index V = logits.cols();
  if (static_cast<Eigen::Index>(targets.size()) != L)
    throw Error("ShapeMismatch", "ce_loss needs one target per logit row");
  if (label_smoothing < Scalar(0) || label_smoothing >= Scalar(1))
    throw Error("BadConfig", "label smoothing must be in [0, 1)");

  int n = 0;
  for (int t : targets) {
    if (t == pad_id) continue;
    if (t < 0 || t >= V)
      throw Error("ShapeMismatch", "ce_loss target id out of vocabulary");
    ++n;
  }
  CeResult<Scalar> out;
  out.n_tokens = n;
  if (n == 0) {
    out.loss = nn::Var<Scalar>::constant(Mat<Scalar>::Zero(1, 1));
    return out;
  }

  auto lp = nn::log_softmax_rows(logits);
  const Scalar eps = label_smoothing;
  Mat<Scalar> coeff = Mat<Scalar>::Zero(L, V);
  double nll = 0.0;
  for (Eigen::Index i = 0; i < L; ++i) {
    if (targets[static_cast<std::size_t>(i)] == pad_id) continue;
    const int tgt = targets[static_cast<std::size_t>(i)];
    coeff.row(i).setConstant(-eps / (Scalar(V) * Scalar(n)));
    coeff(i, tgt) += -(Scalar(1) - eps) / Scalar(n);
    nll -= static_cast<double>(lp.value()(i, tgt));
  }
  out.loss = nn::sum_all(nn::cmul(lp, nn::Var<Scalar>::constant(coeff)));
  out.nll = nll / n;
  return out;
}

template <class Scalar>
struct CtcResult {
  nn::Var<Scalar> loss;
  bool infeasible = false;
};

namespace detail {

template <class Scalar>
Scalar lse2(Scalar a, Scalar b) {
  const Scalar m = std::max(a, b);
  if (!std::isfinite(static_cast<double>(m))) return m;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

template <class Scalar>
Scalar lse3(Scalar a, Scalar b, Scalar c) {
  return lse2(lse2(a, b), c);
}

}  // namespace detail

/// CTC negative log likelihood by the forward algorithm in log space.
/// Rows of log_probs must already be log distributions. The gradient is
/// the exact alpha-beta posterior. When the target cannot be emitted in
/// T frames the loss is +inf and the infeasible flag is set instead of
/// throwing, so callers can skip the sample.
template <class Scalar>
CtcResult<Scalar> ctc_loss(const nn::Var<Scalar>& log_probs,
                           const std::vector<int>& target, int blank_id,
                           bool length_normalize = true) {
  const Eigen::Index T = log_probs.rows();
  const Eigen::Index V = log_probs.cols();
  if (T < 1) throw Error("ShapeMismatch", "ctc_loss needs at least one frame");
  if (blank_id < 0 || blank_id >= V)
    throw Error("ShapeMismatch", "ctc_loss blank id out of vocabulary");
  for (int t : target) {
    if (t < 0 || t >= V)
      throw Error("ShapeMismatch", "ctc_loss target id out of vocabulary");
    if (t == blank_id)
      throw Error("ShapeMismatch", "ctc_loss target may not contain blank");
  }

  const Scalar kInf = std::numeric_limits<Scalar>::infinity();
  const std::size_t U = target.size();
  std::size_t repeats = 0;
  for (std::size_t i = 1; i < U; ++i)
    if (target[i] == target[i - 1]) ++repeats;
  CtcResult<Scalar> out;
  if (static_cast<std::size_t>(T) < U + repeats) {
    out.loss = nn::Var<Scalar>::constant(
        Mat<Scalar>::Constant(1, 1, kInf));
    out.infeasible = true;
    return out;
  }

  // Extended label sequence with blanks interleaved.
  const Eigen::Index S = 2 * static_cast<Eigen::Index>(U) + 1;
  std::vector<int> ext(static_cast<std::size_t>(S), blank_id);
  for (std::size_t u = 0; u < U; ++u) ext[2 * u + 1] = target[u];
  auto skip_ok = [&](Eigen::Index s) {
    return s >= 2 && ext[static_cast<std::size_t>(s)] != blank_id &&
           ext[static_cast<std::size_t>(s)] !=
               ext[static_cast<std::size_t>(s - 2)];
  };
  const Mat<Scalar>& y = log_probs.value();

  Mat<Scalar> alpha = Mat<Scalar>::Constant(T, S, -kInf);
  alpha(0, 0) = y(0, ext[0]);
  if (S > 1) alpha(0, 1) = y(0, ext[1]);
  for (Eigen::Index t = 1; t < T; ++t)
    for (Eigen::Index s = 0; s < S; ++s) {
      Scalar a = alpha(t - 1, s);
      if (s >= 1) a = detail::lse2(a, alpha(t - 1, s - 1));
      if (skip_ok(s)) a = detail::lse2(a, alpha(t - 1, s - 2));
      alpha(t, s) = a + y(t, ext[static_cast<std::size_t>(s)]);
    }
  Scalar log_p = alpha(T - 1, S - 1);
  if (S > 1) log_p = detail::lse2(log_p, alpha(T - 1, S - 2));
  if (!std::isfinite(static_cast<double>(log_p))) {
    out.loss = nn::Var<Scalar>::constant(
        Mat<Scalar>::Constant(1, 1, kInf));
    out.infeasible = true;
    return out;
  }

  // beta(t, s): completion probability strictly after frame t.
  Mat<Scalar> beta = Mat<Scalar>::Constant(T, S, -kInf);
  beta(T - 1, S - 1) = Scalar(0);
  if (S > 1) beta(T - 1, S - 2) = Scalar(0);
  for (Eigen::Index t = T - 2; t >= 0; --t)
    for (Eigen::Index s = 0; s < S; ++s) {
      Scalar b = y(t + 1, ext[static_cast<std::size_t>(s)]) + beta(t + 1, s);
      if (s + 1 < S)
        b = detail::lse2(
            b, y(t + 1, ext[static_cast<std::size_t>(s + 1)]) +
                   beta(t + 1, s + 1));
      if (s + 2 < S && skip_ok(s + 2))
        b = detail::lse2(
            b, y(t + 1, ext[static_cast<std::size_t>(s + 2)]) +
                   beta(t + 1, s + 2));
      beta(t, s) = b;
    }

  const Scalar norm =
      length_normalize ? Scalar(std::max<std::size_t>(std::size_t(1), U))
                       : Scalar(1);
  Mat<Scalar> grad = Mat<Scalar>::Zero(T, V);
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index s = 0; s < S; ++s) {
      const Scalar post = alpha(t, s) + beta(t, s) - log_p;
      if (std::isfinite(static_cast<double>(post)))
        grad(t, ext[static_cast<std::size_t>(s)]) -= std::exp(post) / norm;
    }

  out.loss = nn::make_op<Scalar>(
      Mat<Scalar>::Constant(1, 1, -log_p / norm), {log_probs.node()},
      [grad](nn::Node<Scalar>& n) {
        n.parents[0]->accum_grad(n.grad(0, 0) * grad);
      });
  return out;
}

/// Masked L1 on both the pre-residual and post-residual mels. The mask
/// marks supervised frames with 1; padded frames contribute nothing.
template <class Scalar>
nn::Var<Scalar> l1_mel_loss(const nn::Var<Scalar>& before,
                            const nn::Var<Scalar>& after,
                            const Mat<Scalar>& target,
                            const std::vector<int>& frame_mask) {
  const Eigen::Index T = target.rows();
  const Eigen::Index M = target.cols();
  if (before.rows() != T || before.cols() != M || after.rows() != T ||
      after.cols() != M)
    throw Error("ShapeMismatch", "l1_mel_loss prediction/target shapes differ");
  if (static_cast<Eigen::Index>(frame_mask.size()) != T)
    throw Error("ShapeMismatch", "l1_mel_loss mask length != frame count");

  Eigen::Index n_valid = 0;
  Mat<Scalar> mask = Mat<Scalar>::Zero(T, M);
  for (Eigen::Index i = 0; i < T; ++i) {
    const int m = frame_mask[static_cast<std::size_t>(i)];
    if (m != 0 && m != 1)
      throw Error("ShapeMismatch", "l1_mel_loss mask entries must be 0 or 1");
    if (m) {
      mask.row(i).setOnes();
      ++n_valid;
    }
  }
  if (n_valid == 0)
    throw Error("ShapeMismatch", "l1_mel_loss mask selects no frames");
  const Scalar inv = Scalar(1) / (Scalar(n_valid) * Scalar(M));

  auto tgt = nn::Var<Scalar>::constant(target);
  auto msk = nn::Var<Scalar>::constant(mask);
  auto term = [&](const nn::Var<Scalar>& pred) {
    return nn::scale(
        nn::sum_all(nn::abs_elem(nn::cmul(nn::sub(pred, tgt), msk))), inv);
  };
  return nn::add(term(before), term(after));
}

/// Weighted binary cross entropy with logits for the stop token, mean
/// over frames, positives weighted by pos_weight.
template <class Scalar>
nn::Var<Scalar> stop_bce_loss(const nn::Var<Scalar>& stop_logits,
                              const Vec<Scalar>& stop_targets,
                              Scalar pos_weight = Scalar(5)) {
  const Eigen::Index T = stop_logits.rows();
  if (stop_logits.cols() != 1)
    throw Error("ShapeMismatch", "stop_bce_loss expects a column of logits");
  if (stop_targets.size() != T)
    throw Error("ShapeMismatch", "stop_bce_loss target length != frames");
  if (pos_weight <= Scalar(0))
    throw Error("BadConfig", "stop_bce_loss pos_weight must be positive");

  const Mat<Scalar>& x = stop_logits.value();
  double total = 0.0;
  Mat<Scalar> grad = Mat<Scalar>::Zero(T, 1);
  for (Eigen::Index i = 0; i < T; ++i) {
    const Scalar t = stop_targets[i];
    if (t != Scalar(0) && t != Scalar(1))
      throw Error("ShapeMismatch", "stop_bce_loss targets must be 0 or 1");
    const double xi = static_cast<double>(x(i, 0));
    const double sp_neg = xi > 0 ? std::log1p(std::exp(-xi))
                                 : -xi + std::log1p(std::exp(xi));
    const double sp_pos = xi > 0 ? xi + std::log1p(std::exp(-xi))
                                 : std::log1p(std::exp(xi));
    const double w = t == Scalar(1) ? static_cast<double>(pos_weight) : 1.0;
    // -t*w*log sigma(x) - (1-t)*log(1-sigma(x))
    total += t == Scalar(1) ? w * sp_neg : sp_pos;
    const double sig = 1.0 / (1.0 + std::exp(-xi));
    grad(i, 0) = static_cast<Scalar>(
        (t == Scalar(1) ? -w * (1.0 - sig) : sig) / static_cast<double>(T));
  }
  return nn::make_op<Scalar>(
      Mat<Scalar>::Constant(1, 1, static_cast<Scalar>(total / double(T))),
      {stop_logits.node()}, [grad](nn::Node<Scalar>& n) {
        n.parents[0]->accum_grad(n.grad(0, 0) * grad);
      });
}

/// Guided attention penalty over decoder cross-attention maps, averaged
/// over every supplied head and normalized per decoder row so that a
/// fully off-diagonal map scores close to 1.
template <class Scalar>
nn::Var<Scalar> guided_attention_loss(
    const std::vector<std::vector<nn::Var<Scalar>>>& attn,
    const GuidedAttnConfig& cfg, Eigen::Index n_valid, Eigen::Index t_valid) {
  if (cfg.g <= 0.0) throw Error("BadConfig", "guided attention g must be > 0");
  if (n_valid < 1 || t_valid < 1)
    throw Error("ShapeMismatch", "guided attention needs valid lengths >= 1");
  std::size_t heads = 0;
  for (const auto& layer : attn) heads += layer.size();
  if (heads == 0)
    throw Error("ShapeMismatch", "guided attention got no attention maps");

  nn::Var<Scalar> acc = nn::Var<Scalar>::constant(Mat<Scalar>::Zero(1, 1));
  for (const auto& layer : attn)
    for (const auto& head : layer) {
      if (head.rows() < n_valid || head.cols() < t_valid)
        throw Error("ShapeMismatch",
                    "attention map smaller than the stated valid lengths");
      Mat<Scalar> w = Mat<Scalar>::Zero(head.rows(), head.cols());
      for (Eigen::Index n = 0; n < n_valid; ++n)
        for (Eigen::Index t = 0; t < t_valid; ++t) {
          const double d = double(n) / double(n_valid) -
                           double(t) / double(t_valid);
          w(n, t) = static_cast<Scalar>(
              1.0 - std::exp(-d * d / (2.0 * cfg.g * cfg.g)));
        }
      acc = nn::add(acc,
                    nn::sum_all(nn::cmul(head, nn::Var<Scalar>::constant(w))));
    }
  return nn::scale(acc, Scalar(1) / (Scalar(heads) * Scalar(n_valid)));
}

}  // namespace duplex
