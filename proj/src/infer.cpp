// Copyright (c) 2026 The Duplex Authors
// SPDX-License-Identifier: Apache-2.0

#include "duplex/infer.hpp"

#include <cmath>
#include <utility>

namespace duplex {

namespace {

double lse2(double a, double b) {
  if (a == detail::neg_inf()) return b;
  if (b == detail::neg_inf()) return a;
  const double m = a > b ? a : b;
  return m + std::log1p(std::exp((a > b ? b : a) - m));
}

}  // namespace

CtcPrefixScorer::CtcPrefixScorer(Mat<double> log_probs, int blank)
    : lp_(std::move(log_probs)), blank_(blank) {
  if (lp_.rows() < 1 || lp_.cols() < 2)
    throw Error("ShapeMismatch",
                "log_probs needs at least one frame and two classes");
  if (blank_ < 0 || blank_ >= lp_.cols())
    throw Error("ShapeMismatch", "blank id out of range");
  for (Eigen::Index t = 0; t < lp_.rows(); ++t) {
    const double m = lp_.row(t).maxCoeff();
    const double lse = m + std::log((lp_.row(t).array() - m).exp().sum());
    if (!(std::abs(lse) < 1e-3))
      throw Error("BadConfig", "log_probs rows must be log-normalized");
  }
}

CtcPrefixScorer::State CtcPrefixScorer::initial() const {
  const Eigen::Index t_max = lp_.rows();
  State s;
  s.gn.assign(static_cast<std::size_t>(t_max) + 1, detail::neg_inf());
  s.gb.resize(static_cast<std::size_t>(t_max) + 1);
  s.gb[0] = 0.0;  // nothing consumed, nothing emitted
  for (Eigen::Index t = 1; t <= t_max; ++t)
    s.gb[static_cast<std::size_t>(t)] =
        s.gb[static_cast<std::size_t>(t) - 1] + lp_(t - 1, blank_);
  s.score = 0.0;
  s.last = -1;
  return s;
}

CtcPrefixScorer::State CtcPrefixScorer::extend(const State& s,
                                               int symbol) const {
  if (symbol < 0 || symbol >= lp_.cols())
    throw Error("ShapeMismatch", "symbol id out of range");
  if (symbol == blank_)
    throw Error("BadConfig", "blank cannot extend a prefix");
  const Eigen::Index t_max = lp_.rows();
  State n;
  n.gn.assign(static_cast<std::size_t>(t_max) + 1, detail::neg_inf());
  n.gb.assign(static_cast<std::size_t>(t_max) + 1, detail::neg_inf());
  n.last = symbol;
  double score = detail::neg_inf();
  for (Eigen::Index t = 1; t <= t_max; ++t) {
    const std::size_t u = static_cast<std::size_t>(t);
    // Mass of the parent prefix that can emit `symbol` at frame t: paths
    // ending on blank always can; paths ending on the parent's last
    // symbol only when the symbol differs (else CTC would collapse it).
    const double phi = symbol == s.last
                           ? s.gb[u - 1]
                           : lse2(s.gb[u - 1], s.gn[u - 1]);
    n.gn[u] = lp_(t - 1, symbol) + lse2(phi, n.gn[u - 1]);
    n.gb[u] = lp_(t - 1, blank_) + lse2(n.gn[u - 1], n.gb[u - 1]);
    score = lse2(score, lp_(t - 1, symbol) + phi);
  }
  n.score = score;
  return n;
}

double CtcPrefixScorer::termination(const State& s) const {
  if (s.last < 0) return s.gb.back();  // all-blank paths only
  return lse2(s.gn.back(), s.gb.back());
}

double ctc_prefix_score(const Mat<double>& log_probs,
                        const std::vector<int>& prefix, int blank) {
  CtcPrefixScorer scorer(log_probs, blank);
  CtcPrefixScorer::State st = scorer.initial();
  for (int sym : prefix) st = scorer.extend(st, sym);
  return st.score;
}

}  // namespace duplex
