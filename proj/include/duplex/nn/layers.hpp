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

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "duplex/nn/ops.hpp"

namespace duplex::nn {

enum class Init { kXavierUniform, kNormalByDim, kZeros, kOnes };

/// Owns every trainable tensor by name. Layers register here so the
/// optimizer, checkpoints and parameter counting all see one flat list.
template <class Scalar>
class ParamStore {
 public:
  Var<Scalar> create(const std::string& name, Eigen::Index r, Eigen::Index c,
                     Init init, Rng& rng) {
    if (index_.count(name))
      throw Error("DuplicateId", "parameter registered twice: " + name);
    Mat<Scalar> m(r, c);
    switch (init) {
      case Init::kXavierUniform: {
        const double lim = std::sqrt(6.0 / double(r + c));
        for (Eigen::Index i = 0; i < r; ++i)
          for (Eigen::Index j = 0; j < c; ++j)
            m(i, j) = Scalar((rng.uniform() * 2.0 - 1.0) * lim);
        break;
      }
      case Init::kNormalByDim: {
        const double sd = 1.0 / std::sqrt(double(c));
        for (Eigen::Index i = 0; i < r; ++i)
          for (Eigen::Index j = 0; j < c; ++j)
            m(i, j) = Scalar(rng.normal() * sd);
        break;
      }
      case Init::kZeros:
        m.setZero();
        break;
      case Init::kOnes:
        m.setOnes();
        break;
    }
    auto v = Var<Scalar>::leaf(std::move(m), name);
    index_[name] = items_.size();
    items_.push_back(v);
    return v;
  }

  Var<Scalar>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
      throw Error("MissingParam", "no parameter named " + name);
    return items_[it->second];
  }
  const Var<Scalar>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw Error("MissingParam", "no parameter named " + name);
    return items_[it->second];
  }
  bool has(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<Var<Scalar>>& items() const { return items_; }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(items_.size());
    for (const auto& v : items_) out.push_back(v.node()->name);
    return out;
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& v : items_)
      n += static_cast<std::size_t>(v.value().size());
    return n;
  }

  std::size_t prefix_size(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& v : items_)
      if (v.node()->name.rfind(prefix, 0) == 0)
        n += static_cast<std::size_t>(v.value().size());
    return n;
  }

  void zero_grad() {
    for (auto& v : items_) v.node()->grad.resize(0, 0);
  }

  /// Order-independent content hash over name, shape and raw bytes.
  std::uint64_t content_hash() const {
    std::map<std::string, const Var<Scalar>*> sorted;
    for (const auto& v : items_) sorted[v.node()->name] = &v;
    Fnv1a h;
    for (const auto& [name, v] : sorted) {
      h.update(name.data(), name.size());
      const std::int64_t shape[2] = {v->value().rows(), v->value().cols()};
      h.update(shape, sizeof(shape));
      // Row-major byte order keeps the hash layout-independent.
      for (Eigen::Index i = 0; i < v->value().rows(); ++i)
        for (Eigen::Index j = 0; j < v->value().cols(); ++j) {
          Scalar s = v->value()(i, j);
          h.update(&s, sizeof(s));
        }
    }
    return h.digest();
  }

 private:
  std::vector<Var<Scalar>> items_;
  std::map<std::string, std::size_t> index_;
};

template <class Scalar>
struct Fwd {
  bool train = false;
  Scalar dropout = Scalar(0);
  Rng* rng = nullptr;

  Var<Scalar> drop(const Var<Scalar>& x) const {
    if (!train || dropout <= Scalar(0)) return x;
    return nn::dropout(x, dropout, *rng, true);
  }
};

template <class Scalar>
struct Linear {
  Var<Scalar> w;  // in x out
  Var<Scalar> b;  // 1 x out

  static Linear make(ParamStore<Scalar>& ps, const std::string& name,
                     Eigen::Index in, Eigen::Index out, Rng& rng,
                     Init winit = Init::kXavierUniform) {
    return {ps.create(name + ".w", in, out, winit, rng),
            ps.create(name + ".b", 1, out, Init::kZeros, rng)};
  }

  Var<Scalar> operator()(const Var<Scalar>& x) const {
    return add_rowvec(matmul(x, w), b);
  }
};

template <class Scalar>
struct LayerNorm {
  Var<Scalar> gain;
  Var<Scalar> bias;

  static LayerNorm make(ParamStore<Scalar>& ps, const std::string& name,
                        Eigen::Index dim, Rng& rng) {
    return {ps.create(name + ".g", 1, dim, Init::kOnes, rng),
            ps.create(name + ".b", 1, dim, Init::kZeros, rng)};
  }

  Var<Scalar> operator()(const Var<Scalar>& x) const {
    return layer_norm_rows(x, gain, bias);
  }
};

template <class Scalar>
struct Embedding {
  Var<Scalar> table;  // V x d

  static Embedding make(ParamStore<Scalar>& ps, const std::string& name,
                        Eigen::Index vocab, Eigen::Index dim, Rng& rng) {
    return {ps.create(name, vocab, dim, Init::kNormalByDim, rng)};
  }

  Var<Scalar> operator()(const std::vector<int>& ids) const {
    return embedding_rows(table, ids);
  }
};

template <class Scalar>
struct Conv1dLayer {
  Var<Scalar> w;  // (kernel*Cin) x Cout
  Var<Scalar> b;  // 1 x Cout
  Eigen::Index kernel = 1;
  Eigen::Index stride = 1;

  static Conv1dLayer make(ParamStore<Scalar>& ps, const std::string& name,
                          Eigen::Index cin, Eigen::Index cout,
                          Eigen::Index kernel, Eigen::Index stride, Rng& rng,
                          Init winit = Init::kXavierUniform) {
    return {ps.create(name + ".w", kernel * cin, cout, winit, rng),
            ps.create(name + ".b", 1, cout, Init::kZeros, rng), kernel,
            stride};
  }

  Var<Scalar> operator()(const Var<Scalar>& x) const {
    return conv1d(x, w, b, kernel, stride);
  }

  Eigen::Index out_len(Eigen::Index in_len) const {
    return in_len < kernel ? 0 : (in_len - kernel) / stride + 1;
  }
};

/// Standard fixed sinusoidal position encoding, T x d.
template <class Scalar>
Mat<Scalar> sinusoidal_pe(Eigen::Index t, Eigen::Index d) {
  Mat<Scalar> pe(t, d);
  for (Eigen::Index pos = 0; pos < t; ++pos)
    for (Eigen::Index i = 0; i < d; ++i) {
      const double angle =
          double(pos) / std::pow(10000.0, double(2 * (i / 2)) / double(d));
      pe(pos, i) = Scalar((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
  return pe;
}

template <class Scalar>
Var<Scalar> add_position_encoding(const Var<Scalar>& x) {
  return add_const(x, sinusoidal_pe<Scalar>(x.rows(), x.cols()));
}

template <class Scalar>
struct MultiHeadAttention {
  Linear<Scalar> wq, wk, wv, wo;
  Eigen::Index heads = 1;
  Eigen::Index d_model = 0;

  static MultiHeadAttention make(ParamStore<Scalar>& ps,
                                 const std::string& name, Eigen::Index d,
                                 Eigen::Index heads, Rng& rng) {
    if (d % heads != 0)
      throw Error("BadConfig", "d_model must be divisible by heads");
    return {Linear<Scalar>::make(ps, name + ".q", d, d, rng),
            Linear<Scalar>::make(ps, name + ".k", d, d, rng),
            Linear<Scalar>::make(ps, name + ".v", d, d, rng),
            Linear<Scalar>::make(ps, name + ".o", d, d, rng), heads, d};
  }

  /// q_in: Tq x d, kv_in: Tk x d. Optional additive mask Tq x Tk shared
  /// by all heads. When attn_out is given each head's Tq x Tk attention
  /// matrix is appended (still attached to the graph).
  Var<Scalar> operator()(const Var<Scalar>& q_in, const Var<Scalar>& kv_in,
                         const Mat<Scalar>* add_mask = nullptr,
                         std::vector<Var<Scalar>>* attn_out = nullptr) const {
    const Eigen::Index dh = d_model / heads;
    Var<Scalar> q = wq(q_in), k = wk(kv_in), v = wv(kv_in);
    const Scalar inv_sqrt_dh = Scalar(1) / std::sqrt(Scalar(dh));
    std::vector<Var<Scalar>> ctx;
    ctx.reserve(heads);
    for (Eigen::Index h = 0; h < heads; ++h) {
      Var<Scalar> qh = cols(q, h * dh, dh);
      Var<Scalar> kh = cols(k, h * dh, dh);
      Var<Scalar> vh = cols(v, h * dh, dh);
      Var<Scalar> scores = scale(matmul_nt(qh, kh), inv_sqrt_dh);
      Var<Scalar> attn = softmax_rows(scores, add_mask);
      if (attn_out) attn_out->push_back(attn);
      ctx.push_back(matmul(attn, vh));
    }
    return wo(hstack(ctx));
  }
};

template <class Scalar>
struct FeedForward {
  Linear<Scalar> fc1, fc2;

  static FeedForward make(ParamStore<Scalar>& ps, const std::string& name,
                          Eigen::Index d, Eigen::Index d_ffn, Rng& rng) {
    return {Linear<Scalar>::make(ps, name + ".fc1", d, d_ffn, rng),
            Linear<Scalar>::make(ps, name + ".fc2", d_ffn, d, rng)};
  }

  Var<Scalar> operator()(const Var<Scalar>& x, const Fwd<Scalar>& f) const {
    return fc2(f.drop(gelu(fc1(x))));
  }
};

/// Lower-triangular additive causal mask (0 on and below the diagonal).
template <class Scalar>
Mat<Scalar> causal_mask(Eigen::Index t) {
  Mat<Scalar> m = Mat<Scalar>::Zero(t, t);
  for (Eigen::Index i = 0; i < t; ++i)
    for (Eigen::Index j = i + 1; j < t; ++j) m(i, j) = kMaskInf<Scalar>;
  return m;
}

/// Additive padding mask for attending from Tq rows into a Tk-length
/// sequence whose valid prefix is `valid` frames.
template <class Scalar>
Mat<Scalar> padding_mask(Eigen::Index tq, Eigen::Index tk,
                         Eigen::Index valid) {
  Mat<Scalar> m = Mat<Scalar>::Zero(tq, tk);
  for (Eigen::Index i = 0; i < tq; ++i)
    for (Eigen::Index j = valid; j < tk; ++j) m(i, j) = kMaskInf<Scalar>;
  return m;
}

}  // namespace duplex::nn
