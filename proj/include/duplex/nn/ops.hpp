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
#include <cstdint>
#include <vector>

#include "duplex/nn/graph.hpp"

namespace duplex::nn {

/// Additive mask value for blocked attention positions. Finite so that a
/// fully masked row degrades to a uniform distribution instead of NaN.
template <class Scalar>
inline constexpr Scalar kMaskInf = Scalar(-1e9);

template <class Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.cols() != b.rows())
    throw Error("ShapeMismatch", "matmul inner dimensions disagree");
  Mat<Scalar> av = a.value(), bv = b.value();
  return make_op<Scalar>(
      av * bv, {a.node(), b.node()}, [av, bv](Node<Scalar>& n) {
        if (n.parents[0]->requires_grad)
          n.parents[0]->accum_grad(n.grad * bv.transpose());
        if (n.parents[1]->requires_grad)
          n.parents[1]->accum_grad(av.transpose() * n.grad);
      });
}

/// a * b^T without materializing the transpose in caller code.
template <class Scalar>
Var<Scalar> matmul_nt(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.cols() != b.cols())
    throw Error("ShapeMismatch", "matmul_nt inner dimensions disagree");
  Mat<Scalar> av = a.value(), bv = b.value();
  return make_op<Scalar>(
      av * bv.transpose(), {a.node(), b.node()}, [av, bv](Node<Scalar>& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accum_grad(n.grad * bv);
        if (n.parents[1]->requires_grad)
          n.parents[1]->accum_grad(n.grad.transpose() * av);
      });
}

template <class Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error("ShapeMismatch", "add shapes disagree");
  return make_op<Scalar>(a.value() + b.value(), {a.node(), b.node()},
                         [](Node<Scalar>& n) {
                           if (n.parents[0]->requires_grad)
                             n.parents[0]->accum_grad(n.grad);
                           if (n.parents[1]->requires_grad)
                             n.parents[1]->accum_grad(n.grad);
                         });
}

template <class Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error("ShapeMismatch", "sub shapes disagree");
  return make_op<Scalar>(a.value() - b.value(), {a.node(), b.node()},
                         [](Node<Scalar>& n) {
                           if (n.parents[0]->requires_grad)
                             n.parents[0]->accum_grad(n.grad);
                           if (n.parents[1]->requires_grad)
                             n.parents[1]->accum_grad(-n.grad);
                         });
}

/// Broadcasts a 1 x C row vector over every row of a.
template <class Scalar>
Var<Scalar> add_rowvec(const Var<Scalar>& a, const Var<Scalar>& v) {
  if (v.rows() != 1 || v.cols() != a.cols())
    throw Error("ShapeMismatch", "add_rowvec wants a 1 x C vector");
  Mat<Scalar> out = a.value();
  out.rowwise() += v.value().row(0);
  return make_op<Scalar>(std::move(out), {a.node(), v.node()},
                         [](Node<Scalar>& n) {
                           if (n.parents[0]->requires_grad)
                             n.parents[0]->accum_grad(n.grad);
                           if (n.parents[1]->requires_grad)
                             n.parents[1]->accum_grad(n.grad.colwise().sum());
                         });
}

template <class Scalar>
Var<Scalar> add_const(const Var<Scalar>& a, const Mat<Scalar>& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols())
    throw Error("ShapeMismatch", "add_const shapes disagree");
  return make_op<Scalar>(a.value() + c, {a.node()}, [](Node<Scalar>& n) {
    n.parents[0]->accum_grad(n.grad);
  });
}

template <class Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar k) {
  return make_op<Scalar>(Mat<Scalar>(a.value() * k), {a.node()},
                         [k](Node<Scalar>& n) {
                           n.parents[0]->accum_grad(Mat<Scalar>(n.grad * k));
                         });
}

template <class Scalar>
Var<Scalar> cmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error("ShapeMismatch", "cmul shapes disagree");
  Mat<Scalar> av = a.value(), bv = b.value();
  return make_op<Scalar>(
      av.cwiseProduct(bv), {a.node(), b.node()}, [av, bv](Node<Scalar>& n) {
        if (n.parents[0]->requires_grad)
          n.parents[0]->accum_grad(n.grad.cwiseProduct(bv));
        if (n.parents[1]->requires_grad)
          n.parents[1]->accum_grad(n.grad.cwiseProduct(av));
      });
}

template <class Scalar>
Var<Scalar> cmul_const(const Var<Scalar>& a, const Mat<Scalar>& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols())
    throw Error("ShapeMismatch", "cmul_const shapes disagree");
  return make_op<Scalar>(a.value().cwiseProduct(c), {a.node()},
                         [c](Node<Scalar>& n) {
                           n.parents[0]->accum_grad(n.grad.cwiseProduct(c));
                         });
}

template <class Scalar>
Var<Scalar> rows(const Var<Scalar>& a, Eigen::Index r0, Eigen::Index n) {
  if (r0 < 0 || n < 0 || r0 + n > a.rows())
    throw Error("ShapeMismatch", "row slice out of range");
  Eigen::Index c = a.cols(), rtot = a.rows();
  return make_op<Scalar>(Mat<Scalar>(a.value().middleRows(r0, n)), {a.node()},
                         [r0, n, rtot, c](Node<Scalar>& n_) {
                           Mat<Scalar> g = Mat<Scalar>::Zero(rtot, c);
                           g.middleRows(r0, n) = n_.grad;
                           n_.parents[0]->accum_grad(g);
                         });
}

template <class Scalar>
Var<Scalar> cols(const Var<Scalar>& a, Eigen::Index c0, Eigen::Index n) {
  if (c0 < 0 || n < 0 || c0 + n > a.cols())
    throw Error("ShapeMismatch", "column slice out of range");
  Eigen::Index r = a.rows(), ctot = a.cols();
  return make_op<Scalar>(Mat<Scalar>(a.value().middleCols(c0, n)), {a.node()},
                         [c0, n, r, ctot](Node<Scalar>& n_) {
                           Mat<Scalar> g = Mat<Scalar>::Zero(r, ctot);
                           g.middleCols(c0, n) = n_.grad;
                           n_.parents[0]->accum_grad(g);
                         });
}

template <class Scalar>
Var<Scalar> hstack(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw Error("ShapeMismatch", "hstack of nothing");
  Eigen::Index r = parts[0].rows(), ctot = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw Error("ShapeMismatch", "hstack row counts differ");
    ctot += p.cols();
  }
  Mat<Scalar> out(r, ctot);
  std::vector<std::shared_ptr<Node<Scalar>>> parents;
  std::vector<Eigen::Index> widths;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
    parents.push_back(p.node());
    widths.push_back(p.cols());
  }
  return make_op<Scalar>(std::move(out), std::move(parents),
                         [widths](Node<Scalar>& n) {
                           Eigen::Index c0 = 0;
                           for (std::size_t i = 0; i < widths.size(); ++i) {
                             if (n.parents[i]->requires_grad)
                               n.parents[i]->accum_grad(
                                   n.grad.middleCols(c0, widths[i]));
                             c0 += widths[i];
                           }
                         });
}

template <class Scalar>
Var<Scalar> vstack(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw Error("ShapeMismatch", "vstack of nothing");
  Eigen::Index c = parts[0].cols(), rtot = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) throw Error("ShapeMismatch", "vstack col counts differ");
    rtot += p.rows();
  }
  Mat<Scalar> out(rtot, c);
  std::vector<std::shared_ptr<Node<Scalar>>> parents;
  std::vector<Eigen::Index> heights;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
    parents.push_back(p.node());
    heights.push_back(p.rows());
  }
  return make_op<Scalar>(std::move(out), std::move(parents),
                         [heights](Node<Scalar>& n) {
                           Eigen::Index r0 = 0;
                           for (std::size_t i = 0; i < heights.size(); ++i) {
                             if (n.parents[i]->requires_grad)
                               n.parents[i]->accum_grad(
                                   n.grad.middleRows(r0, heights[i]));
                             r0 += heights[i];
                           }
                         });
}

template <class Scalar>
Var<Scalar> hstack(std::initializer_list<Var<Scalar>> parts) {
  return hstack(std::vector<Var<Scalar>>(parts));
}

template <class Scalar>
Var<Scalar> vstack(std::initializer_list<Var<Scalar>> parts) {
  return vstack(std::vector<Var<Scalar>>(parts));
}

template <class Scalar>
Var<Scalar> transpose(const Var<Scalar>& a) {
  return make_op<Scalar>(Mat<Scalar>(a.value().transpose()), {a.node()},
                         [](Node<Scalar>& n) {
                           n.parents[0]->accum_grad(n.grad.transpose());
                         });
}

/// Row-wise softmax with an optional additive mask applied before
/// normalization (use kMaskInf for blocked positions).
template <class Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& a,
                         const Mat<Scalar>* add_mask = nullptr) {
  Mat<Scalar> z = a.value();
  if (add_mask) {
    if (z.rows() != add_mask->rows() || z.cols() != add_mask->cols())
      throw Error("ShapeMismatch", "softmax mask shape disagrees");
    z += *add_mask;
  }
  Vec<Scalar> mx = z.rowwise().maxCoeff();
  z.colwise() -= mx;
  Mat<Scalar> y = z.array().exp();
  Vec<Scalar> sums = y.rowwise().sum();
  y.array().colwise() /= sums.array();
  Mat<Scalar> yv = y;
  return make_op<Scalar>(std::move(y), {a.node()}, [yv](Node<Scalar>& n) {
    Vec<Scalar> dot = (n.grad.cwiseProduct(yv)).rowwise().sum();
    Mat<Scalar> g = n.grad;
    g.colwise() -= dot;
    n.parents[0]->accum_grad(g.cwiseProduct(yv));
  });
}

template <class Scalar>
Var<Scalar> log_softmax_rows(const Var<Scalar>& a) {
  Mat<Scalar> z = a.value();
  Vec<Scalar> mx = z.rowwise().maxCoeff();
  z.colwise() -= mx;
  Vec<Scalar> lse = z.array().exp().rowwise().sum().log();
  Mat<Scalar> y = z;
  y.colwise() -= lse;
  Mat<Scalar> p = y.array().exp();
  return make_op<Scalar>(std::move(y), {a.node()}, [p](Node<Scalar>& n) {
    Vec<Scalar> rowsum = n.grad.rowwise().sum();
    Mat<Scalar> g = n.grad - Mat<Scalar>(p.array().colwise() * rowsum.array());
    n.parents[0]->accum_grad(g);
  });
}

/// Per-row layer normalization with learned gain and bias (1 x C each).
template <class Scalar>
Var<Scalar> layer_norm_rows(const Var<Scalar>& x, const Var<Scalar>& gain,
                            const Var<Scalar>& bias,
                            Scalar eps = Scalar(1e-5)) {
  const Eigen::Index c = x.cols();
  if (gain.rows() != 1 || gain.cols() != c || bias.rows() != 1 ||
      bias.cols() != c)
    throw Error("ShapeMismatch", "layer_norm gain/bias must be 1 x C");
  Mat<Scalar> xv = x.value();
  Vec<Scalar> mu = xv.rowwise().mean();
  Mat<Scalar> xc = xv.colwise() - mu;
  Vec<Scalar> var = xc.array().square().rowwise().mean();
  Vec<Scalar> inv = (var.array() + eps).rsqrt();
  Mat<Scalar> xhat = xc.array().colwise() * inv.array();
  Mat<Scalar> out = xhat;
  out.array().rowwise() *= gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  Mat<Scalar> g = gain.value();
  return make_op<Scalar>(
      std::move(out), {x.node(), gain.node(), bias.node()},
      [xhat, inv, g, c](Node<Scalar>& n) {
        Mat<Scalar> dxhat =
            n.grad.array().rowwise() * g.row(0).array();
        if (n.parents[0]->requires_grad) {
          Vec<Scalar> m1 = dxhat.rowwise().mean();
          Vec<Scalar> m2 = (dxhat.cwiseProduct(xhat)).rowwise().mean();
          Mat<Scalar> dx =
              dxhat - (xhat.array().colwise() * m2.array()).matrix();
          dx.colwise() -= m1;
          dx.array().colwise() *= inv.array();
          n.parents[0]->accum_grad(dx);
        }
        if (n.parents[1]->requires_grad)
          n.parents[1]->accum_grad(
              (n.grad.cwiseProduct(xhat)).colwise().sum());
        if (n.parents[2]->requires_grad)
          n.parents[2]->accum_grad(n.grad.colwise().sum());
      });
}

template <class Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
  Mat<Scalar> mask =
      (a.value().array() > Scalar(0)).template cast<Scalar>();
  return make_op<Scalar>(a.value().cwiseProduct(mask), {a.node()},
                         [mask](Node<Scalar>& n) {
                           n.parents[0]->accum_grad(n.grad.cwiseProduct(mask));
                         });
}

/// Elementwise |x| with subgradient sign(x), zero at the kink.
template <class Scalar>
Var<Scalar> abs_elem(const Var<Scalar>& a) {
  Mat<Scalar> sgn = a.value().array().sign();
  return make_op<Scalar>(a.value().cwiseAbs(), {a.node()},
                         [sgn](Node<Scalar>& n) {
                           n.parents[0]->accum_grad(n.grad.cwiseProduct(sgn));
                         });
}

/// Exact (erf) GELU.
template <class Scalar>
Var<Scalar> gelu(const Var<Scalar>& a) {
  Mat<Scalar> xv = a.value();
  const Scalar inv_sqrt2 = Scalar(0.7071067811865475244);
  const Scalar inv_sqrt2pi = Scalar(0.3989422804014326779);
  Mat<Scalar> phi = xv.unaryExpr([inv_sqrt2](Scalar v) {
    return Scalar(0.5) * (Scalar(1) + std::erf(v * inv_sqrt2));
  });
  return make_op<Scalar>(
      xv.cwiseProduct(phi), {a.node()},
      [xv, phi, inv_sqrt2pi](Node<Scalar>& n) {
        Mat<Scalar> pdf = xv.unaryExpr([inv_sqrt2pi](Scalar v) {
          return inv_sqrt2pi * std::exp(Scalar(-0.5) * v * v);
        });
        Mat<Scalar> d = phi + xv.cwiseProduct(pdf);
        n.parents[0]->accum_grad(n.grad.cwiseProduct(d));
      });
}

template <class Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& a) {
  Mat<Scalar> s = a.value().unaryExpr([](Scalar v) {
    return v >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-v))
                          : std::exp(v) / (Scalar(1) + std::exp(v));
  });
  return make_op<Scalar>(Mat<Scalar>(s), {a.node()}, [s](Node<Scalar>& n) {
    Mat<Scalar> d = s.array() * (Scalar(1) - s.array());
    n.parents[0]->accum_grad(n.grad.cwiseProduct(d));
  });
}

template <class Scalar>
Var<Scalar> tanh_op(const Var<Scalar>& a) {
  Mat<Scalar> t = a.value().array().tanh();
  return make_op<Scalar>(Mat<Scalar>(t), {a.node()}, [t](Node<Scalar>& n) {
    Mat<Scalar> d = Scalar(1) - t.array().square();
    n.parents[0]->accum_grad(n.grad.cwiseProduct(d));
  });
}

/// Inverted dropout; identity when disabled or p == 0.
template <class Scalar>
Var<Scalar> dropout(const Var<Scalar>& a, Scalar p, Rng& rng, bool enabled) {
  if (!enabled || p <= Scalar(0)) return a;
  if (p >= Scalar(1)) throw Error("BadConfig", "dropout rate must be < 1");
  Mat<Scalar> mask(a.rows(), a.cols());
  const Scalar keep = Scalar(1) - p;
  for (Eigen::Index i = 0; i < mask.rows(); ++i)
    for (Eigen::Index j = 0; j < mask.cols(); ++j)
      mask(i, j) = Scalar(rng.uniform()) < p ? Scalar(0) : Scalar(1) / keep;
  return cmul_const(a, mask);
}

/// 1-D convolution over rows. x is T x Cin, w is (k*Cin) x Cout with tap
/// j occupying rows [j*Cin, (j+1)*Cin), b is 1 x Cout. Valid padding:
/// T' = floor((T - k) / stride) + 1.
template <class Scalar>
Var<Scalar> conv1d(const Var<Scalar>& x, const Var<Scalar>& w,
                   const Var<Scalar>& b, Eigen::Index kernel,
                   Eigen::Index stride) {
  const Eigen::Index t = x.rows(), cin = x.cols();
  if (w.rows() != kernel * cin)
    throw Error("ShapeMismatch", "conv1d weight rows != kernel * Cin");
  if (b.rows() != 1 || b.cols() != w.cols())
    throw Error("ShapeMismatch", "conv1d bias must be 1 x Cout");
  if (t < kernel)
    throw Error("ShapeMismatch", "conv1d input shorter than kernel");
  const Eigen::Index tout = (t - kernel) / stride + 1;
  Mat<Scalar> patches(tout, kernel * cin);
  for (Eigen::Index i = 0; i < tout; ++i)
    for (Eigen::Index j = 0; j < kernel; ++j)
      patches.row(i).segment(j * cin, cin) = x.value().row(i * stride + j);
  Mat<Scalar> out = patches * w.value();
  out.rowwise() += b.value().row(0);
  Mat<Scalar> wv = w.value();
  return make_op<Scalar>(
      std::move(out), {x.node(), w.node(), b.node()},
      [patches, wv, kernel, stride, t, cin](Node<Scalar>& n) {
        if (n.parents[0]->requires_grad) {
          Mat<Scalar> dpatch = n.grad * wv.transpose();
          Mat<Scalar> dx = Mat<Scalar>::Zero(t, cin);
          for (Eigen::Index i = 0; i < dpatch.rows(); ++i)
            for (Eigen::Index j = 0; j < kernel; ++j)
              dx.row(i * stride + j) += dpatch.row(i).segment(j * cin, cin);
          n.parents[0]->accum_grad(dx);
        }
        if (n.parents[1]->requires_grad)
          n.parents[1]->accum_grad(patches.transpose() * n.grad);
        if (n.parents[2]->requires_grad)
          n.parents[2]->accum_grad(n.grad.colwise().sum());
      });
}

/// Gathers table rows by id; gradient scatters back into the table.
template <class Scalar>
Var<Scalar> embedding_rows(const Var<Scalar>& table,
                           const std::vector<int>& ids) {
  const Eigen::Index v = table.rows(), d = table.cols();
  Mat<Scalar> out(static_cast<Eigen::Index>(ids.size()), d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= v)
      throw Error("InvalidId", "embedding id out of range");
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  return make_op<Scalar>(std::move(out), {table.node()},
                         [ids, v, d](Node<Scalar>& n) {
                           Mat<Scalar> g = Mat<Scalar>::Zero(v, d);
                           for (std::size_t i = 0; i < ids.size(); ++i)
                             g.row(ids[i]) +=
                                 n.grad.row(static_cast<Eigen::Index>(i));
                           n.parents[0]->accum_grad(g);
                         });
}

/// Splits each row into `groups` consecutive rows:
/// T x (g*C) becomes (T*g) x C with out.row(t*g + j) = in.row(t)[j*C, C).
template <class Scalar>
Var<Scalar> unfold_rows(const Var<Scalar>& a, Eigen::Index groups) {
  if (groups <= 0 || a.cols() % groups != 0)
    throw Error("ShapeMismatch", "unfold_rows group count must divide cols");
  const Eigen::Index t = a.rows(), c = a.cols() / groups;
  Mat<Scalar> out(t * groups, c);
  for (Eigen::Index i = 0; i < t; ++i)
    for (Eigen::Index j = 0; j < groups; ++j)
      out.row(i * groups + j) = a.value().row(i).segment(j * c, c);
  return make_op<Scalar>(std::move(out), {a.node()},
                         [t, groups, c](Node<Scalar>& n) {
                           Mat<Scalar> g(t, groups * c);
                           for (Eigen::Index i = 0; i < t; ++i)
                             for (Eigen::Index j = 0; j < groups; ++j)
                               g.row(i).segment(j * c, c) =
                                   n.grad.row(i * groups + j);
                           n.parents[0]->accum_grad(g);
                         });
}

template <class Scalar>
Var<Scalar> sum_all(const Var<Scalar>& a) {
  Mat<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  Eigen::Index r = a.rows(), c = a.cols();
  return make_op<Scalar>(std::move(out), {a.node()}, [r, c](Node<Scalar>& n) {
    n.parents[0]->accum_grad(
        Mat<Scalar>(Mat<Scalar>::Constant(r, c, n.grad(0, 0))));
  });
}

template <class Scalar>
Var<Scalar> mean_all(const Var<Scalar>& a) {
  return scale(sum_all(a), Scalar(1) / Scalar(a.rows() * a.cols()));
}

/// Detach from the graph: same value, no gradient flow.
template <class Scalar>
Var<Scalar> detach(const Var<Scalar>& a) {
  return Var<Scalar>::constant(a.value());
}

}  // namespace duplex::nn
