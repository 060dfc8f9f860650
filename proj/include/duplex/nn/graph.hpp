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

#include <functional>
#include <memory>
#include <set>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "duplex/common.hpp"

namespace duplex::nn {

/// Reverse-mode autodiff over dense Eigen matrices. Ops build the graph
/// eagerly; backward() walks it once in reverse topological order.
/// Gradients accumulate, so parameters can collect contributions from
/// several backward passes before an optimizer step.
template <class Scalar>
struct Node {
  Mat<Scalar> value;
  Mat<Scalar> grad;  // empty until first accumulation
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  bool requires_grad = false;
  std::string name;  // non-empty only for parameters

  void accum_grad(const Mat<Scalar>& delta) {
    if (grad.size() == 0) grad = Mat<Scalar>::Zero(value.rows(), value.cols());
    grad += delta;
  }
};

template <class Scalar>
class Var {
 public:
  using NodeT = Node<Scalar>;

  Var() = default;
  explicit Var(std::shared_ptr<NodeT> n) : node_(std::move(n)) {}

  /// Leaf without gradient tracking.
  static Var constant(Mat<Scalar> value) {
    auto n = std::make_shared<NodeT>();
    n->value = std::move(value);
    return Var(std::move(n));
  }

  /// Leaf that collects gradient (parameters, probe inputs).
  static Var leaf(Mat<Scalar> value, std::string name = {}) {
    auto n = std::make_shared<NodeT>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->name = std::move(name);
    return Var(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Mat<Scalar>& value() const { return node_->value; }
  Mat<Scalar>& value() { return node_->value; }
  const Mat<Scalar>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  const std::shared_ptr<NodeT>& node() const { return node_; }

  Scalar item() const {
    if (node_->value.size() != 1)
      throw Error("ShapeMismatch", "item() on non-scalar variable");
    return node_->value(0, 0);
  }

 private:
  std::shared_ptr<NodeT> node_;
};

/// Factory for ops: value plus a closure pushing gradient to parents.
/// The closure is dropped when no parent needs gradient.
template <class Scalar, class Fn>
Var<Scalar> make_op(Mat<Scalar> value,
                    std::vector<std::shared_ptr<Node<Scalar>>> parents,
                    Fn&& backward) {
  auto n = std::make_shared<Node<Scalar>>();
  n->value = std::move(value);
  for (const auto& p : parents)
    if (p && p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward = std::forward<Fn>(backward);
  }
  return Var<Scalar>(std::move(n));
}

/// Runs reverse-mode accumulation from a scalar root.
template <class Scalar>
void backward(const Var<Scalar>& root) {
  auto* r = root.node().get();
  if (r->value.size() != 1)
    throw Error("ShapeMismatch", "backward() needs a scalar root");
  if (!r->requires_grad) return;

  // Iterative post-order topological sort.
  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> seen;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack;
  stack.emplace_back(r, 0);
  seen.insert(r);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<Scalar>* p = node->parents[idx].get();
      ++idx;
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  r->accum_grad(Mat<Scalar>::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

/// Names of all parameters reachable from `root` — which tensors a
/// forward pass touched.
template <class Scalar>
std::set<std::string> reachable_params(const Var<Scalar>& root) {
  std::set<std::string> out;
  std::unordered_set<Node<Scalar>*> seen;
  std::vector<Node<Scalar>*> stack{root.node().get()};
  while (!stack.empty()) {
    Node<Scalar>* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    if (!n->name.empty()) out.insert(n->name);
    for (const auto& p : n->parents) stack.push_back(p.get());
  }
  return out;
}

}  // namespace duplex::nn
