// Copyright 2026 The pdarts Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pdarts/error.hpp"

namespace pdarts {

/// Dense row-major shape. Feature maps are always NCHW.
using Shape = std::vector<int>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ')';
  return os.str();
}

/// Thread-local switch that stops ops from recording the graph.
class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set(bool on) { flag() = on; }

 private:
  static bool& flag() {
    thread_local bool on = true;
    return on;
  }
};

/// RAII guard disabling graph recording in a scope.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

namespace detail {

template <typename T>
struct Node {
  std::vector<T> value;
  std::vector<T> grad;
  Shape shape;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  T* ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad.data();
  }
};

}  // namespace detail

/// Handle to a node of the dynamically recorded computation graph.
/// Copies share storage; parameters are leaf variables updated in place.
template <typename T>
class Variable {
 public:
  using Node = detail::Node<T>;

  Variable() = default;
  explicit Variable(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Variable zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value.assign(numel(shape), T(0));
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Variable(std::move(n));
  }

  static Variable from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (values.size() != numel(shape))
      throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                       to_string(shape));
    auto n = std::make_shared<Node>();
    n->value = std::move(values);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Variable(std::move(n));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }

  T* data() { return node_->value.data(); }
  const T* data() const { return node_->value.data(); }
  std::vector<T>& values() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::vector<T>& grad() { return node_->grad; }
  const std::vector<T>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

  /// Detached copy of the value.
  Variable clone() const { return from(shape(), values(), false); }

 private:
  std::shared_ptr<Node> node_;
};

/// Creates an op result node. When recording is on and any parent needs a
/// gradient, the backward closure and parent links are kept.
template <typename T>
Variable<T> make_result(Shape shape, std::vector<T> value,
                        std::vector<std::shared_ptr<detail::Node<T>>> parents,
                        std::function<void(detail::Node<T>&)> backward_fn) {
  auto n = std::make_shared<detail::Node<T>>();
  n->value = std::move(value);
  n->shape = std::move(shape);
  if (GradMode::enabled()) {
    bool any = false;
    for (const auto& p : parents) any = any || (p && p->requires_grad);
    if (any) {
      n->requires_grad = true;
      n->parents = std::move(parents);
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Variable<T>(std::move(n));
}

/// Reverse-mode sweep from a scalar root. Leaf gradients accumulate.
template <typename T>
void backward(Variable<T>& root) {
  if (root.size() != 1) throw ShapeError("backward requires a scalar root");
  if (!root.requires_grad()) return;
  using Node = detail::Node<T>;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p && p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() == n->value.size()) {
      n->backward_fn(*n);
      // Interior gradients are not needed after propagation.
      if (!n->parents.empty()) {
        std::vector<T>().swap(n->grad);
      }
    }
  }
}

}  // namespace pdarts
