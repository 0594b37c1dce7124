// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with an attached reverse-mode autodiff graph.
//
// A Tensor is a cheap handle onto a shared node. Every differentiable op in
// ops.hpp creates a fresh node whose backward closure knows how to push the
// node's gradient into its parents. `backward()` runs those closures in
// reverse topological order starting from a scalar loss.
//
// Contract on repeated backward passes: leaf tensors that received gradients
// stay "pending" until `zero_grad()` is called on them. A second backward
// through a pending leaf, or through an already-consumed loss, raises
// GraphError rather than silently accumulating.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rawnet/error.hpp"

namespace rawnet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  bool grad_pending = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

}  // namespace detail

/// True while graph recording is enabled on this thread.
inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording for the current thread within its scope.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodeT = detail::Node<T>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<NodeT>()) {
    validate_shape(shape);
    node_->data.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<NodeT>()) {
    validate_shape(shape);
    if (shape_numel(shape) != values.size())
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->data = std::move(values);
  }

  /// A trainable leaf: gradients are tracked and accumulated into it.
  static Tensor parameter(Shape shape, std::vector<T> values) {
    Tensor t(std::move(shape), std::move(values));
    t.set_requires_grad(true);
    return t;
  }

  static Tensor from_node(std::shared_ptr<NodeT> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) {
    if (!node_->is_leaf) throw GraphError("requires_grad can only be set on leaf tensors");
    node_->requires_grad = on;
    if (on) node_->ensure_grad();
  }

  /// Gradient buffer; zeros when nothing has flowed into this tensor.
  std::span<const T> grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    node_->grad_pending = false;
  }

  /// Deep copy of the values, detached from any graph.
  Tensor clone() const {
    Tensor t(shape(), node_->data);
    if (node_->requires_grad && node_->is_leaf) t.set_requires_grad(true);
    return t;
  }

  NodeT& node() const { return *node_; }
  const std::shared_ptr<NodeT>& node_ptr() const { return node_; }

 private:
  static void validate_shape(const Shape& s) {
    for (auto e : s)
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(s));
  }

  std::shared_ptr<NodeT> node_;
};

namespace detail {

/// Builds an op result. Parents and the backward closure are recorded only
/// when graph mode is on and at least one parent is tracked.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values,
                      std::vector<std::shared_ptr<Node<T>>> parents,
                      std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->data = std::move(values);
  bool track = grad_enabled() &&
               std::any_of(parents.begin(), parents.end(),
                           [](const auto& p) { return p && p->requires_grad; });
  if (track) {
    n->requires_grad = true;
    n->is_leaf = false;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>::from_node(std::move(n));
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss into every tracked leaf.
template <typename T>
void backward(const Tensor<T>& loss) {
  using NodeT = detail::Node<T>;
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward requires a scalar loss, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  NodeT* root = &loss.node();
  if (root->consumed) throw GraphError("backward already ran on this loss");
  if (!root->requires_grad) throw GraphError("loss does not depend on any tracked tensor");

  // Iterative post-order DFS; reversed, it is a valid reverse-topological order.
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      NodeT* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (NodeT* n : order)
    if (n->is_leaf && n->grad_pending)
      throw GraphError("leaf gradients were not reset since the previous backward; call zero_grad");

  for (NodeT* n : order) {
    if (n->is_leaf) {
      n->ensure_grad();
    } else {
      n->grad.assign(n->data.size(), T(0));
    }
  }
  root->grad[0] = T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (!n->is_leaf && n->backward_fn) n->backward_fn(*n);
  }

  for (NodeT* n : order) {
    if (n->is_leaf) {
      n->grad_pending = true;
    } else {
      // Interior buffers are no longer needed; release the graph.
      n->backward_fn = nullptr;
      n->parents.clear();
      n->consumed = true;
      std::vector<T>().swap(n->grad);
    }
  }
}

}  // namespace rawnet
