#pragma once

// Minimal reverse-mode autodiff over Tensor<T>. A Var is a handle to a graph
// node; ops record a closure that scatters the node's gradient into its
// parents. Parameters are leaf nodes that outlive individual graphs.

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fcd/tensor.hpp"

namespace fcd {

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated lazily
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
    return grad;
  }
  bool has_grad() const { return grad.size() == value.size() && !value.empty(); }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  /// Gradient after backward(); zeros if nothing flowed here.
  Tensor<T> grad() const {
    if (node_->has_grad()) return node_->grad;
    return Tensor<T>(shape());
  }
  void zero_grad() { node_->grad = Tensor<T>(); }
  bool has_grad() const { return node_ && node_->has_grad(); }
  const Tensor<T>& grad_ref() const { return node_->grad; }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

  /// Same value, cut from the graph.
  Var detach() const { return Var(node_->value, false); }

  // Builds an op result. The closure runs only when some parent needs a gradient.
  static Var make(Tensor<T> value, std::vector<Var> parents, std::function<void(Node<T>&)> fn) {
    Var out(std::move(value), false);
    for (auto& p : parents) {
      if (p.requires_grad()) out.node_->requires_grad = true;
    }
    if (out.node_->requires_grad) {
      out.node_->parents.reserve(parents.size());
      for (auto& p : parents) out.node_->parents.push_back(p.node_);
      out.node_->backward_fn = std::move(fn);
    }
    return out;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Runs reverse accumulation from a scalar root (seed 1) or with an explicit seed.
template <class T>
void backward(const Var<T>& root, const Tensor<T>* seed = nullptr) {
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  // iterative post-order DFS
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  Tensor<T>& g = root.node()->grad_buffer();
  if (seed) {
    require_same_shape(seed->shape(), g.shape(), "backward seed");
    g = *seed;
  } else {
    if (root.value().size() != 1) throw std::invalid_argument("backward without seed needs a scalar root");
    g[0] += T(1);
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
  // Drop intermediate gradients so repeated backward calls on shared leaves accumulate cleanly.
  for (Node<T>* n : order) {
    if (n->backward_fn) n->grad = Tensor<T>();
  }
}

/// Accumulates `g` into parent `i` of `self` if that parent tracks gradients.
template <class T>
inline Tensor<T>* parent_grad(Node<T>& self, std::size_t i) {
  Node<T>* p = self.parents[i].get();
  if (!p->requires_grad) return nullptr;
  return &p->grad_buffer();
}

}  // namespace fcd
