#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// A Var is a shared handle to a graph node. Operations create result nodes
// that own their parents; gradients flow back when backward() is called on a
// scalar root. Nodes whose inputs do not require gradients keep no parents
// and no closure, so inference graphs are freed as they go.

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "atmos/tensor.hpp"

namespace atmos {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor<T>& ensure_grad() {
    if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
  bool has_grad() const { return grad.size() == value.size() && !grad.empty(); }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  /// Graph leaf; parameters and inputs are leaves.
  static Var leaf(Tensor<T> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }
  static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t dim(int i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }

  const Tensor<T>& grad() const { return node_->grad; }
  bool has_grad() const { return node_->has_grad(); }
  Tensor<T>& ensure_grad() { return node_->ensure_grad(); }
  void zero_grad() {
    if (node_->has_grad()) node_->grad.fill(T(0));
  }

  /// Same value, cut from the graph.
  Var detach() const { return constant(node_->value); }

  Node<T>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const noexcept { return node_; }

  /// Backpropagates from this node. Without a seed the root must be scalar
  /// and receives gradient 1.
  void backward() const {
    if (node_->value.size() != 1)
      throw ShapeError("backward() without seed needs a scalar root, got " + shape_str(shape()));
    backward(Tensor<T>(node_->value.shape(), T(1)));
  }

  void backward(const Tensor<T>& seed) const {
    if (!node_->requires_grad) return;
    seed.check_same(node_->value, "backward seed");
    std::vector<Node<T>*> order = topo_order();
    node_->ensure_grad() += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
    }
  }

 private:
  std::vector<Node<T>*> topo_order() const {
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node<T>* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    return order;
  }

  std::shared_ptr<Node<T>> node_;
};

/// Builds an op result. The closure receives the result node; parents are in
/// the same order as passed here. Dropped entirely when no parent needs grad.
template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (any) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node_ptr());
    n->backward_fn = std::move(backward_fn);
  }
  return Var<T>(std::move(n));
}

/// Gradient buffer of parent i, or nullptr if it does not need one.
template <typename T>
Tensor<T>* parent_grad(Node<T>& self, std::size_t i) {
  auto& p = self.parents[i];
  return p->requires_grad ? &p->ensure_grad() : nullptr;
}

}  // namespace atmos
