#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "triqa/tensor.hpp"

namespace triqa {

// Define-by-run reverse mode. Every op allocates a Node holding its forward
// value, the parents it read, and a closure that pushes this node's gradient
// into those parents. The graph lives as long as the root Var does.

template <typename T>
struct Node {
  BasicTensor<T> value;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  /// Zero-filled gradient buffer of the value's length, allocated on demand.
  std::vector<T>& grad_buffer() {
    if (grad.size() != value.data.size()) grad.assign(value.data.size(), T{0});
    return grad;
  }
};

/// Thread-local switch that disables graph recording (inference, finite
/// differences). Ops still compute values but attach no parents.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Var {
 public:
  using value_type = T;

  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var leaf(BasicTensor<T> value, bool requires_grad = false) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return Var(std::move(node));
  }

  bool defined() const { return node_ != nullptr; }
  const BasicTensor<T>& value() const { return node_->value; }
  /// Mutable access for leaves (optimizer updates, perturbation).
  BasicTensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  bool requires_grad() const { return node_->requires_grad; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad; }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T{0}); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds a node for an op result. When grad mode is off or no parent needs a
/// gradient, parents and the closure are dropped.
template <typename T>
Var<T> make_result(BasicTensor<T> value, std::vector<Var<T>> parents,
                   std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (GradMode::enabled()) {
    for (const auto& p : parents) node->requires_grad = node->requires_grad || p.requires_grad();
  }
  if (node->requires_grad) {
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node_ptr());
    node->backward_fn = std::move(backward_fn);
  }
  return Var<T>(std::move(node));
}

/// Seeds d(root)/d(root) = 1 and accumulates gradients into every reachable
/// node that requires them. The root must hold a single element.
template <typename T>
void backward(const Var<T>& root);

}  // namespace triqa
