#include "triqa/autograd.hpp"

#include <unordered_set>

namespace triqa {

namespace {
thread_local bool grad_mode_enabled = true;
}

bool GradMode::enabled() { return grad_mode_enabled; }
void GradMode::set_enabled(bool on) { grad_mode_enabled = on; }

template <typename T>
void backward(const Var<T>& root) {
  if (!root.defined()) throw std::invalid_argument("backward: undefined root");
  if (root.value().numel() != 1) {
    throw ShapeError("backward: root must be a scalar, got shape " + root.shape().str());
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS; reversing it gives a valid reverse topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

template void backward(const Var<float>&);
template void backward(const Var<double>&);

}  // namespace triqa
