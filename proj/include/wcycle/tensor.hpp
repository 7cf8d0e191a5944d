#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "wcycle/common.hpp"

namespace wcycle {

// Reverse-mode autodiff on flat row-major tensors. Graphs are built
// dynamically per forward pass and dropped when the Vars go out of scope;
// leaf Vars (parameters, optimized inputs) persist across steps and
// accumulate gradients until zero_grad().

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> val;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> inputs;
  std::function<void(Node<T>&)> backward;

  long size() const { return numel(shape); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(val.size(), T(0));
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

  static Var leaf(Shape shape, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->val.assign(numel(n->shape), T(0));
    n->requires_grad = requires_grad;
    if (requires_grad) n->ensure_grad();
    return Var(std::move(n));
  }

  static Var from_values(Shape shape, std::vector<T> values, bool requires_grad = false) {
    require(numel(shape) == static_cast<long>(values.size()),
            "from_values: size mismatch " + shape_str(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->val = std::move(values);
    n->requires_grad = requires_grad;
    if (requires_grad) n->ensure_grad();
    return Var(std::move(n));
  }

  static Var full(Shape shape, T fill) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->val.assign(numel(n->shape), fill);
    return Var(std::move(n));
  }

  static Var scalar(T v) { return full({1}, v); }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  long size() const { return n_->size(); }
  std::vector<T>& val() { return n_->val; }
  const std::vector<T>& val() const { return n_->val; }
  std::vector<T>& grad() { n_->ensure_grad(); return n_->grad; }
  const std::vector<T>& grad() const { return n_->grad; }
  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool rg) {
    n_->requires_grad = rg;
    if (rg) n_->ensure_grad();
  }
  T item() const {
    require(n_->size() == 1, "item() on non-scalar " + shape_str(n_->shape));
    return n_->val[0];
  }

  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
  }

  std::shared_ptr<Node<T>> node() const { return n_; }

 private:
  std::shared_ptr<Node<T>> n_;
};

namespace detail {

// iterative post-order over the input DAG
template <typename T>
void topo_order(Node<T>* root, std::vector<Node<T>*>& out) {
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.push_back({root, 0});
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->inputs.size()) {
      Node<T>* child = node->inputs[idx].get();
      ++idx;
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.push_back({child, 0});
      }
    } else {
      out.push_back(node);
      stack.pop_back();
    }
  }
}

}  // namespace detail

// Backpropagate from a scalar root. Gradients accumulate into every
// requires_grad node reachable from the root.
template <typename T>
inline void backward(const Var<T>& root) {
  require(root.size() == 1, "backward: root must be scalar");
  require(root.requires_grad(), "backward: root does not require grad");
  std::vector<Node<T>*> order;
  detail::topo_order(root.node().get(), order);
  for (Node<T>* n : order) n->ensure_grad();
  root.node()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward) n->backward(*n);
  }
}

// Helper for op implementations.
template <typename T>
inline Var<T> make_op(Shape shape, std::vector<std::shared_ptr<Node<T>>> inputs,
                      std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->val.assign(numel(n->shape), T(0));
  for (auto& in : inputs)
    if (in->requires_grad) n->requires_grad = true;
  n->inputs = std::move(inputs);
  if (n->requires_grad) n->backward = std::move(backward_fn);
  return Var<T>(std::move(n));
}

}  // namespace wcycle
