#pragma once

// Tape-free reverse mode: every Var owns a node that keeps its parents alive,
// and backward() walks the reachable graph in reverse topological order.

#include "v2xcalib/nn/tensor.hpp"

#include <functional>
#include <memory>
#include <unordered_set>

namespace v2xcalib::nn {

template <typename S>
struct Node {
  Tensor<S> value;
  Tensor<S> grad;  // empty until something flows in
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  Tensor<S>& grad_buffer() {
    if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor<S>::zeros(value.shape());
    return grad;
  }

  void accumulate(const Tensor<S>& g) {
    Tensor<S>& buf = grad_buffer();
    buf.array() += g.array();
  }
};

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

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename S>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<S> value, bool requires_grad = false) : node_(std::make_shared<Node<S>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<S>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<S> value) { return Var(std::move(value), false); }
  static Var parameter(Tensor<S> value) { return Var(std::move(value), true); }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<S>& value() const { return node_->value; }
  Tensor<S>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  int ndim() const { return node_->value.ndim(); }
  std::size_t size() const { return node_->value.size(); }
  S item() const { return node_->value.item(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return node_->grad.size() == node_->value.size() && !node_->grad.empty(); }
  const Tensor<S>& grad() const { return node_->grad; }
  Tensor<S>& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() {
    if (has_grad()) node_->grad.fill(S(0));
  }

  const std::shared_ptr<Node<S>>& node() const { return node_; }

  /// Reverse pass from a single-element output.
  void backward() const {
    if (size() != 1) throw ShapeError("backward: output has " + std::to_string(size()) + " elements, seed required");
    backward(Tensor<S>(shape(), S(1)));
  }

  /// Reverse pass seeded with dL/d(this). Interior nodes drop their closures
  /// afterwards, so a graph can only be differentiated once.
  void backward(const Tensor<S>& seed) const {
    if (seed.shape() != shape()) throw ShapeError("backward: seed shape " + shape_str(seed.shape()) + " != " + shape_str(shape()));
    if (!requires_grad()) return;
    std::vector<Node<S>*> order;
    topo_sort(order);
    node_->accumulate(seed);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<S>* n = *it;
      if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
    for (Node<S>* n : order) {
      if (!n->is_leaf()) {
        n->backward_fn = nullptr;
        n->parents.clear();
        n->grad = Tensor<S>();
      }
    }
  }

 private:
  void topo_sort(std::vector<Node<S>*>& order) const {
    std::unordered_set<Node<S>*> seen;
    std::vector<std::pair<Node<S>*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node<S>* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node<S>> node_;
};

/// Builds the output Var of an op. The graph edge is recorded only when grad
/// mode is on and at least one input needs a gradient.
template <typename S, typename Backward>
Var<S> make_op(Tensor<S> value, std::vector<Var<S>> inputs, const char* op, Backward&& backward) {
  bool needs = false;
  if (GradMode::enabled()) {
    for (const Var<S>& v : inputs) needs = needs || v.requires_grad();
  }
  auto node = std::make_shared<Node<S>>();
  node->value = std::move(value);
  node->op = op;
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (Var<S>& v : inputs) node->parents.push_back(v.node());
    node->backward_fn = std::forward<Backward>(backward);
  }
  return Var<S>(std::move(node));
}

/// Parent i of a node, or nullptr when it does not want a gradient.
template <typename S>
Node<S>* grad_target(Node<S>& n, std::size_t i) {
  Node<S>* p = n.parents[i].get();
  return p->requires_grad ? p : nullptr;
}

}  // namespace v2xcalib::nn
