#pragma once

#include <deque>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dpersona/tensor.hpp"

namespace dpersona::nn {

/// Trainable array owned by a network component. `grad` accumulates across
/// tapes until the optimizer consumes it.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool frozen = false;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), T{}); }
};

/// Handle to a node recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so a reverse
/// sweep is a valid topological order. One tape per sample forward.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Var constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

  Var variable(Tensor<T> value) { return push(std::move(value), true, nullptr); }

  Var parameter(Parameter<T>& p) {
    Var v = push(p.value, !p.frozen, nullptr);
    if (!p.frozen) nodes_[v.id].param = &p;
    return v;
  }

  /// Read-only parameter: recorded as a constant.
  Var parameter(const Parameter<T>& p) { return push(p.value, false, nullptr); }

  /// Records an op result. The backward closure is dropped when no input needs a gradient.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::vector<Var>(inputs), std::move(fn));
  }
  Var record(Tensor<T> value, const std::vector<Var>& inputs, BackwardFn fn) {
    bool needs = false;
    for (Var v : inputs) needs = needs || requires_grad(v);
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
  }

  const Tensor<T>& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  /// Gradient buffer of `v`, zero-allocated on first access.
  Tensor<T>& grad(Var v) {
    auto& n = node(v);
    if (n.grad.data.empty()) n.grad = Tensor<T>(n.value.shape);
    return n.grad;
  }
  bool has_grad(Var v) const { return !node(v).grad.data.empty(); }

  /// Backpropagates d(root)/d(.) where root is a single-element node. Parameter
  /// gradients are added into Parameter::grad.
  void backward(Var root, T seed = T{1}) {
    if (value(root).size() != 1) throw std::invalid_argument("backward root must be a scalar");
    if (!requires_grad(root)) return;
    grad(root)[0] += seed;
    for (int i = root.id; i >= 0; --i) {
      auto& n = nodes_[i];
      if (!n.requires_grad || n.grad.data.empty()) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.param) {
        auto& g = n.param->grad.data;
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad.data[k];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
  };

  Var push(Tensor<T> value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(fn), nullptr});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Node& node(Var v) {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) throw std::out_of_range("invalid tape var");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) throw std::out_of_range("invalid tape var");
    return nodes_[v.id];
  }

  std::deque<Node> nodes_;
};

}  // namespace dpersona::nn
