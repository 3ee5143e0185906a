// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include "sqe/tensor.hpp"

namespace sqe::ad {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives, as are
/// references returned by value().
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
};

/// Define-by-run tape. Nodes are appended in execution order, so ids are a
/// topological order and backward() is a single reverse sweep.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value);
  /// Leaf bound to an externally owned parameter. When the tensor requires grad,
  /// backward() accumulates into `param.grad`. The tensor must outlive the graph.
  Var param(Tensor& param);
  /// Read-only leaf; never receives gradients.
  Var param(const Tensor& param);

  /// Appends an op result. `fn` is dropped when no input requires grad.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external != nullptr ? *n.external : n.value;
  }
  const Tensor& value(Var v) const { return value(v.id); }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient buffer of a node, allocated zeroed on first access.
  Buffer& grad(std::size_t id);

  /// Reverse sweep from a 1x1 loss. Throws ErrorKind::kContract for a non-scalar loss.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Buffer grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    const Tensor* external = nullptr;  // parameter leaves alias their tensor
    Tensor* param = nullptr;           // set when gradients flow into the parameter
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;  // deque: value() references survive later appends
  bool grad_enabled_;
};

}  // namespace sqe::ad
