// SPDX-License-Identifier: Apache-2.0
#include "sqe/graph.hpp"

#include "sqe/error.hpp"

namespace sqe::ad {

const Tensor& Var::value() const { return graph->value(id); }

Var Graph::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Graph::param(const Tensor& param) {
  Node node;
  node.external = &param;
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Graph::param(Tensor& param) {
  Node node;
  node.external = &param;
  if (grad_enabled_ && param.requires_grad) {
    node.requires_grad = true;
    node.param = &param;
    if (param.grad.size() != param.size()) param.zero_grad();
  }
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  Node node;
  node.value = std::move(value);
  if (grad_enabled_) {
    for (std::size_t id : inputs) {
      if (nodes_[id].requires_grad) {
        node.requires_grad = true;
        break;
      }
    }
  }
  if (node.requires_grad) {
    node.inputs = std::move(inputs);
    node.backward = std::move(fn);
  }
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Buffer& Graph::grad(std::size_t id) {
  Node& node = nodes_[id];
  const std::size_t n = value(id).size();
  if (node.grad.size() != n) node.grad.assign(n, 0.0);
  return node.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw Error(ErrorKind::kContract, "backward: loss belongs to another graph");
  if (value(loss.id).size() != 1) {
    throw Error(ErrorKind::kContract, "backward: loss must be scalar, got shape " +
                                          shape_string(value(loss.id).shape()));
  }
  if (!nodes_[loss.id].requires_grad) return;
  grad(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || node.grad.empty()) continue;
    if (node.param != nullptr) {
      Buffer& dst = node.param->grad;
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += node.grad[k];
    } else if (node.backward) {
      node.backward(*this, i);
    }
  }
}

}  // namespace sqe::ad
