// SPDX-License-Identifier: Apache-2.0
#include "scalabl/autodiff.hpp"

#include "scalabl/errors.hpp"

namespace scalabl {

Var Tape::constant(Tensor value) {
  require_finite(value, "constant");
  nodes_.push_back(Node{std::move(value), {}, false, nullptr, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  require_finite(p.value, "parameter '" + p.name + "'");
  if (p.grad.shape() != p.value.shape()) p.zero_grad();
  nodes_.push_back(Node{p.value, {}, p.trainable, nullptr, p.trainable ? &p : nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, Backprop fn, const char* op) {
  require_finite(value, op);
  bool needs = false;
  for (const Var& p : parents) {
    if (p.tape_ != this) throw std::logic_error(std::string(op) + ": operand from another tape");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : nullptr, nullptr});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(const Var& v, const Tensor& g) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return;
  if (g.size() != n.value.size()) {
    throw ShapeError("gradient shape " + shape_str(g.shape()) + " does not match value shape " +
                     shape_str(n.value.shape()));
  }
  if (n.grad.empty() && !n.value.empty()) {
    n.grad = g.reshaped(n.value.shape());
    return;
  }
  auto dst = n.grad.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Tensor& Tape::grad_buffer(const Var& v) {
  Node& n = nodes_[v.id()];
  if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  return n.grad.empty() ? Tensor::zeros(n.value.shape()) : n.grad;
}

void Tape::backward(const Var& loss) {
  if (loss.tape_ != this) throw std::logic_error("backward: loss from another tape");
  if (nodes_[loss.id()].value.size() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " +
                     shape_str(nodes_[loss.id()].value.shape()));
  }
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad = Tensor::ones(nodes_[loss.id()].value.shape());
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backprop) {
      n.backprop(*this, n.grad);
    } else if (n.param != nullptr) {
      auto dst = n.param->grad.data();
      auto src = n.grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
}

}  // namespace scalabl
