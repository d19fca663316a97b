// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "scalabl/tensor.hpp"

namespace scalabl {

/// A named tensor that lives across training steps. Gradients from every
/// tape that references it accumulate into `grad`.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape())),
        trainable(train) {}

  void zero_grad() { grad = Tensor::zeros(value.shape()); }
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Dynamic reverse-mode tape. Nodes are appended in evaluation order, which is
/// a topological order, so the backward pass is a single reverse sweep.
class Tape {
 public:
  using Backprop = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to a Parameter. Frozen parameters behave like constants.
  Var param(Parameter& p);
  /// Records an op result. `fn` runs during backward only when some parent
  /// requires a gradient.
  Var record(Tensor value, const std::vector<Var>& parents, Backprop fn, const char* op);

  const Tensor& value(const Var& v) const { return nodes_[v.id()].value; }
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }
  void accumulate(const Var& v, const Tensor& g);
  /// Zero-initialized gradient buffer of `v` for in-place accumulation.
  Tensor& grad_buffer(const Var& v);
  /// Gradient of a node after backward(); zeros if it was never reached.
  Tensor grad(const Var& v) const;

  /// Reverse sweep from a scalar loss. Parameter gradients are added to
  /// Parameter::grad.
  void backward(const Var& loss);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backprop backprop;
    Parameter* param = nullptr;
  };
  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }

}  // namespace scalabl
