// Copyright 2026 The qvec Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "qvec/tensor.hpp"

namespace qvec {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
class Var {
 public:
  Var() = default;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape<T>* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode differentiation over a linear record of operations. Nodes are
// appended in evaluation order, so reverse insertion order is a valid
// topological order for the backward sweep.
//
// Parameter gradients accumulate across backward() calls; callers zero them
// explicitly through Parameter::zero_grad.
template <typename T>
class Tape {
 public:
  // Receives the gradient flowing into the node's output.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> parameter(Parameter<T>& param);

  // Appends an op result. The node requires a gradient if any input does;
  // otherwise the backward function is dropped.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward);

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id()).value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id()).requires_grad; }

  // Gradient buffer for an input, zero-initialized on first use. Only valid
  // inside backward functions.
  Tensor<T>& grad_buffer(Var<T> v);
  // Gradient of the last backward pass with respect to v; empty if v did not
  // influence the loss.
  const Tensor<T>& grad(Var<T> v) const { return nodes_.at(v.id()).grad; }

  // Loss must hold exactly one element.
  void backward(Var<T> loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(*this);
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace qvec
