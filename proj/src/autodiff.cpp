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

#include "qvec/autodiff.hpp"

#include <cmath>

namespace qvec {

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::parameter(Parameter<T>& param) {
  nodes_.push_back(Node{param.value, {}, {}, &param, true});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs,
                       BackwardFn backward) {
#ifndef NDEBUG
  for (T x : value.data()) {
    if (!std::isfinite(x)) fail(ErrorCode::kNonFinite, "op produced a non-finite value");
  }
#endif
  bool needs = false;
  for (const Var<T>& v : inputs) {
    if (v.tape() != this) fail(ErrorCode::kArgument, "input recorded on a different tape");
    needs = needs || nodes_[v.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : BackwardFn{},
                        nullptr, needs});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(Var<T> v) {
  Node& n = nodes_.at(v.id());
  if (n.grad.empty() && n.value.numel() > 0) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape() != this) fail(ErrorCode::kArgument, "loss recorded on a different tape");
  if (value(loss).numel() != 1) {
    fail(ErrorCode::kShape, "backward requires a scalar loss, got shape " +
                                shape_string(value(loss).shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor<T>();
  grad_buffer(loss).fill(T{1});

  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.backward) continue;
    // The callback may append to grad buffers of earlier nodes only.
    n.backward(*this, n.grad);
  }
  for (Node& n : nodes_) {
    if (n.param == nullptr || n.grad.empty()) continue;
    T* dst = n.param->grad.ptr();
    const T* src = n.grad.ptr();
    for (std::size_t j = 0; j < n.grad.numel(); ++j) dst[j] += src[j];
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace qvec
