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
#include <span>
#include <vector>

#include "qvec/tensor.hpp"

namespace qvec {

// Single-cycle cosine annealing:
//   lr(step) = lr_min + (lr0 - lr_min) * (1 + cos(pi * step / total_steps)) / 2
// Raises kSchedule for step > total_steps or lr0 < lr_min or lr_min < 0.
double cosine_annealing_lr(std::size_t step, std::size_t total_steps, double lr0, double lr_min);

/// SGD with heavy-ball momentum and L2 weight decay:
///   v <- momentum * v + g + weight_decay * w;  w <- w - lr * v
template <typename T>
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::span<Parameter<T>* const> params, double lr);

  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Tensor<T>> velocity_;
};

template <typename T>
void zero_grads(std::span<Parameter<T>* const> params) {
  for (Parameter<T>* p : params) p->zero_grad();
}

extern template class Sgd<float>;
extern template class Sgd<double>;

}  // namespace qvec
