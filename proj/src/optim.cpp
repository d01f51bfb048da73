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

#include "qvec/optim.hpp"

#include <cmath>
#include <numbers>

namespace qvec {

double cosine_annealing_lr(std::size_t step, std::size_t total_steps, double lr0, double lr_min) {
  if (step > total_steps) {
    fail(ErrorCode::kSchedule, "step " + std::to_string(step) + " exceeds total steps " +
                                   std::to_string(total_steps));
  }
  if (!(lr_min >= 0.0) || !(lr0 >= lr_min)) {
    fail(ErrorCode::kSchedule, "cosine schedule needs lr0 >= lr_min >= 0");
  }
  if (total_steps == 0) return lr0;
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(phase));
}

template <typename T>
void Sgd<T>::step(std::span<Parameter<T>* const> params, double lr) {
  if (velocity_.empty()) {
    velocity_.reserve(params.size());
    for (const Parameter<T>* p : params) velocity_.emplace_back(p->value.shape());
  }
  if (velocity_.size() != params.size()) {
    fail(ErrorCode::kArgument, "optimizer was bound to a different parameter list");
  }
  const T mu = static_cast<T>(momentum_), wd = static_cast<T>(weight_decay_);
  const T rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = *params[i];
    Tensor<T>& v = velocity_[i];
    if (v.shape() != p.value.shape()) fail(ErrorCode::kShape, "velocity shape drifted for " + p.name);
    for (std::size_t j = 0; j < v.numel(); ++j) {
      v[j] = mu * v[j] + p.grad[j] + wd * p.value[j];
      p.value[j] -= rate * v[j];
    }
  }
}

template class Sgd<float>;
template class Sgd<double>;

}  // namespace qvec
