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

// Differentiable ops over Tape values. Sequence activations are B x T x C
// (channel-last). An optional per-item length list marks frames at or beyond
// lengths[b] as padding: convolutions read them as zero, batch norm and
// pooling exclude them, and every sequence op writes zeros there. An empty
// list means every frame is valid.

#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "qvec/autodiff.hpp"

namespace qvec::nn {

using Lengths = std::span<const std::size_t>;

// Dense 1D convolution, stride 1, dilation 1, symmetric zero padding of
// (K - 1) / 2. Weight is Cout x Cin x K, or Cout x Cin for K = 1 (pointwise).
// Even K raises kConfig.
template <typename T>
Var<T> conv1d(Var<T> x, Var<T> weight, std::optional<Var<T>> bias, Lengths lengths = {});

// Per-channel convolution with weight C x K, same padding.
template <typename T>
Var<T> depthwise_conv1d(Var<T> x, Var<T> weight, Lengths lengths = {});

// Depthwise conv (C x K) followed by a pointwise conv (Cout x C).
template <typename T>
Var<T> separable_conv1d(Var<T> x, Var<T> dw_weight, Var<T> pw_weight,
                        std::optional<Var<T>> pw_bias, Lengths lengths = {});

template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);

  explicit BatchNormStats(std::size_t channels = 0)
      : running_mean(Shape{channels}, T{0}), running_var(Shape{channels}, T{1}) {}
};

// Normalizes the last axis of a B x T x C (or B x C) input, then applies
// gamma * x + beta. Training mode uses population statistics over all valid
// positions, needs at least two of them (kDegenerateBatch), and blends the
// batch statistics into *running_out when given. Eval mode uses the running
// statistics in `stats`.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, const BatchNormStats<T>& stats,
                  bool training, Lengths lengths = {}, BatchNormStats<T>* running_out = nullptr);

template <typename T>
Var<T> relu(Var<T> x);

// Inverted dropout; eval mode and p = 0 are exact identities.
template <typename T>
Var<T> dropout(Var<T> x, double p, bool training, std::mt19937_64& rng);

// Multiplies by a precomputed keep mask already scaled by 1 / (1 - p).
template <typename T>
Var<T> dropout_with_mask(Var<T> x, const Tensor<T>& mask);

template <typename T>
Tensor<T> dropout_mask(const Shape& shape, double p, std::mt19937_64& rng);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Var<T> x, T factor);

// Sum of all elements as a one-element tensor.
template <typename T>
Var<T> sum(Var<T> x);

// x: (..., Din), weight: Dout x Din, bias: Dout -> (..., Dout).
template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, std::optional<Var<T>> bias);

// B x T x C -> B x 2C: per-channel mean over valid frames, then
// sqrt(population variance + eps).
template <typename T>
Var<T> stats_pool(Var<T> x, Lengths lengths = {}, T eps = T(1e-10));

// Scales each row of an R x D input to unit L2 norm; zero rows raise
// kDegenerateNorm.
template <typename T>
Var<T> normalize_rows(Var<T> x);

// Turns B x N cosines into AAM logits: s * cos(theta + m) for the label
// column, s * cos(theta) elsewhere. cos(theta + m) is expanded as
// c cos m - sqrt(1 - c^2) sin m with c clamped to [-1 + 1e-7, 1 - 1e-7].
template <typename T>
Var<T> angular_margin_logits(Var<T> cosines, std::span<const int> labels, T margin, T scale);

// Mean over the batch of -log softmax(logits)[label]; B x N input.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> labels);

}  // namespace qvec::nn
