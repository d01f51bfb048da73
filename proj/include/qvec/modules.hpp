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

// Parameter-owning wrappers around the functional ops in layers.hpp.

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "qvec/layers.hpp"

namespace qvec::nn {

template <typename T>
using ParamList = std::vector<Parameter<T>*>;

template <typename T>
using BufferList = std::vector<std::pair<std::string, Tensor<T>*>>;

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
Tensor<T> uniform_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(dist(rng));
  return t;
}

// Maps a parameter onto the tape: a differentiable leaf when gradients are
// wanted, a constant copy otherwise.
template <typename T>
Var<T> bind(Tape<T>& tape, const Parameter<T>& p, bool with_grad) {
  return with_grad ? tape.parameter(const_cast<Parameter<T>&>(p)) : tape.constant(p.value);
}

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, bool with_bias,
         std::mt19937_64& rng)
      : weight(name + ".weight", uniform_init<T>({out, in}, in, rng)) {
    if (with_bias) bias.emplace(name + ".bias", uniform_init<T>({out}, in, rng));
  }

  Var<T> forward(Tape<T>& tape, Var<T> x, bool with_grad) const {
    std::optional<Var<T>> b;
    if (bias) b = bind(tape, *bias, with_grad);
    return linear(x, bind(tape, weight, with_grad), b);
  }

  void collect(ParamList<T>& out) {
    out.push_back(&weight);
    if (bias) out.push_back(&*bias);
  }

  Parameter<T> weight;
  std::optional<Parameter<T>> bias;
};

// Dense convolution, Cout x Cin x K weight.
template <typename T>
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
         bool with_bias, std::mt19937_64& rng)
      : weight(name + ".weight", uniform_init<T>({out, in, kernel}, in * kernel, rng)) {
    if (with_bias) bias.emplace(name + ".bias", uniform_init<T>({out}, in * kernel, rng));
  }

  Var<T> forward(Tape<T>& tape, Var<T> x, Lengths lengths, bool with_grad) const {
    std::optional<Var<T>> b;
    if (bias) b = bind(tape, *bias, with_grad);
    return conv1d(x, bind(tape, weight, with_grad), b, lengths);
  }

  void collect(ParamList<T>& out) {
    out.push_back(&weight);
    if (bias) out.push_back(&*bias);
  }

  Parameter<T> weight;
  std::optional<Parameter<T>> bias;
};

// Depthwise (C x K) then pointwise (Cout x C) convolution.
template <typename T>
class SeparableConv1d {
 public:
  SeparableConv1d() = default;
  SeparableConv1d(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
                  bool with_bias, std::mt19937_64& rng)
      : depthwise(name + ".dw", uniform_init<T>({in, kernel}, kernel, rng)),
        pointwise(name + ".pw", uniform_init<T>({out, in}, in, rng)) {
    if (with_bias) bias.emplace(name + ".bias", uniform_init<T>({out}, in, rng));
  }

  Var<T> forward(Tape<T>& tape, Var<T> x, Lengths lengths, bool with_grad) const {
    std::optional<Var<T>> b;
    if (bias) b = bind(tape, *bias, with_grad);
    return separable_conv1d(x, bind(tape, depthwise, with_grad), bind(tape, pointwise, with_grad),
                            b, lengths);
  }

  void collect(ParamList<T>& out) {
    out.push_back(&depthwise);
    out.push_back(&pointwise);
    if (bias) out.push_back(&*bias);
  }

  Parameter<T> depthwise;
  Parameter<T> pointwise;
  std::optional<Parameter<T>> bias;
};

template <typename T>
class BatchNorm1d {
 public:
  BatchNorm1d() = default;
  BatchNorm1d(const std::string& name, std::size_t channels)
      : gamma(name + ".gamma", Tensor<T>(Shape{channels}, T{1})),
        beta(name + ".beta", Tensor<T>(Shape{channels}, T{0})),
        stats(channels),
        name_(name) {}

  // Training passes update the running statistics in place.
  Var<T> forward(Tape<T>& tape, Var<T> x, Lengths lengths, bool training, bool with_grad) const {
    auto* running = training ? const_cast<BatchNormStats<T>*>(&stats) : nullptr;
    return batch_norm(x, bind(tape, gamma, with_grad), bind(tape, beta, with_grad), stats,
                      training, lengths, running);
  }

  void collect(ParamList<T>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }

  void collect_buffers(BufferList<T>& out) {
    out.emplace_back(name_ + ".running_mean", &stats.running_mean);
    out.emplace_back(name_ + ".running_var", &stats.running_var);
  }

  Parameter<T> gamma;
  Parameter<T> beta;
  BatchNormStats<T> stats;

 private:
  std::string name_;
};

}  // namespace qvec::nn
