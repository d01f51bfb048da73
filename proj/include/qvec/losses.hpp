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

#include <span>
#include <string>

#include "qvec/layers.hpp"

namespace qvec {

struct AAMConfig {
  double margin = 0.2;
  double scale = 30.0;

  void validate() const;
  bool operator==(const AAMConfig&) const = default;
};

enum class LossKind { kCrossEntropy, kAngularMargin };

std::string to_string(LossKind kind);
LossKind parse_loss(const std::string& s);

// -log softmax(logits)[label]. Raises kArgument for an out-of-range label.
double cross_entropy(std::span<const double> logits, int label);

// Mean additive-angular-margin loss over a batch of embeddings (B x D) against
// class weights (N x D). Both sides are L2-normalized; the target cosine
// becomes cos(theta + margin), everything is scaled by `scale`, and the
// result is softmax cross-entropy. Zero rows raise kDegenerateNorm.
double aam_loss(const Tensor<double>& embeddings, std::span<const int> labels,
                const Tensor<double>& weights, const AAMConfig& cfg);

template <typename T>
Var<T> aam_loss(Var<T> embeddings, std::span<const int> labels, Var<T> weights,
                const AAMConfig& cfg);

// Loss over head scores. With a cosine head the scores are cosines: AAM
// applies the margin, plain CE scales them by cfg.scale. Without a cosine
// head the scores are logits and only CE is defined.
template <typename T>
Var<T> head_loss(Var<T> scores, std::span<const int> labels, LossKind kind, bool cosine_head,
                 const AAMConfig& cfg);

}  // namespace qvec
