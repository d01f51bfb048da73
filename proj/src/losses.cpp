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

#include "qvec/losses.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace qvec {

void AAMConfig::validate() const {
  if (!(margin >= 0.0 && margin < std::numbers::pi / 2)) {
    fail(ErrorCode::kConfig, "train.aam.margin: must be in [0, pi/2)");
  }
  if (!(scale > 0.0)) fail(ErrorCode::kConfig, "train.aam.scale: must be positive");
}

std::string to_string(LossKind kind) {
  return kind == LossKind::kAngularMargin ? "aam" : "ce";
}

LossKind parse_loss(const std::string& s) {
  if (s == "aam" || s == "AAM") return LossKind::kAngularMargin;
  if (s == "ce" || s == "CE") return LossKind::kCrossEntropy;
  fail(ErrorCode::kConfig, "train.loss: expected \"ce\" or \"aam\", got \"" + s + "\"");
}

double cross_entropy(std::span<const double> logits, int label) {
  Tape<double> tape;
  Var<double> z = tape.constant(Tensor<double>(Shape{1, logits.size()},
                                               std::vector<double>(logits.begin(), logits.end())));
  const int labels[] = {label};
  return nn::cross_entropy(z, labels).value()[0];
}

template <typename T>
Var<T> aam_loss(Var<T> embeddings, std::span<const int> labels, Var<T> weights,
                const AAMConfig& cfg) {
  cfg.validate();
  Var<T> cosines = nn::linear<T>(nn::normalize_rows(embeddings), nn::normalize_rows(weights),
                              std::nullopt);
  Var<T> logits = nn::angular_margin_logits(cosines, labels, static_cast<T>(cfg.margin),
                                            static_cast<T>(cfg.scale));
  return nn::cross_entropy(logits, labels);
}

double aam_loss(const Tensor<double>& embeddings, std::span<const int> labels,
                const Tensor<double>& weights, const AAMConfig& cfg) {
  Tape<double> tape;
  return aam_loss(tape.constant(embeddings), labels, tape.constant(weights), cfg).value()[0];
}

template <typename T>
Var<T> head_loss(Var<T> scores, std::span<const int> labels, LossKind kind, bool cosine_head,
                 const AAMConfig& cfg) {
  if (kind == LossKind::kAngularMargin) {
    if (!cosine_head) fail(ErrorCode::kConfig, "train.loss: aam requires model.cosine_head");
    cfg.validate();
    return nn::cross_entropy(nn::angular_margin_logits(scores, labels, static_cast<T>(cfg.margin),
                                                       static_cast<T>(cfg.scale)),
                             labels);
  }
  if (cosine_head) return nn::cross_entropy(nn::scale(scores, static_cast<T>(cfg.scale)), labels);
  return nn::cross_entropy(scores, labels);
}

template Var<float> aam_loss(Var<float>, std::span<const int>, Var<float>, const AAMConfig&);
template Var<double> aam_loss(Var<double>, std::span<const int>, Var<double>, const AAMConfig&);
template Var<float> head_loss(Var<float>, std::span<const int>, LossKind, bool, const AAMConfig&);
template Var<double> head_loss(Var<double>, std::span<const int>, LossKind, bool, const AAMConfig&);

}  // namespace qvec
