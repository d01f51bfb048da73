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

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "qvec/audio.hpp"
#include "qvec/features.hpp"
#include "qvec/modules.hpp"

namespace qvec {

enum class Variant { kL, kM };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct SpeakerNetConfig {
  Variant variant = Variant::kM;
  std::size_t input_dim = 64;
  std::size_t blocks = 3;
  std::size_t sub_blocks = 2;
  std::size_t channels = 512;
  // Prologue, one per block, epilogue.
  std::vector<std::size_t> kernels = {3, 7, 11, 15, 1};
  std::size_t epilogue_channels = 1500;
  double dropout = 0.5;
  double epilogue_dropout = 0.0;
  std::vector<std::size_t> decoder_dims = {256};
  std::size_t n_speakers = 2;
  // Bias-free head whose rows are L2-normalized; produces cosines. Required
  // for AAM training.
  bool cosine_head = true;
  double pool_eps = 1e-10;

  static SpeakerNetConfig large(std::size_t n_speakers);
  static SpeakerNetConfig medium(std::size_t n_speakers);

  std::size_t embedding_dim() const { return decoder_dims.empty() ? 0 : decoder_dims.back(); }
  std::size_t pooled_dim() const { return 2 * epilogue_channels; }

  // Throws kConfig with a "model.<field>" path.
  void validate() const;

  bool operator==(const SpeakerNetConfig&) const = default;
};

struct Embedding {
  std::vector<float> values;
  std::string source_utterance;
};

/// Residual block: sub_blocks x (separable conv, BN, ReLU, dropout) with the
/// block input added to the last sub-block before its ReLU.
template <typename T>
class EncoderBlock {
 public:
  struct SubBlock {
    nn::SeparableConv1d<T> conv;
    nn::BatchNorm1d<T> bn;
  };

  EncoderBlock() = default;
  EncoderBlock(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
               std::size_t repeats, bool residual, std::mt19937_64& rng);

  Var<T> forward(Tape<T>& tape, Var<T> x, nn::Lengths lengths, bool training, double dropout,
                 std::mt19937_64* rng, bool with_grad) const;

  void collect(nn::ParamList<T>& out);
  void collect_buffers(nn::BufferList<T>& out);

  std::vector<SubBlock> sub_blocks;
  bool residual = false;
};

template <typename T>
class SpeakerNet {
 public:
  struct Output {
    Var<T> embedding;  // B x D
    Var<T> scores;     // B x N: cosines for a cosine head, logits otherwise
  };

  explicit SpeakerNet(SpeakerNetConfig cfg, std::uint64_t seed = 0);

  const SpeakerNetConfig& config() const { return cfg_; }

  // features: B x T x input_dim. Training draws dropout masks from rng and
  // updates batch-norm running statistics.
  Output forward_train(Tape<T>& tape, Var<T> features, nn::Lengths lengths, std::mt19937_64& rng);
  // Deterministic; parameters enter the tape as constants.
  Output forward_eval(Tape<T>& tape, Var<T> features, nn::Lengths lengths = {}) const;

  // Stage-wise access, eval mode unless training is set.
  Var<T> encode(Tape<T>& tape, Var<T> features, nn::Lengths lengths, bool training,
                std::mt19937_64* rng, bool with_grad) const;
  Var<T> pool(Var<T> encoded, nn::Lengths lengths) const;
  Var<T> decode(Tape<T>& tape, Var<T> pooled, bool with_grad) const;
  Var<T> classify(Tape<T>& tape, Var<T> embedding, bool with_grad) const;

  nn::ParamList<T> parameters();
  nn::BufferList<T> buffers();
  std::size_t count_params() const;

  EncoderBlock<T> prologue;
  std::vector<EncoderBlock<T>> blocks;
  nn::Conv1d<T> epilogue_conv;
  nn::BatchNorm1d<T> epilogue_bn;
  std::vector<nn::Linear<T>> decoder;
  nn::Linear<T> head;

 private:
  Output run(Tape<T>& tape, Var<T> features, nn::Lengths lengths, bool training,
             std::mt19937_64* rng) const;

  SpeakerNetConfig cfg_;
};

template <typename T>
SpeakerNet<T> build_model(const SpeakerNetConfig& cfg, std::uint64_t seed = 0) {
  return SpeakerNet<T>(cfg, seed);
}

// Copies a feature matrix into a 1 x T x dims tensor.
template <typename T>
Tensor<T> features_to_tensor(const FeatureMatrix& m);

// Eval-mode embedding of one normalized feature matrix.
template <typename T>
std::vector<float> embed_features(const SpeakerNet<T>& model, const FeatureMatrix& features);

// Full pipeline: MFCC, normalization, encoder, pooling, decoder.
Embedding extract_qvector(const SpeakerNet<float>& model, const FeatureExtractor& extractor,
                          const AudioSignal& signal, std::string source = {});

extern template class EncoderBlock<float>;
extern template class EncoderBlock<double>;
extern template class SpeakerNet<float>;
extern template class SpeakerNet<double>;

}  // namespace qvec
