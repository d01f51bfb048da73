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

#include "qvec/speakernet.hpp"

namespace qvec {

std::string to_string(Variant v) { return v == Variant::kL ? "L" : "M"; }

Variant parse_variant(const std::string& s) {
  if (s == "L" || s == "l") return Variant::kL;
  if (s == "M" || s == "m") return Variant::kM;
  fail(ErrorCode::kConfig, "model.variant: expected \"L\" or \"M\", got \"" + s + "\"");
}

SpeakerNetConfig SpeakerNetConfig::large(std::size_t n_speakers) {
  SpeakerNetConfig cfg;
  cfg.variant = Variant::kL;
  cfg.decoder_dims = {512, 512};
  cfg.n_speakers = n_speakers;
  return cfg;
}

SpeakerNetConfig SpeakerNetConfig::medium(std::size_t n_speakers) {
  SpeakerNetConfig cfg;
  cfg.variant = Variant::kM;
  cfg.decoder_dims = {256};
  cfg.n_speakers = n_speakers;
  return cfg;
}

void SpeakerNetConfig::validate() const {
  auto bad = [](const std::string& field, const std::string& why) {
    fail(ErrorCode::kConfig, "model." + field + ": " + why);
  };
  if (input_dim == 0) bad("input_dim", "must be >= 1");
  if (blocks == 0) bad("blocks", "must be >= 1");
  if (sub_blocks == 0) bad("sub_blocks", "must be >= 1");
  if (channels == 0) bad("channels", "must be >= 1");
  if (epilogue_channels == 0) bad("epilogue_channels", "must be >= 1");
  if (kernels.size() != blocks + 2) {
    bad("kernels", "expected " + std::to_string(blocks + 2) +
                       " entries (prologue, one per block, epilogue), got " +
                       std::to_string(kernels.size()));
  }
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    if (kernels[i] % 2 == 0) {
      bad("kernels[" + std::to_string(i) + "]", "kernel size must be odd, got " +
                                                     std::to_string(kernels[i]));
    }
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) bad("dropout", "must be in [0, 1)");
  if (!(epilogue_dropout >= 0.0 && epilogue_dropout < 1.0)) bad("epilogue_dropout", "must be in [0, 1)");
  if (decoder_dims.empty()) bad("decoder_dims", "must not be empty");
  for (std::size_t i = 0; i < decoder_dims.size(); ++i) {
    if (decoder_dims[i] == 0) bad("decoder_dims[" + std::to_string(i) + "]", "must be >= 1");
  }
  if (variant == Variant::kL && decoder_dims.size() != 2) {
    bad("decoder_dims", "variant L uses two decoder layers, got " +
                            std::to_string(decoder_dims.size()));
  }
  if (variant == Variant::kM && decoder_dims.size() != 1) {
    bad("decoder_dims", "variant M uses one decoder layer, got " +
                            std::to_string(decoder_dims.size()));
  }
  if (n_speakers < 2) bad("n_speakers", "must be >= 2");
  if (!(pool_eps > 0.0)) bad("pool_eps", "must be positive");
}

template <typename T>
EncoderBlock<T>::EncoderBlock(const std::string& name, std::size_t in, std::size_t out,
                              std::size_t kernel, std::size_t repeats, bool has_residual,
                              std::mt19937_64& rng)
    : residual(has_residual) {
  if (has_residual && in != out) {
    fail(ErrorCode::kConfig, name + ": identity residual needs matching channel counts");
  }
  for (std::size_t r = 0; r < repeats; ++r) {
    const std::string sub = name + ".sub" + std::to_string(r);
    sub_blocks.push_back(SubBlock{
        nn::SeparableConv1d<T>(sub + ".conv", r == 0 ? in : out, out, kernel, false, rng),
        nn::BatchNorm1d<T>(sub + ".bn", out)});
  }
}

template <typename T>
Var<T> EncoderBlock<T>::forward(Tape<T>& tape, Var<T> x, nn::Lengths lengths, bool training,
                                double dropout, std::mt19937_64* rng, bool with_grad) const {
  Var<T> h = x;
  for (std::size_t r = 0; r < sub_blocks.size(); ++r) {
    const SubBlock& sb = sub_blocks[r];
    h = sb.conv.forward(tape, h, lengths, with_grad);
    h = sb.bn.forward(tape, h, lengths, training, with_grad);
    if (residual && r + 1 == sub_blocks.size()) h = nn::add(h, x);
    h = nn::relu(h);
    if (training && dropout > 0.0) h = nn::dropout(h, dropout, true, *rng);
  }
  return h;
}

template <typename T>
void EncoderBlock<T>::collect(nn::ParamList<T>& out) {
  for (SubBlock& sb : sub_blocks) {
    sb.conv.collect(out);
    sb.bn.collect(out);
  }
}

template <typename T>
void EncoderBlock<T>::collect_buffers(nn::BufferList<T>& out) {
  for (SubBlock& sb : sub_blocks) sb.bn.collect_buffers(out);
}

template <typename T>
SpeakerNet<T>::SpeakerNet(SpeakerNetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t C = cfg_.channels;
  prologue = EncoderBlock<T>("prologue", cfg_.input_dim, C, cfg_.kernels.front(), 1, false, rng);
  for (std::size_t b = 0; b < cfg_.blocks; ++b) {
    blocks.emplace_back("block" + std::to_string(b), C, C, cfg_.kernels[b + 1], cfg_.sub_blocks,
                        true, rng);
  }
  epilogue_conv = nn::Conv1d<T>("epilogue.conv", C, cfg_.epilogue_channels, cfg_.kernels.back(),
                                false, rng);
  epilogue_bn = nn::BatchNorm1d<T>("epilogue.bn", cfg_.epilogue_channels);
  std::size_t in = cfg_.pooled_dim();
  for (std::size_t i = 0; i < cfg_.decoder_dims.size(); ++i) {
    decoder.emplace_back("decoder" + std::to_string(i), in, cfg_.decoder_dims[i], true, rng);
    in = cfg_.decoder_dims[i];
  }
  head = nn::Linear<T>("head", in, cfg_.n_speakers, !cfg_.cosine_head, rng);
}

template <typename T>
Var<T> SpeakerNet<T>::encode(Tape<T>& tape, Var<T> features, nn::Lengths lengths, bool training,
                             std::mt19937_64* rng, bool with_grad) const {
  const Shape& shape = features.shape();
  if (shape.size() != 3 || shape[2] != cfg_.input_dim) {
    fail(ErrorCode::kShape, "encoder expects B x T x " + std::to_string(cfg_.input_dim) +
                                " features, got " + shape_string(shape));
  }
  if (training && rng == nullptr) fail(ErrorCode::kArgument, "training forward needs an rng");
  Var<T> h = prologue.forward(tape, features, lengths, training, cfg_.dropout, rng, with_grad);
  for (const EncoderBlock<T>& block : blocks) {
    h = block.forward(tape, h, lengths, training, cfg_.dropout, rng, with_grad);
  }
  h = epilogue_conv.forward(tape, h, lengths, with_grad);
  h = epilogue_bn.forward(tape, h, lengths, training, with_grad);
  h = nn::relu(h);
  if (training && cfg_.epilogue_dropout > 0.0) h = nn::dropout(h, cfg_.epilogue_dropout, true, *rng);
  return h;
}

template <typename T>
Var<T> SpeakerNet<T>::pool(Var<T> encoded, nn::Lengths lengths) const {
  return nn::stats_pool(encoded, lengths, static_cast<T>(cfg_.pool_eps));
}

template <typename T>
Var<T> SpeakerNet<T>::decode(Tape<T>& tape, Var<T> pooled, bool with_grad) const {
  Var<T> h = pooled;
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    if (i > 0) h = nn::relu(h);
    h = decoder[i].forward(tape, h, with_grad);
  }
  return h;
}

template <typename T>
Var<T> SpeakerNet<T>::classify(Tape<T>& tape, Var<T> embedding, bool with_grad) const {
  if (!cfg_.cosine_head) return head.forward(tape, embedding, with_grad);
  Var<T> w = nn::normalize_rows(nn::bind(tape, head.weight, with_grad));
  return nn::linear<T>(nn::normalize_rows(embedding), w, std::nullopt);
}

template <typename T>
typename SpeakerNet<T>::Output SpeakerNet<T>::run(Tape<T>& tape, Var<T> features,
                                                  nn::Lengths lengths, bool training,
                                                  std::mt19937_64* rng) const {
  Var<T> encoded = encode(tape, features, lengths, training, rng, training);
  Var<T> embedding = decode(tape, pool(encoded, lengths), training);
  return {embedding, classify(tape, embedding, training)};
}

template <typename T>
typename SpeakerNet<T>::Output SpeakerNet<T>::forward_train(Tape<T>& tape, Var<T> features,
                                                            nn::Lengths lengths,
                                                            std::mt19937_64& rng) {
  return run(tape, features, lengths, true, &rng);
}

template <typename T>
typename SpeakerNet<T>::Output SpeakerNet<T>::forward_eval(Tape<T>& tape, Var<T> features,
                                                           nn::Lengths lengths) const {
  return run(tape, features, lengths, false, nullptr);
}

template <typename T>
nn::ParamList<T> SpeakerNet<T>::parameters() {
  nn::ParamList<T> out;
  prologue.collect(out);
  for (EncoderBlock<T>& block : blocks) block.collect(out);
  epilogue_conv.collect(out);
  epilogue_bn.collect(out);
  for (nn::Linear<T>& layer : decoder) layer.collect(out);
  head.collect(out);
  return out;
}

template <typename T>
nn::BufferList<T> SpeakerNet<T>::buffers() {
  nn::BufferList<T> out;
  prologue.collect_buffers(out);
  for (EncoderBlock<T>& block : blocks) block.collect_buffers(out);
  epilogue_bn.collect_buffers(out);
  return out;
}

template <typename T>
std::size_t SpeakerNet<T>::count_params() const {
  std::size_t total = 0;
  for (const Parameter<T>* p : const_cast<SpeakerNet*>(this)->parameters()) total += p->numel();
  return total;
}

template <typename T>
Tensor<T> features_to_tensor(const FeatureMatrix& m) {
  Tensor<T> t(Shape{1, m.frames, m.dims});
  for (std::size_t i = 0; i < m.values.size(); ++i) t[i] = static_cast<T>(m.values[i]);
  return t;
}

template <typename T>
std::vector<float> embed_features(const SpeakerNet<T>& model, const FeatureMatrix& features) {
  Tape<T> tape;
  Var<T> x = tape.constant(features_to_tensor<T>(features));
  const Tensor<T>& e = model.forward_eval(tape, x).embedding.value();
  return {e.data().begin(), e.data().end()};
}

Embedding extract_qvector(const SpeakerNet<float>& model, const FeatureExtractor& extractor,
                          const AudioSignal& signal, std::string source) {
  return Embedding{embed_features(model, extractor.extract(signal)), std::move(source)};
}

template class EncoderBlock<float>;
template class EncoderBlock<double>;
template class SpeakerNet<float>;
template class SpeakerNet<double>;
template Tensor<float> features_to_tensor<float>(const FeatureMatrix&);
template Tensor<double> features_to_tensor<double>(const FeatureMatrix&);
template std::vector<float> embed_features<float>(const SpeakerNet<float>&, const FeatureMatrix&);
template std::vector<float> embed_features<double>(const SpeakerNet<double>&, const FeatureMatrix&);

}  // namespace qvec
