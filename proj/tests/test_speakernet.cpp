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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "qvec/error.hpp"
#include "qvec/eval.hpp"
#include "qvec/speakernet.hpp"
#include "support.hpp"

using namespace qvec;
using qvec::testing::random_tensor;

namespace {

// Closed-form count: separable convs have no bias (batch norm follows), the
// dense epilogue has none either, decoder layers have biases, the cosine head
// has none.
std::size_t hand_count(const SpeakerNetConfig& c) {
  std::size_t n = c.input_dim * c.kernels[0] + c.channels * c.input_dim + 2 * c.channels;
  for (std::size_t b = 0; b < c.blocks; ++b) {
    n += c.sub_blocks * (c.channels * c.kernels[b + 1] + c.channels * c.channels + 2 * c.channels);
  }
  n += c.epilogue_channels * c.channels * c.kernels.back() + 2 * c.epilogue_channels;
  std::size_t in = 2 * c.epilogue_channels;
  for (std::size_t d : c.decoder_dims) {
    n += in * d + d;
    in = d;
  }
  return n + c.n_speakers * in + (c.cosine_head ? 0 : c.n_speakers);
}

SpeakerNetConfig toy() {
  SpeakerNetConfig c = SpeakerNetConfig::medium(3);
  c.channels = 4;
  c.epilogue_channels = 6;
  c.decoder_dims = {8};
  c.kernels = {3, 3, 3, 3, 1};
  return c;
}

ErrorCode error_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kArgument;
}

}  // namespace

TEST_CASE("parameter counts of the two published variants") {
  const auto m = build_model<float>(SpeakerNetConfig::medium(7205));
  const auto l = build_model<float>(SpeakerNetConfig::large(7205));
  CHECK(m.count_params() == hand_count(SpeakerNetConfig::medium(7205)));
  CHECK(l.count_params() == hand_count(SpeakerNetConfig::large(7205)));
  CHECK(m.count_params() >= 4'250'000);
  CHECK(m.count_params() <= 5'750'000);
  CHECK(l.count_params() >= 7'395'000);
  CHECK(l.count_params() <= 10'005'000);
}

TEST_CASE("toy parameter count matches the hand count") {
  // prologue 64*3 + 4*64 + 8 = 456; blocks 3 * 2 * (12 + 16 + 8) = 216;
  // epilogue 24 + 12 = 36; decoder 12*8 + 8 = 104; head 3*8 = 24.
  CHECK(build_model<float>(toy()).count_params() == 836);
  SpeakerNetConfig wide = toy();
  wide.decoder_dims = {16};
  // Decoder grows by 12*8 + 8, head by 3*8.
  CHECK(build_model<float>(wide).count_params() - 836 == 12 * 8 + 8 + 3 * 8);
  SpeakerNetConfig ce = toy();
  ce.cosine_head = false;
  CHECK(build_model<float>(ce).count_params() == 839);
}

TEST_CASE("parameter names and buffers") {
  auto net = build_model<float>(toy());
  std::set<std::string> names;
  for (auto* p : net.parameters()) names.insert(p->name);
  for (const char* n : {"prologue.sub0.conv.dw", "prologue.sub0.conv.pw", "prologue.sub0.bn.gamma",
                        "block2.sub1.conv.dw", "block0.sub1.bn.beta", "epilogue.conv.weight",
                        "epilogue.bn.gamma", "decoder0.weight", "decoder0.bias", "head.weight"}) {
    CHECK(names.count(n) == 1);
  }
  CHECK(names.count("head.bias") == 0);
  CHECK(net.buffers().size() == 2 * (1 + 3 * 2 + 1));
}

TEST_CASE("config validation") {
  SpeakerNetConfig c = toy();
  c.kernels = {3, 4, 3, 3, 1};
  CHECK(error_of([&] { c.validate(); }) == ErrorCode::kConfig);
  c = toy();
  c.kernels = {3, 3, 1};
  CHECK(error_of([&] { c.validate(); }) == ErrorCode::kConfig);
  c = toy();
  c.decoder_dims = {};
  CHECK(error_of([&] { c.validate(); }) == ErrorCode::kConfig);
  c = toy();
  c.decoder_dims = {8, 8};
  CHECK(error_of([&] { c.validate(); }) == ErrorCode::kConfig);
  c = toy();
  c.n_speakers = 1;
  CHECK(error_of([&] { c.validate(); }) == ErrorCode::kConfig);
  CHECK(error_of([] { parse_variant("XL"); }) == ErrorCode::kConfig);
  CHECK(parse_variant("L") == Variant::kL);
  CHECK(to_string(Variant::kM) == "M");
  CHECK_NOTHROW(toy().validate());
}

TEST_CASE("full-size encoder preserves time and emits 1500 channels") {
  const auto net = build_model<float>(SpeakerNetConfig::medium(10), 1);
  std::mt19937_64 rng(1);
  for (std::size_t T : {1, 6}) {
    Tape<float> tape;
    auto x = tape.constant(random_tensor({1, T, 64}, rng).cast<float>());
    auto e = net.encode(tape, x, {}, false, nullptr, false);
    CHECK(e.shape() == Shape{1, T, 1500});
    auto out = net.forward_eval(tape, x);
    CHECK(out.embedding.shape() == Shape{1, 256});
    CHECK(out.scores.shape() == Shape{1, 10});
  }
  Tape<float> tape;
  auto bad = tape.constant(Tensor<float>(Shape{1, 4, 40}, 0.1f));
  CHECK(error_of([&] { net.forward_eval(tape, bad); }) == ErrorCode::kShape);
}

TEST_CASE("variant embedding sizes") {
  auto small = [](SpeakerNetConfig c) {
    c.channels = 8;
    c.epilogue_channels = 12;
    return c;
  };
  const auto m = build_model<float>(small(SpeakerNetConfig::medium(4)));
  const auto l = build_model<float>(small(SpeakerNetConfig::large(4)));
  const FeatureMatrix fm{10, 64, std::vector<double>(640, 0.25)};
  CHECK(embed_features(m, fm).size() == 256);
  CHECK(embed_features(l, fm).size() == 512);
  CHECK(SpeakerNetConfig::large(4).embedding_dim() == 512);
  CHECK(SpeakerNetConfig::medium(4).pooled_dim() == 3000);
}

TEST_CASE("decoding a zero statistics vector with zero biases gives a zero embedding") {
  auto net = build_model<double>(toy());
  for (auto& layer : net.decoder) layer.bias->value.fill(0.0);
  Tape<double> tape;
  auto e = net.decode(tape, tape.constant(Tensor<double>(Shape{1, 12}, 0.0)), false);
  for (double v : e.value().data()) CHECK(v == 0.0);
}

TEST_CASE("eval mode is bit-identical across calls and padding-independent") {
  const auto net = build_model<float>(toy(), 3);
  std::mt19937_64 rng(2);
  Tensor<float> x = random_tensor({2, 9, 64}, rng).cast<float>();
  const std::vector<std::size_t> lengths{9, 5};
  Tape<float> tape;
  auto a = net.forward_eval(tape, tape.constant(x), lengths);
  auto b = net.forward_eval(tape, tape.constant(x), lengths);
  CHECK(a.embedding.value() == b.embedding.value());
  CHECK(a.scores.value() == b.scores.value());

  Tensor<float> single(Shape{1, 5, 64});
  for (std::size_t i = 0; i < 5 * 64; ++i) single[i] = x[9 * 64 + i];
  auto s = net.forward_eval(tape, tape.constant(single));
  for (std::size_t d = 0; d < 8; ++d)
    CHECK(a.embedding.value()[8 + d] == doctest::Approx(s.embedding.value()[d]).epsilon(1e-5));
}

TEST_CASE("identity residual carries the block input when all conv weights are zero") {
  std::mt19937_64 rng(4);
  EncoderBlock<double> block("b", 4, 4, 3, 2, true, rng);
  for (auto& sb : block.sub_blocks) {
    sb.conv.depthwise.value.fill(0.0);
    sb.conv.pointwise.value.fill(0.0);
  }
  Tensor<double> x = random_tensor({1, 6, 4}, rng, 0.1, 1.0);
  Tape<double> tape;
  auto y = block.forward(tape, tape.constant(x), {}, false, 0.0, nullptr, false);
  // Eval-mode BN of zeros with default statistics is zero; the skip path remains.
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.value()[i] == doctest::Approx(x[i]));
}

TEST_CASE("one training step reaches every parameter") {
  auto net = build_model<double>(toy(), 5);
  std::mt19937_64 rng(6);
  Tape<double> tape;
  auto x = tape.constant(random_tensor({1, 12, 64}, rng));
  auto out = net.forward_train(tape, x, {}, rng);
  const std::vector<int> y{1};
  auto cos = out.scores;
  auto loss = nn::cross_entropy(nn::angular_margin_logits(cos, y, 0.2, 30.0), y);
  tape.backward(loss);
  for (auto* p : net.parameters()) {
    double norm = 0.0;
    for (double g : p->grad.data()) norm += g * g;
    INFO(p->name);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("training updates batch-norm running statistics; eval does not") {
  auto net = build_model<float>(toy(), 7);
  const auto before = net.epilogue_bn.stats.running_mean;
  std::mt19937_64 rng(8);
  Tensor<float> x = random_tensor({2, 7, 64}, rng).cast<float>();
  {
    Tape<float> tape;
    net.forward_eval(tape, tape.constant(x));
  }
  CHECK(net.epilogue_bn.stats.running_mean == before);
  {
    Tape<float> tape;
    net.forward_train(tape, tape.constant(x), {}, rng);
  }
  CHECK_FALSE(net.epilogue_bn.stats.running_mean == before);
}

TEST_CASE("q-vector extraction is deterministic and nearly invariant to duplication") {
  SpeakerNetConfig c = toy();
  c.channels = 16;
  c.epilogue_channels = 24;
  c.decoder_dims = {16};
  const auto net = build_model<float>(c, 9);
  const FeatureExtractor fx{FeatureConfig{}};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    const qvec::testing::SyntheticSpeaker spk(seed + 100);
    const AudioSignal s = spk.utterance(1.0, rng);
    AudioSignal dup = s;
    dup.samples.insert(dup.samples.end(), s.samples.begin(), s.samples.end());
    const Embedding a = extract_qvector(net, fx, s, "a");
    const Embedding b = extract_qvector(net, fx, s, "a");
    CHECK(a.values == b.values);
    CHECK(a.source_utterance == "a");
    CHECK(a.values.size() == 16);
    CHECK(std::all_of(a.values.begin(), a.values.end(), [](float v) { return std::isfinite(v); }));
    CHECK(std::any_of(a.values.begin(), a.values.end(), [](float v) { return v != 0.0f; }));
    CHECK(cosine_score(a.values, extract_qvector(net, fx, dup).values) > 0.99);
  }
}
