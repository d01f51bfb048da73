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

#include <cstring>

#include <json.hpp>

#include "qvec/config.hpp"
#include "qvec/error.hpp"
#include "qvec/serial.hpp"
#include "qvec/trainer.hpp"

namespace qvec {
namespace {

constexpr char kMagic[8] = {'Q', 'V', 'E', 'C', 'C', 'K', 'P', 'T'};
constexpr std::size_t kPreambleBytes = 8 + 4 + 8;

struct NamedTensor {
  std::string name;
  Tensor<float>* tensor;
};

std::vector<NamedTensor> state_tensors(SpeakerNet<float>& net) {
  std::vector<NamedTensor> out;
  for (Parameter<float>* p : net.parameters()) out.push_back({p->name, &p->value});
  for (auto& [name, t] : net.buffers()) out.push_back({name, t});
  return out;
}

}  // namespace

void save_checkpoint(const ModelState& state, const std::filesystem::path& path) {
  auto tensors = state_tensors(const_cast<SpeakerNet<float>&>(state.net));
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    index.push_back({{"name", t.name}, {"shape", t.tensor->shape()}, {"offset", offset}});
    offset += t.tensor->numel() * sizeof(float);
  }
  const nlohmann::json header = {
      {"model", to_json(state.model)},      {"feature", to_json(state.features)},
      {"labels", state.labels},             {"epoch", state.epoch},
      {"rng_state", state.rng_state},       {"tensor_count", tensors.size()},
      {"tensors", index},                   {"payload_bytes", offset}};
  const std::string text = header.dump();

  std::vector<unsigned char> bytes(kMagic, kMagic + 8);
  serial::put_u32(bytes, kCheckpointVersion);
  serial::put_u64(bytes, text.size());
  bytes.insert(bytes.end(), text.begin(), text.end());
  bytes.reserve(bytes.size() + offset);
  for (const auto& t : tensors) {
    for (float v : t.tensor->data()) serial::put_f32(bytes, v);
  }
  serial::write_file(path, bytes);
}

ModelState load_checkpoint(const std::filesystem::path& path, const SpeakerNetConfig* expected) {
  const std::vector<unsigned char> bytes = serial::read_file(path);
  const std::string where = path.string() + ": ";
  if (bytes.size() < kPreambleBytes || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    fail(ErrorCode::kIncompatibleCheckpoint, where + "not a qvec checkpoint");
  }
  const std::uint32_t version = serial::get_u32(bytes.data() + 8);
  if (version != kCheckpointVersion) {
    fail(ErrorCode::kIncompatibleCheckpoint,
         where + "unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint64_t header_len = serial::get_u64(bytes.data() + 12);
  if (header_len > bytes.size() - kPreambleBytes) {
    fail(ErrorCode::kCorruptCheckpoint, where + "truncated header");
  }
  const auto* header_begin = reinterpret_cast<const char*>(bytes.data() + kPreambleBytes);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_begin, header_begin + header_len);
  } catch (const nlohmann::json::exception&) {
    fail(ErrorCode::kCorruptCheckpoint, where + "unreadable header");
  }

  SpeakerNetConfig model;
  FeatureConfig features;
  std::vector<std::string> labels;
  std::size_t epoch = 0, tensor_count = 0;
  std::uint64_t payload_bytes = 0;
  std::string rng_state;
  try {
    model = model_config_from_json(header.at("model"));
    features = feature_config_from_json(header.at("feature"));
    model.validate();
    features.validate();
    labels = header.at("labels").get<std::vector<std::string>>();
    epoch = header.at("epoch").get<std::size_t>();
    rng_state = header.at("rng_state").get<std::string>();
    tensor_count = header.at("tensor_count").get<std::size_t>();
    payload_bytes = header.at("payload_bytes").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCorruptCheckpoint, where + "bad header: " + e.what());
  } catch (const Error& e) {
    fail(ErrorCode::kCorruptCheckpoint, where + "bad header: " + e.what());
  }
  if (labels.size() != model.n_speakers) {
    fail(ErrorCode::kCorruptCheckpoint, where + "label count does not match n_speakers");
  }

  if (expected) {
    SpeakerNetConfig want = *expected;
    if (want.n_speakers == 0) want.n_speakers = model.n_speakers;
    const nlohmann::json a = to_json(want), b = to_json(model);
    for (const auto& [key, value] : a.items()) {
      if (b.value(key, nlohmann::json()) != value) {
        fail(ErrorCode::kMismatch, where + "model." + key + " is " + b.value(key, nlohmann::json()).dump() +
                                       " in the checkpoint but " + value.dump() + " was requested");
      }
    }
  }

  const std::uint64_t payload_start = kPreambleBytes + header_len;
  if (payload_bytes != bytes.size() - payload_start) {
    fail(ErrorCode::kCorruptCheckpoint, where + "payload size " +
                                            std::to_string(bytes.size() - payload_start) +
                                            " does not match header " +
                                            std::to_string(payload_bytes));
  }

  ModelState state(model, features, labels);
  state.epoch = epoch;
  state.rng_state = rng_state;
  auto tensors = state_tensors(state.net);
  const nlohmann::json& index = header.at("tensors");
  if (tensor_count != tensors.size() || !index.is_array() || index.size() != tensors.size()) {
    fail(ErrorCode::kCorruptCheckpoint,
         where + "expected " + std::to_string(tensors.size()) + " tensors, header lists " +
             std::to_string(tensor_count));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    Tensor<float>& dst = *tensors[i].tensor;
    std::string name;
    Shape shape;
    std::uint64_t offset = 0;
    try {
      name = index[i].at("name").get<std::string>();
      shape = index[i].at("shape").get<Shape>();
      offset = index[i].at("offset").get<std::uint64_t>();
    } catch (const nlohmann::json::exception&) {
      fail(ErrorCode::kCorruptCheckpoint, where + "bad tensor entry " + std::to_string(i));
    }
    if (name != tensors[i].name || shape != dst.shape()) {
      fail(ErrorCode::kCorruptCheckpoint, where + "tensor " + std::to_string(i) + " is " + name +
                                              " " + shape_string(shape) + ", expected " +
                                              tensors[i].name + " " + shape_string(dst.shape()));
    }
    const std::uint64_t n = dst.numel() * sizeof(float);
    if (offset > payload_bytes || n > payload_bytes - offset) {
      fail(ErrorCode::kCorruptCheckpoint, where + "tensor " + name + " runs past the payload");
    }
    const unsigned char* src = bytes.data() + payload_start + offset;
    float* out = dst.ptr();
    for (std::size_t k = 0; k < dst.numel(); ++k) out[k] = serial::get_f32(src + 4 * k);
  }
  return state;
}

}  // namespace qvec
