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

#include "qvec/config.hpp"

#include <fstream>
#include <set>

#include "qvec/error.hpp"

namespace qvec {
namespace {

using nlohmann::json;

// Reads typed fields from one JSON object and rejects leftovers.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(ErrorCode::kConfig, path_ + ": expected a JSON object");
  }

  template <typename V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<V, bool>) {
        if (!it->is_boolean()) throw std::invalid_argument("");
      } else if constexpr (std::is_unsigned_v<V>) {
        if (!it->is_number_integer() || it->template get<long long>() < 0) throw std::invalid_argument("");
      } else if constexpr (std::is_integral_v<V> && !std::is_same_v<V, bool>) {
        if (!it->is_number_integer()) throw std::invalid_argument("");
      } else if constexpr (std::is_floating_point_v<V>) {
        if (!it->is_number()) throw std::invalid_argument("");
      }
      out = it->template get<V>();
    } catch (const std::exception&) {
      fail(ErrorCode::kConfig, field(key) + ": wrong type");
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  bool has(const char* key) const { return j_.contains(key); }

  std::string field(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) fail(ErrorCode::kConfig, field(it.key()) + ": unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

json to_json(const FeatureConfig& c) {
  return {{"sample_rate", c.sample_rate}, {"win_ms", c.win_ms},     {"hop_ms", c.hop_ms},
          {"n_fft", c.n_fft},             {"n_mels", c.n_mels},     {"n_mfcc", c.n_mfcc},
          {"fmin", c.fmin},               {"fmax", c.fmax},         {"log_floor", c.log_floor},
          {"norm_eps", c.norm_eps}};
}

json to_json(const SpeakerNetConfig& c) {
  return {{"variant", to_string(c.variant)},
          {"input_dim", c.input_dim},
          {"blocks", c.blocks},
          {"sub_blocks", c.sub_blocks},
          {"channels", c.channels},
          {"kernels", c.kernels},
          {"epilogue_channels", c.epilogue_channels},
          {"dropout", c.dropout},
          {"epilogue_dropout", c.epilogue_dropout},
          {"decoder_dims", c.decoder_dims},
          {"n_speakers", c.n_speakers},
          {"cosine_head", c.cosine_head},
          {"pool_eps", c.pool_eps}};
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"lr0", c.lr0},
          {"lr_min", c.lr_min},
          {"batch_size", c.batch_size},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"max_chunk_seconds", c.max_chunk_seconds},
          {"loss", to_string(c.loss)},
          {"aam", {{"margin", c.aam.margin}, {"scale", c.aam.scale}}},
          {"seed", c.seed},
          {"val_fraction", c.val_fraction},
          {"workers", c.workers}};
}

json to_json(const AugmentPolicy& p) {
  return {{"noise_manifest", p.noise_manifest},
          {"rir_manifest", p.rir_manifest},
          {"snr_db_range", {p.snr_low_db, p.snr_high_db}},
          {"apply_prob", p.apply_prob}};
}

json to_json(const RunConfig& c) {
  return {{"feature", to_json(c.feature)},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"augment", to_json(c.augment)}};
}

FeatureConfig feature_config_from_json(const json& j, const std::string& path) {
  FeatureConfig c;
  Fields f(j, path);
  f.get("sample_rate", c.sample_rate);
  f.get("win_ms", c.win_ms);
  f.get("hop_ms", c.hop_ms);
  f.get("n_fft", c.n_fft);
  f.get("n_mels", c.n_mels);
  f.get("n_mfcc", c.n_mfcc);
  f.get("fmin", c.fmin);
  f.get("fmax", c.fmax);
  f.get("log_floor", c.log_floor);
  f.get("norm_eps", c.norm_eps);
  f.finish();
  return c;
}

SpeakerNetConfig model_config_from_json(const json& j, const std::string& path) {
  Fields f(j, path);
  std::string variant = "M";
  f.get("variant", variant);
  SpeakerNetConfig c = parse_variant(variant) == Variant::kL ? SpeakerNetConfig::large(0)
                                                             : SpeakerNetConfig::medium(0);
  f.get("input_dim", c.input_dim);
  f.get("blocks", c.blocks);
  f.get("sub_blocks", c.sub_blocks);
  f.get("channels", c.channels);
  f.get("kernels", c.kernels);
  f.get("epilogue_channels", c.epilogue_channels);
  f.get("dropout", c.dropout);
  f.get("epilogue_dropout", c.epilogue_dropout);
  f.get("decoder_dims", c.decoder_dims);
  f.get("n_speakers", c.n_speakers);
  f.get("cosine_head", c.cosine_head);
  f.get("pool_eps", c.pool_eps);
  f.finish();
  return c;
}

TrainConfig train_config_from_json(const json& j, const std::string& path) {
  TrainConfig c;
  Fields f(j, path);
  f.get("epochs", c.epochs);
  f.get("lr0", c.lr0);
  f.get("lr_min", c.lr_min);
  f.get("batch_size", c.batch_size);
  f.get("momentum", c.momentum);
  f.get("weight_decay", c.weight_decay);
  f.get("max_chunk_seconds", c.max_chunk_seconds);
  std::string loss = to_string(c.loss);
  f.get("loss", loss);
  c.loss = parse_loss(loss);
  if (const json* aam = f.sub("aam")) {
    Fields a(*aam, f.field("aam"));
    a.get("margin", c.aam.margin);
    a.get("scale", c.aam.scale);
    a.finish();
  }
  f.get("seed", c.seed);
  f.get("val_fraction", c.val_fraction);
  f.get("workers", c.workers);
  f.finish();
  return c;
}

AugmentPolicy augment_policy_from_json(const json& j, const std::string& path) {
  AugmentPolicy p;
  Fields f(j, path);
  f.get("noise_manifest", p.noise_manifest);
  f.get("rir_manifest", p.rir_manifest);
  if (const json* range = f.sub("snr_db_range")) {
    if (!range->is_array() || range->size() != 2 || !(*range)[0].is_number() ||
        !(*range)[1].is_number()) {
      fail(ErrorCode::kConfig, f.field("snr_db_range") + ": expected [low, high]");
    }
    p.snr_low_db = (*range)[0].get<double>();
    p.snr_high_db = (*range)[1].get<double>();
  }
  f.get("apply_prob", p.apply_prob);
  f.finish();
  return p;
}

void RunConfig::validate() const {
  feature.validate();
  SpeakerNetConfig m = model;
  if (m.n_speakers == 0) m.n_speakers = 2;
  m.validate();
  train.validate();
  augment.validate();
  if (static_cast<std::size_t>(feature.n_mfcc) != model.input_dim) {
    fail(ErrorCode::kConfig, "model.input_dim: must equal feature.n_mfcc (" +
                                 std::to_string(feature.n_mfcc) + ")");
  }
  if (train.loss == LossKind::kAngularMargin && !model.cosine_head) {
    fail(ErrorCode::kConfig, "model.cosine_head: aam loss needs a cosine head");
  }
  if (model.n_speakers == 1) fail(ErrorCode::kConfig, "model.n_speakers: must be >= 2");
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Fields f(j, "config");
  if (const json* s = f.sub("feature")) c.feature = feature_config_from_json(*s);
  const json* model = f.sub("model");
  c.model = model_config_from_json(model ? *model : json::object());
  if (const json* s = f.sub("train")) c.train = train_config_from_json(*s);
  if (const json* s = f.sub("augment")) c.augment = augment_policy_from_json(*s);
  f.finish();
  // Defaults follow the feature width unless the model section set it.
  if (!(j.contains("model") && j["model"].contains("input_dim"))) {
    c.model.input_dim = static_cast<std::size_t>(c.feature.n_mfcc);
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kConfig, "cannot open config file: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kConfig, path.string() + ": invalid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace qvec
