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

#include <filesystem>
#include <string>

#include <json.hpp>

#include "qvec/augment.hpp"
#include "qvec/features.hpp"
#include "qvec/speakernet.hpp"
#include "qvec/trainer.hpp"

namespace qvec {

// JSON codecs. Readers reject unknown keys and report "section.field"
// paths in kConfig errors; missing keys keep their defaults.
nlohmann::json to_json(const FeatureConfig& cfg);
nlohmann::json to_json(const SpeakerNetConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const AugmentPolicy& policy);

FeatureConfig feature_config_from_json(const nlohmann::json& j, const std::string& path = "feature");
// decoder_dims defaults to the variant's layout when absent; n_speakers to 0.
SpeakerNetConfig model_config_from_json(const nlohmann::json& j, const std::string& path = "model");
TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path = "train");
AugmentPolicy augment_policy_from_json(const nlohmann::json& j, const std::string& path = "augment");

/// The whole run: one JSON document with feature/model/train/augment sections.
struct RunConfig {
  FeatureConfig feature;
  SpeakerNetConfig model;
  TrainConfig train;
  AugmentPolicy augment;

  // Section checks plus cross-field consistency. model.n_speakers == 0 is
  // accepted here (filled in from the training labels).
  void validate() const;
};

RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

}  // namespace qvec
