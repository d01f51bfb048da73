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
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qvec/augment.hpp"
#include "qvec/features.hpp"
#include "qvec/losses.hpp"
#include "qvec/speakernet.hpp"

namespace qvec {

struct ManifestEntry {
  std::string audio_filepath;
  std::string label;
  std::optional<double> duration;
};

// JSON lines with keys audio_filepath, label and optional duration.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

struct TrainConfig {
  std::size_t epochs = 200;
  double lr0 = 0.006;
  double lr_min = 0.0;
  std::size_t batch_size = 64;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double max_chunk_seconds = 8.0;
  LossKind loss = LossKind::kAngularMargin;
  AAMConfig aam;
  std::uint64_t seed = 0;
  // Per-speaker fraction held out when no validation manifest is given.
  double val_fraction = 0.1;
  std::size_t workers = 1;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct Split {
  std::vector<ManifestEntry> train;
  std::vector<ManifestEntry> validation;
};

// Moves ceil(fraction * count) utterances of every speaker to validation,
// chosen by a seeded shuffle. With a positive fraction, a speaker with fewer
// than two utterances raises kSplit naming the speaker.
Split split_validation(const std::vector<ManifestEntry>& entries, double fraction,
                       std::uint64_t seed);

/// Trained network plus everything needed to run it.
struct ModelState {
  SpeakerNetConfig model;
  FeatureConfig features;
  std::vector<std::string> labels;  // class index -> speaker label
  std::size_t epoch = 0;
  std::string rng_state;
  SpeakerNet<float> net;

  ModelState(SpeakerNetConfig model_cfg, FeatureConfig feature_cfg,
             std::vector<std::string> label_list, std::uint64_t seed = 0);
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: "QVECCKPT", u32 version, u64 header length, JSON header (configs,
// labels, epoch, rng state, tensor index), then little-endian float32
// tensors at the offsets listed in the index.
void save_checkpoint(const ModelState& state, const std::filesystem::path& path);

// When `expected` is given, its architecture must match the header
// (kMismatch); the header always defines the returned model.
ModelState load_checkpoint(const std::filesystem::path& path,
                           const SpeakerNetConfig* expected = nullptr);

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  std::optional<double> val_acc;
};

// CSV "epoch,lr,train_loss,train_acc,val_acc"; val_acc is empty without a
// validation set.
std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global optimizer step; unused for validation batches
  double lr = 0.0;
  double loss = 0.0;
  bool validation = false;
  std::vector<std::string> paths;
  std::vector<std::size_t> chunk_offsets;
};

struct TrainHooks {
  std::function<void(const StepRecord&)> on_batch;
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
  ModelState last;
  ModelState best;
  std::vector<EpochMetrics> metrics;
};

// Runs the full recipe. n_speakers comes from the training labels; a nonzero
// model.n_speakers that disagrees raises kConfig. Without a validation list
// the training list is split with cfg.val_fraction.
TrainResult train(SpeakerNetConfig model_cfg, const FeatureConfig& feature_cfg,
                  const TrainConfig& cfg, const AugmentPolicy& augment,
                  const std::vector<ManifestEntry>& train_entries,
                  const std::optional<std::vector<ManifestEntry>>& val_entries,
                  const TrainHooks& hooks = {});

}  // namespace qvec
