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
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "qvec/audio.hpp"

namespace qvec {

struct AugmentPolicy {
  std::string noise_manifest;  // one WAV path per line; empty disables noise
  std::string rir_manifest;    // one WAV path per line; empty disables RIR
  double snr_low_db = 0.0;
  double snr_high_db = 15.0;
  double apply_prob = 0.5;

  void validate() const;
  bool operator==(const AugmentPolicy&) const = default;
};

// Passing this as snr_db leaves the signal untouched.
inline constexpr double kNoNoise = std::numeric_limits<double>::infinity();

// Loops the noise from a random offset to the signal length, scales it so
// that 10 log10(P_signal / P_noise) == snr_db, adds it and clips to [-1, 1].
// A silent signal or silent noise raises kDegenerateInput.
AudioSignal mix_additive_noise(const AudioSignal& signal, const AudioSignal& noise,
                               double snr_db, std::mt19937_64& rng);

// Full convolution with the impulse response truncated to the input length,
// rescaled to the input's peak amplitude. An all-zero RIR raises
// kDegenerateInput.
AudioSignal convolve_rir(const AudioSignal& signal, const AudioSignal& rir);

// Non-empty, non-comment lines of a path list.
std::vector<std::string> read_path_list(const std::filesystem::path& path);

/// Applies an AugmentPolicy with noise and RIR files loaded up front. When
/// both kinds are configured, one of them is picked uniformly per utterance.
class Augmenter {
 public:
  explicit Augmenter(AugmentPolicy policy);

  const AugmentPolicy& policy() const { return policy_; }
  bool active() const;

  AudioSignal apply(const AudioSignal& signal, std::mt19937_64& rng) const;

 private:
  AugmentPolicy policy_;
  std::vector<AudioSignal> noises_;
  std::vector<AudioSignal> rirs_;
};

}  // namespace qvec
