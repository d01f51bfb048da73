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
#include <random>
#include <vector>

namespace qvec {

inline constexpr int kSampleRate = 16000;

/// Mono waveform with amplitudes in [-1, 1].
struct AudioSignal {
  std::vector<float> samples;
  int sample_rate = kSampleRate;

  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
  bool operator==(const AudioSignal&) const = default;
};

// Reads a RIFF/WAVE file holding 16-bit PCM, mono, 16 kHz. Samples are
// scaled by 1/32768. Unknown chunks are skipped.
AudioSignal load_wav(const std::filesystem::path& path);

// Writes 16-bit PCM. Amplitudes are clamped to [-1, 1) and quantized as
// round(x * 32768), so load_wav(write_wav(s)) is exact for any signal whose
// samples are already multiples of 1/32768.
void write_wav(const std::filesystem::path& path, const AudioSignal& signal);

// Returns the signal unchanged when it is not longer than max_seconds;
// otherwise a contiguous window of exactly max_seconds * sample_rate samples
// whose start is uniform on [0, len - window].
AudioSignal random_chunk(const AudioSignal& signal, double max_seconds,
                         std::mt19937_64& rng);

// Same as random_chunk but also reports the chosen start offset.
AudioSignal random_chunk(const AudioSignal& signal, double max_seconds,
                         std::mt19937_64& rng, std::size_t& offset);

}  // namespace qvec
