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

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "qvec/audio.hpp"

namespace qvec {

struct FeatureConfig {
  int sample_rate = kSampleRate;
  double win_ms = 20.0;
  double hop_ms = 10.0;
  int n_fft = 512;
  int n_mels = 64;
  int n_mfcc = 64;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-10;
  double norm_eps = 1e-5;

  std::size_t win_length() const;
  std::size_t hop_length() const;
  std::size_t n_bins() const { return static_cast<std::size_t>(n_fft) / 2 + 1; }

  // Throws kConfig naming the offending field.
  void validate() const;

  bool operator==(const FeatureConfig&) const = default;
};

/// T x n_mfcc matrix stored frame-major: values[t * dims + k].
struct FeatureMatrix {
  std::size_t frames = 0;
  std::size_t dims = 0;
  std::vector<double> values;

  double& at(std::size_t t, std::size_t k) { return values[t * dims + k]; }
  double at(std::size_t t, std::size_t k) const { return values[t * dims + k]; }
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Periodic Hann window, w[i] = 0.5 (1 - cos(2 pi i / n)).
std::vector<double> hann_window(std::size_t n);

std::size_t frame_count(std::size_t num_samples, const FeatureConfig& cfg);

// Splits the signal into win_length frames every hop_length samples, without
// padding. Signals shorter than one window raise kTooShort.
std::vector<std::vector<double>> frame_signal(const AudioSignal& signal,
                                              const FeatureConfig& cfg);

// One-sided power spectrum (n_fft/2 + 1 bins) of a Hann-windowed frame
// zero-padded to n_fft. Unnormalized: |X_k|^2 with X = sum_n x_n e^{-2 pi i kn/N}.
std::vector<double> power_spectrum(std::span<const double> frame, const FeatureConfig& cfg);

struct MelFilterbank {
  std::size_t n_mels = 0;
  std::size_t n_bins = 0;
  std::vector<double> weights;     // n_mels x n_bins, row-major
  std::vector<double> centers_hz;  // n_mels

  double at(std::size_t m, std::size_t k) const { return weights[m * n_bins + k]; }
};

// HTK-mel triangular filters with centers equally spaced in mel between
// fmin and fmax. Raises kConfig if any filter covers no FFT bin.
MelFilterbank mel_filterbank(const FeatureConfig& cfg);

// Orthonormal DCT-II, n_out x n_in, row-major.
std::vector<double> dct_matrix(std::size_t n_out, std::size_t n_in);

/// Precomputes window, filterbank and DCT for repeated extraction.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(FeatureConfig cfg);

  const FeatureConfig& config() const { return cfg_; }

  // Un-normalized MFCCs.
  FeatureMatrix mfcc(const AudioSignal& signal) const;
  // MFCCs followed by per-utterance normalization.
  FeatureMatrix extract(const AudioSignal& signal) const;

 private:
  FeatureConfig cfg_;
  MelFilterbank filterbank_;
  std::vector<double> dct_;
};

FeatureMatrix mfcc(const AudioSignal& signal, const FeatureConfig& cfg);

// Per-utterance mean and variance normalization of each coefficient over
// time (population variance). Coefficients whose variance is below norm_eps
// are only centered.
FeatureMatrix normalize_features(const FeatureMatrix& m, double norm_eps = 1e-5);

// Stable short hex digest of every field in the config.
std::string feature_config_digest(const FeatureConfig& cfg);

// Cache file: int32 T, int32 dims, then T*dims little-endian float32.
void write_feature_cache(const std::filesystem::path& path, const FeatureMatrix& m);
FeatureMatrix read_feature_cache(const std::filesystem::path& path);

}  // namespace qvec
