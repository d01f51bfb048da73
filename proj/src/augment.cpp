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

#include "qvec/augment.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <span>

#include "qvec/error.hpp"
#include "fftw_lock.hpp"

namespace qvec {
namespace {

double mean_power(std::span<const float> x) {
  double acc = 0.0;
  for (float v : x) acc += static_cast<double>(v) * v;
  return x.empty() ? 0.0 : acc / static_cast<double>(x.size());
}

float peak(std::span<const float> x) {
  float p = 0.0f;
  for (float v : x) p = std::max(p, std::abs(v));
  return p;
}

std::vector<double> fft_convolve(std::span<const float> a, std::span<const float> b,
                                 std::size_t keep) {
  std::size_t n = 1;
  while (n < a.size() + b.size() - 1) n <<= 1;
  const std::size_t bins = n / 2 + 1;
  double* buf = fftw_alloc_real(n);
  fftw_complex* fa = fftw_alloc_complex(bins);
  fftw_complex* fb = fftw_alloc_complex(bins);
  fftw_plan fwd_a, fwd_b, inv;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fwd_a = fftw_plan_dft_r2c_1d(static_cast<int>(n), buf, fa, FFTW_ESTIMATE);
    fwd_b = fftw_plan_dft_r2c_1d(static_cast<int>(n), buf, fb, FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(static_cast<int>(n), fa, buf, FFTW_ESTIMATE);
  }
  auto load = [&](std::span<const float> x) {
    std::fill(buf, buf + n, 0.0);
    std::copy(x.begin(), x.end(), buf);
  };
  load(a);
  fftw_execute(fwd_a);
  load(b);
  fftw_execute(fwd_b);
  for (std::size_t k = 0; k < bins; ++k) {
    const double re = fa[k][0] * fb[k][0] - fa[k][1] * fb[k][1];
    const double im = fa[k][0] * fb[k][1] + fa[k][1] * fb[k][0];
    fa[k][0] = re;
    fa[k][1] = im;
  }
  fftw_execute(inv);
  std::vector<double> out(buf, buf + keep);
  for (double& v : out) v /= static_cast<double>(n);
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(fwd_a);
    fftw_destroy_plan(fwd_b);
    fftw_destroy_plan(inv);
  }
  fftw_free(buf);
  fftw_free(fa);
  fftw_free(fb);
  return out;
}

}  // namespace

void AugmentPolicy::validate() const {
  if (!(snr_low_db <= snr_high_db)) {
    fail(ErrorCode::kConfig, "augment.snr_db_range: low must not exceed high");
  }
  if (!(apply_prob >= 0.0 && apply_prob <= 1.0)) {
    fail(ErrorCode::kConfig, "augment.apply_prob: must be in [0, 1]");
  }
}

AudioSignal mix_additive_noise(const AudioSignal& signal, const AudioSignal& noise,
                               double snr_db, std::mt19937_64& rng) {
  if (std::isinf(snr_db) && snr_db > 0) return signal;
  if (noise.samples.empty()) fail(ErrorCode::kDegenerateInput, "noise signal is empty");
  const double p_signal = mean_power(signal.samples);
  if (!(p_signal > 0.0)) fail(ErrorCode::kDegenerateInput, "cannot set an SNR for a silent signal");

  const std::size_t n = signal.samples.size(), m = noise.samples.size();
  std::uniform_int_distribution<std::size_t> start(0, m - 1);
  std::size_t pos = start(rng);
  std::vector<float> cropped(n);
  for (std::size_t i = 0; i < n; ++i) {
    cropped[i] = noise.samples[pos];
    if (++pos == m) pos = 0;
  }
  const double p_noise = mean_power(cropped);
  if (!(p_noise > 0.0)) fail(ErrorCode::kDegenerateInput, "noise segment is silent");
  const double gain = std::sqrt(p_signal / (p_noise * std::pow(10.0, snr_db / 10.0)));

  AudioSignal out = signal;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = static_cast<double>(signal.samples[i]) + gain * cropped[i];
    out.samples[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  return out;
}

AudioSignal convolve_rir(const AudioSignal& signal, const AudioSignal& rir) {
  if (rir.samples.empty()) fail(ErrorCode::kDegenerateInput, "impulse response is empty");
  if (peak(rir.samples) == 0.0f) fail(ErrorCode::kDegenerateInput, "impulse response is all zero");
  const std::size_t n = signal.samples.size(), m = rir.samples.size();

  std::vector<double> wet;
  // Direct form is faster for short responses.
  if (m <= 64) {
    wet.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t kmax = std::min(m, i + 1);
      double acc = 0.0;
      for (std::size_t k = 0; k < kmax; ++k) {
        acc += static_cast<double>(rir.samples[k]) * signal.samples[i - k];
      }
      wet[i] = acc;
    }
  } else {
    wet = fft_convolve(signal.samples, rir.samples, n);
  }

  AudioSignal out = signal;
  double wet_peak = 0.0;
  for (double v : wet) wet_peak = std::max(wet_peak, std::abs(v));
  const double target = peak(signal.samples);
  const double gain = wet_peak > 0.0 ? target / wet_peak : 0.0;
  for (std::size_t i = 0; i < n; ++i) out.samples[i] = static_cast<float>(wet[i] * gain);
  return out;
}

std::vector<std::string> read_path_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open path list: " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) {
      line.pop_back();
    }
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    out.push_back(line.substr(first));
  }
  return out;
}

Augmenter::Augmenter(AugmentPolicy policy) : policy_(std::move(policy)) {
  policy_.validate();
  if (!policy_.noise_manifest.empty()) {
    for (const auto& p : read_path_list(policy_.noise_manifest)) noises_.push_back(load_wav(p));
  }
  if (!policy_.rir_manifest.empty()) {
    for (const auto& p : read_path_list(policy_.rir_manifest)) rirs_.push_back(load_wav(p));
  }
}

bool Augmenter::active() const {
  return policy_.apply_prob > 0.0 && (!noises_.empty() || !rirs_.empty());
}

AudioSignal Augmenter::apply(const AudioSignal& signal, std::mt19937_64& rng) const {
  if (!active()) return signal;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) >= policy_.apply_prob) return signal;
  bool use_noise = !noises_.empty();
  if (!noises_.empty() && !rirs_.empty()) use_noise = unit(rng) < 0.5;
  if (use_noise) {
    std::uniform_int_distribution<std::size_t> pick(0, noises_.size() - 1);
    const AudioSignal& noise = noises_[pick(rng)];
    std::uniform_real_distribution<double> snr(policy_.snr_low_db, policy_.snr_high_db);
    const double snr_db = snr(rng);
    if (mean_power(signal.samples) == 0.0) return signal;
    return mix_additive_noise(signal, noise, snr_db, rng);
  }
  std::uniform_int_distribution<std::size_t> pick(0, rirs_.size() - 1);
  return convolve_rir(signal, rirs_[pick(rng)]);
}

}  // namespace qvec
