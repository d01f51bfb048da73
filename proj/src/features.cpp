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

#include "qvec/features.hpp"

#include <fftw3.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include "qvec/error.hpp"
#include "qvec/serial.hpp"
#include "fftw_lock.hpp"

namespace qvec {

std::mutex& detail::fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

namespace {

using detail::fftw_planner_mutex;

class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    in_ = fftw_alloc_real(static_cast<std::size_t>(n));
    out_ = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(n, in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  const fftw_complex* output() const { return out_; }
  void run() { fftw_execute(plan_); }
  int size() const { return n_; }

 private:
  int n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

RealFft& thread_fft(int n) {
  thread_local std::map<int, std::unique_ptr<RealFft>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<RealFft>(n);
  return *slot;
}

void windowed_power(std::span<const double> frame, std::span<const double> window,
                    int n_fft, std::span<double> out) {
  RealFft& fft = thread_fft(n_fft);
  double* in = fft.input();
  std::size_t i = 0;
  for (; i < frame.size(); ++i) in[i] = frame[i] * window[i];
  for (; i < static_cast<std::size_t>(n_fft); ++i) in[i] = 0.0;
  fft.run();
  const fftw_complex* spec = fft.output();
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = spec[k][0] * spec[k][0] + spec[k][1] * spec[k][1];
  }
}

}  // namespace

std::size_t FeatureConfig::win_length() const {
  return static_cast<std::size_t>(std::llround(win_ms * sample_rate / 1000.0));
}

std::size_t FeatureConfig::hop_length() const {
  return static_cast<std::size_t>(std::llround(hop_ms * sample_rate / 1000.0));
}

void FeatureConfig::validate() const {
  auto bad = [](const std::string& field, const std::string& why) {
    fail(ErrorCode::kConfig, "feature." + field + ": " + why);
  };
  if (sample_rate != kSampleRate) bad("sample_rate", "must be 16000");
  if (!(win_ms > 0) || win_length() == 0) bad("win_ms", "must be positive");
  if (!(hop_ms > 0) || hop_length() == 0) bad("hop_ms", "must be positive");
  if (n_fft < 2 || (n_fft & 1)) bad("n_fft", "must be an even number >= 2");
  if (static_cast<std::size_t>(n_fft) < win_length()) bad("n_fft", "must be >= window length");
  if (n_mels < 1) bad("n_mels", "must be >= 1");
  if (n_mfcc < 1) bad("n_mfcc", "must be >= 1");
  if (n_mfcc > n_mels) bad("n_mfcc", "must be <= n_mels");
  if (!(fmin >= 0)) bad("fmin", "must be >= 0");
  if (!(fmin < fmax)) bad("fmin", "must be < fmax");
  if (fmax > sample_rate / 2.0) bad("fmax", "must be <= sample_rate / 2");
  if (!(log_floor > 0)) bad("log_floor", "must be positive");
  if (!(norm_eps > 0)) bad("norm_eps", "must be positive");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> hann_window(std::size_t n) {
  if (n == 0) fail(ErrorCode::kArgument, "hann window length must be >= 1");
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                 static_cast<double>(n)));
  }
  return w;
}

std::size_t frame_count(std::size_t num_samples, const FeatureConfig& cfg) {
  const std::size_t win = cfg.win_length();
  if (num_samples < win) return 0;
  return (num_samples - win) / cfg.hop_length() + 1;
}

std::vector<std::vector<double>> frame_signal(const AudioSignal& signal,
                                              const FeatureConfig& cfg) {
  const std::size_t win = cfg.win_length(), hop = cfg.hop_length();
  const std::size_t count = frame_count(signal.samples.size(), cfg);
  if (count == 0) {
    fail(ErrorCode::kTooShort, "signal of " + std::to_string(signal.samples.size()) +
                                   " samples is shorter than one " +
                                   std::to_string(win) + "-sample window");
  }
  std::vector<std::vector<double>> frames(count, std::vector<double>(win));
  for (std::size_t t = 0; t < count; ++t) {
    for (std::size_t i = 0; i < win; ++i) frames[t][i] = signal.samples[t * hop + i];
  }
  return frames;
}

std::vector<double> power_spectrum(std::span<const double> frame, const FeatureConfig& cfg) {
  if (frame.size() > static_cast<std::size_t>(cfg.n_fft)) {
    fail(ErrorCode::kArgument, "frame longer than n_fft");
  }
  const auto window = hann_window(frame.size());
  std::vector<double> out(cfg.n_bins());
  windowed_power(frame, window, cfg.n_fft, out);
  return out;
}

MelFilterbank mel_filterbank(const FeatureConfig& cfg) {
  MelFilterbank fb;
  fb.n_mels = static_cast<std::size_t>(cfg.n_mels);
  fb.n_bins = cfg.n_bins();
  fb.weights.assign(fb.n_mels * fb.n_bins, 0.0);
  fb.centers_hz.resize(fb.n_mels);

  const double mel_lo = hz_to_mel(cfg.fmin), mel_hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(fb.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                      static_cast<double>(fb.n_mels + 1));
  }
  const double bin_hz = static_cast<double>(cfg.sample_rate) / cfg.n_fft;
  for (std::size_t m = 0; m < fb.n_mels; ++m) {
    const double lo = edges[m], center = edges[m + 1], hi = edges[m + 2];
    fb.centers_hz[m] = center;
    bool any = false;
    for (std::size_t k = 0; k < fb.n_bins; ++k) {
      const double f = bin_hz * static_cast<double>(k);
      double w = 0.0;
      if (f > lo && f <= center) {
        w = (f - lo) / (center - lo);
      } else if (f > center && f < hi) {
        w = (hi - f) / (hi - center);
      }
      fb.weights[m * fb.n_bins + k] = w;
      any = any || w > 0.0;
    }
    if (!any) {
      fail(ErrorCode::kConfig, "feature.n_mels: mel filter " + std::to_string(m) +
                                   " covers no FFT bin; reduce n_mels or raise n_fft");
    }
  }
  return fb;
}

std::vector<double> dct_matrix(std::size_t n_out, std::size_t n_in) {
  std::vector<double> d(n_out * n_in);
  const double n = static_cast<double>(n_in);
  for (std::size_t k = 0; k < n_out; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (std::size_t i = 0; i < n_in; ++i) {
      d[k * n_in + i] = scale * std::cos(std::numbers::pi * static_cast<double>(k) *
                                         (2.0 * static_cast<double>(i) + 1.0) / (2.0 * n));
    }
  }
  return d;
}

FeatureExtractor::FeatureExtractor(FeatureConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  filterbank_ = mel_filterbank(cfg_);
  dct_ = dct_matrix(static_cast<std::size_t>(cfg_.n_mfcc), static_cast<std::size_t>(cfg_.n_mels));
}

FeatureMatrix FeatureExtractor::mfcc(const AudioSignal& signal) const {
  const std::size_t win = cfg_.win_length(), hop = cfg_.hop_length();
  const std::size_t frames = frame_count(signal.samples.size(), cfg_);
  if (frames == 0) {
    fail(ErrorCode::kTooShort, "signal of " + std::to_string(signal.samples.size()) +
                                   " samples is shorter than one " +
                                   std::to_string(win) + "-sample window");
  }
  const auto window = hann_window(win);
  const std::size_t n_mels = filterbank_.n_mels, n_bins = filterbank_.n_bins;
  const auto n_mfcc = static_cast<std::size_t>(cfg_.n_mfcc);

  FeatureMatrix out;
  out.frames = frames;
  out.dims = n_mfcc;
  out.values.resize(frames * n_mfcc);

  std::vector<double> frame(win), power(n_bins), logmel(n_mels);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < win; ++i) frame[i] = signal.samples[t * hop + i];
    windowed_power(frame, window, cfg_.n_fft, power);
    for (std::size_t m = 0; m < n_mels; ++m) {
      const double* row = &filterbank_.weights[m * n_bins];
      double e = 0.0;
      for (std::size_t k = 0; k < n_bins; ++k) e += row[k] * power[k];
      logmel[m] = std::log(e + cfg_.log_floor);
    }
    for (std::size_t c = 0; c < n_mfcc; ++c) {
      const double* row = &dct_[c * n_mels];
      double acc = 0.0;
      for (std::size_t m = 0; m < n_mels; ++m) acc += row[m] * logmel[m];
      out.values[t * n_mfcc + c] = acc;
    }
  }
  return out;
}

FeatureMatrix FeatureExtractor::extract(const AudioSignal& signal) const {
  return normalize_features(mfcc(signal), cfg_.norm_eps);
}

FeatureMatrix mfcc(const AudioSignal& signal, const FeatureConfig& cfg) {
  return FeatureExtractor(cfg).mfcc(signal);
}

FeatureMatrix normalize_features(const FeatureMatrix& m, double norm_eps) {
  if (m.frames == 0) fail(ErrorCode::kArgument, "cannot normalize an empty feature matrix");
  FeatureMatrix out = m;
  const double n = static_cast<double>(m.frames);
  for (std::size_t k = 0; k < m.dims; ++k) {
    double mean = 0.0;
    for (std::size_t t = 0; t < m.frames; ++t) mean += m.at(t, k);
    mean /= n;
    double var = 0.0;
    for (std::size_t t = 0; t < m.frames; ++t) {
      const double d = m.at(t, k) - mean;
      var += d * d;
    }
    var /= n;
    const double scale = var < norm_eps ? 1.0 : 1.0 / std::sqrt(var);
    for (std::size_t t = 0; t < m.frames; ++t) out.at(t, k) = (m.at(t, k) - mean) * scale;
  }
  return out;
}

std::string feature_config_digest(const FeatureConfig& cfg) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d|%.17g|%.17g|%d|%d|%d|%.17g|%.17g|%.17g|%.17g",
                cfg.sample_rate, cfg.win_ms, cfg.hop_ms, cfg.n_fft, cfg.n_mels, cfg.n_mfcc,
                cfg.fmin, cfg.fmax, cfg.log_floor, cfg.norm_eps);
  std::uint64_t h = 1469598103934665603ULL;
  for (const char* p = buf; *p; ++p) {
    h ^= static_cast<unsigned char>(*p);
    h *= 1099511628211ULL;
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

void write_feature_cache(const std::filesystem::path& path, const FeatureMatrix& m) {
  std::vector<unsigned char> out;
  serial::put_u32(out, static_cast<std::uint32_t>(m.frames));
  serial::put_u32(out, static_cast<std::uint32_t>(m.dims));
  for (double v : m.values) serial::put_f32(out, static_cast<float>(v));
  serial::write_file(path, out);
}

FeatureMatrix read_feature_cache(const std::filesystem::path& path) {
  const auto bytes = serial::read_file(path);
  if (bytes.size() < 8) fail(ErrorCode::kFormat, "feature cache too small: " + path.string());
  FeatureMatrix m;
  m.frames = serial::get_u32(bytes.data());
  m.dims = serial::get_u32(bytes.data() + 4);
  if (bytes.size() != 8 + 4 * m.frames * m.dims) {
    fail(ErrorCode::kFormat, "feature cache size mismatch: " + path.string());
  }
  m.values.resize(m.frames * m.dims);
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    m.values[i] = serial::get_f32(bytes.data() + 8 + 4 * i);
  }
  return m;
}

}  // namespace qvec
