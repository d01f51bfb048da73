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

#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace qvec::testing {

namespace fs = std::filesystem;

TempDir::TempDir() {
  std::random_device rd;
  const fs::path base = fs::temp_directory_path();
  for (;;) {
    path_ = base / ("qvec-test-" + std::to_string(rd()) + std::to_string(rd()));
    if (fs::create_directory(path_)) break;
  }
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::vector<float> random_samples(std::size_t n, std::uint64_t seed, double amplitude) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-amplitude, amplitude);
  std::vector<float> out(n);
  for (float& v : out) v = static_cast<float>(u(rng));
  return out;
}

AudioSignal sine(double freq_hz, std::size_t n, double amplitude, double phase) {
  AudioSignal s;
  s.sample_rate = kSampleRate;
  s.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.samples[i] = static_cast<float>(
        amplitude * std::sin(2.0 * std::numbers::pi * freq_hz * static_cast<double>(i) / kSampleRate + phase));
  }
  return s;
}

Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor<double> t(shape);
  std::uniform_real_distribution<double> u(lo, hi);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = u(rng);
  return t;
}

SyntheticSpeaker::SyntheticSpeaker(std::uint64_t seed, std::size_t n_phones) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> log_freq(std::log(150.0), std::log(4000.0));
  std::uniform_real_distribution<double> amp(0.3, 1.0);
  for (std::size_t p = 0; p < n_phones; ++p) {
    Phone ph;
    for (int k = 0; k < 3; ++k) {
      ph.freqs.push_back(std::exp(log_freq(rng)));
      ph.amps.push_back(amp(rng));
    }
    phones_.push_back(std::move(ph));
  }
  noise_level_ = std::uniform_real_distribution<double>(0.005, 0.02)(rng);
}

AudioSignal SyntheticSpeaker::utterance(double seconds, std::mt19937_64& rng) const {
  const auto n = static_cast<std::size_t>(seconds * kSampleRate);
  std::vector<double> x(n, 0.0);
  std::uniform_int_distribution<std::size_t> pick(0, phones_.size() - 1);
  std::uniform_real_distribution<double> seg(0.08, 0.25), gap(0.02, 0.08), u01(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 0.01);
  std::size_t pos = 0;
  while (pos < n) {
    const Phone& ph = phones_[pick(rng)];
    const auto len = std::min(n - pos, static_cast<std::size_t>(seg(rng) * kSampleRate));
    const double ramp = 0.01 * kSampleRate;
    for (std::size_t k = 0; k < ph.freqs.size(); ++k) {
      const double f = ph.freqs[k] * (1.0 + jitter(rng));
      const double phase = 2.0 * std::numbers::pi * u01(rng);
      for (std::size_t i = 0; i < len; ++i) {
        const double env = std::min({1.0, static_cast<double>(i) / ramp,
                                     static_cast<double>(len - i) / ramp});
        x[pos + i] += 0.15 * ph.amps[k] * env *
                      std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) / kSampleRate + phase);
      }
    }
    pos += len;
    if (u01(rng) < 0.3) pos += static_cast<std::size_t>(gap(rng) * kSampleRate);
  }
  std::normal_distribution<double> noise(0.0, noise_level_);
  AudioSignal s;
  s.sample_rate = kSampleRate;
  s.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.samples[i] = static_cast<float>(std::clamp(x[i] + noise(rng), -1.0, 1.0));
  }
  return s;
}

namespace {

Corpus write_corpus(const fs::path& dir, std::size_t speakers, std::size_t utterances, double min_s,
                    double max_s, std::uint64_t speaker_seed, std::uint64_t draw_seed) {
  fs::create_directories(dir);
  Corpus c;
  std::mt19937_64 rng(draw_seed);
  std::uniform_real_distribution<double> dur(min_s, max_s);
  for (std::size_t s = 0; s < speakers; ++s) {
    const SyntheticSpeaker spk(speaker_seed * 1000003ULL + s);
    char label[24];
    std::snprintf(label, sizeof label, "spk%02zu", s);
    for (std::size_t u = 0; u < utterances; ++u) {
      const fs::path path = dir / (std::string(label) + "_" + std::to_string(u) + ".wav");
      AudioSignal a = spk.utterance(dur(rng), rng);
      write_wav(path, a);
      c.entries.push_back({path.string(), label, a.duration_seconds()});
    }
  }
  c.manifest = dir / "manifest.jsonl";
  write_manifest(c.manifest, c.entries);
  return c;
}

}  // namespace

Corpus make_corpus(const fs::path& dir, std::size_t speakers, std::size_t utterances,
                   double min_s, double max_s, std::uint64_t seed) {
  return write_corpus(dir, speakers, utterances, min_s, max_s, seed, seed);
}

Corpus make_held_out(const fs::path& dir, std::size_t speakers, std::size_t utterances,
                     double min_s, double max_s, std::uint64_t seed, std::uint64_t draw_seed) {
  return write_corpus(dir, speakers, utterances, min_s, max_s, seed, draw_seed);
}

Var<double> weighted_sum(Var<double> x, const Tensor<double>& weights) {
  const Tensor<double>& xv = x.value();
  double total = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i) total += xv[i] * weights[i];
  return x.tape()->record(Tensor<double>(Shape{1}, total), {x},
                          [x, weights](Tape<double>& tp, const Tensor<double>& g) {
                            Tensor<double>& gx = tp.grad_buffer(x);
                            for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g[0] * weights[i];
                          });
}

GradCheckResult grad_check(std::vector<Parameter<double>>& inputs, const LossFn& loss,
                           std::size_t max_coords, std::uint64_t seed, double h, double tol,
                           double floor) {
  auto evaluate = [&] {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (auto& p : inputs) vars.push_back(tape.parameter(p));
    return loss(tape, vars).value()[0];
  };
  for (auto& p : inputs) p.zero_grad();
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (auto& p : inputs) vars.push_back(tape.parameter(p));
    tape.backward(loss(tape, vars));
  }

  std::size_t total = 0;
  for (auto& p : inputs) total += p.numel();
  std::mt19937_64 rng(seed);
  GradCheckResult r;
  for (auto& p : inputs) {
    std::vector<std::size_t> idx(p.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t share = std::max<std::size_t>(20, (max_coords * p.numel() + total - 1) / total);
    idx.resize(std::min(idx.size(), share));
    for (std::size_t i : idx) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double up = evaluate();
      p.value[i] = saved - h;
      const double down = evaluate();
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p.grad[i];
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), floor});
      ++r.checked;
      r.worst = std::max(r.worst, rel);
      if (!(rel < tol)) ++r.failed;
    }
  }
  return r;
}

}  // namespace qvec::testing
