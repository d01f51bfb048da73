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
#include <random>
#include <string>
#include <vector>

#include "qvec/audio.hpp"
#include "qvec/autodiff.hpp"
#include "qvec/trainer.hpp"

namespace qvec::testing {

// Directory removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::vector<float> random_samples(std::size_t n, std::uint64_t seed, double amplitude = 0.5);
AudioSignal sine(double freq_hz, std::size_t n, double amplitude = 0.5, double phase = 0.0);

Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                             double hi = 1.0);

// A synthetic talker: a private inventory of multi-sinusoid "phones" spoken in
// random order with jittered durations, gaps and background noise.
class SyntheticSpeaker {
 public:
  SyntheticSpeaker(std::uint64_t seed, std::size_t n_phones = 6);
  AudioSignal utterance(double seconds, std::mt19937_64& rng) const;

 private:
  struct Phone {
    std::vector<double> freqs;
    std::vector<double> amps;
  };
  std::vector<Phone> phones_;
  double noise_level_;
};

struct Corpus {
  std::vector<ManifestEntry> entries;  // speaker-major order
  std::filesystem::path manifest;
};

// Writes speakers x utterances WAV files of uniform [min_s, max_s] duration
// under dir plus a manifest.jsonl. Labels are "spk00", "spk01", ...
Corpus make_corpus(const std::filesystem::path& dir, std::size_t speakers, std::size_t utterances,
                   double min_s, double max_s, std::uint64_t seed);

// Fresh utterances of the speakers that make_corpus(..., seed) generates,
// drawn from an independent stream.
Corpus make_held_out(const std::filesystem::path& dir, std::size_t speakers, std::size_t utterances,
                     double min_s, double max_s, std::uint64_t seed, std::uint64_t draw_seed);

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst = 0.0;
};

// Builds a scalar loss from leaf Vars bound to the given parameters. Compares
// tape gradients with central differences (step h) on up to max_coords
// coordinates spread over all inputs; a coordinate fails when
// |analytic - numeric| / max(|analytic|, |numeric|, floor) >= tol.
using LossFn = std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&)>;
GradCheckResult grad_check(std::vector<Parameter<double>>& inputs, const LossFn& loss,
                           std::size_t max_coords, std::uint64_t seed, double h = 1e-4,
                           double tol = 1e-4, double floor = 1e-6);

// sum(x * weights) with a fixed weight tensor; gives every output coordinate a
// distinct sensitivity.
Var<double> weighted_sum(Var<double> x, const Tensor<double>& weights);

}  // namespace qvec::testing
