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
#include <functional>
#include <istream>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <vector>

namespace qvec {

struct Trial {
  int label = 0;  // 1 target, 0 nontarget
  std::string enroll_path;
  std::string test_path;
  std::size_t line = 0;  // 1-based source line, 0 if synthetic
};

struct ScoredTrial {
  Trial trial;
  double score = 0.0;
};

// Lines are "label enroll test", single-space separated. Blank lines are
// skipped; anything else malformed raises kParse with the line number.
std::vector<Trial> parse_trials(std::istream& in);
std::vector<Trial> parse_trials(const std::filesystem::path& path);

// <a, b> / (|a| |b|) clamped to [-1, 1]. Zero vectors raise kDegenerateNorm.
double cosine_score(std::span<const float> a, std::span<const float> b);

struct LabeledScore {
  double score = 0.0;
  int label = 0;
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

// Sweeps thresholds over the observed scores (accept when score >= threshold)
// and linearly interpolates FAR and FRR where FAR - FRR changes sign. Needs at
// least one target and one nontarget (kMetric).
EerResult compute_eer(std::span<const LabeledScore> scores);

using Embedder = std::function<std::vector<float>(const std::string& path)>;

/// Embeds each distinct file once. Keys are lexically normalized absolute
/// paths.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(Embedder embedder, std::size_t workers = 1);

  // Extracts all missing paths, up to `workers` at a time. Failures are kept
  // and rethrown by get().
  void prefetch(const std::vector<std::string>& paths);
  const std::vector<float>& get(const std::string& path);

  std::size_t extractions() const { return extractions_; }
  static std::string key(const std::string& path);

 private:
  struct Entry {
    std::vector<float> embedding;
    std::string error;
  };

  Embedder embedder_;
  std::size_t workers_;
  std::map<std::string, Entry> entries_;
  std::size_t extractions_ = 0;
};

// Scores every trial in input order; a failing file raises with the trial's
// line number.
std::vector<ScoredTrial> score_trials(const std::vector<Trial>& trials, EmbeddingCache& cache);

// "score enroll test" with the score at 6 decimals; with_labels appends the
// trial label as a fourth column.
void write_scores(std::ostream& out, const std::vector<ScoredTrial>& scored, bool with_labels = false);

struct ScoreLine {
  double score = 0.0;
  std::string enroll_path;
  std::string test_path;
  int label = -1;  // -1 when absent
};

std::vector<ScoreLine> parse_scores(std::istream& in);

// Pairs scores with trials by (enroll, test). Missing pairs raise kParse.
std::vector<LabeledScore> join_scores(const std::vector<Trial>& trials,
                                      const std::vector<ScoreLine>& scores);

}  // namespace qvec
