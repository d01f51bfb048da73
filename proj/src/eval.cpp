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

#include "qvec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "qvec/error.hpp"

namespace qvec {
namespace {

std::vector<std::string> split_single_space(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(' ', start);
    fields.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return fields;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

std::vector<Trial> parse_trials(std::istream& in) {
  std::vector<Trial> trials;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    line = strip_cr(std::move(line));
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto fields = split_single_space(line);
    const std::string where = "trial line " + std::to_string(number);
    if (fields.size() != 3 || fields[1].empty() || fields[2].empty()) {
      fail(ErrorCode::kParse, where + ": expected \"label enroll test\"");
    }
    if (fields[0] != "0" && fields[0] != "1") {
      fail(ErrorCode::kParse, where + ": label must be 0 or 1, got \"" + fields[0] + "\"");
    }
    trials.push_back(Trial{fields[0] == "1" ? 1 : 0, fields[1], fields[2], number});
  }
  return trials;
}

std::vector<Trial> parse_trials(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open trial list: " + path.string());
  return parse_trials(in);
}

double cosine_score(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    fail(ErrorCode::kShape, "cosine of vectors with dimensions " + std::to_string(a.size()) +
                                " and " + std::to_string(b.size()));
  }
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  if (!(aa > 0.0) || !(bb > 0.0)) fail(ErrorCode::kDegenerateNorm, "cosine of a zero vector");
  return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

EerResult compute_eer(std::span<const LabeledScore> scores) {
  std::vector<LabeledScore> sorted(scores.begin(), scores.end());
  std::size_t n_target = 0;
  for (const auto& s : sorted) n_target += s.label == 1;
  const std::size_t n_nontarget = sorted.size() - n_target;
  if (n_target == 0 || n_nontarget == 0) {
    fail(ErrorCode::kMetric, "EER needs at least one target and one nontarget trial");
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const LabeledScore& a, const LabeledScore& b) { return a.score < b.score; });

  // At threshold sorted[i].score everything from i on is accepted.
  struct Point {
    double threshold, far, frr;
  };
  std::vector<Point> sweep;
  std::size_t targets_below = 0, nontargets_below = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    const double theta = sorted[i].score;
    sweep.push_back({theta, static_cast<double>(n_nontarget - nontargets_below) / n_nontarget,
                     static_cast<double>(targets_below) / n_target});
    for (; i < sorted.size() && sorted[i].score == theta; ++i) {
      (sorted[i].label == 1 ? targets_below : nontargets_below) += 1;
    }
  }
  sweep.push_back({std::nextafter(sorted.back().score, std::numeric_limits<double>::infinity()),
                   0.0, 1.0});

  for (std::size_t i = 0; i < sweep.size(); ++i) {
    const double d = sweep[i].far - sweep[i].frr;
    if (d == 0.0) return {sweep[i].far, sweep[i].threshold};
    if (d < 0.0) {
      // First sign change lies between i - 1 and i; sweep[0] always has FRR 0, FAR 1.
      const Point& a = sweep[i - 1];
      const Point& b = sweep[i];
      const double da = a.far - a.frr;
      const double alpha = da / (da - d);
      return {a.far + alpha * (b.far - a.far), a.threshold + alpha * (b.threshold - a.threshold)};
    }
  }
  return {sweep.back().far, sweep.back().threshold};
}

EmbeddingCache::EmbeddingCache(Embedder embedder, std::size_t workers)
    : embedder_(std::move(embedder)), workers_(std::max<std::size_t>(workers, 1)) {}

std::string EmbeddingCache::key(const std::string& path) {
  return std::filesystem::absolute(std::filesystem::path(path)).lexically_normal().string();
}

void EmbeddingCache::prefetch(const std::vector<std::string>& paths) {
  std::vector<std::string> todo;
  std::vector<std::string> raw;
  for (const auto& p : paths) {
    const auto k = key(p);
    if (entries_.count(k) || std::find(todo.begin(), todo.end(), k) != todo.end()) continue;
    todo.push_back(k);
    raw.push_back(p);
  }
  std::vector<Entry> results(todo.size());
  auto work = [&](std::size_t first) {
    for (std::size_t i = first; i < todo.size(); i += workers_) {
      try {
        results[i].embedding = embedder_(raw[i]);
      } catch (const std::exception& e) {
        results[i].error = e.what();
      }
    }
  };
  if (workers_ == 1 || todo.size() < 2) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(workers_, todo.size()); ++w) pool.emplace_back(work, w);
  }
  for (std::size_t i = 0; i < todo.size(); ++i) entries_.emplace(todo[i], std::move(results[i]));
  extractions_ += todo.size();
}

const std::vector<float>& EmbeddingCache::get(const std::string& path) {
  const auto k = key(path);
  auto it = entries_.find(k);
  if (it == entries_.end()) {
    prefetch({path});
    it = entries_.find(k);
  }
  if (!it->second.error.empty()) fail(ErrorCode::kIo, it->second.error);
  return it->second.embedding;
}

std::vector<ScoredTrial> score_trials(const std::vector<Trial>& trials, EmbeddingCache& cache) {
  std::vector<std::string> paths;
  paths.reserve(2 * trials.size());
  for (const Trial& t : trials) {
    paths.push_back(t.enroll_path);
    paths.push_back(t.test_path);
  }
  cache.prefetch(paths);
  std::vector<ScoredTrial> out;
  out.reserve(trials.size());
  for (const Trial& t : trials) {
    try {
      out.push_back({t, cosine_score(cache.get(t.enroll_path), cache.get(t.test_path))});
    } catch (const Error& e) {
      throw Error(e.code(), "trial line " + std::to_string(t.line) + ": " + e.what());
    }
  }
  return out;
}

void write_scores(std::ostream& out, const std::vector<ScoredTrial>& scored, bool with_labels) {
  char buf[64];
  for (const ScoredTrial& s : scored) {
    std::snprintf(buf, sizeof buf, "%.6f", s.score);
    out << buf << ' ' << s.trial.enroll_path << ' ' << s.trial.test_path;
    if (with_labels) out << ' ' << s.trial.label;
    out << '\n';
  }
}

std::vector<ScoreLine> parse_scores(std::istream& in) {
  std::vector<ScoreLine> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    line = strip_cr(std::move(line));
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto fields = split_single_space(line);
    const std::string where = "score line " + std::to_string(number);
    if (fields.size() != 3 && fields.size() != 4) {
      fail(ErrorCode::kParse, where + ": expected \"score enroll test [label]\"");
    }
    ScoreLine s;
    try {
      std::size_t used = 0;
      s.score = std::stod(fields[0], &used);
      if (used != fields[0].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      fail(ErrorCode::kParse, where + ": bad score \"" + fields[0] + "\"");
    }
    if (!std::isfinite(s.score)) fail(ErrorCode::kParse, where + ": score is not finite");
    s.enroll_path = fields[1];
    s.test_path = fields[2];
    if (fields.size() == 4) {
      if (fields[3] != "0" && fields[3] != "1") {
        fail(ErrorCode::kParse, where + ": label must be 0 or 1");
      }
      s.label = fields[3] == "1" ? 1 : 0;
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<LabeledScore> join_scores(const std::vector<Trial>& trials,
                                      const std::vector<ScoreLine>& scores) {
  std::map<std::pair<std::string, std::string>, double> by_pair;
  for (const ScoreLine& s : scores) by_pair[{s.enroll_path, s.test_path}] = s.score;
  std::vector<LabeledScore> out;
  out.reserve(trials.size());
  for (const Trial& t : trials) {
    auto it = by_pair.find({t.enroll_path, t.test_path});
    if (it == by_pair.end()) {
      fail(ErrorCode::kParse, "trial line " + std::to_string(t.line) + ": no score for " +
                                  t.enroll_path + " " + t.test_path);
    }
    out.push_back({it->second, t.label});
  }
  return out;
}

}  // namespace qvec
