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

#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>

#include "qvec/audio.hpp"
#include "qvec/config.hpp"
#include "qvec/error.hpp"
#include "qvec/eval.hpp"
#include "qvec/features.hpp"
#include "qvec/trainer.hpp"

namespace qvec::cli {
namespace {

namespace fs = std::filesystem;

struct Options {
  std::size_t workers = 1;
  std::string feature_cache;

  std::string config, manifest, val_manifest, out_dir, checkpoint, out, trials, scores;
  std::optional<std::uint64_t> seed;
  bool with_labels = false;
};

void require_file(const std::string& path, const std::string& what) {
  if (!fs::is_regular_file(path)) fail(ErrorCode::kArgument, what + " not found: " + path);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  return out;
}

std::string format_double(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

// Full-utterance features, optionally memoized on disk per (config, path).
class FeatureSource {
 public:
  FeatureSource(const FeatureConfig& cfg, std::string cache_dir)
      : extractor_(cfg), digest_(feature_config_digest(cfg)), dir_(std::move(cache_dir)) {
    if (!dir_.empty()) fs::create_directories(dir_);
  }

  FeatureMatrix get(const std::string& path) const {
    if (dir_.empty()) return extractor_.extract(load_wav(path));
    const fs::path cached = fs::path(dir_) / (digest_ + "-" + path_hash(path) + ".feat");
    if (fs::exists(cached)) return read_feature_cache(cached);
    FeatureMatrix m = extractor_.extract(load_wav(path));
    // Write then rename so concurrent readers never see partial files.
    const fs::path tmp = cached.string() + ".tmp" + path_hash(cached.string() + path);
    write_feature_cache(tmp, m);
    fs::rename(tmp, cached);
    return m;
  }

 private:
  static std::string path_hash(const std::string& path) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : EmbeddingCache::key(path)) h = (h ^ c) * 1099511628211ULL;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  FeatureExtractor extractor_;
  std::string digest_;
  std::string dir_;
};

// Audio list for embedding; only audio_filepath is required.
std::vector<std::string> read_audio_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open manifest: " + path);
  std::vector<std::string> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("audio_filepath") ||
        !j["audio_filepath"].is_string()) {
      fail(ErrorCode::kParse,
           path + ":" + std::to_string(number) + ": need a string audio_filepath");
    }
    out.push_back(j["audio_filepath"].get<std::string>());
  }
  return out;
}

ModelState load_for_inference(const Options& o) {
  require_file(o.checkpoint, "checkpoint");
  if (o.config.empty()) return load_checkpoint(o.checkpoint);
  RunConfig rc = load_run_config(o.config);
  rc.validate();
  ModelState state = load_checkpoint(o.checkpoint, &rc.model);
  if (feature_config_digest(rc.feature) != feature_config_digest(state.features)) {
    fail(ErrorCode::kMismatch, "feature config in " + o.config +
                                   " does not match the checkpoint (digest " +
                                   feature_config_digest(rc.feature) + " vs " +
                                   feature_config_digest(state.features) + ")");
  }
  return state;
}

Embedder make_embedder(const ModelState& state, const FeatureSource& features) {
  return [&state, &features](const std::string& path) {
    try {
      return embed_features(state.net, features.get(path));
    } catch (const Error& e) {
      throw Error(e.code(), path + ": " + e.what());
    }
  };
}

int cmd_train(const Options& o, std::ostream& out) {
  require_file(o.config, "config");
  require_file(o.manifest, "manifest");
  if (!o.val_manifest.empty()) require_file(o.val_manifest, "validation manifest");
  RunConfig rc = load_run_config(o.config);
  if (o.seed) rc.train.seed = *o.seed;
  rc.train.workers = o.workers;
  rc.validate();

  const auto entries = read_manifest(o.manifest);
  std::optional<std::vector<ManifestEntry>> val;
  if (!o.val_manifest.empty()) val = read_manifest(o.val_manifest);

  fs::create_directories(o.out_dir);
  TrainResult result = train(rc.model, rc.feature, rc.train, rc.augment, entries, val);
  save_checkpoint(result.last, fs::path(o.out_dir) / "last.ckpt");
  save_checkpoint(result.best, fs::path(o.out_dir) / "best.ckpt");
  std::ofstream csv = open_out(fs::path(o.out_dir) / "metrics.csv");
  csv << metrics_csv_header() << '\n';
  for (const EpochMetrics& m : result.metrics) csv << metrics_csv_row(m) << '\n';
  const EpochMetrics& last = result.metrics.back();
  out << "epochs=" << last.epoch << " train_loss=" << format_double("%.6f", last.train_loss)
      << " train_acc=" << format_double("%.4f", last.train_acc);
  if (last.val_acc) out << " val_acc=" << format_double("%.4f", *last.val_acc);
  out << " best_epoch=" << result.best.epoch << '\n';
  return kExitOk;
}

int cmd_embed(const Options& o) {
  require_file(o.manifest, "manifest");
  const ModelState state = load_for_inference(o);
  const std::vector<std::string> paths = read_audio_list(o.manifest);
  const FeatureSource features(state.features, o.feature_cache);
  EmbeddingCache cache(make_embedder(state, features), o.workers);
  cache.prefetch(paths);
  std::ofstream out = open_out(o.out);
  for (const std::string& p : paths) {
    nlohmann::json j = {{"audio_filepath", p}, {"embedding", cache.get(p)}};
    out << j.dump() << '\n';
  }
  return kExitOk;
}

int cmd_score(const Options& o) {
  require_file(o.trials, "trials");
  const ModelState state = load_for_inference(o);
  const std::vector<Trial> trials = parse_trials(fs::path(o.trials));
  const FeatureSource features(state.features, o.feature_cache);
  EmbeddingCache cache(make_embedder(state, features), o.workers);
  const auto scored = score_trials(trials, cache);
  std::ofstream out = open_out(o.out);
  write_scores(out, scored, o.with_labels);
  spdlog::info("scored {} trials over {} files", scored.size(), cache.extractions());
  return kExitOk;
}

int cmd_eer(const Options& o, std::ostream& out) {
  require_file(o.scores, "scores");
  std::ifstream in(o.scores);
  const std::vector<ScoreLine> lines = parse_scores(in);
  std::vector<LabeledScore> labeled;
  if (!o.trials.empty()) {
    require_file(o.trials, "trials");
    labeled = join_scores(parse_trials(fs::path(o.trials)), lines);
  } else {
    for (const ScoreLine& l : lines) {
      if (l.label < 0) {
        fail(ErrorCode::kArgument, "scores file has no labels; pass --trials");
      }
      labeled.push_back({l.score, l.label});
    }
  }
  const EerResult r = compute_eer(labeled);
  out << "EER=" << format_double("%.2f", 100.0 * r.eer)
      << " threshold=" << format_double("%.6f", r.threshold) << '\n';
  return kExitOk;
}

int cmd_inspect(const Options& o, std::ostream& out) {
  require_file(o.checkpoint, "checkpoint");
  const ModelState state = load_checkpoint(o.checkpoint);
  out << "variant=" << to_string(state.model.variant) << '\n'
      << "parameters=" << state.net.count_params() << '\n'
      << "embedding_dim=" << state.model.embedding_dim() << '\n'
      << "n_speakers=" << state.model.n_speakers << '\n'
      << "epoch=" << state.epoch << '\n'
      << "feature_digest=" << feature_config_digest(state.features) << '\n';
  return kExitOk;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kArgument:
    case ErrorCode::kConfig:
    case ErrorCode::kMismatch:
      return kExitUsage;
    default:
      return kExitRuntime;
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"qvec: SpeakerNet speaker verification"};
  app.require_subcommand(1);
  app.add_option("--workers", o.workers, "Concurrent feature/embedding extraction jobs")
      ->check(CLI::PositiveNumber);
  app.add_option("--feature-cache", o.feature_cache,
                 "Directory for cached full-utterance features (embed, score)");

  CLI::App* train_cmd = app.add_subcommand("train", "Train a model; writes last.ckpt, best.ckpt, metrics.csv");
  train_cmd->add_option("--config", o.config, "Run config JSON")->required();
  train_cmd->add_option("--manifest", o.manifest, "Training manifest (JSON lines)")->required();
  train_cmd->add_option("--val-manifest", o.val_manifest,
                        "Validation manifest; default splits the training manifest");
  train_cmd->add_option("--out-dir", o.out_dir, "Output directory")->required();
  train_cmd->add_option("--seed", o.seed, "Overrides train.seed");

  CLI::App* embed_cmd = app.add_subcommand("embed", "Write one q-vector per manifest line");
  embed_cmd->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  embed_cmd->add_option("--manifest", o.manifest, "Audio manifest (JSON lines)")->required();
  embed_cmd->add_option("--out", o.out, "Output JSON lines")->required();
  embed_cmd->add_option("--config", o.config, "Run config to check against the checkpoint");

  CLI::App* score_cmd = app.add_subcommand("score", "Cosine-score a trial list");
  score_cmd->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  score_cmd->add_option("--trials", o.trials, "Trial list: label enroll test")->required();
  score_cmd->add_option("--out", o.out, "Scores file: score enroll test")->required();
  score_cmd->add_option("--config", o.config, "Run config to check against the checkpoint");
  score_cmd->add_flag("--with-labels", o.with_labels, "Append the trial label to each line");

  CLI::App* eer_cmd = app.add_subcommand("eer", "Equal error rate of a scores file");
  eer_cmd->add_option("--scores", o.scores, "Scores file")->required();
  eer_cmd->add_option("--trials", o.trials, "Trial list supplying labels");

  CLI::App* inspect_cmd = app.add_subcommand("inspect", "Summarize a checkpoint");
  inspect_cmd->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(o, out);
    if (embed_cmd->parsed()) return cmd_embed(o);
    if (score_cmd->parsed()) return cmd_score(o);
    if (eer_cmd->parsed()) return cmd_eer(o, out);
    if (inspect_cmd->parsed()) return cmd_inspect(o, out);
  } catch (const Error& e) {
    err << "qvec: " << to_string(e.code()) << ": " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "qvec: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace qvec::cli
