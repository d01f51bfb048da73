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

#include "qvec/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "qvec/error.hpp"
#include "qvec/optim.hpp"

namespace qvec {
namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream per (seed, a, b, c).
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                       std::uint64_t c = 0) {
  return std::mt19937_64(splitmix(splitmix(splitmix(splitmix(seed) ^ a) ^ b) ^ c));
}

enum StreamTag : std::uint64_t { kShuffle = 1, kChunk = 2, kAugment = 3, kDropout = 4 };

struct PreparedItem {
  FeatureMatrix features;
  std::size_t chunk_offset = 0;
};

struct PreparedBatch {
  Tensor<float> inputs;  // B x Tmax x dims
  std::vector<std::size_t> lengths;
  std::vector<int> labels;
  std::vector<std::string> paths;
  std::vector<std::size_t> offsets;
};

template <typename F>
void parallel_for(std::size_t n, std::size_t workers, F&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += workers) fn(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

PreparedBatch assemble(std::vector<PreparedItem> items, std::vector<int> labels,
                       std::vector<std::string> paths) {
  PreparedBatch batch;
  std::size_t tmax = 0, dims = 0;
  for (const auto& it : items) {
    tmax = std::max(tmax, it.features.frames);
    dims = it.features.dims;
  }
  batch.inputs = Tensor<float>(Shape{items.size(), tmax, dims});
  for (std::size_t b = 0; b < items.size(); ++b) {
    const FeatureMatrix& f = items[b].features;
    float* dst = batch.inputs.ptr() + b * tmax * dims;
    for (std::size_t i = 0; i < f.values.size(); ++i) dst[i] = static_cast<float>(f.values[i]);
    batch.lengths.push_back(f.frames);
    batch.offsets.push_back(items[b].chunk_offset);
  }
  batch.labels = std::move(labels);
  batch.paths = std::move(paths);
  return batch;
}

std::size_t argmax_row(const Tensor<float>& scores, std::size_t row) {
  const std::size_t n = scores.dim(1);
  const float* r = scores.ptr() + row * n;
  return static_cast<std::size_t>(std::max_element(r, r + n) - r);
}

std::string format_double(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

}  // namespace

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open manifest: " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(number);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      fail(ErrorCode::kParse, where + ": invalid JSON");
    }
    if (!j.is_object() || !j.contains("audio_filepath") || !j["audio_filepath"].is_string() ||
        !j.contains("label") || !j["label"].is_string()) {
      fail(ErrorCode::kParse, where + ": need string keys audio_filepath and label");
    }
    ManifestEntry e{j["audio_filepath"].get<std::string>(), j["label"].get<std::string>(), {}};
    if (e.audio_filepath.empty() || e.label.empty()) {
      fail(ErrorCode::kParse, where + ": audio_filepath and label must be nonempty");
    }
    if (j.contains("duration") && !j["duration"].is_null()) {
      if (!j["duration"].is_number()) fail(ErrorCode::kParse, where + ": duration must be a number");
      e.duration = j["duration"].get<double>();
    }
    out.push_back(std::move(e));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write manifest: " + path.string());
  for (const ManifestEntry& e : entries) {
    nlohmann::json j = {{"audio_filepath", e.audio_filepath}, {"label", e.label}};
    if (e.duration) j["duration"] = *e.duration;
    out << j.dump() << '\n';
  }
}

void TrainConfig::validate() const {
  auto bad = [](const std::string& field, const std::string& why) {
    fail(ErrorCode::kConfig, "train." + field + ": " + why);
  };
  if (epochs < 1) bad("epochs", "must be >= 1");
  if (batch_size < 2) bad("batch_size", "must be >= 2 for batch norm");
  if (!(lr_min >= 0.0)) bad("lr_min", "must be >= 0");
  if (!(lr0 >= lr_min)) bad("lr0", "must be >= lr_min");
  if (!(momentum >= 0.0 && momentum < 1.0)) bad("momentum", "must be in [0, 1)");
  if (!(weight_decay >= 0.0)) bad("weight_decay", "must be >= 0");
  if (!(max_chunk_seconds > 0.0)) bad("max_chunk_seconds", "must be positive");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) bad("val_fraction", "must be in [0, 1)");
  if (workers < 1) bad("workers", "must be >= 1");
  aam.validate();
}

Split split_validation(const std::vector<ManifestEntry>& entries, double fraction,
                       std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    fail(ErrorCode::kArgument, "validation fraction must be in [0, 1)");
  }
  std::vector<std::string> speakers;
  std::map<std::string, std::vector<std::size_t>> by_speaker;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& list = by_speaker[entries[i].label];
    if (list.empty()) speakers.push_back(entries[i].label);
    list.push_back(i);
  }
  std::vector<bool> held_out(entries.size(), false);
  if (fraction > 0.0) {
    std::mt19937_64 rng(splitmix(seed));
    for (const std::string& spk : speakers) {
      std::vector<std::size_t> idx = by_speaker[spk];
      if (idx.size() < 2) {
        fail(ErrorCode::kSplit, "speaker \"" + spk + "\" has " + std::to_string(idx.size()) +
                                    " utterance; validation split needs at least 2");
      }
      auto take = static_cast<std::size_t>(
          std::ceil(fraction * static_cast<double>(idx.size()) - 1e-9));
      take = std::min(take, idx.size() - 1);
      std::shuffle(idx.begin(), idx.end(), rng);
      for (std::size_t k = 0; k < take; ++k) held_out[idx[k]] = true;
    }
  }
  Split split;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    (held_out[i] ? split.validation : split.train).push_back(entries[i]);
  }
  return split;
}

ModelState::ModelState(SpeakerNetConfig model_cfg, FeatureConfig feature_cfg,
                       std::vector<std::string> label_list, std::uint64_t seed)
    : model(model_cfg),
      features(feature_cfg),
      labels(std::move(label_list)),
      net(std::move(model_cfg), seed) {}

std::string metrics_csv_header() { return "epoch,lr,train_loss,train_acc,val_acc"; }

std::string metrics_csv_row(const EpochMetrics& m) {
  return std::to_string(m.epoch) + "," + format_double("%.9g", m.lr) + "," +
         format_double("%.6f", m.train_loss) + "," + format_double("%.6f", m.train_acc) + "," +
         (m.val_acc ? format_double("%.6f", *m.val_acc) : std::string());
}

TrainResult train(SpeakerNetConfig model_cfg, const FeatureConfig& feature_cfg,
                  const TrainConfig& cfg, const AugmentPolicy& augment,
                  const std::vector<ManifestEntry>& train_entries,
                  const std::optional<std::vector<ManifestEntry>>& val_entries,
                  const TrainHooks& hooks) {
  cfg.validate();
  feature_cfg.validate();

  std::vector<ManifestEntry> train_set, val_set;
  if (val_entries) {
    train_set = train_entries;
    val_set = *val_entries;
  } else {
    Split split = split_validation(train_entries, cfg.val_fraction, cfg.seed);
    train_set = std::move(split.train);
    val_set = std::move(split.validation);
  }

  std::set<std::string> label_set;
  for (const auto& e : train_set) label_set.insert(e.label);
  std::vector<std::string> labels(label_set.begin(), label_set.end());
  if (labels.size() < 2) {
    fail(ErrorCode::kArgument, "training needs at least 2 speakers, found " +
                                   std::to_string(labels.size()));
  }
  if (model_cfg.n_speakers != 0 && model_cfg.n_speakers != labels.size()) {
    fail(ErrorCode::kConfig, "model.n_speakers: config says " +
                                 std::to_string(model_cfg.n_speakers) + " but the manifest has " +
                                 std::to_string(labels.size()) + " speakers");
  }
  model_cfg.n_speakers = labels.size();
  std::map<std::string, int> label_index;
  for (std::size_t i = 0; i < labels.size(); ++i) label_index[labels[i]] = static_cast<int>(i);
  auto index_of = [&](const ManifestEntry& e) {
    auto it = label_index.find(e.label);
    if (it == label_index.end()) {
      fail(ErrorCode::kArgument, "validation speaker \"" + e.label + "\" (" + e.audio_filepath +
                                     ") is not in the training set");
    }
    return it->second;
  };
  for (const auto& e : val_set) index_of(e);

  ModelState state(model_cfg, feature_cfg, labels, cfg.seed);
  const FeatureExtractor extractor(feature_cfg);
  const Augmenter augmenter(augment);
  SpeakerNet<float>& net = state.net;
  auto params = net.parameters();
  Sgd<float> optimizer(cfg.momentum, cfg.weight_decay);

  const std::size_t steps_per_epoch = (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * steps_per_epoch;
  const std::size_t max_samples =
      static_cast<std::size_t>(std::llround(cfg.max_chunk_seconds * kSampleRate));

  auto prepare_train = [&](std::size_t epoch, const std::vector<std::size_t>& ids) {
    std::vector<PreparedItem> items(ids.size());
    parallel_for(ids.size(), cfg.workers, [&](std::size_t i) {
      const ManifestEntry& e = train_set[ids[i]];
      try {
        AudioSignal signal = load_wav(e.audio_filepath);
        std::mt19937_64 chunk_rng = stream(cfg.seed, kChunk, epoch, ids[i]);
        signal = random_chunk(signal, cfg.max_chunk_seconds, chunk_rng, items[i].chunk_offset);
        std::mt19937_64 aug_rng = stream(cfg.seed, kAugment, epoch, ids[i]);
        signal = augmenter.apply(signal, aug_rng);
        items[i].features = extractor.extract(signal);
      } catch (const Error& err) {
        throw Error(err.code(), e.audio_filepath + ": " + err.what());
      }
    });
    std::vector<int> y;
    std::vector<std::string> paths;
    for (std::size_t id : ids) {
      y.push_back(index_of(train_set[id]));
      paths.push_back(train_set[id].audio_filepath);
    }
    return assemble(std::move(items), std::move(y), std::move(paths));
  };

  auto prepare_val = [&](const std::vector<std::size_t>& ids) {
    std::vector<PreparedItem> items(ids.size());
    parallel_for(ids.size(), cfg.workers, [&](std::size_t i) {
      const ManifestEntry& e = val_set[ids[i]];
      try {
        AudioSignal signal = load_wav(e.audio_filepath);
        // Deterministic: the leading max_chunk_seconds.
        if (signal.samples.size() > max_samples) signal.samples.resize(max_samples);
        items[i].features = extractor.extract(signal);
      } catch (const Error& err) {
        throw Error(err.code(), e.audio_filepath + ": " + err.what());
      }
    });
    std::vector<int> y;
    std::vector<std::string> paths;
    for (std::size_t id : ids) {
      y.push_back(index_of(val_set[id]));
      paths.push_back(val_set[id].audio_filepath);
    }
    return assemble(std::move(items), std::move(y), std::move(paths));
  };

  TrainResult result{state, state, {}};
  double best_score = -std::numeric_limits<double>::infinity();
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng = stream(cfg.seed, kShuffle, epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < order.size(); i += cfg.batch_size) {
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                           order.begin() + static_cast<std::ptrdiff_t>(
                                               std::min(order.size(), i + cfg.batch_size)));
    }

    double loss_sum = 0.0, lr = cfg.lr0;
    std::size_t seen = 0, correct = 0;
    // One batch of lookahead; batches are consumed strictly in order.
    std::future<PreparedBatch> next =
        std::async(std::launch::async, prepare_train, epoch, batches.front());
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      PreparedBatch batch = next.get();
      if (bi + 1 < batches.size()) {
        next = std::async(std::launch::async, prepare_train, epoch, batches[bi + 1]);
      }
      lr = cosine_annealing_lr(step, total_steps, cfg.lr0, cfg.lr_min);

      Tape<float> tape;
      Var<float> x = tape.constant(std::move(batch.inputs));
      std::mt19937_64 drop_rng = stream(cfg.seed, kDropout, epoch, bi);
      auto out = net.forward_train(tape, x, batch.lengths, drop_rng);
      Var<float> loss = head_loss(out.scores, batch.labels, cfg.loss, net.config().cosine_head,
                                  cfg.aam);
      auto diverged = [&](const std::string& what) {
        fail(ErrorCode::kNonFinite, what + " at epoch " + std::to_string(epoch) + ", batch " +
                                        std::to_string(bi) + ", lr " + format_double("%.9g", lr));
      };
      const double loss_value = loss.value()[0];
      if (!std::isfinite(loss_value)) diverged("non-finite loss");
      zero_grads<float>(params);
      tape.backward(loss);
      optimizer.step(params, lr);
      for (const Parameter<float>* p : params) {
        for (float v : p->value.data()) {
          if (!std::isfinite(v)) diverged("non-finite weights in " + p->name);
        }
      }

      const Tensor<float>& scores = out.scores.value();
      for (std::size_t b = 0; b < batch.labels.size(); ++b) {
        correct += argmax_row(scores, b) == static_cast<std::size_t>(batch.labels[b]);
      }
      loss_sum += loss_value * static_cast<double>(batch.labels.size());
      seen += batch.labels.size();
      if (hooks.on_batch) {
        hooks.on_batch({epoch, step, lr, loss_value, false, batch.paths, batch.offsets});
      }
      ++step;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(seen);
    m.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    if (!val_set.empty()) {
      std::size_t val_correct = 0;
      for (std::size_t i = 0; i < val_set.size(); i += cfg.batch_size) {
        std::vector<std::size_t> ids(std::min(cfg.batch_size, val_set.size() - i));
        std::iota(ids.begin(), ids.end(), i);
        PreparedBatch batch = prepare_val(ids);
        Tape<float> tape;
        auto out = net.forward_eval(tape, tape.constant(std::move(batch.inputs)), batch.lengths);
        for (std::size_t b = 0; b < batch.labels.size(); ++b) {
          val_correct +=
              argmax_row(out.scores.value(), b) == static_cast<std::size_t>(batch.labels[b]);
        }
        if (hooks.on_batch) hooks.on_batch({epoch, 0, lr, 0.0, true, batch.paths, batch.offsets});
      }
      m.val_acc = static_cast<double>(val_correct) / static_cast<double>(val_set.size());
    }
    result.metrics.push_back(m);
    spdlog::info("epoch {}/{} lr={:.6g} loss={:.4f} acc={:.4f}{}", epoch, cfg.epochs, m.lr,
                 m.train_loss, m.train_acc,
                 m.val_acc ? fmt::format(" val_acc={:.4f}", *m.val_acc) : std::string());

    state.epoch = epoch;
    std::ostringstream rs;
    rs << shuffle_rng;
    state.rng_state = rs.str();
    // Best by validation accuracy, or by training loss without a validation set.
    const double score = m.val_acc ? *m.val_acc : -m.train_loss;
    if (score > best_score) {
      best_score = score;
      result.best = state;
    }
    if (hooks.on_epoch) hooks.on_epoch(m);
  }
  result.last = std::move(state);
  return result;
}

}  // namespace qvec
