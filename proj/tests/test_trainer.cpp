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

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "qvec/error.hpp"
#include "qvec/optim.hpp"
#include "qvec/serial.hpp"
#include "qvec/trainer.hpp"
#include "support.hpp"

using namespace qvec;
using qvec::testing::Corpus;
using qvec::testing::make_corpus;
using qvec::testing::TempDir;

namespace {

ErrorCode error_of(auto&& fn, std::string* message = nullptr) {
  try {
    fn();
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kArgument;
}

SpeakerNetConfig tiny_model() {
  SpeakerNetConfig c = SpeakerNetConfig::medium(0);
  c.channels = 16;
  c.epilogue_channels = 32;
  c.decoder_dims = {16};
  c.dropout = 0.0;
  return c;
}

// Full-batch steps keep the batch-norm statistics fixed across epochs, and a
// soft scale keeps the loss surface smooth enough for a monotone trace.
TrainConfig overfit_train() {
  TrainConfig t;
  t.epochs = 30;
  t.batch_size = 32;
  t.lr0 = 0.05;
  t.momentum = 0.5;
  t.aam.scale = 5.0;
  t.seed = 1;
  return t;
}

TrainConfig tiny_train(std::size_t epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 8;
  t.lr0 = 0.05;
  t.seed = 1;
  return t;
}

std::vector<ManifestEntry> entries_for(std::size_t speakers, const std::vector<std::size_t>& counts) {
  std::vector<ManifestEntry> out;
  for (std::size_t s = 0; s < speakers; ++s)
    for (std::size_t u = 0; u < counts[s]; ++u)
      out.push_back({"s" + std::to_string(s) + "_" + std::to_string(u) + ".wav", "spk" + std::to_string(s), {}});
  return out;
}

// Shared 3-speaker corpus for the slower tests.
const Corpus& small_corpus() {
  static TempDir dir;
  static const Corpus corpus = make_corpus(dir.path(), 3, 10, 2.0, 4.0, 7);
  return corpus;
}

void rewrite_header(const std::filesystem::path& path, const std::function<void(nlohmann::json&)>& edit) {
  auto bytes = serial::read_file(path);
  const std::uint64_t len = serial::get_u64(bytes.data() + 12);
  auto header = nlohmann::json::parse(bytes.begin() + 20, bytes.begin() + 20 + static_cast<long>(len));
  edit(header);
  const std::string text = header.dump();
  std::vector<unsigned char> out(bytes.begin(), bytes.begin() + 12);
  serial::put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), bytes.begin() + 20 + static_cast<long>(len), bytes.end());
  serial::write_file(path, out);
}

}  // namespace

TEST_CASE("manifest round trip and errors") {
  TempDir dir;
  const std::vector<ManifestEntry> entries{{"a.wav", "x", 2.5}, {"b c.wav", "y", std::nullopt}};
  write_manifest(dir / "m.jsonl", entries);
  const auto back = read_manifest(dir / "m.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0].audio_filepath == "a.wav");
  CHECK(back[0].duration == 2.5);
  CHECK(back[1].label == "y");
  CHECK_FALSE(back[1].duration.has_value());

  std::string msg;
  std::ofstream(dir / "bad.jsonl") << R"({"audio_filepath": "a.wav", "label": "x"})" << "\n\n"
                                   << R"({"audio_filepath": "b.wav"})" << "\n";
  CHECK(error_of([&] { read_manifest(dir / "bad.jsonl"); }, &msg) == ErrorCode::kParse);
  CHECK(msg.find("bad.jsonl:3") != std::string::npos);
  std::ofstream(dir / "empty_label.jsonl") << R"({"audio_filepath": "a.wav", "label": ""})" << "\n";
  CHECK(error_of([&] { read_manifest(dir / "empty_label.jsonl"); }) == ErrorCode::kParse);
  std::ofstream(dir / "garbage.jsonl") << "{nope\n";
  CHECK(error_of([&] { read_manifest(dir / "garbage.jsonl"); }) == ErrorCode::kParse);
  CHECK(error_of([&] { read_manifest(dir / "missing.jsonl"); }) == ErrorCode::kIo);
}

TEST_CASE("validation split per speaker") {
  const auto entries = entries_for(3, {10, 4, 21});
  const Split s = split_validation(entries, 0.1, 5);
  std::map<std::string, int> val_count, train_count;
  for (const auto& e : s.validation) ++val_count[e.label];
  for (const auto& e : s.train) ++train_count[e.label];
  CHECK(val_count["spk0"] == 1);
  CHECK(train_count["spk0"] == 9);
  CHECK(val_count["spk1"] == 1);
  CHECK(val_count["spk2"] == 3);
  CHECK(train_count.size() == val_count.size());

  std::set<std::string> all, seen;
  for (const auto& e : entries) all.insert(e.audio_filepath);
  for (const auto& e : s.train) CHECK(seen.insert(e.audio_filepath).second);
  for (const auto& e : s.validation) CHECK(seen.insert(e.audio_filepath).second);
  CHECK(seen == all);

  const Split again = split_validation(entries, 0.1, 5);
  CHECK(again.validation.size() == s.validation.size());
  for (std::size_t i = 0; i < s.validation.size(); ++i)
    CHECK(again.validation[i].audio_filepath == s.validation[i].audio_filepath);

  const Split none = split_validation(entries, 0.0, 5);
  CHECK(none.validation.empty());
  CHECK(none.train.size() == entries.size());

  // 0.1 * 30 is not exactly 3 in binary floating point.
  const Split thirty = split_validation(entries_for(2, {30, 30}), 0.1, 1);
  CHECK(thirty.validation.size() == 6);

  std::string msg;
  CHECK(error_of([&] { split_validation(entries_for(2, {5, 1}), 0.1, 0); }, &msg) == ErrorCode::kSplit);
  CHECK(msg.find("spk1") != std::string::npos);
  CHECK_NOTHROW(split_validation(entries_for(2, {5, 1}), 0.0, 0));
}

TEST_CASE("train config validation") {
  CHECK_NOTHROW(TrainConfig{}.validate());
  TrainConfig t;
  t.epochs = 0;
  CHECK(error_of([&] { t.validate(); }) == ErrorCode::kConfig);
  t = {};
  t.batch_size = 1;
  CHECK(error_of([&] { t.validate(); }) == ErrorCode::kConfig);
  t = {};
  t.max_chunk_seconds = 0;
  CHECK(error_of([&] { t.validate(); }) == ErrorCode::kConfig);
}

TEST_CASE("metrics CSV format") {
  CHECK(metrics_csv_header() == "epoch,lr,train_loss,train_acc,val_acc");
  CHECK(metrics_csv_row({3, 0.006, 1.5, 0.25, 0.5}) == "3,0.006,1.500000,0.250000,0.500000");
  CHECK(metrics_csv_row({1, 0.0, 2.0, 1.0, std::nullopt}) == "1,0,2.000000,1.000000,");
}

TEST_CASE("checkpoint round trip is bit-exact and validated") {
  TempDir dir;
  SpeakerNetConfig mc = tiny_model();
  mc.n_speakers = 4;
  ModelState state(mc, FeatureConfig{}, {"a", "b", "c", "d"}, 3);
  state.epoch = 12;
  state.rng_state = "123 456";
  std::mt19937_64 rng(1);
  for (auto& [name, t] : state.net.buffers())
    for (float& v : t->data()) v = std::uniform_real_distribution<float>(0.5f, 2.0f)(rng);
  save_checkpoint(state, dir / "m.ckpt");

  ModelState back = load_checkpoint(dir / "m.ckpt");
  CHECK(back.model == state.model);
  CHECK(back.features == state.features);
  CHECK(back.labels == state.labels);
  CHECK(back.epoch == 12);
  CHECK(back.rng_state == "123 456");
  auto a = state.net.parameters(), b = back.net.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i]->name == b[i]->name);
    REQUIRE(a[i]->value.numel() == b[i]->value.numel());
    CHECK(std::memcmp(a[i]->value.ptr(), b[i]->value.ptr(), 4 * a[i]->value.numel()) == 0);
  }
  auto ba = state.net.buffers(), bb = back.net.buffers();
  for (std::size_t i = 0; i < ba.size(); ++i) CHECK(*ba[i].second == *bb[i].second);

  save_checkpoint(back, dir / "again.ckpt");
  CHECK(serial::read_file(dir / "m.ckpt") == serial::read_file(dir / "again.ckpt"));

  SpeakerNetConfig other = mc;
  other.n_speakers = 9;
  std::string msg;
  CHECK(error_of([&] { load_checkpoint(dir / "m.ckpt", &other); }, &msg) == ErrorCode::kMismatch);
  CHECK(msg.find("n_speakers") != std::string::npos);
  other.n_speakers = 0;
  CHECK_NOTHROW(load_checkpoint(dir / "m.ckpt", &other));
  other.channels = 8;
  CHECK(error_of([&] { load_checkpoint(dir / "m.ckpt", &other); }) == ErrorCode::kMismatch);

  std::filesystem::copy_file(dir / "m.ckpt", dir / "count.ckpt");
  rewrite_header(dir / "count.ckpt", [](nlohmann::json& h) { h["tensor_count"] = h["tensor_count"].get<int>() + 1; });
  CHECK(error_of([&] { load_checkpoint(dir / "count.ckpt"); }) == ErrorCode::kCorruptCheckpoint);

  std::filesystem::copy_file(dir / "m.ckpt", dir / "shape.ckpt");
  rewrite_header(dir / "shape.ckpt", [](nlohmann::json& h) { h["tensors"][0]["shape"] = {1, 2}; });
  CHECK(error_of([&] { load_checkpoint(dir / "shape.ckpt"); }) == ErrorCode::kCorruptCheckpoint);

  auto bytes = serial::read_file(dir / "m.ckpt");
  auto cut = bytes;
  cut.resize(cut.size() - 10);
  serial::write_file(dir / "cut.ckpt", cut);
  CHECK(error_of([&] { load_checkpoint(dir / "cut.ckpt"); }) == ErrorCode::kCorruptCheckpoint);
  cut.resize(30);
  serial::write_file(dir / "cut2.ckpt", cut);
  CHECK(error_of([&] { load_checkpoint(dir / "cut2.ckpt"); }) == ErrorCode::kCorruptCheckpoint);

  auto magic = bytes;
  magic[0] = 'X';
  serial::write_file(dir / "magic.ckpt", magic);
  CHECK(error_of([&] { load_checkpoint(dir / "magic.ckpt"); }) == ErrorCode::kIncompatibleCheckpoint);
  auto version = bytes;
  version[8] = 99;
  serial::write_file(dir / "version.ckpt", version);
  CHECK(error_of([&] { load_checkpoint(dir / "version.ckpt"); }) == ErrorCode::kIncompatibleCheckpoint);
}

TEST_CASE("toy run overfits, follows the schedule and keeps splits apart") {
  const Corpus& corpus = small_corpus();
  const TrainConfig cfg = overfit_train();
  std::vector<StepRecord> steps;
  TrainHooks hooks;
  hooks.on_batch = [&](const StepRecord& r) { steps.push_back(r); };
  const TrainResult r = train(tiny_model(), FeatureConfig{}, cfg, AugmentPolicy{}, corpus.entries, std::nullopt, hooks);

  REQUIRE(r.metrics.size() == 30);
  CHECK(r.metrics.back().train_acc >= 0.95);
  CHECK(r.last.model.n_speakers == 3);
  CHECK(r.last.labels == std::vector<std::string>{"spk00", "spk01", "spk02"});
  CHECK(r.last.epoch == 30);
  for (std::size_t e = 5; e < r.metrics.size(); ++e) {
    INFO("epoch " << e + 1);
    CHECK(r.metrics[e].train_loss < r.metrics[e - 1].train_loss + 1e-3);
  }

  const Split split = split_validation(corpus.entries, cfg.val_fraction, cfg.seed);
  std::set<std::string> train_paths, val_paths;
  for (const auto& e : split.train) train_paths.insert(e.audio_filepath);
  for (const auto& e : split.validation) val_paths.insert(e.audio_filepath);
  const std::size_t per_epoch = (split.train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = per_epoch * cfg.epochs;
  std::size_t train_batches = 0;
  for (const StepRecord& s : steps) {
    for (const auto& p : s.paths) REQUIRE((s.validation ? val_paths : train_paths).count(p) == 1);
    if (s.validation) continue;
    REQUIRE(std::abs(s.lr - cosine_annealing_lr(s.step, total, cfg.lr0, cfg.lr_min)) < 1e-12);
    REQUIRE(s.step == train_batches);
    ++train_batches;
  }
  CHECK(train_batches == total);

  // Best by validation accuracy, earliest on ties.
  std::size_t best = 0;
  for (std::size_t e = 0; e < r.metrics.size(); ++e)
    if (*r.metrics[e].val_acc > *r.metrics[best].val_acc) best = e;
  CHECK(r.best.epoch == best + 1);
}

TEST_CASE("fixed seed reproduces metrics and chunk offsets") {
  const Corpus& corpus = small_corpus();
  TrainConfig cfg = tiny_train(3);
  cfg.max_chunk_seconds = 1.5;
  cfg.workers = 3;
  auto run = [&](std::size_t workers) {
    cfg.workers = workers;
    std::vector<StepRecord> steps;
    TrainHooks hooks;
    hooks.on_batch = [&](const StepRecord& s) { steps.push_back(s); };
    TrainResult r = train(tiny_model(), FeatureConfig{}, cfg, AugmentPolicy{}, corpus.entries, std::nullopt, hooks);
    return std::make_pair(std::move(r), std::move(steps));
  };
  auto [a, sa] = run(3);
  auto [b, sb] = run(1);
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) CHECK(metrics_csv_row(a.metrics[i]) == metrics_csv_row(b.metrics[i]));
  REQUIRE(sa.size() == sb.size());
  bool moved = false;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    CHECK(sa[i].paths == sb[i].paths);
    CHECK(sa[i].chunk_offsets == sb[i].chunk_offsets);
    for (std::size_t o : sa[i].chunk_offsets) moved = moved || o > 0;
  }
  CHECK(moved);
  // Offsets are redrawn each epoch.
  std::map<std::string, std::set<std::size_t>> offsets;
  for (const auto& s : sa)
    if (!s.validation)
      for (std::size_t i = 0; i < s.paths.size(); ++i) offsets[s.paths[i]].insert(s.chunk_offsets[i]);
  std::size_t varied = 0;
  for (const auto& [p, set] : offsets) varied += set.size() > 1;
  CHECK(varied > 0);
}

TEST_CASE("zero-margin AAM and CE on the cosine head give the same losses") {
  const Corpus& corpus = small_corpus();
  auto losses = [&](LossKind kind) {
    TrainConfig cfg = tiny_train(2);
    cfg.loss = kind;
    cfg.aam.margin = 0.0;
    std::vector<double> out;
    TrainHooks hooks;
    hooks.on_batch = [&](const StepRecord& s) {
      if (!s.validation) out.push_back(s.loss);
    };
    train(tiny_model(), FeatureConfig{}, cfg, AugmentPolicy{}, corpus.entries, std::nullopt, hooks);
    return out;
  };
  const auto aam = losses(LossKind::kAngularMargin);
  const auto ce = losses(LossKind::kCrossEntropy);
  REQUIRE(aam.size() == ce.size());
  for (std::size_t i = 0; i < aam.size(); ++i) CHECK(std::abs(aam[i] - ce[i]) < 1e-5);
}

TEST_CASE("augmentation with zero probability leaves training unchanged") {
  const Corpus& corpus = small_corpus();
  TempDir dir;
  write_wav(dir / "noise.wav", AudioSignal{qvec::testing::random_samples(8000, 3), kSampleRate});
  std::ofstream(dir / "noise.txt") << (dir / "noise.wav").string() << "\n";
  AugmentPolicy off;
  off.noise_manifest = (dir / "noise.txt").string();
  off.apply_prob = 0.0;
  const auto base = train(tiny_model(), FeatureConfig{}, tiny_train(2), AugmentPolicy{}, corpus.entries, std::nullopt);
  const auto zero = train(tiny_model(), FeatureConfig{}, tiny_train(2), off, corpus.entries, std::nullopt);
  for (std::size_t i = 0; i < base.metrics.size(); ++i)
    CHECK(metrics_csv_row(base.metrics[i]) == metrics_csv_row(zero.metrics[i]));
  TempDir out;
  save_checkpoint(base.last, out / "a.ckpt");
  save_checkpoint(zero.last, out / "b.ckpt");
  CHECK(serial::read_file(out / "a.ckpt") == serial::read_file(out / "b.ckpt"));

  AugmentPolicy on = off;
  on.apply_prob = 1.0;
  const auto noisy = train(tiny_model(), FeatureConfig{}, tiny_train(2), on, corpus.entries, std::nullopt);
  CHECK(metrics_csv_row(noisy.metrics[0]) != metrics_csv_row(base.metrics[0]));
}

TEST_CASE("training preconditions and divergence") {
  const Corpus& corpus = small_corpus();
  std::vector<ManifestEntry> one_speaker(corpus.entries.begin(), corpus.entries.begin() + 10);
  CHECK(error_of([&] { train(tiny_model(), FeatureConfig{}, tiny_train(1), {}, one_speaker, std::nullopt); }) ==
        ErrorCode::kArgument);

  SpeakerNetConfig wrong = tiny_model();
  wrong.n_speakers = 5;
  CHECK(error_of([&] { train(wrong, FeatureConfig{}, tiny_train(1), {}, corpus.entries, std::nullopt); }) ==
        ErrorCode::kConfig);

  std::vector<ManifestEntry> stranger{{corpus.entries[0].audio_filepath, "nobody", {}}};
  CHECK(error_of([&] { train(tiny_model(), FeatureConfig{}, tiny_train(1), {}, corpus.entries, stranger); }) ==
        ErrorCode::kArgument);

  auto broken = corpus.entries;
  broken[4].audio_filepath = "/nonexistent/file.wav";
  std::string msg;
  TrainConfig no_val = tiny_train(1);
  no_val.val_fraction = 0.0;
  CHECK(error_of([&] { train(tiny_model(), FeatureConfig{}, no_val, {}, broken, std::nullopt); }, &msg) ==
        ErrorCode::kIo);
  CHECK(msg.find("/nonexistent/file.wav") != std::string::npos);

  TrainConfig wild = tiny_train(3);
  wild.lr0 = 1e38;
  CHECK(error_of([&] { train(tiny_model(), FeatureConfig{}, wild, {}, corpus.entries, std::nullopt); }, &msg) ==
        ErrorCode::kNonFinite);
  CHECK(msg.find("epoch") != std::string::npos);
  CHECK(msg.find("batch") != std::string::npos);
  CHECK(msg.find("lr") != std::string::npos);
}
