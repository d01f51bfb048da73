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

#include "qvec/audio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "qvec/error.hpp"

namespace qvec {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_tag(std::vector<unsigned char>& out, const char* tag) {
  out.insert(out.end(), tag, tag + 4);
}

}  // namespace

AudioSignal load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open audio file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  const std::string where = " (" + path.string() + ")";
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    fail(ErrorCode::kFormat, "not a RIFF/WAVE file" + where);
  }

  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    std::size_t size = read_u32(chunk + 4);
    std::size_t body = pos + 8;
    // A truncated final data chunk is accepted up to the file end.
    std::size_t avail = std::min(size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) fail(ErrorCode::kFormat, "fmt chunk too small" + where);
      std::uint16_t format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
      if (format == kFormatExtensible && avail >= 26) {
        // The sub-format GUID starts with the plain format tag.
        format = read_u16(chunk + 8 + 24);
      }
      if (format != kFormatPcm) {
        fail(ErrorCode::kUnsupportedEncoding,
             "unsupported WAV encoding tag " + std::to_string(format) + where);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = avail;
    }
    pos = body + size + (size & 1);
  }

  if (!have_fmt) fail(ErrorCode::kFormat, "missing fmt chunk" + where);
  if (bits != 16) {
    fail(ErrorCode::kUnsupportedEncoding,
         "only 16-bit PCM is supported, got " + std::to_string(bits) + " bits" + where);
  }
  if (rate != static_cast<std::uint32_t>(kSampleRate)) {
    fail(ErrorCode::kUnsupportedRate,
         "sample rate " + std::to_string(rate) + " Hz is not 16000 Hz" + where);
  }
  if (channels != 1) {
    fail(ErrorCode::kUnsupportedChannels,
         std::to_string(channels) + " channels, expected mono" + where);
  }
  if (data == nullptr) fail(ErrorCode::kFormat, "missing data chunk" + where);

  AudioSignal signal;
  signal.sample_rate = kSampleRate;
  signal.samples.resize(data_size / 2);
  for (std::size_t i = 0; i < signal.samples.size(); ++i) {
    auto v = static_cast<std::int16_t>(read_u16(data + 2 * i));
    signal.samples[i] = static_cast<float>(v) / 32768.0f;
  }
  if (signal.samples.empty()) fail(ErrorCode::kFormat, "empty data chunk" + where);
  return signal;
}

void write_wav(const std::filesystem::path& path, const AudioSignal& signal) {
  const auto n = static_cast<std::uint32_t>(signal.samples.size());
  std::vector<unsigned char> out;
  out.reserve(44 + 2 * static_cast<std::size_t>(n));
  put_tag(out, "RIFF");
  put_u32(out, 36 + 2 * n);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(signal.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(signal.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  put_tag(out, "data");
  put_u32(out, 2 * n);
  for (float x : signal.samples) {
    long q = std::lround(static_cast<double>(x) * 32768.0);
    q = std::clamp(q, -32768L, 32767L);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) fail(ErrorCode::kIo, "cannot write audio file: " + path.string());
  file.write(reinterpret_cast<const char*>(out.data()),
             static_cast<std::streamsize>(out.size()));
  if (!file) fail(ErrorCode::kIo, "write failed: " + path.string());
}

AudioSignal random_chunk(const AudioSignal& signal, double max_seconds,
                         std::mt19937_64& rng, std::size_t& offset) {
  if (!(max_seconds > 0)) fail(ErrorCode::kArgument, "max_seconds must be positive");
  offset = 0;
  const auto window =
      static_cast<std::size_t>(std::llround(max_seconds * signal.sample_rate));
  if (signal.samples.size() <= window) return signal;
  std::uniform_int_distribution<std::size_t> start(0, signal.samples.size() - window);
  offset = start(rng);
  AudioSignal out;
  out.sample_rate = signal.sample_rate;
  out.samples.assign(signal.samples.begin() + static_cast<std::ptrdiff_t>(offset),
                     signal.samples.begin() + static_cast<std::ptrdiff_t>(offset + window));
  return out;
}

AudioSignal random_chunk(const AudioSignal& signal, double max_seconds,
                         std::mt19937_64& rng) {
  std::size_t offset = 0;
  return random_chunk(signal, max_seconds, rng, offset);
}

}  // namespace qvec
