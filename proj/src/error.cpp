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

#include "qvec/error.hpp"

namespace qvec {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kArgument: return "argument";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kUnsupportedRate: return "unsupported-rate";
    case ErrorCode::kUnsupportedChannels: return "unsupported-channels";
    case ErrorCode::kUnsupportedEncoding: return "unsupported-encoding";
    case ErrorCode::kTooShort: return "too-short";
    case ErrorCode::kDegenerateBatch: return "degenerate-batch";
    case ErrorCode::kDegenerateNorm: return "degenerate-norm";
    case ErrorCode::kDegenerateInput: return "degenerate-input";
    case ErrorCode::kSchedule: return "schedule";
    case ErrorCode::kSplit: return "split";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kMetric: return "metric";
    case ErrorCode::kNonFinite: return "non-finite";
    case ErrorCode::kIncompatibleCheckpoint: return "incompatible-checkpoint";
    case ErrorCode::kCorruptCheckpoint: return "corrupt-checkpoint";
    case ErrorCode::kMismatch: return "mismatch";
  }
  return "unknown";
}

}  // namespace qvec
