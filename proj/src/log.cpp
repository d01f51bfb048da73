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

#include "qvec/log.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>

namespace qvec {

void init_logging() {
  auto logger = spdlog::get("qvec");
  if (!logger) logger = spdlog::stderr_color_mt("qvec");
  logger->set_pattern("[%H:%M:%S.%e] [%l] %v");
  logger->set_level(spdlog::level::info);
  if (const char* env = std::getenv("QVEC_LOG")) {
    logger->set_level(spdlog::level::from_str(env));
  }
  spdlog::set_default_logger(logger);
}

}  // namespace qvec
