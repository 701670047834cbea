// Copyright 2026 The Flog Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "flog/drain_parser.h"

namespace flog {

struct WindowConfig {
  int64_t window_seconds = 300;
  int64_t step_seconds = 60;
  int min_logs_per_window = 5;
  int max_sequence_length = 64;

  void validate() const;
};

struct WindowSequence {
  std::string node_id;
  int64_t start_time = 0;
  std::vector<EventId> key_ids;
  int label = 0;  // 1 iff any member record is anomalous

  bool operator==(const WindowSequence&) const = default;
};

// Sliding windows over one node's records. Starts are t0, t0 + step, ... with
// t0 the first timestamp; a window covers [start, start + window_seconds).
// Windows with fewer than min_logs_per_window records are dropped, and key
// lists keep only the most recent max_sequence_length ids.
// Precondition: records are sorted by timestamp and share one node_id.
std::vector<WindowSequence> build_windows(std::span<const LogRecord> records,
                                          const WindowConfig& cfg);

// Chronological per-node split: the first (1 - test_fraction) share of a
// node's windows trains, the remainder is held out.
struct WindowSplit {
  std::vector<WindowSequence> train;
  std::vector<WindowSequence> test;
};
WindowSplit split_chronologically(std::span<const WindowSequence> node_windows,
                                  double test_fraction);

// Window dump: node_id \t start_time \t label \t space-joined key ids.
void write_windows(std::ostream& out, std::span<const WindowSequence> windows);
std::vector<WindowSequence> read_windows(std::istream& in);

}  // namespace flog
