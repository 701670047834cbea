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

#include "flog/window_builder.h"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "flog/common.h"

namespace flog {

void WindowConfig::validate() const {
  if (window_seconds < 1) throw ConfigError("window_seconds", "must be >= 1");
  if (step_seconds < 1) throw ConfigError("step_seconds", "must be >= 1");
  if (step_seconds > window_seconds) {
    throw ConfigError("step_seconds", "must not exceed window_seconds");
  }
  if (min_logs_per_window < 1) {
    throw ConfigError("min_logs_per_window", "must be >= 1");
  }
  if (max_sequence_length < 1) {
    throw ConfigError("max_sequence_length", "must be >= 1");
  }
}

std::vector<WindowSequence> build_windows(std::span<const LogRecord> records,
                                          const WindowConfig& cfg) {
  std::vector<WindowSequence> out;
  if (records.empty()) return out;
  const int64_t t0 = records.front().timestamp;
  const int64_t t_last = records.back().timestamp;

  size_t lo = 0;  // first record with timestamp >= start
  size_t hi = 0;  // first record with timestamp >= start + window
  for (int64_t start = t0; start <= t_last; start += cfg.step_seconds) {
    const int64_t end = start + cfg.window_seconds;
    while (lo < records.size() && records[lo].timestamp < start) ++lo;
    if (hi < lo) hi = lo;
    while (hi < records.size() && records[hi].timestamp < end) ++hi;
    const size_t count = hi - lo;
    if (count < static_cast<size_t>(cfg.min_logs_per_window)) continue;

    WindowSequence w;
    w.node_id = records[lo].node_id;
    w.start_time = start;
    const size_t keep =
        std::min(count, static_cast<size_t>(cfg.max_sequence_length));
    w.key_ids.reserve(keep);
    for (size_t i = lo; i < hi; ++i) {
      if (records[i].is_anomalous) w.label = 1;
      if (i >= hi - keep) w.key_ids.push_back(records[i].event_id);
    }
    out.push_back(std::move(w));
  }
  return out;
}

WindowSplit split_chronologically(std::span<const WindowSequence> node_windows,
                                  double test_fraction) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw ContractError("split_chronologically: test_fraction outside [0, 1)");
  }
  const auto n = node_windows.size();
  const auto n_train = static_cast<size_t>(
      std::floor((1.0 - test_fraction) * static_cast<double>(n)));
  WindowSplit split;
  split.train.assign(node_windows.begin(), node_windows.begin() + n_train);
  split.test.assign(node_windows.begin() + n_train, node_windows.end());
  return split;
}

void write_windows(std::ostream& out, std::span<const WindowSequence> windows) {
  for (const auto& w : windows) {
    out << w.node_id << '\t' << w.start_time << '\t' << w.label << '\t';
    for (size_t i = 0; i < w.key_ids.size(); ++i) {
      if (i) out << ' ';
      out << w.key_ids[i];
    }
    out << '\n';
  }
}

std::vector<WindowSequence> read_windows(std::istream& in) {
  std::vector<WindowSequence> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    WindowSequence w;
    std::string keys;
    if (!std::getline(row, w.node_id, '\t') || !(row >> w.start_time) ||
        !(row >> w.label)) {
      throw std::runtime_error("window dump: malformed row: " + line);
    }
    row.ignore(1, '\t');
    std::getline(row, keys);
    std::istringstream ks(keys);
    for (EventId id; ks >> id;) w.key_ids.push_back(id);
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace flog
