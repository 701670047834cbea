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
#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace flog {

enum class LogFormat { kThunderbird, kBgl };

std::string_view to_string(LogFormat format);
LogFormat parse_log_format(std::string_view name);

struct RawEntry {
  std::string label_field;
  int64_t epoch_seconds = 0;
  std::string node_id;
  // Message content starting at the component field, single-space joined.
  std::string message;

  // Hyphen means a non-alert line in both corpora; any other label is an alert.
  bool is_anomalous() const { return label_field != "-"; }

  bool operator==(const RawEntry&) const = default;
};

// Recoverable: callers count and skip malformed lines.
class LineParseError : public std::runtime_error {
 public:
  LineParseError(int64_t line_number, const std::string& what)
      : std::runtime_error("line " + std::to_string(line_number) + ": " + what),
        line_number_(line_number) {}
  int64_t line_number() const { return line_number_; }

 private:
  int64_t line_number_;
};

// Thunderbird: label epoch date node month day time location component ...
// BGL:         label epoch date node timestamp location system component ...
RawEntry decode_line(std::string_view line, LogFormat format,
                     int64_t line_number = 0);

// Inverse of decode_line for well-formed entries. Dates are rendered in UTC.
std::string encode_line(const RawEntry& entry, LogFormat format);

struct SyntheticSpec {
  int n_templates = 20;
  int n_nodes = 8;
  int64_t n_lines = 50'000;
  double anomaly_rate = 0.05;
  std::set<int> anomaly_template_ids = {17, 18, 19};
  uint64_t seed = 0;

  // Generator shape. Mean seconds between consecutive lines across all nodes.
  double mean_gap_seconds = 1.25;
  // Anomalous lines arrive in per-node bursts of this many lines.
  int burst_min = 3;
  int burst_max = 7;
  int64_t start_epoch = 1131566461;

  void validate() const;
};

// Deterministic given the seed. Normal lines follow a per-node walk on a fixed
// Markov chain over the normal templates; anomalous lines use the dedicated
// anomaly templates and carry a non-hyphen label.
std::vector<RawEntry> generate_synthetic(const SyntheticSpec& spec);

struct IngestResult {
  std::vector<RawEntry> entries;
  int64_t malformed_lines = 0;
  int64_t lines_read = 0;
};

// Reads at most `max_samples` well-formed entries (prefix cut in file order;
// 0 means no cap).
IngestResult read_log_file(const std::filesystem::path& path, LogFormat format,
                           int64_t max_samples = 0);

// Drops every node whose fraction of anomalous entries is below `min_rate`.
// A non-positive rate disables the filter. Returns the number of dropped nodes.
int64_t filter_nodes_by_anomaly_rate(std::vector<RawEntry>& entries,
                                     double min_rate);

}  // namespace flog
