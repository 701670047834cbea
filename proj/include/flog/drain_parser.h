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

// Online log template mining with a fixed-depth prefix tree.
//
// Messages are routed root -> token count -> first (depth - 2) tokens -> leaf.
// Each leaf keeps a list of templates; a message joins the most similar one
// when the position-wise match ratio reaches the threshold, and otherwise
// founds a new template. Differing positions collapse to the wildcard "<*>".

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace flog {

inline constexpr std::string_view kWildcard = "<*>";

struct ParserConfig {
  int tree_depth = 4;
  double similarity_threshold = 0.4;
  int max_children = 100;
  bool mask_numeric_tokens = true;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

using EventId = int32_t;

struct LogTemplate {
  EventId event_id = 0;
  std::vector<std::string> tokens;
  int64_t occurrence_count = 0;

  std::string text() const;
};

// One row of the exported template table.
struct TemplateRow {
  EventId event_id;
  std::string template_text;
  int64_t count;

  bool operator==(const TemplateRow&) const = default;
};

using TemplateTable = std::vector<TemplateRow>;

// One parsed log line.
struct LogRecord {
  int64_t timestamp = 0;
  std::string node_id;
  bool is_anomalous = false;
  EventId event_id = 0;
  uint64_t raw_content_hash = 0;  // FNV-1a of the raw message

  bool operator==(const LogRecord&) const = default;
};

// Whitespace split; digit-bearing tokens become "<*>" when masking is on.
std::vector<std::string> preprocess_line(std::string_view raw_line,
                                         const ParserConfig& config);

// Fraction of positions where a[i] == b[i] or b[i] is the wildcard.
// Throws ContractError when the lengths differ.
double seq_similarity(std::span<const std::string> a,
                      std::span<const std::string> b);

class DrainParser {
 public:
  explicit DrainParser(ParserConfig config = {});
  ~DrainParser();
  DrainParser(DrainParser&&) noexcept;
  DrainParser& operator=(DrainParser&&) noexcept;

  // Routes `tokens` through the tree and returns the matched (possibly
  // generalized) or newly created template. Event ids are dense and assigned
  // in first-seen order. Throws ContractError on an empty token list.
  const LogTemplate& parse(std::span<const std::string> tokens);

  // Convenience: preprocess + parse. Returns -1 for an empty line.
  EventId parse_message(std::string_view message);

  const LogTemplate& get(EventId id) const { return templates_.at(id); }
  size_t size() const { return templates_.size(); }
  const ParserConfig& config() const { return config_; }

  // Snapshot ordered by event id.
  TemplateTable export_templates() const;

 private:
  struct Node;

  ParserConfig config_;
  std::unique_ptr<Node> root_;
  std::vector<LogTemplate> templates_;
};

// Template table TSV: header "event_id\ttemplate\tcount", one row each.
void write_template_table(std::ostream& out, const TemplateTable& table);
TemplateTable read_template_table(std::istream& in);

}  // namespace flog
