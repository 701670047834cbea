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

#include "flog/drain_parser.h"

#include <algorithm>
#include <cctype>
#include <istream>
#include <ostream>
#include <sstream>

#include "flog/common.h"

namespace flog {

void ParserConfig::validate() const {
  if (tree_depth < 2) throw ConfigError("tree_depth", "must be >= 2");
  if (!(similarity_threshold > 0.0 && similarity_threshold <= 1.0)) {
    throw ConfigError("similarity_threshold", "must lie in (0, 1]");
  }
  if (max_children < 1) throw ConfigError("max_children", "must be >= 1");
}

std::string LogTemplate::text() const {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::vector<std::string> preprocess_line(std::string_view raw_line,
                                         const ParserConfig& config) {
  std::vector<std::string> tokens;
  size_t i = 0;
  while (i < raw_line.size()) {
    while (i < raw_line.size() &&
           std::isspace(static_cast<unsigned char>(raw_line[i]))) {
      ++i;
    }
    size_t j = i;
    while (j < raw_line.size() &&
           !std::isspace(static_cast<unsigned char>(raw_line[j]))) {
      ++j;
    }
    if (j > i) {
      std::string_view tok = raw_line.substr(i, j - i);
      bool has_digit = std::any_of(tok.begin(), tok.end(), [](char c) {
        return std::isdigit(static_cast<unsigned char>(c));
      });
      if (config.mask_numeric_tokens && has_digit) {
        tokens.emplace_back(kWildcard);
      } else {
        tokens.emplace_back(tok);
      }
    }
    i = j;
  }
  return tokens;
}

double seq_similarity(std::span<const std::string> a,
                      std::span<const std::string> b) {
  if (a.size() != b.size()) {
    throw ContractError("seq_similarity: token lists differ in length");
  }
  if (a.empty()) return 1.0;
  size_t matches = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || b[i] == kWildcard) ++matches;
  }
  return static_cast<double>(matches) / static_cast<double>(a.size());
}

struct DrainParser::Node {
  std::map<std::string, std::unique_ptr<Node>, std::less<>> children;
  std::vector<EventId> clusters;  // populated on leaves only
};

DrainParser::DrainParser(ParserConfig config)
    : config_(config), root_(std::make_unique<Node>()) {
  config_.validate();
}

DrainParser::~DrainParser() = default;
DrainParser::DrainParser(DrainParser&&) noexcept = default;
DrainParser& DrainParser::operator=(DrainParser&&) noexcept = default;

const LogTemplate& DrainParser::parse(std::span<const std::string> tokens) {
  if (tokens.empty()) throw ContractError("parse: empty token list");

  auto child_for = [this](Node& node, const std::string& key) -> Node& {
    if (auto it = node.children.find(key); it != node.children.end()) {
      return *it->second;
    }
    const bool full =
        static_cast<int>(node.children.size()) >= config_.max_children;
    const std::string slot = full ? std::string(kWildcard) : key;
    auto& child = node.children[slot];
    if (!child) child = std::make_unique<Node>();
    return *child;
  };

  // Length level is never subject to max_children: lengths partition exactly.
  auto& by_length = root_->children[std::to_string(tokens.size())];
  if (!by_length) by_length = std::make_unique<Node>();
  Node* node = by_length.get();
  const size_t prefix_levels =
      std::min(tokens.size(), static_cast<size_t>(config_.tree_depth - 2));
  for (size_t level = 0; level < prefix_levels; ++level) {
    node = &child_for(*node, tokens[level]);
  }

  EventId best = -1;
  double best_sim = -1.0;
  for (EventId id : node->clusters) {
    double sim = seq_similarity(tokens, templates_[id].tokens);
    if (sim > best_sim) {
      best_sim = sim;
      best = id;
    }
  }

  if (best >= 0 && best_sim >= config_.similarity_threshold) {
    LogTemplate& tmpl = templates_[best];
    for (size_t i = 0; i < tokens.size(); ++i) {
      if (tmpl.tokens[i] != tokens[i]) tmpl.tokens[i] = std::string(kWildcard);
    }
    ++tmpl.occurrence_count;
    return tmpl;
  }

  LogTemplate fresh;
  fresh.event_id = static_cast<EventId>(templates_.size());
  fresh.tokens.assign(tokens.begin(), tokens.end());
  fresh.occurrence_count = 1;
  node->clusters.push_back(fresh.event_id);
  templates_.push_back(std::move(fresh));
  return templates_.back();
}

EventId DrainParser::parse_message(std::string_view message) {
  auto tokens = preprocess_line(message, config_);
  if (tokens.empty()) return -1;
  return parse(tokens).event_id;
}

TemplateTable DrainParser::export_templates() const {
  TemplateTable table;
  table.reserve(templates_.size());
  for (const auto& t : templates_) {
    table.push_back({t.event_id, t.text(), t.occurrence_count});
  }
  return table;
}

void write_template_table(std::ostream& out, const TemplateTable& table) {
  out << "event_id\ttemplate\tcount\n";
  for (const auto& row : table) {
    out << row.event_id << '\t' << row.template_text << '\t' << row.count
        << '\n';
  }
}

TemplateTable read_template_table(std::istream& in) {
  TemplateTable table;
  std::string line;
  if (!std::getline(in, line) || line != "event_id\ttemplate\tcount") {
    throw std::runtime_error("template table: missing header row");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto first = line.find('\t');
    auto last = line.rfind('\t');
    if (first == std::string::npos || first == last) {
      throw std::runtime_error("template table: malformed row: " + line);
    }
    TemplateRow row;
    row.event_id = std::stoi(line.substr(0, first));
    row.template_text = line.substr(first + 1, last - first - 1);
    row.count = std::stoll(line.substr(last + 1));
    table.push_back(std::move(row));
  }
  return table;
}

}  // namespace flog
