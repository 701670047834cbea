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

#include "flog/dataset_adapters.h"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <ctime>
#include <fstream>
#include <map>
#include <random>
#include <unordered_map>

#include "flog/common.h"

namespace flog {
namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' ||
                               line[i] == '\r' || line[i] == '\n')) {
      ++i;
    }
    size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' &&
           line[j] != '\r' && line[j] != '\n') {
      ++j;
    }
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join(const std::vector<std::string_view>& parts, size_t from) {
  std::string out;
  for (size_t i = from; i < parts.size(); ++i) {
    if (i > from) out += ' ';
    out += parts[i];
  }
  return out;
}

std::tm utc(int64_t epoch) {
  std::time_t t = static_cast<std::time_t>(epoch);
  std::tm tm{};
  gmtime_r(&t, &tm);
  return tm;
}

constexpr const char* kMonths[] = {"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                   "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};

// Index of the first message token (the component field) per format.
size_t message_start(LogFormat format) {
  return format == LogFormat::kThunderbird ? 8 : 7;
}

}  // namespace

std::string_view to_string(LogFormat format) {
  return format == LogFormat::kThunderbird ? "thunderbird" : "bgl";
}

LogFormat parse_log_format(std::string_view name) {
  if (name == "thunderbird") return LogFormat::kThunderbird;
  if (name == "bgl") return LogFormat::kBgl;
  throw ConfigError("format", fmt::format("unknown log format '{}'", name));
}

RawEntry decode_line(std::string_view line, LogFormat format,
                     int64_t line_number) {
  auto tokens = split_ws(line);
  const size_t start = message_start(format);
  if (tokens.size() <= start) {
    throw LineParseError(line_number,
                         fmt::format("expected more than {} fields, got {}",
                                     start, tokens.size()));
  }
  RawEntry entry;
  entry.label_field = std::string(tokens[0]);
  auto epoch_tok = tokens[1];
  auto [ptr, ec] = std::from_chars(epoch_tok.data(),
                                   epoch_tok.data() + epoch_tok.size(),
                                   entry.epoch_seconds);
  if (ec != std::errc() || ptr != epoch_tok.data() + epoch_tok.size() ||
      entry.epoch_seconds < 0) {
    throw LineParseError(line_number,
                         fmt::format("bad epoch field '{}'", epoch_tok));
  }
  entry.node_id = std::string(tokens[3]);
  entry.message = join(tokens, start);
  return entry;
}

std::string encode_line(const RawEntry& e, LogFormat format) {
  const std::tm tm = utc(e.epoch_seconds);
  const int year = tm.tm_year + 1900;
  if (format == LogFormat::kThunderbird) {
    return fmt::format("{} {} {:04}.{:02}.{:02} {} {} {} {:02}:{:02}:{:02} {}/{} {}",
                       e.label_field, e.epoch_seconds, year, tm.tm_mon + 1,
                       tm.tm_mday, e.node_id, kMonths[tm.tm_mon], tm.tm_mday,
                       tm.tm_hour, tm.tm_min, tm.tm_sec, e.node_id, e.node_id,
                       e.message);
  }
  return fmt::format(
      "{} {} {:04}.{:02}.{:02} {} {:04}-{:02}-{:02}-{:02}.{:02}.{:02}.000000 {} RAS {}",
      e.label_field, e.epoch_seconds, year, tm.tm_mon + 1, tm.tm_mday,
      e.node_id, year, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min,
      tm.tm_sec, e.node_id, e.message);
}

void SyntheticSpec::validate() const {
  if (n_templates < 1) throw ConfigError("n_templates", "must be >= 1");
  if (n_nodes < 1) throw ConfigError("n_nodes", "must be >= 1");
  if (n_lines < 1) throw ConfigError("n_lines", "must be >= 1");
  if (!(anomaly_rate > 0.0 && anomaly_rate < 1.0)) {
    throw ConfigError("anomaly_rate", "must lie in (0, 1)");
  }
  if (anomaly_template_ids.empty()) {
    throw ConfigError("anomaly_template_ids", "must not be empty");
  }
  for (int id : anomaly_template_ids) {
    if (id < 0 || id >= n_templates) {
      throw ConfigError("anomaly_template_ids",
                        fmt::format("id {} outside [0, {})", id, n_templates));
    }
  }
  if (static_cast<int>(anomaly_template_ids.size()) >= n_templates) {
    throw ConfigError("anomaly_template_ids",
                      "at least one normal template is required");
  }
  if (!(mean_gap_seconds > 0.0)) {
    throw ConfigError("mean_gap_seconds", "must be > 0");
  }
  if (burst_min < 1 || burst_max < burst_min) {
    throw ConfigError("burst_min", "need 1 <= burst_min <= burst_max");
  }
  if (start_epoch < 0) throw ConfigError("start_epoch", "must be >= 0");
}

namespace {

constexpr const char* kSyllables[] = {"ka", "lo", "mi", "ne", "ru", "sa",
                                      "ti", "vo", "ze", "pa", "qu", "fi",
                                      "do", "gu", "ha", "jo"};

constexpr const char* kWords[] = {
    "session",  "opened",   "closed",  "for",      "user",    "by",
    "connection", "from",   "accepted", "failed",  "request", "completed",
    "started",  "stopped",  "service", "job",      "queue",   "link",
    "state",    "changed",  "to",      "up",       "down",    "check",
    "passed",   "timeout",  "waiting", "reply",    "sent",    "received",
    "packet",   "interface", "mount",  "volume",   "scan",    "device",
    "ready",    "heartbeat", "sync",   "clock",    "offset",  "update",
    "cache",    "flush",    "write",   "read",     "block",   "retry"};

constexpr const char* kUsers[] = {"root", "admin", "guest", "operator",
                                  "daemon", "nobody"};

constexpr const char* kAlertLabels[] = {"VAPI",   "PBS_CHK", "ECC",  "CPU",
                                        "SCSI",   "NMI",     "MPT",  "EXT_FS",
                                        "APPBUSY", "KERNDTLB"};

enum class Slot { kWord, kNumber, kHex, kUser };

struct SynthTemplate {
  std::string component;
  std::vector<std::pair<Slot, std::string>> body;
};

std::string component_name(int t) {
  std::string name = kSyllables[t % 16];
  name += kSyllables[(t / 16 + 3 * t + 5) % 16];
  name += kSyllables[(t / 256 + 7) % 16];
  // Syllable triples can repeat for large t; a letter suffix keeps them unique.
  for (int rest = t; rest > 0; rest /= 26) {
    name += static_cast<char>('a' + rest % 26);
  }
  return name;
}

std::vector<SynthTemplate> make_templates(int n, Rng& rng) {
  constexpr int kWordCount = sizeof(kWords) / sizeof(kWords[0]);
  std::uniform_int_distribution<int> n_words(2, 6);
  std::uniform_int_distribution<int> word(0, kWordCount - 1);
  std::uniform_int_distribution<int> n_vars(1, 2);
  std::uniform_int_distribution<int> var_kind(1, 3);
  std::vector<SynthTemplate> out(n);
  for (int t = 0; t < n; ++t) {
    out[t].component = component_name(t) + ":";
    const int words = n_words(rng);
    for (int w = 0; w < words; ++w) {
      out[t].body.emplace_back(Slot::kWord, kWords[word(rng)]);
    }
    const int vars = n_vars(rng);
    // Variables never take the first body slot: the parse tree routes on the
    // component and that token, so a user name there would split the template.
    for (int v = 0; v < vars; ++v) {
      std::uniform_int_distribution<size_t> pos(1, out[t].body.size());
      out[t].body.insert(out[t].body.begin() + pos(rng),
                         {static_cast<Slot>(var_kind(rng)), ""});
    }
  }
  return out;
}

std::string render(const SynthTemplate& tmpl, Rng& rng) {
  std::string msg = tmpl.component;
  for (const auto& [slot, text] : tmpl.body) {
    msg += ' ';
    switch (slot) {
      case Slot::kWord:
        msg += text;
        break;
      case Slot::kNumber:
        msg += std::to_string(std::uniform_int_distribution<int>(1, 65535)(rng));
        break;
      case Slot::kHex:
        msg += fmt::format("0x{:08x}",
                           std::uniform_int_distribution<uint32_t>()(rng));
        break;
      case Slot::kUser:
        msg += kUsers[std::uniform_int_distribution<int>(0, 5)(rng)];
        break;
    }
  }
  return msg;
}

}  // namespace

std::vector<RawEntry> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng = make_rng(spec.seed, "synthetic");
  const auto templates = make_templates(spec.n_templates, rng);

  std::vector<int> normal;
  for (int t = 0; t < spec.n_templates; ++t) {
    if (!spec.anomaly_template_ids.contains(t)) normal.push_back(t);
  }
  const std::vector<int> anomalous(spec.anomaly_template_ids.begin(),
                                   spec.anomaly_template_ids.end());

  // Sparse transition structure: three preferred successors per state plus a
  // small uniform floor so every normal template stays reachable.
  const int m = static_cast<int>(normal.size());
  std::vector<std::discrete_distribution<int>> transitions;
  transitions.reserve(m);
  std::uniform_int_distribution<int> pick_state(0, m - 1);
  for (int s = 0; s < m; ++s) {
    std::vector<double> w(m, 0.02);
    w[pick_state(rng)] += 1.0;
    w[pick_state(rng)] += 0.6;
    w[pick_state(rng)] += 0.3;
    transitions.emplace_back(w.begin(), w.end());
  }

  const double mean_burst = 0.5 * (spec.burst_min + spec.burst_max);
  const double rate = spec.anomaly_rate;
  const double p_start = rate / (mean_burst * (1.0 - rate) + rate);

  struct NodeState {
    std::string id;
    int state = 0;
    int burst_left = 0;
    int burst_template = 0;
  };
  std::vector<NodeState> nodes(spec.n_nodes);
  for (int i = 0; i < spec.n_nodes; ++i) {
    nodes[i].id = fmt::format("dn{}", 100 + i);
    nodes[i].state = pick_state(rng);
  }

  std::uniform_int_distribution<int> pick_node(0, spec.n_nodes - 1);
  std::uniform_int_distribution<int> pick_anomaly(
      0, static_cast<int>(anomalous.size()) - 1);
  std::uniform_int_distribution<int> burst_len(spec.burst_min, spec.burst_max);
  std::bernoulli_distribution start_burst(p_start);
  std::bernoulli_distribution switch_anomaly(0.3);
  std::exponential_distribution<double> gap(1.0 / spec.mean_gap_seconds);

  std::vector<RawEntry> out;
  out.reserve(static_cast<size_t>(spec.n_lines));
  double clock = static_cast<double>(spec.start_epoch);
  for (int64_t line = 0; line < spec.n_lines; ++line) {
    clock += gap(rng);
    NodeState& node = nodes[pick_node(rng)];
    int tmpl;
    bool alert = false;
    if (node.burst_left == 0 && start_burst(rng)) {
      node.burst_left = burst_len(rng);
      node.burst_template = anomalous[pick_anomaly(rng)];
    }
    if (node.burst_left > 0) {
      if (switch_anomaly(rng)) node.burst_template = anomalous[pick_anomaly(rng)];
      tmpl = node.burst_template;
      --node.burst_left;
      alert = true;
    } else {
      node.state = transitions[node.state](rng);
      tmpl = normal[node.state];
    }
    RawEntry entry;
    entry.label_field =
        alert ? kAlertLabels[static_cast<size_t>(tmpl) % std::size(kAlertLabels)]
              : "-";
    entry.epoch_seconds = static_cast<int64_t>(clock);
    entry.node_id = node.id;
    entry.message = render(templates[tmpl], rng);
    out.push_back(std::move(entry));
  }
  return out;
}

IngestResult read_log_file(const std::filesystem::path& path, LogFormat format,
                           int64_t max_samples) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open log file " + path.string());
  IngestResult result;
  std::string line;
  while (std::getline(in, line)) {
    ++result.lines_read;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      result.entries.push_back(decode_line(line, format, result.lines_read));
    } catch (const LineParseError&) {
      ++result.malformed_lines;
      continue;
    }
    if (max_samples > 0 &&
        static_cast<int64_t>(result.entries.size()) >= max_samples) {
      break;
    }
  }
  return result;
}

int64_t filter_nodes_by_anomaly_rate(std::vector<RawEntry>& entries,
                                     double min_rate) {
  if (min_rate <= 0.0) return 0;
  std::unordered_map<std::string, std::pair<int64_t, int64_t>> counts;
  for (const auto& e : entries) {
    auto& [alerts, total] = counts[e.node_id];
    alerts += e.is_anomalous() ? 1 : 0;
    ++total;
  }
  int64_t dropped = 0;
  std::unordered_map<std::string, bool> keep;
  for (const auto& [node, c] : counts) {
    const bool ok = static_cast<double>(c.first) >=
                    min_rate * static_cast<double>(c.second);
    keep[node] = ok;
    if (!ok) ++dropped;
  }
  std::erase_if(entries, [&](const RawEntry& e) { return !keep[e.node_id]; });
  return dropped;
}

}  // namespace flog
