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

#include "flog/pipeline.h"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <map>
#include <set>
#include <sstream>

namespace flog {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Reads the keys of one JSON object into typed fields, remembering which keys
// were consumed so that leftovers can be rejected.
class Section {
 public:
  Section(const json& parent, std::string name,
          std::vector<ConfigDefault>* defaulted)
      : name_(std::move(name)), defaulted_(defaulted) {
    if (parent.contains(name_)) {
      node_ = &parent.at(name_);
      if (!node_->is_object()) throw ConfigError(name_, "must be an object");
    }
  }

  template <typename T>
  void field(const std::string& key, T& value) {
    const std::string path = name_ + "." + key;
    seen_.insert(key);
    if (node_ == nullptr || !node_->contains(key)) {
      note_default(path, json(value).dump());
      return;
    }
    const json& v = node_->at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path, "expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
      if (std::is_unsigned_v<T> && v.is_number() && v.get<double>() < 0) {
        throw ConfigError(path, "must be >= 0");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(path, "expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path, "expected a string");
    }
    try {
      value = v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path, e.what());
    }
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    return node_ != nullptr && node_->contains(key) ? &node_->at(key) : nullptr;
  }

  void finish() const {
    if (node_ == nullptr) return;
    for (const auto& [key, _] : node_->items()) {
      if (!seen_.contains(key)) throw ConfigError(name_ + "." + key, "unknown key");
    }
  }

  void note_default(const std::string& path, const std::string& value) {
    spdlog::info("config: {} not set, using default {}", path, value);
    if (defaulted_) defaulted_->push_back({path, value});
  }

  const std::string& name() const { return name_; }

 private:
  std::string name_;
  const json* node_ = nullptr;
  std::vector<ConfigDefault>* defaulted_;
  std::set<std::string> seen_;
};

void read_synthetic(Section& dataset, SyntheticSpec& spec,
                    std::vector<ConfigDefault>* defaulted) {
  const json* node = dataset.child("synthetic");
  const json empty = json::object();
  json holder = json::object();
  holder["dataset.synthetic"] = node ? *node : empty;
  Section s(holder, "dataset.synthetic", defaulted);
  s.field("n_templates", spec.n_templates);
  s.field("n_nodes", spec.n_nodes);
  s.field("n_lines", spec.n_lines);
  s.field("anomaly_rate", spec.anomaly_rate);
  s.field("anomaly_template_ids", spec.anomaly_template_ids);
  s.field("mean_gap_seconds", spec.mean_gap_seconds);
  s.field("burst_min", spec.burst_min);
  s.field("burst_max", spec.burst_max);
  s.field("start_epoch", spec.start_epoch);
  s.finish();
}

template <typename F>
auto staged(std::string_view stage, F&& body) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(std::string(stage), e.what());
  }
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return in;
}

}  // namespace

void RunConfig::validate() const {
  if (!dataset.use_synthetic() && !fs::exists(dataset.path)) {
    throw ConfigError("dataset.path", "file not found: " + dataset.path.string());
  }
  if (dataset.max_samples < 0) {
    throw ConfigError("dataset.max_samples", "must be >= 0");
  }
  if (!(dataset.min_anomaly_rate_per_node >= 0.0 &&
        dataset.min_anomaly_rate_per_node <= 1.0)) {
    throw ConfigError("dataset.min_anomaly_rate_per_node", "must lie in [0, 1]");
  }
  auto prefixed = [](std::string_view section, auto&& check) {
    try {
      check();
    } catch (const ConfigError& e) {
      const std::string what = e.what();
      throw ConfigError(fmt::format("{}.{}", section, e.key()),
                        what.substr(e.key().size() + 2));
    }
  };
  if (dataset.use_synthetic()) {
    prefixed("dataset.synthetic", [&] { dataset.synthetic.validate(); });
  }
  prefixed("parser", [&] { parser.validate(); });
  prefixed("window", [&] { window.validate(); });
  prefixed("federated", [&] { federated.validate(); });
  prefixed("privacy", [&] { privacy.validate(); });
  prefixed("model", [&] {
    ModelConfig probe = model;
    if (probe.vocab_size == 0) probe.vocab_size = 3;
    if (probe.max_sequence_length == 0) {
      probe.max_sequence_length = window.max_sequence_length;
    }
    probe.validate();
    if (probe.max_sequence_length < window.max_sequence_length) {
      throw ConfigError("max_sequence_length",
                        "must be >= window.max_sequence_length");
    }
  });
  if (!(evaluation.test_fraction > 0.0 && evaluation.test_fraction < 1.0)) {
    throw ConfigError("evaluation.test_fraction", "must lie in (0, 1)");
  }
}

RunConfig parse_config(std::string_view json_text, const fs::path& base_dir,
                       std::vector<ConfigDefault>* defaulted) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", e.what());
  }
  if (!root.is_object()) throw ConfigError("<file>", "top level must be an object");

  static const std::set<std::string> kSections = {
      "seed",    "dataset", "parser",     "window", "federated",
      "model",   "privacy", "evaluation", "output"};
  for (const auto& [key, _] : root.items()) {
    if (!kSections.contains(key)) throw ConfigError(key, "unknown key");
  }

  RunConfig c;
  if (root.contains("seed")) {
    if (!root["seed"].is_number_unsigned()) {
      throw ConfigError("seed", "expected a non-negative integer");
    }
    c.seed = root["seed"].get<uint64_t>();
  } else {
    spdlog::info("config: seed not set, using default 0");
    if (defaulted) defaulted->push_back({"seed", "0"});
  }

  {
    Section s(root, "dataset", defaulted);
    std::string format(to_string(c.dataset.format));
    s.field("format", format);
    try {
      c.dataset.format = parse_log_format(format);
    } catch (const std::exception& e) {
      throw ConfigError("dataset.format", e.what());
    }
    std::string path;
    s.field("path", path);
    if (!path.empty()) {
      fs::path p(path);
      c.dataset.path = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    }
    s.field("max_samples", c.dataset.max_samples);
    s.field("min_anomaly_rate_per_node", c.dataset.min_anomaly_rate_per_node);
    read_synthetic(s, c.dataset.synthetic, defaulted);
    s.finish();
  }
  {
    Section s(root, "parser", defaulted);
    s.field("tree_depth", c.parser.tree_depth);
    s.field("similarity_threshold", c.parser.similarity_threshold);
    s.field("max_children", c.parser.max_children);
    s.field("mask_numeric_tokens", c.parser.mask_numeric_tokens);
    s.finish();
  }
  {
    Section s(root, "window", defaulted);
    s.field("window_seconds", c.window.window_seconds);
    s.field("step_seconds", c.window.step_seconds);
    s.field("min_logs_per_window", c.window.min_logs_per_window);
    s.field("max_sequence_length", c.window.max_sequence_length);
    s.finish();
  }
  {
    Section s(root, "federated", defaulted);
    FedConfig& f = c.federated;
    s.field("k_clients", f.k_clients);
    s.field("rounds", f.rounds);
    s.field("participation_rate", f.participation_rate);
    s.field("local_epochs", f.local_epochs);
    s.field("learning_rate", f.learning_rate);
    s.field("proximal_mu", f.proximal_mu);
    s.field("clip_bound", f.clip_bound);
    s.field("noise_multiplier", f.noise_multiplier);
    s.field("batch_size", f.batch_size);
    s.field("weight_decay", f.weight_decay);
    s.field("warmup_ratio", f.warmup_ratio);
    s.field("grad_accum_steps", f.grad_accum_steps);
    s.field("max_grad_norm", f.max_grad_norm);
    s.finish();
  }
  {
    Section s(root, "model", defaulted);
    ModelConfig& m = c.model;
    m.max_sequence_length = 0;
    s.field("vocab_size", m.vocab_size);
    s.field("hidden_dim", m.hidden_dim);
    s.field("head_dim", m.head_dim);
    s.field("n_heads", m.n_heads);
    s.field("n_layers", m.n_layers);
    s.field("lora_rank", m.lora_rank);
    s.field("lora_alpha", m.lora_alpha);
    s.field("lora_dropout", m.lora_dropout);
    s.field("max_sequence_length", m.max_sequence_length);
    s.field("ffn_dim", m.ffn_dim);
    s.finish();
    if (m.vocab_size < 0) throw ConfigError("model.vocab_size", "must be >= 0");
    if (m.max_sequence_length < 0) {
      throw ConfigError("model.max_sequence_length", "must be >= 0");
    }
  }
  {
    Section s(root, "privacy", defaulted);
    s.field("target_epsilon", c.privacy.target_epsilon);
    s.field("delta", c.privacy.delta);
    s.finish();
  }
  {
    Section s(root, "evaluation", defaulted);
    s.field("test_fraction", c.evaluation.test_fraction);
    s.finish();
  }
  {
    Section s(root, "output", defaulted);
    std::string dir = c.output.directory.string();
    s.field("directory", dir);
    c.output.directory = dir;
    s.field("record_wall_time", c.output.record_wall_time);
    s.finish();
  }
  c.federated.seed = c.seed;
  c.validate();
  return c;
}

RunConfig load_config(const fs::path& path, std::vector<ConfigDefault>* defaulted) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot read " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.parent_path(), defaulted);
}

std::string dump_config(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  const SyntheticSpec& syn = c.dataset.synthetic;
  j["dataset"] = {
      {"format", std::string(to_string(c.dataset.format))},
      {"path", c.dataset.path.string()},
      {"max_samples", c.dataset.max_samples},
      {"min_anomaly_rate_per_node", c.dataset.min_anomaly_rate_per_node},
      {"synthetic",
       {{"n_templates", syn.n_templates},
        {"n_nodes", syn.n_nodes},
        {"n_lines", syn.n_lines},
        {"anomaly_rate", syn.anomaly_rate},
        {"anomaly_template_ids", syn.anomaly_template_ids},
        {"mean_gap_seconds", syn.mean_gap_seconds},
        {"burst_min", syn.burst_min},
        {"burst_max", syn.burst_max},
        {"start_epoch", syn.start_epoch}}}};
  j["parser"] = {{"tree_depth", c.parser.tree_depth},
                 {"similarity_threshold", c.parser.similarity_threshold},
                 {"max_children", c.parser.max_children},
                 {"mask_numeric_tokens", c.parser.mask_numeric_tokens}};
  j["window"] = {{"window_seconds", c.window.window_seconds},
                 {"step_seconds", c.window.step_seconds},
                 {"min_logs_per_window", c.window.min_logs_per_window},
                 {"max_sequence_length", c.window.max_sequence_length}};
  const FedConfig& f = c.federated;
  j["federated"] = {{"k_clients", f.k_clients},
                    {"rounds", f.rounds},
                    {"participation_rate", f.participation_rate},
                    {"local_epochs", f.local_epochs},
                    {"learning_rate", f.learning_rate},
                    {"proximal_mu", f.proximal_mu},
                    {"clip_bound", f.clip_bound},
                    {"noise_multiplier", f.noise_multiplier},
                    {"batch_size", f.batch_size},
                    {"weight_decay", f.weight_decay},
                    {"warmup_ratio", f.warmup_ratio},
                    {"grad_accum_steps", f.grad_accum_steps},
                    {"max_grad_norm", f.max_grad_norm}};
  const ModelConfig& m = c.model;
  j["model"] = {{"vocab_size", m.vocab_size},
                {"hidden_dim", m.hidden_dim},
                {"head_dim", m.head_dim},
                {"n_heads", m.n_heads},
                {"n_layers", m.n_layers},
                {"lora_rank", m.lora_rank},
                {"lora_alpha", m.lora_alpha},
                {"lora_dropout", m.lora_dropout},
                {"max_sequence_length", m.max_sequence_length},
                {"ffn_dim", m.ffn_dim}};
  j["privacy"] = {{"target_epsilon", c.privacy.target_epsilon},
                  {"delta", c.privacy.delta}};
  j["evaluation"] = {{"test_fraction", c.evaluation.test_fraction}};
  j["output"] = {{"directory", c.output.directory.string()},
                 {"record_wall_time", c.output.record_wall_time}};
  return j.dump(2) + "\n";
}

std::vector<RawEntry> ingest_stage(const RunConfig& config) {
  std::vector<RawEntry> entries;
  if (config.dataset.use_synthetic()) {
    SyntheticSpec spec = config.dataset.synthetic;
    spec.seed = stream_seed(config.seed, "synthetic");
    entries = generate_synthetic(spec);
    if (config.dataset.max_samples > 0 &&
        static_cast<int64_t>(entries.size()) > config.dataset.max_samples) {
      entries.resize(static_cast<size_t>(config.dataset.max_samples));
    }
  } else {
    IngestResult r = read_log_file(config.dataset.path, config.dataset.format,
                                   config.dataset.max_samples);
    if (r.malformed_lines > 0) {
      spdlog::warn("ingest: skipped {} malformed lines of {}", r.malformed_lines,
                   r.lines_read);
    }
    entries = std::move(r.entries);
  }
  const int64_t dropped =
      filter_nodes_by_anomaly_rate(entries, config.dataset.min_anomaly_rate_per_node);
  if (dropped > 0) {
    spdlog::info("ingest: dropped {} nodes below anomaly rate {}", dropped,
                 config.dataset.min_anomaly_rate_per_node);
  }
  spdlog::info("ingest: {} entries", entries.size());
  return entries;
}

ParsedCorpus parse_stage(const RunConfig& config, std::vector<RawEntry> entries) {
  DrainParser parser(config.parser);
  ParsedCorpus corpus;
  std::map<std::string, size_t> node_index;
  std::vector<std::vector<LogRecord>> per_node;
  int64_t empty = 0;
  for (auto& e : entries) {
    const EventId id = parser.parse_message(e.message);
    if (id < 0) {
      ++empty;
      continue;
    }
    auto [it, inserted] = node_index.emplace(e.node_id, per_node.size());
    if (inserted) {
      corpus.node_order.push_back(e.node_id);
      per_node.emplace_back();
    }
    per_node[it->second].push_back({e.epoch_seconds, std::move(e.node_id),
                                    e.is_anomalous(), id, fnv1a64(e.message)});
  }
  if (empty > 0) spdlog::warn("parse: skipped {} empty messages", empty);
  corpus.templates = parser.export_templates();
  spdlog::info("parse: {} templates over {} nodes", corpus.templates.size(),
               corpus.node_order.size());

  for (auto& records : per_node) {
    std::stable_sort(records.begin(), records.end(),
                     [](const LogRecord& a, const LogRecord& b) {
                       return a.timestamp < b.timestamp;
                     });
    const auto windows = build_windows(records, config.window);
    WindowSplit split =
        split_chronologically(windows, config.evaluation.test_fraction);
    corpus.train.insert(corpus.train.end(), split.train.begin(), split.train.end());
    corpus.test.insert(corpus.test.end(), split.test.begin(), split.test.end());
  }
  spdlog::info("window: {} train / {} test windows", corpus.train.size(),
               corpus.test.size());
  if (corpus.train.empty()) {
    throw std::runtime_error("no window reached min_logs_per_window");
  }
  return corpus;
}

Assignment partition_stage(const RunConfig& config,
                           const std::vector<std::string>& node_order) {
  return round_robin_assign(node_order, config.federated.k_clients);
}

ModelConfig resolve_model_config(const RunConfig& config, size_t n_templates) {
  ModelConfig m = config.model;
  if (m.vocab_size == 0) m.vocab_size = static_cast<int>(n_templates) + 2;
  if (m.max_sequence_length == 0) {
    m.max_sequence_length = config.window.max_sequence_length;
  }
  m.validate();
  return m;
}

TrainOutcome train_stage(const RunConfig& config, const ParsedCorpus& corpus,
                         const Assignment& assignment) {
  const ModelConfig mc = resolve_model_config(config, corpus.templates.size());
  FedConfig fed = config.federated;
  fed.seed = config.seed;
  ModelState initial = ModelState::init(mc, stream_seed(config.seed, "model"));
  spdlog::info("train: {} trainable parameters", mc.trainable_param_count());
  auto clients = materialize(corpus.train, assignment, fed.k_clients);
  PrivacyLedger ledger(config.privacy, fed.noise_multiplier, fed.rounds);
  FederatedTrainer trainer(std::move(initial), std::move(clients), corpus.test,
                           fed, std::move(ledger));
  trainer.set_record_wall_time(config.output.record_wall_time);
  trainer.run();
  return {trainer.state(), trainer.metrics(), trainer.ledger()};
}

RoundMetrics evaluate_stage(const ModelState& model,
                            const std::vector<WindowSequence>& test) {
  if (test.empty()) throw std::runtime_error("no test windows");
  std::vector<int> labels;
  labels.reserve(test.size());
  for (const auto& w : test) labels.push_back(w.label);
  return score_round(score_windows(model, test), labels);
}

void write_parsed(const fs::path& dir, const ParsedCorpus& corpus) {
  staged("parse", [&] {
    fs::create_directories(dir);
    auto templates = open_out(dir / artifacts::kTemplates);
    write_template_table(templates, corpus.templates);
    auto nodes = open_out(dir / artifacts::kNodes);
    for (const auto& n : corpus.node_order) nodes << n << '\n';
    auto train = open_out(dir / artifacts::kTrainWindows);
    write_windows(train, corpus.train);
    auto test = open_out(dir / artifacts::kTestWindows);
    write_windows(test, corpus.test);
  });
}

ParsedCorpus read_parsed(const fs::path& dir) {
  return staged("parse", [&] {
    ParsedCorpus corpus;
    auto templates = open_in(dir / artifacts::kTemplates);
    corpus.templates = read_template_table(templates);
    auto nodes = open_in(dir / artifacts::kNodes);
    for (std::string line; std::getline(nodes, line);) {
      if (!line.empty()) corpus.node_order.push_back(line);
    }
    auto train = open_in(dir / artifacts::kTrainWindows);
    corpus.train = read_windows(train);
    auto test = open_in(dir / artifacts::kTestWindows);
    corpus.test = read_windows(test);
    return corpus;
  });
}

void write_assignment_file(const fs::path& dir,
                           const std::vector<std::string>& node_order,
                           const Assignment& assignment) {
  staged("partition", [&] {
    fs::create_directories(dir);
    auto out = open_out(dir / artifacts::kAssignment);
    write_assignment(out, node_order, assignment);
  });
}

Assignment read_assignment_file(const fs::path& dir) {
  return staged("partition", [&] {
    auto in = open_in(dir / artifacts::kAssignment);
    return read_assignment(in);
  });
}

void write_training(const fs::path& dir, const TrainOutcome& run) {
  staged("train", [&] {
    fs::create_directories(dir);
    auto rounds = open_out(dir / artifacts::kRounds);
    write_metrics_header(rounds);
    for (const auto& m : run.rounds) write_metrics_row(rounds, m);
    auto ledger = open_out(dir / artifacts::kLedger);
    run.ledger.dump(ledger);
    save_checkpoint(dir / artifacts::kCheckpoint, run.model);
  });
}

void run_pipeline(const RunConfig& config, const fs::path& out_dir) {
  auto entries = staged("ingest", [&] { return ingest_stage(config); });
  const ParsedCorpus corpus =
      staged("parse", [&] { return parse_stage(config, std::move(entries)); });
  write_parsed(out_dir, corpus);
  const Assignment assignment =
      staged("partition", [&] { return partition_stage(config, corpus.node_order); });
  write_assignment_file(out_dir, corpus.node_order, assignment);
  const TrainOutcome run =
      staged("train", [&] { return train_stage(config, corpus, assignment); });
  write_training(out_dir, run);
}

}  // namespace flog
