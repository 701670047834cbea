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
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "flog/dataset_adapters.h"
#include "flog/drain_parser.h"
#include "flog/evaluation.h"
#include "flog/federated_trainer.h"
#include "flog/lora_transformer.h"
#include "flog/partitioner.h"
#include "flog/privacy_accountant.h"
#include "flog/window_builder.h"

namespace flog {

struct DatasetConfig {
  LogFormat format = LogFormat::kThunderbird;
  // Log file to ingest; empty selects the synthetic generator.
  std::filesystem::path path;
  SyntheticSpec synthetic;
  int64_t max_samples = 0;  // 0 reads everything
  double min_anomaly_rate_per_node = 0.0;

  bool use_synthetic() const { return path.empty(); }
};

struct EvaluationConfig {
  // Per-node chronological hold-out share.
  double test_fraction = 0.2;
};

struct OutputConfig {
  std::filesystem::path directory = "out";
  // Off by default so that rounds.csv is reproducible byte for byte.
  bool record_wall_time = false;
};

struct RunConfig {
  uint64_t seed = 0;
  DatasetConfig dataset;
  ParserConfig parser;
  WindowConfig window;
  FedConfig federated;
  ModelConfig model;  // vocab_size 0: templates + 2
  PrivacyConfig privacy;
  EvaluationConfig evaluation;
  OutputConfig output;

  // Re-checks every section. vocab_size may still be 0 here.
  void validate() const;
};

// Key path -> value summary of every key that was absent and defaulted.
struct ConfigDefault {
  std::string key;
  std::string value;
};

// JSON config. Relative dataset paths resolve against `base_dir`. Unknown
// keys, wrong types and constraint violations raise ConfigError naming the
// key. Defaulted keys are logged and, when `defaulted` is given, listed.
RunConfig parse_config(std::string_view json_text,
                       const std::filesystem::path& base_dir = {},
                       std::vector<ConfigDefault>* defaulted = nullptr);
RunConfig load_config(const std::filesystem::path& path,
                      std::vector<ConfigDefault>* defaulted = nullptr);
// Full config with every key spelled out.
std::string dump_config(const RunConfig& config);

// A stage failure, tagged with the stage name.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// Output file names under the output directory.
namespace artifacts {
inline constexpr std::string_view kTemplates = "templates.tsv";
inline constexpr std::string_view kAssignment = "assignment.tsv";
inline constexpr std::string_view kRounds = "rounds.csv";
inline constexpr std::string_view kLedger = "ledger.txt";
inline constexpr std::string_view kCheckpoint = "model.ckpt";
inline constexpr std::string_view kNodes = "nodes.tsv";
inline constexpr std::string_view kTrainWindows = "windows_train.tsv";
inline constexpr std::string_view kTestWindows = "windows_test.tsv";
inline constexpr std::string_view kEvaluation = "evaluation.csv";
inline constexpr std::string_view kSynthetic = "synthetic.log";
}  // namespace artifacts

// Ingestion, template mining, windowing and the train/test split.
struct ParsedCorpus {
  TemplateTable templates;
  std::vector<std::string> node_order;  // first appearance in the input
  std::vector<WindowSequence> train;    // grouped by node in node_order
  std::vector<WindowSequence> test;
};

struct TrainOutcome {
  ModelState model;
  std::vector<RoundMetrics> rounds;
  PrivacyLedger ledger;
};

std::vector<RawEntry> ingest_stage(const RunConfig& config);
ParsedCorpus parse_stage(const RunConfig& config, std::vector<RawEntry> entries);
Assignment partition_stage(const RunConfig& config,
                           const std::vector<std::string>& node_order);
// Resolves vocab_size and sequence length from the corpus.
ModelConfig resolve_model_config(const RunConfig& config, size_t n_templates);
TrainOutcome train_stage(const RunConfig& config, const ParsedCorpus& corpus,
                         const Assignment& assignment);
RoundMetrics evaluate_stage(const ModelState& model,
                            const std::vector<WindowSequence>& test);

// Artifact writers and readers; all throw StageError on I/O failure.
void write_parsed(const std::filesystem::path& dir, const ParsedCorpus& corpus);
ParsedCorpus read_parsed(const std::filesystem::path& dir);
void write_assignment_file(const std::filesystem::path& dir,
                           const std::vector<std::string>& node_order,
                           const Assignment& assignment);
Assignment read_assignment_file(const std::filesystem::path& dir);
void write_training(const std::filesystem::path& dir, const TrainOutcome& run);

// Every stage in order, writing every artifact under `out_dir`.
void run_pipeline(const RunConfig& config, const std::filesystem::path& out_dir);

}  // namespace flog
