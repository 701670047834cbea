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

// Command-line entry point:
//   flog <subcommand> --config <file> [--seed N] [--out DIR]

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "flog/pipeline.h"

namespace fs = std::filesystem;
using namespace flog;

namespace {

struct Options {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::string out_dir;
};

RunConfig load(const Options& opt) {
  RunConfig config = load_config(opt.config_path);
  if (opt.seed) {
    config.seed = *opt.seed;
    config.federated.seed = *opt.seed;
  }
  if (!opt.out_dir.empty()) config.output.directory = opt.out_dir;
  return config;
}

void cmd_synth(const RunConfig& config) {
  if (!config.dataset.use_synthetic()) {
    throw StageError("synth", "dataset.path is set; synth needs a synthetic dataset");
  }
  const auto entries = ingest_stage(config);
  const fs::path dir = config.output.directory;
  fs::create_directories(dir);
  std::ofstream out(dir / artifacts::kSynthetic, std::ios::binary);
  if (!out) throw StageError("synth", "cannot write synthetic.log");
  for (const auto& e : entries) out << encode_line(e, config.dataset.format) << '\n';
  spdlog::info("synth: wrote {} lines", entries.size());
}

void cmd_parse(const RunConfig& config) {
  auto entries = ingest_stage(config);
  write_parsed(config.output.directory, parse_stage(config, std::move(entries)));
}

void cmd_partition(const RunConfig& config) {
  const ParsedCorpus corpus = read_parsed(config.output.directory);
  write_assignment_file(config.output.directory, corpus.node_order,
                        partition_stage(config, corpus.node_order));
}

void cmd_train(const RunConfig& config) {
  const ParsedCorpus corpus = read_parsed(config.output.directory);
  const Assignment assignment = read_assignment_file(config.output.directory);
  TrainOutcome run = [&] {
    try {
      return train_stage(config, corpus, assignment);
    } catch (const std::exception& e) {
      throw StageError("train", e.what());
    }
  }();
  write_training(config.output.directory, run);
}

void cmd_evaluate(const RunConfig& config) {
  const fs::path dir = config.output.directory;
  const ParsedCorpus corpus = read_parsed(dir);
  try {
    const ModelConfig mc = resolve_model_config(config, corpus.templates.size());
    const ModelState model = load_checkpoint(dir / artifacts::kCheckpoint, mc);
    const RoundMetrics m = evaluate_stage(model, corpus.test);
    std::ofstream out(dir / artifacts::kEvaluation, std::ios::binary);
    write_metrics_header(out);
    write_metrics_row(out, m);
    write_metrics_header(std::cout);
    write_metrics_row(std::cout, m);
  } catch (const std::exception& e) {
    throw StageError("evaluate", e.what());
  }
}

void cmd_account(const RunConfig& config) {
  PrivacyLedger ledger(config.privacy, config.federated.noise_multiplier,
                       config.federated.rounds);
  for (int t = 0; t < config.federated.rounds; ++t) ledger.record_round();
  ledger.dump(std::cout);
}

}  // namespace

int main(int argc, char** argv) {
  // stdout carries command output (account, evaluate); logs go to stderr.
  spdlog::set_default_logger(spdlog::stderr_color_mt("flog"));
  CLI::App app{"Federated log anomaly detection with LoRA adapters"};
  app.require_subcommand(1);
  Options opt;

  struct Command {
    const char* name;
    const char* help;
    void (*run)(const RunConfig&);
  };
  const Command commands[] = {
      {"synth", "Write the synthetic corpus to synthetic.log", cmd_synth},
      {"parse", "Ingest, mine templates and build windows", cmd_parse},
      {"partition", "Assign nodes to clients", cmd_partition},
      {"train", "Run federated training", cmd_train},
      {"evaluate", "Score the checkpoint on the held-out windows", cmd_evaluate},
      {"account", "Print the privacy ledger for the configured run", cmd_account},
      {"run", "Every stage end to end",
       [](const RunConfig& c) { run_pipeline(c, c.output.directory); }},
  };
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", opt.config_path, "JSON config file")->required();
    sub->add_option("--seed", opt.seed, "Root seed, overrides the config");
    sub->add_option("--out", opt.out_dir, "Output directory");
    subs.emplace_back(sub, &c);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig config = load(opt);
    for (const auto& [sub, cmd] : subs) {
      if (sub->parsed()) cmd->run(config);
    }
  } catch (const ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return 2;
  } catch (const StageError& e) {
    spdlog::error("stage {} failed: {}", e.stage(), e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
