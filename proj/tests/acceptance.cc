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

// Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
// failure. Tolerances and runtime budgets are fixed here.

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "flog/evaluation.h"
#include "flog/federated_trainer.h"
#include "flog/lora_transformer.h"
#include "flog/partitioner.h"
#include "flog/pipeline.h"
#include "flog/privacy_accountant.h"
#include "flog/window_builder.h"
#include "support/oracles.h"

namespace fs = std::filesystem;
using namespace flog;

namespace {

constexpr double kGradRelTol = 1e-4;
constexpr double kClipSlack = 1e-9;
constexpr double kNoiseVarTol = 0.05;
constexpr double kNoiseNormTol = 0.10;
constexpr double kAccountantTol = 0.02;
constexpr double kDegeneracyTol = 1e-12;
constexpr double kTableF1Tol = 5e-5;
constexpr double kMinF1 = 0.90;
constexpr double kMinAuc = 0.95;

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

int failures = 0;

void report(int id, const std::string& name, double budget_s,
            const std::function<Outcome()>& check) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  if (secs > budget_s) {
    o.pass = false;
    o.detail += fmt::format(" over runtime budget {:.0f}s", budget_s);
  }
  if (!o.pass) ++failures;
  fmt::print("{} [{}] {}: {} ({:.2f}s)\n", o.pass ? "PASS" : "FAIL", id, name,
             o.detail, secs);
  std::fflush(stdout);
}

std::vector<EventId> random_sequence(Rng& rng, const ModelConfig& c, int len) {
  std::uniform_int_distribution<EventId> id(0, c.vocab_size - 3);
  std::vector<EventId> s(len);
  for (auto& v : s) v = id(rng);
  return s;
}

ModelConfig gradient_config() {
  ModelConfig c;
  c.vocab_size = 12;
  c.hidden_dim = 8;
  c.head_dim = 8;
  c.n_heads = 1;
  c.n_layers = 1;
  c.lora_rank = 2;
  c.lora_alpha = 4;
  c.lora_dropout = 0.1;
  c.max_sequence_length = 4;
  c.ffn_dim = 16;
  return c;
}

Outcome gradient_check() {
  const ModelConfig c = gradient_config();
  double worst = 0.0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    ModelState s = ModelState::init(c, seed);
    Rng rng(500 + seed);
    oracle::randomize_trainable(s, rng);
    FlatParams anchor = s.flatten();
    for (double& v : anchor.values) v -= 0.05;
    const auto seq = random_sequence(rng, c, 4);
    const int y = static_cast<int>(seed % 2);
    const ClassWeights cw{0.6, 3.0};
    // Alternate eval mode and train mode with a fixed dropout mask.
    const Mode mode = seed % 2 ? Mode::kTrain : Mode::kEval;
    Rng mask(900 + seed);
    const auto fwd = forward(s, seq, mode, &mask);
    const FlatParams g = backward(s, fwd.cache, y, cw, 0.01, anchor);
    const auto fd =
        oracle::finite_difference_gradient(s, seq, y, cw, 0.01, anchor, mode, 900 + seed);
    for (size_t i = 0; i < fd.size(); ++i) {
      worst = std::max(worst, oracle::relative_error(g.values[i], fd[i]));
    }
  }
  return {worst < kGradRelTol, fmt::format("max relative error {:.3e} over 20 seeds", worst)};
}

Outcome lora_identity() {
  ModelConfig c = gradient_config();
  c.max_sequence_length = 32;
  ModelState s = ModelState::init(c, 77);
  Rng rng(78);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < s.head.weight.size(); ++i) s.head.weight(i) = n(rng);
  std::uniform_int_distribution<int> len(1, c.max_sequence_length);
  int mismatches = 0;
  for (int t = 0; t < 100; ++t) {
    const auto seq = random_sequence(rng, c, len(rng));
    if (forward(s, seq, Mode::kEval, nullptr, true).prob !=
        forward(s, seq, Mode::kEval, nullptr, false).prob) {
      ++mismatches;
    }
  }
  return {mismatches == 0, fmt::format("{} of 100 sequences differ", mismatches)};
}

Outcome dp_statistics() {
  std::mt19937_64 rng(31);
  std::lognormal_distribution<double> scale(0.0, 2.0);
  std::normal_distribution<double> unit(0.0, 1.0);
  const double c = 1.0;
  double max_norm = 0.0;
  for (int t = 0; t < 10000; ++t) {
    std::vector<double> v(32);
    const double s = scale(rng);
    for (double& x : v) x = s * unit(rng);
    max_norm = std::max(max_norm, clip_update({v, nullptr}, c).l2_norm());
  }
  const bool clip_ok = max_norm <= c + kClipSlack;

  const double sigma = 1.5;
  Rng noise_rng(32);
  const auto draws = add_noise({std::vector<double>(100000, 0.0), nullptr}, sigma, c,
                               noise_rng);
  double mean = 0.0, var = 0.0;
  for (double x : draws.values) mean += x;
  mean /= static_cast<double>(draws.size());
  for (double x : draws.values) var += (x - mean) * (x - mean);
  var /= static_cast<double>(draws.size() - 1);
  const double var_err = std::abs(var - sigma * sigma * c * c) / (sigma * sigma * c * c);

  const auto big = add_noise({std::vector<double>(10000, 0.0), nullptr}, sigma, c,
                             noise_rng);
  const double expected_norm = sigma * c * std::sqrt(10000.0);
  const double norm_err = std::abs(big.l2_norm() - expected_norm) / expected_norm;
  return {clip_ok && var_err < kNoiseVarTol && norm_err < kNoiseNormTol,
          fmt::format("max clipped norm {:.12f}, variance error {:.4f}, norm error {:.4f}",
                      max_norm, var_err, norm_err)};
}

double grid_epsilon(double sigma, int64_t t, double delta) {
  return to_epsilon(compose(gaussian_curve(sigma), t), delta).epsilon;
}

Outcome accountant() {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> sigma(0.5, 5.0);
  std::uniform_int_distribution<int64_t> rounds(1, 100);
  std::uniform_real_distribution<double> log_delta(std::log(1e-7), std::log(1e-3));
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    const double s = sigma(rng);
    const int64_t t = rounds(rng);
    const double d = std::exp(log_delta(rng));
    const double dense = oracle::dense_epsilon(s, t, d).epsilon;
    worst = std::max(worst, std::abs(grid_epsilon(s, t, d) - dense) / dense);
  }
  const double sigmas[] = {0.5, 1.0, 2.0, 3.5, 5.0};
  const int64_t ts[] = {1, 5, 20, 50, 100};
  const double deltas[] = {1e-7, 1e-5, 1e-3};
  int violations = 0;
  for (int a = 0; a < 5; ++a) {
    for (int b = 0; b < 5; ++b) {
      for (int d = 0; d < 3; ++d) {
        const double e = grid_epsilon(sigmas[a], ts[b], deltas[d]);
        if (a + 1 < 5 && !(grid_epsilon(sigmas[a + 1], ts[b], deltas[d]) <= e)) ++violations;
        if (b + 1 < 5 && !(grid_epsilon(sigmas[a], ts[b + 1], deltas[d]) >= e)) ++violations;
        if (d + 1 < 3 && !(grid_epsilon(sigmas[a], ts[b], deltas[d + 1]) <= e)) ++violations;
      }
    }
  }
  return {worst < kAccountantTol && violations == 0,
          fmt::format("max relative gap to dense {:.4f}, {} monotonicity violations",
                      worst, violations)};
}

Outcome degeneracy() {
  const double diff = oracle::degeneracy_max_diff(5, 50);
  return {diff < kDegeneracyTol, fmt::format("max abs diff {:.3e} over 50 steps", diff)};
}

Outcome partition_windows() {
  std::mt19937_64 rng(61);
  int imbalance = 0, lost = 0;
  for (int t = 0; t < 200; ++t) {
    const int n_nodes = 1 + static_cast<int>(rng() % 60);
    const int k = 1 + static_cast<int>(rng() % 20);
    std::vector<std::string> nodes;
    std::vector<WindowSequence> windows;
    for (int i = 0; i < n_nodes; ++i) {
      nodes.push_back("node" + std::to_string(i));
      for (int w = 0; w < 3; ++w) {
        WindowSequence seq;
        seq.node_id = nodes.back();
        seq.start_time = w;
        seq.key_ids = {1};
        windows.push_back(seq);
      }
    }
    const auto assignment = round_robin_assign(nodes, k);
    std::vector<int> per_client(k, 0);
    for (const auto& [node, client] : assignment) ++per_client[client];
    imbalance = std::max(imbalance, *std::max_element(per_client.begin(), per_client.end()) -
                                        *std::min_element(per_client.begin(), per_client.end()));
    size_t total = 0;
    for (const auto& c : materialize(windows, assignment, k)) total += c.sequences.size();
    if (total != windows.size()) ++lost;
  }

  int count_mismatch = 0, label_mismatch = 0, key_mismatch = 0;
  std::uniform_int_distribution<int> n_records(0, 300);
  for (int t = 0; t < 1000; ++t) {
    WindowConfig cfg;
    cfg.step_seconds = 1 + static_cast<int>(rng() % 120);
    cfg.window_seconds = cfg.step_seconds + static_cast<int>(rng() % 600);
    cfg.min_logs_per_window = 1 + static_cast<int>(rng() % 8);
    cfg.max_sequence_length = 1 + static_cast<int>(rng() % 40);
    const auto records = oracle::random_node_stream(rng, n_records(rng), 3600, 0.03);
    const auto got = build_windows(records, cfg);
    const auto want = oracle::enumerate_windows(records, cfg);
    if (got.size() != want.size()) {
      ++count_mismatch;
      continue;
    }
    for (size_t i = 0; i < got.size(); ++i) {
      // The label is the OR over every record in [start, start + window).
      int any = 0;
      for (const auto& r : records) {
        if (r.timestamp >= got[i].start_time &&
            r.timestamp < got[i].start_time + cfg.window_seconds && r.is_anomalous) {
          any = 1;
        }
      }
      if (got[i].label != any || got[i].label != want[i].label) ++label_mismatch;
      if (got[i].key_ids != want[i].key_ids || got[i].start_time != want[i].start_time) {
        ++key_mismatch;
      }
    }
  }
  return {imbalance <= 1 && lost == 0 && count_mismatch == 0 && label_mismatch == 0 &&
              key_mismatch == 0,
          fmt::format("max client imbalance {}, {} lossy partitions, {} count / {} label / "
                      "{} content mismatches over 1000 streams",
                      imbalance, lost, count_mismatch, label_mismatch, key_mismatch)};
}

struct CsvRow {
  double precision, recall, f1, auc;
};

std::vector<CsvRow> read_rounds(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::stringstream h(line);
    for (std::string cell; std::getline(h, cell, ',');) header.push_back(cell);
  }
  auto column = [&](const std::string& name) {
    return static_cast<size_t>(std::find(header.begin(), header.end(), name) - header.begin());
  };
  const size_t p = column("precision"), r = column("recall"), f = column("f1"),
               a = column("roc_auc");
  std::vector<CsvRow> rows;
  while (std::getline(in, line)) {
    std::vector<double> cells;
    std::stringstream s(line);
    for (std::string cell; std::getline(s, cell, ',');) cells.push_back(std::stod(cell));
    rows.push_back({cells.at(p), cells.at(r), cells.at(f), cells.at(a)});
  }
  return rows;
}

Outcome metric_oracles(const fs::path& e2e_rounds) {
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_auc = 0.0;
  for (int t = 0; t < 50; ++t) {
    std::vector<double> s(200);
    std::vector<int> y(200);
    for (int i = 0; i < 200; ++i) {
      y[i] = i < 2 ? i : u(rng) < 0.25;
      s[i] = t % 2 ? std::round(u(rng) * 20) / 20 : u(rng) + 0.3 * y[i];
    }
    worst_auc = std::max(worst_auc, std::abs(*roc_auc(s, y) - oracle::pairwise_auc(s, y)));
  }

  // F1 = 2PR / (P + R) on every emitted metrics row and on random confusions.
  double worst_row = 0.0;
  size_t rows = 0;
  auto check_row = [&](double p, double r, double f1, double tol) {
    const double want = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    worst_row = std::max(worst_row, std::abs(f1 - want) - tol);
    ++rows;
  };
  std::uniform_int_distribution<int64_t> count(0, 40);
  for (int t = 0; t < 1000; ++t) {
    const BinaryMetrics m = prf1_accuracy({count(rng), count(rng), count(rng), count(rng)});
    check_row(m.precision, m.recall, m.f1, 1e-15);
  }
  // Columns are printed with six decimals.
  for (const auto& r : read_rounds(e2e_rounds)) check_row(r.precision, r.recall, r.f1, 2e-6);

  const double table = f1_score(0.9997, 0.9182);
  const bool table_ok = std::abs(table - 0.9572) <= kTableF1Tol;
  return {worst_auc < 1e-12 && worst_row <= 0.0 && table_ok,
          fmt::format("max AUC gap {:.2e}, F1 identity on {} rows, F1(0.9997, 0.9182) = {:.6f}",
                      worst_auc, rows, table)};
}

fs::path run_dir(const std::string& tag) {
  return fs::temp_directory_path() /
         fmt::format("flog_acceptance_{}_{}", ::getpid(), tag);
}

RunConfig e2e_config() {
  return load_config(fs::path(FLOG_SOURCE_DIR) / "configs" / "synthetic.json");
}

Outcome end_to_end(const fs::path& out) {
  const RunConfig c = e2e_config();
  const auto& f = c.federated;
  const auto& s = c.dataset.synthetic;
  const bool setup = s.n_templates == 20 && s.n_nodes == 8 && s.n_lines == 50000 &&
                     s.anomaly_rate == 0.05 && s.anomaly_template_ids.size() == 3 &&
                     f.k_clients == 4 && f.rounds == 5 && f.local_epochs == 2 &&
                     f.noise_multiplier == 0.1 && f.clip_bound == 1.0 &&
                     f.proximal_mu == 0.01;
  fs::remove_all(out);
  run_pipeline(c, out);
  const auto rows = read_rounds(out / artifacts::kRounds);
  if (rows.size() != 5) return {false, fmt::format("{} metrics rows", rows.size())};
  const CsvRow& last = rows.back();
  return {setup && last.f1 >= kMinF1 && last.auc >= kMinAuc,
          fmt::format("final-round F1 {:.4f}, ROC-AUC {:.4f}{}", last.f1, last.auc,
                      setup ? "" : ", config differs from the required setup")};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome reproducibility(const fs::path& first) {
  const fs::path second = run_dir("repeat");
  fs::remove_all(second);
  run_pipeline(e2e_config(), second);
  const bool rounds = slurp(first / artifacts::kRounds) == slurp(second / artifacts::kRounds);
  const bool ckpt =
      slurp(first / artifacts::kCheckpoint) == slurp(second / artifacts::kCheckpoint);
  fs::remove_all(second);
  return {rounds && ckpt, fmt::format("rounds.csv {}, model.ckpt {}",
                                      rounds ? "identical" : "differs",
                                      ckpt ? "identical" : "differs")};
}

Outcome ledger_reproduction() {
  PrivacyLedger ledger({10.0, 1e-5}, 1.5, 10);
  int wrong = 0;
  double at_three = 0.0;
  for (int k = 1; k <= 10; ++k) {
    ledger.record_round();
    if (ledger.eps_spent_linear() != static_cast<double>(k)) ++wrong;
    if (k == 3) at_three = ledger.eps_spent_linear();
  }
  return {wrong == 0, fmt::format("{} rounds off schedule, eps after round 3 = {}", wrong,
                                  at_three)};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const fs::path e2e = run_dir("e2e");

  report(1, "gradient vs finite differences", 10, gradient_check);
  report(2, "adapter identity at init", 5, lora_identity);
  report(3, "clipping and noise statistics", 30, dp_statistics);
  report(4, "accountant vs dense minimization", 10, accountant);
  report(5, "federated degeneracy", 30, degeneracy);
  report(6, "partition, windows and labels", 30, partition_windows);
  // The metric check also reads the end-to-end rows, so the run goes first.
  std::function<Outcome()> e2e_run = [&] { return end_to_end(e2e); };
  report(8, "synthetic end-to-end", 600, e2e_run);
  report(7, "metric oracles", 30, [&] { return metric_oracles(e2e / artifacts::kRounds); });
  report(9, "reproducibility", 600, [&] { return reproducibility(e2e); });
  report(10, "linear ledger schedule", 5, ledger_reproduction);
  fs::remove_all(e2e);

  fmt::print("{} of 10 criteria passed\n", 10 - failures);
  return failures == 0 ? 0 : 1;
}
