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

// One federated round: sample participants, broadcast w_t, train each client
// locally with FedProx, clip every delta to norm C, take the n_k-weighted mean
// of the deltas and add N(0, sigma^2 C^2) to the trainable coordinates.

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "flog/common.h"
#include "flog/evaluation.h"
#include "flog/lora_transformer.h"
#include "flog/partitioner.h"
#include "flog/privacy_accountant.h"
#include "flog/window_builder.h"

namespace flog {

struct FedConfig {
  int k_clients = 14;
  int rounds = 10;
  double participation_rate = 0.5;
  int local_epochs = 10;
  double learning_rate = 2e-5;
  double proximal_mu = 0.01;
  double clip_bound = 1.0;
  double noise_multiplier = 0.01;
  int batch_size = 8;
  double weight_decay = 0.01;
  double warmup_ratio = 0.1;
  int grad_accum_steps = 2;
  double max_grad_norm = 1.0;
  uint64_t seed = 0;

  void validate() const;
};

struct UpdateDelta {
  int client_id = 0;
  FlatParams delta;
  int64_t n_samples = 0;
  double pre_clip_norm = 0.0;
};

// Raised when no participant contributed samples; the round is skipped.
class AggregationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Named random streams of a run.
Rng participation_rng(uint64_t seed, int round);
Rng client_rng(uint64_t seed, int round, int client);
Rng server_rng(uint64_t seed);

// Each client joins independently with probability q; an empty draw is redrawn.
// Returns sorted client ids.
std::vector<int> select_participants(int k_clients, double q, Rng& rng);

// Visiting order of a client's samples for one epoch.
std::vector<size_t> epoch_order(size_t n, Rng& rng);

// Number of optimizer updates local_train performs.
int64_t optimizer_steps(int64_t n_samples, const FedConfig& cfg);

// eta * min(1, (step + 1) / warmup_steps), eta when there is no warmup.
double learning_rate_at(int64_t step, int64_t warmup_steps, double eta);

struct StepReport {
  int epoch = 0;
  int64_t batch = 0;            // micro-batch index within the run
  int64_t optimizer_step = -1;  // set when this batch closed an update
  double ce_loss = 0.0;         // mean weighted CE over the batch
  double prox_loss = 0.0;
  double total_loss = 0.0;
  double learning_rate = 0.0;
  double grad_norm = 0.0;  // pre-clip norm of the applied update
};

// Called after every micro-batch with the current local parameters.
using StepObserver = std::function<void(const StepReport&, const FlatParams&)>;

// Runs E local epochs from `global` and returns w_k - w_t (not yet clipped).
// `rng` drives shuffling and dropout. An empty client returns a zero delta
// with n_samples = 0.
UpdateDelta local_train(const ClientDataset& client, const ModelState& global,
                        const FedConfig& cfg, Rng& rng,
                        const StepObserver& observer = {});

// delta * min(1, C / ||delta||). Inputs inside the ball pass through unchanged.
FlatParams clip_update(const FlatParams& delta, double clip_bound);

// w_t + sum_k (n_k / n) delta_k over deltas with n_k > 0. Every delta must
// satisfy ||delta|| <= clip_bound + 1e-9 (ContractError otherwise). Throws
// AggregationError when the total sample count is zero.
FlatParams aggregate(std::span<const UpdateDelta> deltas, const FlatParams& w_t,
                     double clip_bound = std::numeric_limits<double>::infinity());

// w + N(0, (sigma C)^2) per coordinate; sigma == 0 returns w untouched.
FlatParams add_noise(const FlatParams& w, double sigma, double clip_bound,
                     Rng& rng);

// Eval-mode probabilities for each window.
std::vector<double> score_windows(const ModelState& state,
                                  std::span<const WindowSequence> windows);

// Worker cap from FLOG_THREADS, else the hardware concurrency.
int worker_threads();

class FederatedTrainer {
 public:
  FederatedTrainer(ModelState initial, std::vector<ClientDataset> clients,
                   std::vector<WindowSequence> test_set, FedConfig cfg,
                   PrivacyLedger ledger);

  // Executes the next round. Returns nothing when aggregation failed and the
  // round was skipped.
  std::optional<RoundMetrics> run_round();

  // Runs every remaining round, invoking `on_round` after each completed one.
  void run(const std::function<void(const RoundMetrics&)>& on_round = {});

  const ModelState& state() const { return state_; }
  const PrivacyLedger& ledger() const { return ledger_; }
  const std::vector<RoundMetrics>& metrics() const { return metrics_; }
  int next_round() const { return round_; }

  // Whether wall_seconds records real time; off keeps metrics reproducible.
  void set_record_wall_time(bool on) { record_wall_time_ = on; }

 private:
  ModelState state_;
  std::vector<ClientDataset> clients_;
  std::vector<WindowSequence> test_set_;
  std::vector<int> test_labels_;
  FedConfig cfg_;
  PrivacyLedger ledger_;
  Rng server_rng_;
  std::vector<RoundMetrics> metrics_;
  int round_ = 0;
  bool record_wall_time_ = false;
};

}  // namespace flog
