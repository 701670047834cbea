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

#include "flog/federated_trainer.h"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <numeric>
#include <random>
#include <thread>

namespace flog {
namespace {

void axpy(double a, const std::vector<double>& x, std::vector<double>& y) {
  for (size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

void FedConfig::validate() const {
  if (k_clients < 1) throw ConfigError("k_clients", "must be >= 1");
  if (rounds < 1) throw ConfigError("rounds", "must be >= 1");
  if (!(participation_rate > 0.0 && participation_rate <= 1.0)) {
    throw ConfigError("participation_rate", "must lie in (0, 1]");
  }
  if (local_epochs < 1) throw ConfigError("local_epochs", "must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate", "must be > 0");
  if (!(proximal_mu >= 0.0)) throw ConfigError("proximal_mu", "must be >= 0");
  if (!(clip_bound > 0.0)) throw ConfigError("clip_bound", "must be > 0");
  if (!(noise_multiplier >= 0.0)) {
    throw ConfigError("noise_multiplier", "must be >= 0");
  }
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be >= 0");
  if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) {
    throw ConfigError("warmup_ratio", "must lie in [0, 1]");
  }
  if (grad_accum_steps < 1) {
    throw ConfigError("grad_accum_steps", "must be >= 1");
  }
  if (!(max_grad_norm > 0.0)) throw ConfigError("max_grad_norm", "must be > 0");
}

Rng participation_rng(uint64_t seed, int round) {
  return make_rng(seed, "participation", static_cast<uint64_t>(round));
}

Rng client_rng(uint64_t seed, int round, int client) {
  return make_rng(seed, "client", static_cast<uint64_t>(round),
                  static_cast<uint64_t>(client));
}

Rng server_rng(uint64_t seed) { return make_rng(seed, "server_noise"); }

std::vector<int> select_participants(int k_clients, double q, Rng& rng) {
  if (k_clients < 1) throw ContractError("select_participants: no clients");
  if (!(q > 0.0 && q <= 1.0)) {
    throw ContractError("select_participants: q outside (0, 1]");
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<int> chosen;
  while (chosen.empty()) {
    for (int k = 0; k < k_clients; ++k) {
      if (unit(rng) < q) chosen.push_back(k);
    }
  }
  return chosen;
}

std::vector<size_t> epoch_order(size_t n, Rng& rng) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle.
  for (size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  return order;
}

int64_t optimizer_steps(int64_t n_samples, const FedConfig& cfg) {
  if (n_samples <= 0 || cfg.local_epochs <= 0) return 0;
  const int64_t batches = (n_samples + cfg.batch_size - 1) / cfg.batch_size;
  const int64_t per_epoch =
      (batches + cfg.grad_accum_steps - 1) / cfg.grad_accum_steps;
  return per_epoch * cfg.local_epochs;
}

double learning_rate_at(int64_t step, int64_t warmup_steps, double eta) {
  if (warmup_steps <= 0) return eta;
  const double ramp =
      static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  return eta * std::min(1.0, ramp);
}

UpdateDelta local_train(const ClientDataset& client, const ModelState& global,
                        const FedConfig& cfg, Rng& rng,
                        const StepObserver& observer) {
  const FlatParams w_t = global.flatten();
  UpdateDelta out;
  out.client_id = client.client_id;
  out.delta = w_t.zeros_like();
  out.n_samples = client.n_samples();
  if (out.n_samples == 0) {
    spdlog::warn("client {}: no training windows, contributing nothing",
                 client.client_id);
    return out;
  }
  if (cfg.local_epochs <= 0) return out;

  const auto& data = client.sequences;
  const ClassWeights weights = class_weights_from_data(data);
  const int64_t total_steps = optimizer_steps(out.n_samples, cfg);
  // Guard the ceiling against products such as 0.1 * 30 = 3.0000000000000004.
  const auto warmup_steps = static_cast<int64_t>(
      std::ceil(cfg.warmup_ratio * static_cast<double>(total_steps) - 1e-9));
  const size_t n = data.size();
  const size_t batch = static_cast<size_t>(cfg.batch_size);
  const size_t batches_per_epoch = (n + batch - 1) / batch;

  ModelState local = global;
  FlatParams w = w_t;
  std::vector<double> accum(w.size(), 0.0);
  int accumulated = 0;
  int64_t step = 0;
  int64_t batch_index = 0;

  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    const std::vector<size_t> order = epoch_order(n, rng);
    for (size_t b = 0; b < batches_per_epoch; ++b) {
      const size_t lo = b * batch;
      const size_t hi = std::min(n, lo + batch);
      const double m = static_cast<double>(hi - lo);

      std::vector<double> grad(w.size(), 0.0);
      double ce_sum = 0.0;
      for (size_t i = lo; i < hi; ++i) {
        const WindowSequence& seq = data[order[i]];
        const ForwardResult fwd = forward(local, seq.key_ids, Mode::kTrain, &rng);
        ce_sum += weighted_cross_entropy(fwd.prob, seq.label, weights);
        const FlatParams g = backward_cross_entropy(local, fwd.cache, seq.label, weights);
        axpy(1.0, g.values, grad);
      }
      for (double& g : grad) g /= m;
      if (cfg.proximal_mu != 0.0) {
        for (size_t j = 0; j < grad.size(); ++j) {
          grad[j] += cfg.proximal_mu * (w.values[j] - w_t.values[j]);
        }
      }

      StepReport report;
      report.epoch = epoch;
      report.batch = batch_index++;
      report.ce_loss = ce_sum / m;
      report.prox_loss = proximal_term(w, w_t, cfg.proximal_mu);
      report.total_loss = report.ce_loss + report.prox_loss;

      axpy(1.0, grad, accum);
      ++accumulated;
      if (accumulated == cfg.grad_accum_steps || b + 1 == batches_per_epoch) {
        for (double& g : accum) g /= accumulated;
        const double gnorm = norm(accum);
        if (gnorm > cfg.max_grad_norm) {
          const double s = cfg.max_grad_norm / gnorm;
          for (double& g : accum) g *= s;
        }
        const double lr = learning_rate_at(step, warmup_steps, cfg.learning_rate);
        for (size_t j = 0; j < w.size(); ++j) {
          w.values[j] -= lr * (accum[j] + cfg.weight_decay * w.values[j]);
        }
        local.unflatten(w);
        report.optimizer_step = step++;
        report.learning_rate = lr;
        report.grad_norm = gnorm;
        std::fill(accum.begin(), accum.end(), 0.0);
        accumulated = 0;
      }
      if (observer) observer(report, w);
    }
  }

  for (size_t j = 0; j < w.size(); ++j) {
    out.delta.values[j] = w.values[j] - w_t.values[j];
  }
  out.pre_clip_norm = out.delta.l2_norm();
  return out;
}

FlatParams clip_update(const FlatParams& delta, double clip_bound) {
  if (!(clip_bound > 0.0)) throw ContractError("clip_update: C must be > 0");
  const double n = delta.l2_norm();
  if (n <= clip_bound) return delta;
  FlatParams out = delta;
  const double s = clip_bound / n;
  for (double& v : out.values) v *= s;
  return out;
}

FlatParams aggregate(std::span<const UpdateDelta> deltas, const FlatParams& w_t,
                     double clip_bound) {
  int64_t total = 0;
  for (const auto& d : deltas) {
    if (!d.delta.same_layout(w_t)) {
      throw ContractError("aggregate: delta layout differs from the global model");
    }
    if (d.delta.l2_norm() > clip_bound + 1e-9) {
      throw ContractError(fmt::format(
          "aggregate: client {} delta norm exceeds the clip bound", d.client_id));
    }
    if (d.n_samples < 0) throw ContractError("aggregate: negative sample count");
    total += d.n_samples;
  }
  if (total == 0) throw AggregationError("aggregate: no participant has samples");
  FlatParams out = w_t;
  for (const auto& d : deltas) {
    if (d.n_samples == 0) continue;
    const double weight =
        static_cast<double>(d.n_samples) / static_cast<double>(total);
    axpy(weight, d.delta.values, out.values);
  }
  return out;
}

FlatParams add_noise(const FlatParams& w, double sigma, double clip_bound,
                     Rng& rng) {
  if (!(sigma >= 0.0)) throw ContractError("add_noise: sigma must be >= 0");
  if (sigma == 0.0) return w;
  FlatParams out = w;
  std::normal_distribution<double> noise(0.0, sigma * clip_bound);
  for (double& v : out.values) v += noise(rng);
  return out;
}

std::vector<double> score_windows(const ModelState& state,
                                  std::span<const WindowSequence> windows) {
  std::vector<double> scores;
  scores.reserve(windows.size());
  for (const auto& w : windows) {
    scores.push_back(forward(state, w.key_ids, Mode::kEval).prob);
  }
  return scores;
}

int worker_threads() {
  if (const char* env = std::getenv("FLOG_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
    spdlog::warn("ignoring FLOG_THREADS={}", env);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

FederatedTrainer::FederatedTrainer(ModelState initial,
                                   std::vector<ClientDataset> clients,
                                   std::vector<WindowSequence> test_set,
                                   FedConfig cfg, PrivacyLedger ledger)
    : state_(std::move(initial)),
      clients_(std::move(clients)),
      test_set_(std::move(test_set)),
      cfg_(cfg),
      ledger_(std::move(ledger)),
      server_rng_(server_rng(cfg.seed)) {
  cfg_.validate();
  if (static_cast<int>(clients_.size()) != cfg_.k_clients) {
    throw ContractError("FederatedTrainer: client count differs from k_clients");
  }
  if (ledger_.noise_multiplier() != cfg_.noise_multiplier) {
    throw ContractError("FederatedTrainer: ledger sigma differs from the config");
  }
  test_labels_.reserve(test_set_.size());
  for (const auto& w : test_set_) test_labels_.push_back(w.label);
}

std::optional<RoundMetrics> FederatedTrainer::run_round() {
  const auto started = std::chrono::steady_clock::now();
  const int round = round_++;
  Rng prng = participation_rng(cfg_.seed, round);
  const std::vector<int> participants =
      select_participants(cfg_.k_clients, cfg_.participation_rate, prng);

  std::vector<UpdateDelta> deltas(participants.size());
  std::vector<std::exception_ptr> errors(participants.size());
  std::atomic<size_t> next{0};
  auto work = [&] {
    for (size_t i = next++; i < participants.size(); i = next++) {
      try {
        const int id = participants[i];
        Rng rng = client_rng(cfg_.seed, round, id);
        deltas[i] = local_train(clients_[id], state_, cfg_, rng);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n_threads =
      std::min<int>(worker_threads(), static_cast<int>(participants.size()));
  if (n_threads <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(work);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  double pre_clip_sum = 0.0;
  for (auto& d : deltas) {
    pre_clip_sum += d.pre_clip_norm;
    d.delta = clip_update(d.delta, cfg_.clip_bound);
  }

  const FlatParams w_t = state_.flatten();
  FlatParams averaged;
  try {
    averaged = aggregate(deltas, w_t, cfg_.clip_bound);
  } catch (const AggregationError& e) {
    spdlog::error("round {}: {}; round skipped", round, e.what());
    return std::nullopt;
  }
  state_.unflatten(add_noise(averaged, cfg_.noise_multiplier, cfg_.clip_bound,
                             server_rng_));
  ledger_.record_round();

  RoundMetrics m;
  if (!test_set_.empty()) {
    m = score_round(score_windows(state_, test_set_), test_labels_);
  } else {
    spdlog::warn("round {}: empty test set", round);
    m.roc_auc = std::numeric_limits<double>::quiet_NaN();
  }
  m.round = round;
  m.participants = static_cast<int>(participants.size());
  m.eps_spent = ledger_.eps_spent_rdp();
  m.mean_pre_clip_norm = pre_clip_sum / static_cast<double>(participants.size());
  if (record_wall_time_) {
    m.wall_seconds = std::chrono::duration<double>(
                         std::chrono::steady_clock::now() - started)
                         .count();
  }
  spdlog::info("round {}: participants={} f1={:.4f} auc={:.4f} eps_rdp={:.4g}",
               round, m.participants, m.f1, m.roc_auc, m.eps_spent);
  metrics_.push_back(m);
  return m;
}

void FederatedTrainer::run(const std::function<void(const RoundMetrics&)>& on_round) {
  while (round_ < cfg_.rounds) {
    const auto m = run_round();
    if (m && on_round) on_round(*m);
  }
}

}  // namespace flog
