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

#include "flog/privacy_accountant.h"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <limits>
#include <ostream>

#include "flog/common.h"

namespace flog {

double rdp_gaussian(double sigma, double alpha) {
  if (!(sigma >= 0.0)) throw ContractError("rdp_gaussian: sigma must be >= 0");
  if (!(alpha > 1.0)) throw ContractError("rdp_gaussian: alpha must be > 1");
  if (sigma == 0.0) return std::numeric_limits<double>::infinity();
  return alpha / (2.0 * sigma * sigma);
}

RdpCurve gaussian_curve(double sigma) {
  return [sigma](double alpha) { return rdp_gaussian(sigma, alpha); };
}

RdpCurve compose(RdpCurve per_round, int64_t rounds) {
  if (rounds < 0) throw ContractError("compose: negative round count");
  if (rounds == 0) return [](double) { return 0.0; };
  return [per_round = std::move(per_round), rounds](double alpha) {
    return static_cast<double>(rounds) * per_round(alpha);
  };
}

const std::vector<double>& alpha_grid() {
  static const std::vector<double> grid = [] {
    std::vector<double> g;
    for (int i = 1; i <= 2044; ++i) g.push_back(1.0 + 0.25 * i);
    return g;
  }();
  return grid;
}

EpsilonBound to_epsilon(const RdpCurve& total, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) {
    throw ContractError("to_epsilon: delta must lie in (0, 1)");
  }
  const double log_inv_delta = std::log(1.0 / delta);
  EpsilonBound best{std::numeric_limits<double>::infinity(), alpha_grid().front()};
  for (double alpha : alpha_grid()) {
    const double eps = total(alpha) + log_inv_delta / (alpha - 1.0);
    if (eps < best.epsilon) best = {eps, alpha};
  }
  return best;
}

void PrivacyConfig::validate() const {
  if (!(target_epsilon > 0.0)) {
    throw ConfigError("target_epsilon", "must be > 0");
  }
  if (!(delta > 0.0 && delta < 1.0)) {
    throw ConfigError("delta", "must lie in (0, 1)");
  }
}

PrivacyLedger::PrivacyLedger(PrivacyConfig config, double noise_multiplier,
                             int64_t planned_rounds)
    : config_(config), sigma_(noise_multiplier), planned_rounds_(planned_rounds) {
  config_.validate();
  if (!(sigma_ >= 0.0)) throw ConfigError("noise_multiplier", "must be >= 0");
  if (planned_rounds_ < 1) throw ConfigError("rounds", "must be >= 1");
  bound_ = to_epsilon([](double) { return 0.0; }, config_.delta);
  if (sigma_ == 0.0) {
    warn("noise multiplier is 0: every round has unbounded privacy loss");
  }
}

void PrivacyLedger::record_round() {
  ++rounds_;
  if (sigma_ == 0.0) {
    bound_ = {std::numeric_limits<double>::infinity(), alpha_grid().front()};
  } else {
    bound_ = to_epsilon(compose(gaussian_curve(sigma_), rounds_), config_.delta);
  }
  eps_linear_ = config_.target_epsilon * static_cast<double>(rounds_) /
                static_cast<double>(planned_rounds_);
  if (bound_.epsilon > config_.target_epsilon && !over_budget_warned_) {
    over_budget_warned_ = true;
    warn(fmt::format("RDP epsilon {:.4g} after round {} exceeds target {}",
                     bound_.epsilon, rounds_, config_.target_epsilon));
  }
}

void PrivacyLedger::warn(std::string message) {
  spdlog::warn("privacy: {}", message);
  warnings_.push_back(std::move(message));
}

void PrivacyLedger::dump(std::ostream& out) const {
  out << fmt::format("sigma={}\n", sigma_)
      << fmt::format("delta={}\n", config_.delta)
      << fmt::format("rounds={}\n", rounds_)
      << fmt::format("eps_rdp={}\n", bound_.epsilon)
      << fmt::format("eps_linear={}\n", eps_linear_)
      << fmt::format("alpha_star={}\n", bound_.alpha);
}

}  // namespace flog
