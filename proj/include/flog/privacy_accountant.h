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

// Renyi-DP accounting for the server-side Gaussian mechanism. Each round
// releases the clipped aggregate plus N(0, sigma^2 C^2 I), which has RDP
// alpha / (2 sigma^2) at order alpha. Rounds compose additively and the total
// converts to (eps, delta) by minimizing over a fixed order grid. Participation
// sampling is not credited, so the bound is conservative.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace flog {

// Order alpha -> Renyi divergence.
using RdpCurve = std::function<double(double)>;

// alpha / (2 sigma^2). sigma == 0 returns +inf (unbounded privacy loss).
// Throws ContractError for sigma < 0 or alpha <= 1.
double rdp_gaussian(double sigma, double alpha);

RdpCurve gaussian_curve(double sigma);

// alpha -> rounds * per_round(alpha).
RdpCurve compose(RdpCurve per_round, int64_t rounds);

// {1.25, 1.5, ..., 512}.
const std::vector<double>& alpha_grid();

struct EpsilonBound {
  double epsilon = 0.0;
  double alpha = 0.0;  // minimizing order
};

// min over the grid of rdp(alpha) + ln(1/delta) / (alpha - 1).
// Throws ContractError unless 0 < delta < 1.
EpsilonBound to_epsilon(const RdpCurve& total, double delta);

struct PrivacyConfig {
  double target_epsilon = 10.0;
  double delta = 1e-5;

  void validate() const;
};

class PrivacyLedger {
 public:
  // Warns immediately when noise_multiplier is zero.
  PrivacyLedger(PrivacyConfig config, double noise_multiplier,
                int64_t planned_rounds);

  // Records one more completed round of the mechanism.
  void record_round();

  double target_epsilon() const { return config_.target_epsilon; }
  double delta() const { return config_.delta; }
  double noise_multiplier() const { return sigma_; }
  int64_t planned_rounds() const { return planned_rounds_; }
  int64_t rounds_completed() const { return rounds_; }
  double eps_spent_rdp() const { return bound_.epsilon; }
  double alpha_star() const { return bound_.alpha; }
  // target_epsilon * rounds_completed / planned_rounds.
  double eps_spent_linear() const { return eps_linear_; }

  // Messages that were also logged as warnings.
  const std::vector<std::string>& warnings() const { return warnings_; }

  // key=value lines: sigma, delta, rounds, eps_rdp, eps_linear, alpha_star.
  void dump(std::ostream& out) const;

 private:
  void warn(std::string message);

  PrivacyConfig config_;
  double sigma_;
  int64_t planned_rounds_;
  int64_t rounds_ = 0;
  EpsilonBound bound_;
  double eps_linear_ = 0.0;
  bool over_budget_warned_ = false;
  std::vector<std::string> warnings_;
};

}  // namespace flog
