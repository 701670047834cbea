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
#include <iosfwd>
#include <optional>
#include <span>

namespace flog {

struct Confusion {
  int64_t tp = 0, fp = 0, tn = 0, fn = 0;

  int64_t total() const { return tp + fp + tn + fn; }
  bool operator==(const Confusion&) const = default;
};

// score >= threshold predicts anomalous. Throws ContractError on a length
// mismatch or empty input.
Confusion confusion(std::span<const double> scores, std::span<const int> labels,
                    double threshold = 0.5);

struct BinaryMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  // Set when the metric's denominator was zero and the value reads as 0.
  bool precision_degenerate = false;
  bool recall_degenerate = false;
  bool f1_degenerate = false;
};

BinaryMetrics prf1_accuracy(const Confusion& c);

// 2PR / (P + R), or 0 when P + R == 0.
double f1_score(double precision, double recall);

// Mann-Whitney AUC with average ranks for ties. Empty when either class is
// missing.
std::optional<double> roc_auc(std::span<const double> scores,
                              std::span<const int> labels);

struct RoundMetrics {
  int round = 0;
  int participants = 0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double roc_auc = 0.0;  // NaN when undefined
  double eps_spent = 0.0;
  double mean_pre_clip_norm = 0.0;
  double wall_seconds = 0.0;
};

// Fills the classification columns of a metrics row from held-out scores.
RoundMetrics score_round(std::span<const double> scores,
                         std::span<const int> labels);

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const RoundMetrics& m);

}  // namespace flog
