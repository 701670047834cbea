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

#include "flog/evaluation.h"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <vector>

#include "flog/common.h"

namespace flog {

Confusion confusion(std::span<const double> scores, std::span<const int> labels,
                    double threshold) {
  if (scores.size() != labels.size()) {
    throw ContractError("confusion: scores and labels differ in length");
  }
  if (scores.empty()) throw ContractError("confusion: empty input");
  Confusion c;
  for (size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    const bool actual = labels[i] == 1;
    if (predicted && actual) ++c.tp;
    else if (predicted) ++c.fp;
    else if (actual) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double f1_score(double precision, double recall) {
  const double sum = precision + recall;
  return sum > 0.0 ? 2.0 * precision * recall / sum : 0.0;
}

BinaryMetrics prf1_accuracy(const Confusion& c) {
  BinaryMetrics m;
  const int64_t predicted = c.tp + c.fp;
  const int64_t actual = c.tp + c.fn;
  if (predicted > 0) {
    m.precision = static_cast<double>(c.tp) / static_cast<double>(predicted);
  } else {
    m.precision_degenerate = true;
  }
  if (actual > 0) {
    m.recall = static_cast<double>(c.tp) / static_cast<double>(actual);
  } else {
    m.recall_degenerate = true;
  }
  m.f1 = f1_score(m.precision, m.recall);
  m.f1_degenerate = m.precision + m.recall == 0.0;
  if (c.total() > 0) {
    m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  }
  return m;
}

std::optional<double> roc_auc(std::span<const double> scores,
                              std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ContractError("roc_auc: scores and labels differ in length");
  }
  const size_t n = scores.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  double positive_rank_sum = 0.0;
  int64_t n_pos = 0;
  for (size_t i = 0; i < n;) {
    size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // Ranks i+1 .. j share their mean.
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        positive_rank_sum += rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const int64_t n_neg = static_cast<int64_t>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos);
  return (positive_rank_sum - np * (np + 1.0) / 2.0) /
         (np * static_cast<double>(n_neg));
}

RoundMetrics score_round(std::span<const double> scores,
                         std::span<const int> labels) {
  const BinaryMetrics m = prf1_accuracy(confusion(scores, labels));
  if (m.precision_degenerate || m.recall_degenerate) {
    spdlog::warn("evaluation: degenerate precision/recall on {} samples",
                 scores.size());
  }
  RoundMetrics row;
  row.accuracy = m.accuracy;
  row.precision = m.precision;
  row.recall = m.recall;
  row.f1 = m.f1;
  const auto auc = roc_auc(scores, labels);
  if (!auc) spdlog::warn("evaluation: ROC-AUC undefined on single-class labels");
  row.roc_auc = auc.value_or(std::numeric_limits<double>::quiet_NaN());
  return row;
}

void write_metrics_header(std::ostream& out) {
  out << "round,participants,accuracy,precision,recall,f1,roc_auc,eps_spent,"
         "mean_pre_clip_norm,wall_seconds\n";
}

void write_metrics_row(std::ostream& out, const RoundMetrics& m) {
  out << fmt::format("{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.3f}\n",
                     m.round, m.participants, m.accuracy, m.precision, m.recall,
                     m.f1, m.roc_auc, m.eps_spent, m.mean_pre_clip_norm,
                     m.wall_seconds);
}

}  // namespace flog
