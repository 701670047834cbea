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

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "flog/window_builder.h"

namespace flog {

// node_id -> client id in [0, K).
using Assignment = std::map<std::string, int>;

struct ClientDataset {
  int client_id = 0;
  std::vector<WindowSequence> sequences;

  // n_k in the aggregation weights.
  int64_t n_samples() const { return static_cast<int64_t>(sequences.size()); }
};

// Node at position i goes to client i mod k_clients. Throws ConfigError when
// k_clients < 1 and ContractError on duplicate node ids.
Assignment round_robin_assign(std::span<const std::string> nodes,
                              int k_clients);

// Exact partition of `windows` into k_clients datasets, preserving window
// order within each client. Throws ContractError for a node missing from the
// assignment.
std::vector<ClientDataset> materialize(std::span<const WindowSequence> windows,
                                       const Assignment& assignment,
                                       int k_clients);

// Assignment dump: node_id \t client_id, written in `node_order`.
void write_assignment(std::ostream& out, std::span<const std::string> node_order,
                      const Assignment& assignment);
Assignment read_assignment(std::istream& in);

}  // namespace flog
