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

#include "flog/partitioner.h"

#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "flog/common.h"

namespace flog {

Assignment round_robin_assign(std::span<const std::string> nodes,
                              int k_clients) {
  if (k_clients < 1) throw ConfigError("k_clients", "must be >= 1");
  Assignment assignment;
  for (size_t i = 0; i < nodes.size(); ++i) {
    auto [it, inserted] =
        assignment.emplace(nodes[i], static_cast<int>(i % k_clients));
    if (!inserted) {
      throw ContractError("round_robin_assign: duplicate node " + nodes[i]);
    }
  }
  return assignment;
}

std::vector<ClientDataset> materialize(std::span<const WindowSequence> windows,
                                       const Assignment& assignment,
                                       int k_clients) {
  if (k_clients < 1) throw ConfigError("k_clients", "must be >= 1");
  std::vector<ClientDataset> clients(k_clients);
  for (int k = 0; k < k_clients; ++k) clients[k].client_id = k;
  for (const auto& w : windows) {
    auto it = assignment.find(w.node_id);
    if (it == assignment.end()) {
      throw ContractError("materialize: node " + w.node_id +
                          " has no client assignment");
    }
    if (it->second < 0 || it->second >= k_clients) {
      throw ContractError("materialize: client id out of range for node " +
                          w.node_id);
    }
    clients[it->second].sequences.push_back(w);
  }
  return clients;
}

void write_assignment(std::ostream& out, std::span<const std::string> node_order,
                      const Assignment& assignment) {
  for (const auto& node : node_order) {
    out << node << '\t' << assignment.at(node) << '\n';
  }
}

Assignment read_assignment(std::istream& in) {
  Assignment assignment;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error("assignment dump: malformed row: " + line);
    }
    assignment[line.substr(0, tab)] = std::stoi(line.substr(tab + 1));
  }
  return assignment;
}

}  // namespace flog
