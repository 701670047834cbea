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
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace flog {

// Raised when a caller violates a documented precondition (shape mismatch,
// empty sequence, mismatched lengths).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Raised for invalid configuration values. `key()` names the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

// 64-bit FNV-1a. Stable across platforms and runs, unlike std::hash.
constexpr uint64_t fnv1a64(std::string_view text) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : text) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives the seed of a named sub-stream from the root seed. Every source of
// randomness in a run goes through this so that one root seed pins the run.
constexpr uint64_t stream_seed(uint64_t root, std::string_view name,
                               uint64_t a = 0, uint64_t b = 0) {
  uint64_t s = splitmix64(root ^ fnv1a64(name));
  s = splitmix64(s ^ splitmix64(a + 0x632be59bd9b4e019ULL));
  s = splitmix64(s ^ splitmix64(b + 0x8cb92ba72f3d8dd7ULL));
  return s;
}

using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t root, std::string_view name, uint64_t a = 0,
                    uint64_t b = 0) {
  return Rng(stream_seed(root, name, a, b));
}

}  // namespace flog
