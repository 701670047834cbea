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

// Encoder-style classifier over log-key sequences.
//
//   x0      = E[token] + P[position]
//   per layer (pre-norm, no causal mask):
//     a     = LN(x)
//     Q,K,V = a W + (alpha / r) (a o mask) B A      (W frozen, A/B trainable)
//     x     = x + MultiHeadAttention(Q, K, V) W_o
//     x     = x + GELU(LN(x) W_1) W_2
//   y_hat   = sigmoid(w . LN(x_T) + b)               (head trainable)
//
// Every frozen tensor is immutable after init and shared between copies of a
// ModelState; only the adapters and the head are trainable.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flog/common.h"
#include "flog/drain_parser.h"
#include "flog/window_builder.h"

namespace flog {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ModelConfig {
  int vocab_size = 0;  // templates + UNK + PAD
  int hidden_dim = 32;
  int head_dim = 8;
  int n_heads = 4;
  int n_layers = 1;
  int lora_rank = 8;
  double lora_alpha = 32.0;
  double lora_dropout = 0.1;
  int max_sequence_length = 64;
  int ffn_dim = 64;

  void validate() const;

  // Event ids map to themselves; the two reserved tokens sit at the top.
  int unk_token() const { return vocab_size - 2; }
  int pad_token() const { return vocab_size - 1; }
  double lora_scale() const { return lora_alpha / lora_rank; }

  // L * 3 * 2 * d * r
  int64_t adapter_param_count() const;
  // Adapters plus head weight and bias.
  int64_t trainable_param_count() const;
};

struct FrozenLayer {
  Matrix wq, wk, wv, wo;  // d x d
  Matrix w1;              // d x ffn
  Matrix w2;              // ffn x d
};

struct FrozenWeights {
  Matrix token_embedding;     // V x d
  Matrix position_embedding;  // max_len x d
  std::vector<FrozenLayer> layers;

  // FNV-1a over every coefficient; used to prove immutability.
  uint64_t fingerprint() const;
};

struct LoraAdapter {
  Matrix a;  // r x d
  Matrix b;  // d x r
};

struct LayerAdapters {
  LoraAdapter q, k, v;
};

struct ClassifierHead {
  Vector weight;
  double bias = 0.0;
};

// Fixed order of the trainable vector: for each layer l, "layer{l}.{q,k,v}.A"
// then ".B" (row-major), followed by "head.weight" and "head.bias".
struct ParamLayout {
  struct Entry {
    std::string name;
    size_t offset;
    size_t length;
    bool operator==(const Entry&) const = default;
  };
  std::vector<Entry> entries;
  size_t total = 0;

  const Entry& find(std::string_view name) const;
  bool operator==(const ParamLayout&) const = default;
};

ParamLayout make_param_layout(const ModelConfig& config);

// Flat trainable parameters. Carries w, Delta_k, gradients and noise.
struct FlatParams {
  std::vector<double> values;
  std::shared_ptr<const ParamLayout> layout;

  size_t size() const { return values.size(); }
  double l2_norm() const;
  FlatParams zeros_like() const;
  bool same_layout(const FlatParams& other) const;
};

class ModelState {
 public:
  // Frozen weights ~ N(0, 0.02^2); A ~ N(0, 1/r); B = 0; head = 0.
  static ModelState init(const ModelConfig& config, uint64_t seed);

  // Rebuilds a state from explicit parts (checkpoint loading).
  ModelState(ModelConfig config, std::shared_ptr<const FrozenWeights> frozen);

  const ModelConfig& config() const { return config_; }
  const FrozenWeights& frozen() const { return *frozen_; }
  const std::shared_ptr<const ParamLayout>& layout() const { return layout_; }

  FlatParams flatten() const;
  // Throws ContractError when the layout does not match.
  void unflatten(const FlatParams& params);

  std::vector<LayerAdapters> adapters;
  ClassifierHead head;

 private:
  ModelConfig config_;
  std::shared_ptr<const FrozenWeights> frozen_;
  std::shared_ptr<const ParamLayout> layout_;
};

// H W + (alpha / rank) (H o mask) B A. Pass an empty mask for all-ones.
Matrix adapted_projection(const Matrix& h, const Matrix& w, const Matrix& a,
                          const Matrix& b, double alpha, int rank,
                          const Matrix& dropout_mask = Matrix());

struct AttentionResult {
  Matrix output;  // T x d_k
  Matrix probs;   // T x T, rows sum to one
};

// softmax(Q K^T / sqrt(d_k)) V, row-stable, unmasked.
AttentionResult attention(const Matrix& q, const Matrix& k, const Matrix& v);

enum class Mode { kTrain, kEval };

struct LayerCache {
  Matrix x_in;
  Matrix a;  // LN(x_in)
  Vector a_rstd;
  Matrix mask;  // empty when dropout is inactive
  Matrix q, k, v;
  Matrix q_low, k_low, v_low;  // (a o mask) B, T x r
  std::vector<Matrix> probs;   // per head
  Matrix x_mid;
  Matrix m;  // LN(x_mid)
  Vector m_rstd;
  Matrix u;  // m W_1
  Matrix g;  // GELU(u)
};

struct ForwardCache {
  std::vector<int> tokens;
  std::vector<LayerCache> layers;
  Vector final_norm;  // LN(h_T)
  double final_rstd = 0.0;
  double prob = 0.5;
  bool use_adapters = true;
};

struct ForwardResult {
  double prob = 0.5;
  double logit = 0.0;
  ForwardCache cache;
};

int token_for(EventId id, const ModelConfig& config);

// Throws ContractError on an empty sequence or one longer than
// max_sequence_length. Out-of-vocabulary ids read as UNK. `rng` is only drawn
// from in train mode with nonzero dropout.
ForwardResult forward(const ModelState& state, std::span<const EventId> sequence,
                      Mode mode, Rng* rng = nullptr, bool use_adapters = true);

struct ClassWeights {
  double normal = 1.0;     // w_0
  double anomalous = 1.0;  // w_1
};

inline constexpr double kLogClamp = 1e-12;

double weighted_cross_entropy(double y_hat, int y, const ClassWeights& weights);
// (mu / 2) ||w - w_t||^2
double proximal_term(const FlatParams& w, const FlatParams& w_t, double mu);
double loss(double y_hat, int y, const ClassWeights& weights,
            const FlatParams& w, const FlatParams& w_t, double mu);

// Gradient of the weighted cross-entropy alone w.r.t. the trainable vector.
FlatParams backward_cross_entropy(const ModelState& state,
                                  const ForwardCache& cache, int y,
                                  const ClassWeights& weights);

// Full gradient of `loss`, evaluated at the state's current parameters.
FlatParams backward(const ModelState& state, const ForwardCache& cache, int y,
                    const ClassWeights& weights, double mu,
                    const FlatParams& w_t);

// w_c = N / (2 N_c); (1, 1) with a warning if either class is absent.
ClassWeights class_weights_from_data(std::span<const WindowSequence> data);

// Checkpoint: text manifest of (name, offset, length) for every tensor, frozen
// and trainable, then the flat little-endian float64 payload.
void save_checkpoint(const std::filesystem::path& path, const ModelState& state);
ModelState load_checkpoint(const std::filesystem::path& path,
                           const ModelConfig& config);

}  // namespace flog
