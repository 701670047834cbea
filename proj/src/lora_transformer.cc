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

#include "flog/lora_transformer.h"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <type_traits>

namespace flog {
namespace {

constexpr double kFrozenStd = 0.02;
constexpr double kLayerNormEps = 1e-5;

constexpr const char* kProjNames[] = {"q", "k", "v"};

void fill_gaussian(Matrix& m, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = dist(rng);
  }
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng, double stddev) {
  Matrix m(rows, cols);
  fill_gaussian(m, rng, stddev);
  return m;
}

// Row-wise layer norm without affine parameters.
Matrix layer_norm_rows(const Matrix& x, Vector& rstd) {
  const auto d = static_cast<double>(x.cols());
  Matrix y(x.rows(), x.cols());
  rstd.resize(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).sum() / d;
    const double var = (x.row(i).array() - mean).square().sum() / d;
    rstd(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    y.row(i) = (x.row(i).array() - mean) * rstd(i);
  }
  return y;
}

Matrix layer_norm_rows_backward(const Matrix& dy, const Matrix& y,
                                const Vector& rstd) {
  const auto d = static_cast<double>(y.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double mean_dy = dy.row(i).sum() / d;
    const double mean_dyy = dy.row(i).dot(y.row(i)) / d;
    dx.row(i) =
        rstd(i) * (dy.row(i).array() - mean_dy - y.row(i).array() * mean_dyy);
  }
  return dx;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

double gelu(double u) {
  return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + 0.044715 * u * u * u)));
}

double gelu_grad(double u) {
  const double inner = kGeluC * (u + 0.044715 * u * u * u);
  const double t = std::tanh(inner);
  return 0.5 * (1.0 + t) +
         0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * u * u);
}

double sigmoid(double z) {
  if (z >= 0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

const LoraAdapter& adapter_of(const LayerAdapters& l, int which) {
  return which == 0 ? l.q : (which == 1 ? l.k : l.v);
}
LoraAdapter& adapter_of(LayerAdapters& l, int which) {
  return which == 0 ? l.q : (which == 1 ? l.k : l.v);
}

void copy_row_major(const Matrix& m, double* out) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) *out++ = m(i, j);
  }
}

void read_row_major(const double* in, Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = *in++;
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 3) throw ConfigError("vocab_size", "must be >= 3");
  if (hidden_dim < 1) throw ConfigError("hidden_dim", "must be >= 1");
  if (n_heads < 1) throw ConfigError("n_heads", "must be >= 1");
  if (head_dim < 1) throw ConfigError("head_dim", "must be >= 1");
  if (n_heads * head_dim != hidden_dim) {
    throw ConfigError("head_dim", "n_heads * head_dim must equal hidden_dim");
  }
  if (n_layers < 1) throw ConfigError("n_layers", "must be >= 1");
  if (lora_rank < 1) throw ConfigError("lora_rank", "must be >= 1");
  if (2 * lora_rank > hidden_dim) {
    throw ConfigError("lora_rank", "must not exceed hidden_dim / 2");
  }
  if (!(lora_alpha >= 0.0)) throw ConfigError("lora_alpha", "must be >= 0");
  if (!(lora_dropout >= 0.0 && lora_dropout < 1.0)) {
    throw ConfigError("lora_dropout", "must lie in [0, 1)");
  }
  if (max_sequence_length < 1) {
    throw ConfigError("max_sequence_length", "must be >= 1");
  }
  if (ffn_dim < 1) throw ConfigError("ffn_dim", "must be >= 1");
}

int64_t ModelConfig::adapter_param_count() const {
  return static_cast<int64_t>(n_layers) * 3 * 2 * hidden_dim * lora_rank;
}

int64_t ModelConfig::trainable_param_count() const {
  return adapter_param_count() + hidden_dim + 1;
}

uint64_t FrozenWeights::fingerprint() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      uint64_t bits = std::bit_cast<uint64_t>(m.data()[i]);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xff;
        h *= 0x100000001b3ULL;
      }
    }
  };
  mix(token_embedding);
  mix(position_embedding);
  for (const auto& l : layers) {
    mix(l.wq);
    mix(l.wk);
    mix(l.wv);
    mix(l.wo);
    mix(l.w1);
    mix(l.w2);
  }
  return h;
}

const ParamLayout::Entry& ParamLayout::find(std::string_view name) const {
  for (const auto& e : entries) {
    if (e.name == name) return e;
  }
  throw ContractError(fmt::format("no parameter named '{}'", name));
}

ParamLayout make_param_layout(const ModelConfig& c) {
  ParamLayout layout;
  const size_t dr = static_cast<size_t>(c.hidden_dim) * c.lora_rank;
  auto add = [&layout](std::string name, size_t length) {
    layout.entries.push_back({std::move(name), layout.total, length});
    layout.total += length;
  };
  for (int l = 0; l < c.n_layers; ++l) {
    for (const char* p : kProjNames) {
      add(fmt::format("layer{}.{}.A", l, p), dr);
      add(fmt::format("layer{}.{}.B", l, p), dr);
    }
  }
  add("head.weight", static_cast<size_t>(c.hidden_dim));
  add("head.bias", 1);
  return layout;
}

double FlatParams::l2_norm() const {
  double s = 0.0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

FlatParams FlatParams::zeros_like() const {
  return FlatParams{std::vector<double>(values.size(), 0.0), layout};
}

bool FlatParams::same_layout(const FlatParams& other) const {
  if (values.size() != other.values.size()) return false;
  if (layout == other.layout) return true;
  return layout && other.layout && *layout == *other.layout;
}

ModelState::ModelState(ModelConfig config,
                       std::shared_ptr<const FrozenWeights> frozen)
    : config_(config),
      frozen_(std::move(frozen)),
      layout_(std::make_shared<const ParamLayout>(make_param_layout(config))) {
  config_.validate();
  const int d = config_.hidden_dim;
  const int r = config_.lora_rank;
  adapters.resize(config_.n_layers);
  for (auto& layer : adapters) {
    for (int p = 0; p < 3; ++p) {
      adapter_of(layer, p).a = Matrix::Zero(r, d);
      adapter_of(layer, p).b = Matrix::Zero(d, r);
    }
  }
  head.weight = Vector::Zero(d);
  head.bias = 0.0;
}

ModelState ModelState::init(const ModelConfig& config, uint64_t seed) {
  config.validate();
  const int d = config.hidden_dim;
  auto frozen = std::make_shared<FrozenWeights>();
  Rng frozen_rng = make_rng(seed, "model.frozen");
  frozen->token_embedding =
      gaussian(config.vocab_size, d, frozen_rng, kFrozenStd);
  frozen->position_embedding =
      gaussian(config.max_sequence_length, d, frozen_rng, kFrozenStd);
  frozen->layers.resize(config.n_layers);
  for (auto& l : frozen->layers) {
    l.wq = gaussian(d, d, frozen_rng, kFrozenStd);
    l.wk = gaussian(d, d, frozen_rng, kFrozenStd);
    l.wv = gaussian(d, d, frozen_rng, kFrozenStd);
    l.wo = gaussian(d, d, frozen_rng, kFrozenStd);
    l.w1 = gaussian(d, config.ffn_dim, frozen_rng, kFrozenStd);
    l.w2 = gaussian(config.ffn_dim, d, frozen_rng, kFrozenStd);
  }
  ModelState state(config, std::move(frozen));
  Rng adapter_rng = make_rng(seed, "model.adapters");
  const double a_std = 1.0 / std::sqrt(static_cast<double>(config.lora_rank));
  for (auto& layer : state.adapters) {
    for (int p = 0; p < 3; ++p) fill_gaussian(adapter_of(layer, p).a, adapter_rng, a_std);
  }
  return state;
}

FlatParams ModelState::flatten() const {
  FlatParams out{std::vector<double>(layout_->total), layout_};
  double* ptr = out.values.data();
  for (const auto& layer : adapters) {
    for (int p = 0; p < 3; ++p) {
      const auto& ad = adapter_of(layer, p);
      copy_row_major(ad.a, ptr);
      ptr += ad.a.size();
      copy_row_major(ad.b, ptr);
      ptr += ad.b.size();
    }
  }
  for (Eigen::Index i = 0; i < head.weight.size(); ++i) *ptr++ = head.weight(i);
  *ptr++ = head.bias;
  return out;
}

void ModelState::unflatten(const FlatParams& params) {
  if (params.values.size() != layout_->total ||
      (params.layout && *params.layout != *layout_)) {
    throw ContractError("unflatten: parameter layout mismatch");
  }
  const double* ptr = params.values.data();
  for (auto& layer : adapters) {
    for (int p = 0; p < 3; ++p) {
      auto& ad = adapter_of(layer, p);
      read_row_major(ptr, ad.a);
      ptr += ad.a.size();
      read_row_major(ptr, ad.b);
      ptr += ad.b.size();
    }
  }
  for (Eigen::Index i = 0; i < head.weight.size(); ++i) head.weight(i) = *ptr++;
  head.bias = *ptr++;
}

Matrix adapted_projection(const Matrix& h, const Matrix& w, const Matrix& a,
                          const Matrix& b, double alpha, int rank,
                          const Matrix& dropout_mask) {
  if (h.cols() != w.rows() || b.rows() != h.cols() || b.cols() != rank ||
      a.rows() != rank || a.cols() != w.cols()) {
    throw ContractError("adapted_projection: shape mismatch");
  }
  const double scale = alpha / rank;
  if (dropout_mask.size() == 0) return h * w + scale * ((h * b) * a);
  if (dropout_mask.rows() != h.rows() || dropout_mask.cols() != h.cols()) {
    throw ContractError("adapted_projection: dropout mask shape mismatch");
  }
  const Matrix masked = h.cwiseProduct(dropout_mask);
  return h * w + scale * ((masked * b) * a);
}

AttentionResult attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  if (q.cols() != k.cols() || k.rows() != v.rows()) {
    throw ContractError("attention: shape mismatch");
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Matrix scores = (q * k.transpose()) * inv_sqrt;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const double mx = scores.row(i).maxCoeff();
    scores.row(i) = (scores.row(i).array() - mx).exp();
    scores.row(i) /= scores.row(i).sum();
  }
  AttentionResult out;
  out.output = scores * v;
  out.probs = std::move(scores);
  return out;
}

int token_for(EventId id, const ModelConfig& config) {
  if (id < 0 || id >= config.unk_token()) return config.unk_token();
  return id;
}

ForwardResult forward(const ModelState& state, std::span<const EventId> sequence,
                      Mode mode, Rng* rng, bool use_adapters) {
  const ModelConfig& c = state.config();
  const FrozenWeights& fw = state.frozen();
  const auto t_len = static_cast<Eigen::Index>(sequence.size());
  if (t_len == 0) throw ContractError("forward: empty sequence");
  if (t_len > c.max_sequence_length) {
    throw ContractError(fmt::format("forward: sequence length {} exceeds {}",
                                    t_len, c.max_sequence_length));
  }
  const int d = c.hidden_dim;
  const int dk = c.head_dim;
  const double scale = c.lora_scale();
  const bool dropout =
      mode == Mode::kTrain && use_adapters && c.lora_dropout > 0.0;
  if (dropout && rng == nullptr) {
    throw ContractError("forward: train mode with dropout needs an rng");
  }

  ForwardResult result;
  ForwardCache& cache = result.cache;
  cache.use_adapters = use_adapters;
  cache.tokens.resize(sequence.size());
  Matrix x(t_len, d);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    const int tok = token_for(sequence[t], c);
    cache.tokens[t] = tok;
    x.row(t) = fw.token_embedding.row(tok) + fw.position_embedding.row(t);
  }

  cache.layers.resize(c.n_layers);
  for (int l = 0; l < c.n_layers; ++l) {
    const FrozenLayer& fl = fw.layers[l];
    const LayerAdapters& ad = state.adapters[l];
    LayerCache& lc = cache.layers[l];
    lc.x_in = x;
    lc.a = layer_norm_rows(x, lc.a_rstd);

    Matrix masked_a;
    if (dropout) {
      std::bernoulli_distribution keep(1.0 - c.lora_dropout);
      const double inv_keep = 1.0 / (1.0 - c.lora_dropout);
      lc.mask.resize(t_len, d);
      for (Eigen::Index i = 0; i < lc.mask.size(); ++i) {
        lc.mask.data()[i] = keep(*rng) ? inv_keep : 0.0;
      }
      masked_a = lc.a.cwiseProduct(lc.mask);
    }
    const Matrix& bypass_in = dropout ? masked_a : lc.a;

    Matrix* outs[] = {&lc.q, &lc.k, &lc.v};
    Matrix* lows[] = {&lc.q_low, &lc.k_low, &lc.v_low};
    const Matrix* ws[] = {&fl.wq, &fl.wk, &fl.wv};
    for (int p = 0; p < 3; ++p) {
      *outs[p] = lc.a * (*ws[p]);
      if (use_adapters) {
        const LoraAdapter& lora = adapter_of(ad, p);
        *lows[p] = bypass_in * lora.b;
        *outs[p] += scale * ((*lows[p]) * lora.a);
      }
    }

    Matrix attn(t_len, d);
    lc.probs.resize(c.n_heads);
    for (int h = 0; h < c.n_heads; ++h) {
      auto res = attention(lc.q.middleCols(h * dk, dk), lc.k.middleCols(h * dk, dk),
                           lc.v.middleCols(h * dk, dk));
      attn.middleCols(h * dk, dk) = res.output;
      lc.probs[h] = std::move(res.probs);
    }
    lc.x_mid = x + attn * fl.wo;
    lc.m = layer_norm_rows(lc.x_mid, lc.m_rstd);
    lc.u = lc.m * fl.w1;
    lc.g = lc.u.unaryExpr([](double u) { return gelu(u); });
    x = lc.x_mid + lc.g * fl.w2;
  }

  Vector rstd;
  const Matrix last = x.row(t_len - 1);
  const Matrix normed = layer_norm_rows(last, rstd);
  cache.final_norm = normed.row(0).transpose();
  cache.final_rstd = rstd(0);
  result.logit = state.head.weight.dot(cache.final_norm) + state.head.bias;
  result.prob = sigmoid(result.logit);
  cache.prob = result.prob;
  return result;
}

double weighted_cross_entropy(double y_hat, int y, const ClassWeights& w) {
  const double p = std::clamp(y_hat, kLogClamp, 1.0 - kLogClamp);
  return y == 1 ? -w.anomalous * std::log(p) : -w.normal * std::log(1.0 - p);
}

double proximal_term(const FlatParams& w, const FlatParams& w_t, double mu) {
  if (!w.same_layout(w_t)) throw ContractError("proximal_term: layout mismatch");
  double s = 0.0;
  for (size_t i = 0; i < w.values.size(); ++i) {
    const double diff = w.values[i] - w_t.values[i];
    s += diff * diff;
  }
  return 0.5 * mu * s;
}

double loss(double y_hat, int y, const ClassWeights& weights,
            const FlatParams& w, const FlatParams& w_t, double mu) {
  return weighted_cross_entropy(y_hat, y, weights) + proximal_term(w, w_t, mu);
}

FlatParams backward_cross_entropy(const ModelState& state,
                                  const ForwardCache& cache, int y,
                                  const ClassWeights& weights) {
  const ModelConfig& c = state.config();
  const FrozenWeights& fw = state.frozen();
  const int d = c.hidden_dim;
  const int dk = c.head_dim;
  const int r = c.lora_rank;
  const double scale = c.lora_scale();
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  const auto t_len = static_cast<Eigen::Index>(cache.tokens.size());
  if (t_len == 0 || static_cast<int>(cache.layers.size()) != c.n_layers) {
    throw ContractError("backward: cache does not match the model");
  }

  FlatParams grad{std::vector<double>(state.layout()->total, 0.0),
                  state.layout()};
  const double p = cache.prob;
  const double dlogit =
      y == 1 ? -weights.anomalous * (1.0 - p) : weights.normal * p;

  const auto& head_w = state.layout()->find("head.weight");
  for (int i = 0; i < d; ++i) {
    grad.values[head_w.offset + i] = dlogit * cache.final_norm(i);
  }
  grad.values[state.layout()->find("head.bias").offset] = dlogit;

  // Through the final layer norm on the last row.
  Matrix dx = Matrix::Zero(t_len, d);
  {
    const Matrix dy = (dlogit * state.head.weight).transpose();
    const Matrix y_row = cache.final_norm.transpose();
    Vector rstd(1);
    rstd(0) = cache.final_rstd;
    dx.row(t_len - 1) = layer_norm_rows_backward(dy, y_row, rstd);
  }

  const size_t per_layer = static_cast<size_t>(6) * d * r;
  for (int l = c.n_layers - 1; l >= 0; --l) {
    const FrozenLayer& fl = fw.layers[l];
    const LayerAdapters& ad = state.adapters[l];
    const LayerCache& lc = cache.layers[l];

    // Feed-forward block.
    const Matrix dg = dx * fl.w2.transpose();
    Matrix du = dg;
    for (Eigen::Index i = 0; i < du.size(); ++i) {
      du.data()[i] *= gelu_grad(lc.u.data()[i]);
    }
    const Matrix dm = du * fl.w1.transpose();
    const Matrix dx_mid = dx + layer_norm_rows_backward(dm, lc.m, lc.m_rstd);

    // Attention block.
    const Matrix dattn = dx_mid * fl.wo.transpose();
    Matrix dq(t_len, d), dkm(t_len, d), dv(t_len, d);
    for (int h = 0; h < c.n_heads; ++h) {
      const Matrix& pr = lc.probs[h];
      const auto dout = dattn.middleCols(h * dk, dk);
      const auto qh = lc.q.middleCols(h * dk, dk);
      const auto kh = lc.k.middleCols(h * dk, dk);
      const auto vh = lc.v.middleCols(h * dk, dk);
      const Matrix dp = dout * vh.transpose();
      dv.middleCols(h * dk, dk) = pr.transpose() * dout;
      Matrix ds = pr.cwiseProduct(dp);
      const Vector row_dot = ds.rowwise().sum();
      ds = pr.cwiseProduct(dp.colwise() - row_dot) * inv_sqrt_dk;
      dq.middleCols(h * dk, dk) = ds * kh;
      dkm.middleCols(h * dk, dk) = ds.transpose() * qh;
    }

    Matrix da = Matrix::Zero(t_len, d);
    const Matrix* douts[] = {&dq, &dkm, &dv};
    const Matrix* lows[] = {&lc.q_low, &lc.k_low, &lc.v_low};
    const Matrix* ws[] = {&fl.wq, &fl.wk, &fl.wv};
    const bool masked = lc.mask.size() != 0;
    double* layer_grad = grad.values.data() + per_layer * l;
    for (int pj = 0; pj < 3; ++pj) {
      const Matrix& dout = *douts[pj];
      da += dout * ws[pj]->transpose();
      if (!cache.use_adapters) continue;
      const LoraAdapter& lora = adapter_of(ad, pj);
      const Matrix ga = scale * (lows[pj]->transpose() * dout);  // r x d
      const Matrix dlow = scale * (dout * lora.a.transpose());   // T x r
      const Matrix gb =
          (masked ? lc.a.cwiseProduct(lc.mask) : lc.a).transpose() * dlow;
      Matrix dbypass = dlow * lora.b.transpose();
      if (masked) dbypass = dbypass.cwiseProduct(lc.mask);
      da += dbypass;
      copy_row_major(ga, layer_grad + static_cast<size_t>(2 * pj) * d * r);
      copy_row_major(gb, layer_grad + static_cast<size_t>(2 * pj + 1) * d * r);
    }
    dx = dx_mid + layer_norm_rows_backward(da, lc.a, lc.a_rstd);
  }
  return grad;
}

FlatParams backward(const ModelState& state, const ForwardCache& cache, int y,
                    const ClassWeights& weights, double mu,
                    const FlatParams& w_t) {
  FlatParams grad = backward_cross_entropy(state, cache, y, weights);
  if (mu != 0.0) {
    const FlatParams w = state.flatten();
    if (!w.same_layout(w_t)) throw ContractError("backward: anchor layout mismatch");
    for (size_t i = 0; i < grad.values.size(); ++i) {
      grad.values[i] += mu * (w.values[i] - w_t.values[i]);
    }
  }
  return grad;
}

ClassWeights class_weights_from_data(std::span<const WindowSequence> data) {
  int64_t n1 = 0;
  for (const auto& w : data) n1 += w.label == 1 ? 1 : 0;
  const auto n = static_cast<int64_t>(data.size());
  const int64_t n0 = n - n1;
  if (n0 == 0 || n1 == 0) {
    spdlog::warn("class weights: single-class data ({} normal, {} anomalous); "
                 "using (1, 1)",
                 n0, n1);
    return {};
  }
  return {static_cast<double>(n) / (2.0 * static_cast<double>(n0)),
          static_cast<double>(n) / (2.0 * static_cast<double>(n1))};
}

namespace {

constexpr std::string_view kCheckpointMagic = "FLOGCKPT v1";

template <typename Weights, typename M = std::conditional_t<
                                std::is_const_v<Weights>, const Matrix, Matrix>>
std::vector<std::pair<std::string, M*>> frozen_tensors(Weights& fw) {
  std::vector<std::pair<std::string, M*>> out;
  out.emplace_back("frozen.token_embedding", &fw.token_embedding);
  out.emplace_back("frozen.position_embedding", &fw.position_embedding);
  for (size_t l = 0; l < fw.layers.size(); ++l) {
    auto& fl = fw.layers[l];
    out.emplace_back(fmt::format("frozen.layer{}.wq", l), &fl.wq);
    out.emplace_back(fmt::format("frozen.layer{}.wk", l), &fl.wk);
    out.emplace_back(fmt::format("frozen.layer{}.wv", l), &fl.wv);
    out.emplace_back(fmt::format("frozen.layer{}.wo", l), &fl.wo);
    out.emplace_back(fmt::format("frozen.layer{}.w1", l), &fl.w1);
    out.emplace_back(fmt::format("frozen.layer{}.w2", l), &fl.w2);
  }
  return out;
}

void put_le(std::ostream& out, double v) {
  uint64_t bits = std::bit_cast<uint64_t>(v);
  char buf[8];
  for (int b = 0; b < 8; ++b) buf[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  out.write(buf, 8);
}

double get_le(const char* buf) {
  uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) {
    bits |= static_cast<uint64_t>(static_cast<unsigned char>(buf[b])) << (8 * b);
  }
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelState& state) {
  const auto frozen = frozen_tensors(state.frozen());
  const FlatParams trainable = state.flatten();

  std::vector<ParamLayout::Entry> manifest;
  size_t offset = 0;
  for (const auto& [name, m] : frozen) {
    manifest.push_back({name, offset, static_cast<size_t>(m->size())});
    offset += m->size();
  }
  for (const auto& e : trainable.layout->entries) {
    manifest.push_back({e.name, offset + e.offset, e.length});
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << kCheckpointMagic << '\n' << manifest.size() << '\n';
  for (const auto& e : manifest) {
    out << e.name << ' ' << e.offset << ' ' << e.length << '\n';
  }
  out << "end\n";
  for (const auto& [name, m] : frozen) {
    std::vector<double> flat(static_cast<size_t>(m->size()));
    copy_row_major(*m, flat.data());
    for (double v : flat) put_le(out, v);
  }
  for (double v : trainable.values) put_le(out, v);
}

ModelState load_checkpoint(const std::filesystem::path& path,
                           const ModelConfig& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kCheckpointMagic) {
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  }
  size_t count = 0;
  in >> count;
  std::vector<ParamLayout::Entry> manifest(count);
  for (auto& e : manifest) in >> e.name >> e.offset >> e.length;
  in >> line;
  in.get();
  if (!in || line != "end") throw std::runtime_error("checkpoint: bad manifest");
  size_t total = 0;
  for (const auto& e : manifest) total = std::max(total, e.offset + e.length);
  std::vector<char> raw(total * 8);
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw std::runtime_error("checkpoint: truncated payload");
  }
  auto value_at = [&raw](size_t i) { return get_le(raw.data() + 8 * i); };

  auto find = [&manifest](const std::string& name) -> const ParamLayout::Entry& {
    for (const auto& e : manifest) {
      if (e.name == name) return e;
    }
    throw std::runtime_error("checkpoint: missing tensor " + name);
  };

  // Shapes come from the config; the manifest must agree on every length.
  config.validate();
  auto frozen = std::make_shared<FrozenWeights>();
  const int d = config.hidden_dim;
  frozen->token_embedding.resize(config.vocab_size, d);
  frozen->position_embedding.resize(config.max_sequence_length, d);
  frozen->layers.resize(config.n_layers);
  for (auto& fl : frozen->layers) {
    fl.wq.resize(d, d);
    fl.wk.resize(d, d);
    fl.wv.resize(d, d);
    fl.wo.resize(d, d);
    fl.w1.resize(d, config.ffn_dim);
    fl.w2.resize(config.ffn_dim, d);
  }
  for (const auto& [name, m] : frozen_tensors(*frozen)) {
    const auto& e = find(name);
    if (e.length != static_cast<size_t>(m->size())) {
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    }
    std::vector<double> flat(e.length);
    for (size_t i = 0; i < e.length; ++i) flat[i] = value_at(e.offset + i);
    read_row_major(flat.data(), *m);
  }

  ModelState state(config, frozen);
  FlatParams params{std::vector<double>(state.layout()->total), state.layout()};
  for (const auto& e : state.layout()->entries) {
    const auto& m = find(e.name);
    if (m.length != e.length) {
      throw std::runtime_error("checkpoint: shape mismatch for " + e.name);
    }
    for (size_t i = 0; i < e.length; ++i) {
      params.values[e.offset + i] = value_at(m.offset + i);
    }
  }
  state.unflatten(params);
  return state;
}

}  // namespace flog
