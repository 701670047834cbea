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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <unistd.h>

#include "flog/common.h"
#include "support/oracles.h"

namespace flog {
namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.vocab_size = 12;
  c.hidden_dim = 8;
  c.head_dim = 8;
  c.n_heads = 1;
  c.n_layers = 1;
  c.lora_rank = 2;
  c.lora_alpha = 4;
  c.lora_dropout = 0.0;
  c.max_sequence_length = 8;
  c.ffn_dim = 16;
  return c;
}

std::vector<EventId> random_sequence(Rng& rng, const ModelConfig& c, int len) {
  std::uniform_int_distribution<EventId> id(0, c.vocab_size - 3);
  std::vector<EventId> s(len);
  for (auto& v : s) v = id(rng);
  return s;
}

Matrix random_matrix(Rng& rng, int r, int c) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

TEST(ModelConfig, Validation) {
  ModelConfig c = tiny();
  EXPECT_NO_THROW(c.validate());
  c.lora_rank = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny();
  c.n_heads = 2;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny();
  c.vocab_size = 2;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny();
  c.lora_dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelConfig, TrainableCount) {
  ModelConfig c = tiny();
  c.hidden_dim = 4;
  c.head_dim = 4;
  c.lora_rank = 2;
  EXPECT_EQ(c.adapter_param_count(), 48);
  EXPECT_EQ(c.trainable_param_count(), 48 + 4 + 1);
  for (int layers : {1, 2, 3}) {
    ModelConfig d;
    d.vocab_size = 10;
    d.n_layers = layers;
    EXPECT_EQ(d.adapter_param_count(), layers * 3 * 2 * d.hidden_dim * d.lora_rank);
    EXPECT_EQ(static_cast<int64_t>(ModelState::init(d, 1).flatten().size()),
              d.trainable_param_count());
  }
}

TEST(ModelState, InitIsDeterministic) {
  const ModelState a = ModelState::init(tiny(), 3);
  const ModelState b = ModelState::init(tiny(), 3);
  EXPECT_EQ(a.flatten().values, b.flatten().values);
  EXPECT_EQ(a.frozen().fingerprint(), b.frozen().fingerprint());
  EXPECT_NE(ModelState::init(tiny(), 4).frozen().fingerprint(),
            a.frozen().fingerprint());
}

TEST(ModelState, InitShapesAndZeros) {
  const ModelState s = ModelState::init(tiny(), 3);
  for (const auto& l : s.adapters) {
    for (const LoraAdapter* ad : {&l.q, &l.k, &l.v}) {
      EXPECT_EQ(ad->a.rows(), 2);
      EXPECT_EQ(ad->a.cols(), 8);
      EXPECT_TRUE(ad->b.isZero(0.0));
      EXPECT_FALSE(ad->a.isZero(0.0));
    }
  }
  EXPECT_TRUE(s.head.weight.isZero(0.0));
  EXPECT_EQ(s.head.bias, 0.0);
}

TEST(ModelState, InitStatistics) {
  ModelConfig c;
  c.vocab_size = 200;
  c.hidden_dim = 64;
  c.head_dim = 16;
  c.lora_rank = 4;
  const ModelState s = ModelState::init(c, 17);
  const Matrix& e = s.frozen().token_embedding;
  const double sd = std::sqrt(e.array().square().mean());
  EXPECT_NEAR(sd, 0.02, 0.002);
  const Matrix& a = s.adapters[0].q.a;
  EXPECT_NEAR(std::sqrt(a.array().square().mean()), 0.5, 0.1);
}

TEST(FlatParams, RoundTripAndLayout) {
  ModelState s = ModelState::init(tiny(), 5);
  Rng rng(1);
  oracle::randomize_trainable(s, rng);
  const FlatParams w = s.flatten();
  ModelState t = ModelState::init(tiny(), 5);
  t.unflatten(w);
  EXPECT_EQ(t.flatten().values, w.values);

  const ParamLayout& layout = *s.layout();
  EXPECT_EQ(layout.entries.front().name, "layer0.q.A");
  EXPECT_EQ(layout.entries[1].name, "layer0.q.B");
  EXPECT_EQ(layout.find("head.bias").offset, w.size() - 1);
  // A is r x d and row-major.
  EXPECT_EQ(w.values[layout.find("layer0.k.A").offset + 1], s.adapters[0].k.a(0, 1));
  EXPECT_EQ(w.values[layout.find("layer0.k.B").offset + 2], s.adapters[0].k.b(1, 0));
  for (const auto& e : layout.entries) EXPECT_EQ(e.name.find("frozen"), std::string::npos);
}

TEST(FlatParams, UnflattenRejectsOtherLayouts) {
  ModelState s = ModelState::init(tiny(), 5);
  ModelConfig other = tiny();
  other.lora_rank = 1;
  EXPECT_THROW(s.unflatten(ModelState::init(other, 5).flatten()), ContractError);
}

TEST(AdaptedProjection, ZeroBOrZeroAlphaIsBase) {
  Rng rng(2);
  const Matrix h = random_matrix(rng, 3, 4), w = random_matrix(rng, 4, 4);
  const Matrix a = random_matrix(rng, 2, 4), b = random_matrix(rng, 4, 2);
  const Matrix base = h * w;
  EXPECT_EQ(adapted_projection(h, w, a, Matrix::Zero(4, 2), 8.0, 2), base);
  EXPECT_EQ(adapted_projection(h, w, a, b, 0.0, 2), base);
}

TEST(AdaptedProjection, MatchesDenseMerge) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix h = random_matrix(rng, 2, 4), w = random_matrix(rng, 4, 4);
    const Matrix a = random_matrix(rng, 2, 4), b = random_matrix(rng, 4, 2);
    // Explicit triple loop for W + (alpha / r) B A.
    Matrix merged = w;
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        for (int k = 0; k < 2; ++k) merged(i, j) += 16.0 / 2 * b(i, k) * a(k, j);
      }
    }
    const Matrix expected = h * merged;
    const Matrix got = adapted_projection(h, w, a, b, 16.0, 2);
    EXPECT_LT((got - expected).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(AdaptedProjection, MaskAppliesToBypassOnly) {
  Rng rng(4);
  const Matrix h = random_matrix(rng, 2, 4), w = random_matrix(rng, 4, 4);
  const Matrix a = random_matrix(rng, 2, 4), b = random_matrix(rng, 4, 2);
  const Matrix zero_mask = Matrix::Zero(2, 4);
  EXPECT_EQ(adapted_projection(h, w, a, b, 4.0, 2, zero_mask), h * w);
  EXPECT_THROW(adapted_projection(h, w, a, b, 4.0, 2, Matrix::Zero(3, 4)),
               ContractError);
  EXPECT_THROW(adapted_projection(h, w, a, Matrix::Zero(3, 2), 4.0, 2), ContractError);
}

TEST(Attention, SingleTokenReturnsValue) {
  Rng rng(5);
  const Matrix q = random_matrix(rng, 1, 3), k = random_matrix(rng, 1, 3);
  const Matrix v = random_matrix(rng, 1, 3);
  const AttentionResult r = attention(q, k, v);
  EXPECT_LT((r.output - v).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Attention, TwoByTwoHandCase) {
  Matrix q(2, 2), k(2, 2), v(2, 2);
  q << 1, 0, 0, 1;
  k << 1, 0, 1, 1;
  v << 1, 2, 3, 4;
  const double s = 1.0 / std::sqrt(2.0);
  // Row 0 scores: (1, 1) * s -> uniform. Row 1 scores: (0, 1) * s.
  const double e0 = 1.0, e1 = std::exp(s);
  const double p10 = e0 / (e0 + e1), p11 = e1 / (e0 + e1);
  const AttentionResult r = attention(q, k, v);
  EXPECT_NEAR(r.output(0, 0), 2.0, 1e-12);
  EXPECT_NEAR(r.output(0, 1), 3.0, 1e-12);
  EXPECT_NEAR(r.output(1, 0), p10 * 1 + p11 * 3, 1e-12);
  EXPECT_NEAR(r.output(1, 1), p10 * 2 + p11 * 4, 1e-12);
}

TEST(Attention, RowsSumToOneEvenWithLargeScores) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix q = 50.0 * random_matrix(rng, 7, 4);
    const Matrix k = 50.0 * random_matrix(rng, 7, 4);
    const AttentionResult r = attention(q, k, random_matrix(rng, 7, 4));
    ASSERT_TRUE(r.probs.allFinite());
    for (int i = 0; i < 7; ++i) EXPECT_NEAR(r.probs.row(i).sum(), 1.0, 1e-9);
  }
}

TEST(Forward, ProbabilityInOpenInterval) {
  ModelState s = ModelState::init(tiny(), 7);
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    oracle::randomize_trainable(s, rng, 1.0);
    const auto seq = random_sequence(rng, tiny(), 1 + trial % 8);
    const double p = forward(s, seq, Mode::kEval).prob;
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
}

TEST(Forward, EvalIsDeterministic) {
  ModelState s = ModelState::init(tiny(), 7);
  Rng rng(9);
  oracle::randomize_trainable(s, rng);
  const auto seq = random_sequence(rng, tiny(), 6);
  EXPECT_EQ(forward(s, seq, Mode::kEval).prob, forward(s, seq, Mode::kEval).prob);
}

TEST(Forward, ZeroBMatchesAdapterFreeBitExactly) {
  ModelState s = ModelState::init(tiny(), 10);
  Rng rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < s.head.weight.size(); ++i) s.head.weight(i) = n(rng);
  for (int trial = 0; trial < 100; ++trial) {
    const auto seq = random_sequence(rng, tiny(), 1 + trial % 8);
    EXPECT_EQ(forward(s, seq, Mode::kEval, nullptr, true).prob,
              forward(s, seq, Mode::kEval, nullptr, false).prob);
  }
}

TEST(Forward, PositionEmbeddingsMatter) {
  const ModelConfig c = tiny();
  const ModelState s = ModelState::init(c, 12);
  ModelState h = s;
  h.head.weight = Vector::Ones(c.hidden_dim);
  auto frozen = std::make_shared<FrozenWeights>(s.frozen());
  frozen->position_embedding.row(0).swap(frozen->position_embedding.row(1));
  ModelState swapped(c, frozen);
  swapped.adapters = h.adapters;
  swapped.head = h.head;
  const std::vector<EventId> seq = {1, 2, 3};
  EXPECT_NE(forward(h, seq, Mode::kEval).prob, forward(swapped, seq, Mode::kEval).prob);
}

TEST(Forward, Errors) {
  const ModelState s = ModelState::init(tiny(), 1);
  EXPECT_THROW(forward(s, std::vector<EventId>{}, Mode::kEval), ContractError);
  EXPECT_THROW(forward(s, std::vector<EventId>(9, 1), Mode::kEval), ContractError);
  ModelConfig c = tiny();
  c.lora_dropout = 0.1;
  EXPECT_THROW(forward(ModelState::init(c, 1), std::vector<EventId>{1}, Mode::kTrain),
               ContractError);
}

TEST(Forward, OutOfVocabularyReadsAsUnk) {
  const ModelConfig c = tiny();
  EXPECT_EQ(token_for(3, c), 3);
  EXPECT_EQ(token_for(c.vocab_size - 2, c), c.unk_token());
  EXPECT_EQ(token_for(500, c), c.unk_token());
  EXPECT_EQ(token_for(-1, c), c.unk_token());
  ModelState s = ModelState::init(c, 2);
  s.head.weight = Vector::Ones(c.hidden_dim);
  EXPECT_EQ(forward(s, std::vector<EventId>{1, 500}, Mode::kEval).prob,
            forward(s, std::vector<EventId>{1, c.unk_token()}, Mode::kEval).prob);
}

TEST(Forward, DropoutOnlyInTrainMode) {
  ModelConfig c = tiny();
  c.lora_dropout = 0.5;
  ModelState s = ModelState::init(c, 3);
  Rng rng(4);
  oracle::randomize_trainable(s, rng);
  const auto seq = random_sequence(rng, c, 8);
  Rng r1(1), r2(2);
  const double t1 = forward(s, seq, Mode::kTrain, &r1).prob;
  const double t2 = forward(s, seq, Mode::kTrain, &r2).prob;
  EXPECT_NE(t1, t2);
  Rng r3(1);
  EXPECT_EQ(forward(s, seq, Mode::kTrain, &r3).prob, t1);
  Rng r4(1);
  EXPECT_EQ(forward(s, seq, Mode::kEval, &r4).prob, forward(s, seq, Mode::kEval).prob);
}

TEST(Loss, Examples) {
  const ModelState s = ModelState::init(tiny(), 1);
  const FlatParams w = s.flatten();
  EXPECT_NEAR(loss(1.0 - 1e-15, 1, {}, w, w, 0.5), 0.0, 1e-12);
  EXPECT_EQ(proximal_term(w, w, 3.0), 0.0);
  FlatParams moved = w;
  moved.values[0] += 2.0;
  EXPECT_DOUBLE_EQ(proximal_term(moved, w, 0.01), 0.02);
  EXPECT_DOUBLE_EQ(weighted_cross_entropy(0.25, 1, {1.0, 2.0}), -2.0 * std::log(0.25));
  EXPECT_DOUBLE_EQ(weighted_cross_entropy(0.25, 0, {3.0, 2.0}), -3.0 * std::log(0.75));
  EXPECT_TRUE(std::isfinite(weighted_cross_entropy(0.0, 1, {})));
}

TEST(Loss, NonNegative) {
  Rng rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const ModelState s = ModelState::init(tiny(), 1);
  const FlatParams w = s.flatten();
  FlatParams other = w;
  for (int trial = 0; trial < 1000; ++trial) {
    for (double& v : other.values) v = w.values[0] + u(rng) - 0.5;
    const double l = loss(u(rng), trial % 2, {u(rng) * 3, u(rng) * 3}, other, w, u(rng));
    EXPECT_GE(l, 0.0);
  }
}

TEST(Backward, MatchesFiniteDifferences) {
  const ModelConfig c = tiny();
  for (uint64_t seed = 0; seed < 20; ++seed) {
    ModelState s = ModelState::init(c, seed);
    Rng rng(1000 + seed);
    oracle::randomize_trainable(s, rng);
    FlatParams anchor = s.flatten();
    for (double& v : anchor.values) v += 0.1;
    const auto seq = random_sequence(rng, c, 4);
    const int y = static_cast<int>(seed % 2);
    const ClassWeights cw{0.7, 2.5};
    const double mu = 0.05;
    const auto fwd = forward(s, seq, Mode::kEval);
    const FlatParams g = backward(s, fwd.cache, y, cw, mu, anchor);
    const auto fd = oracle::finite_difference_gradient(s, seq, y, cw, mu, anchor,
                                                       Mode::kEval, 0);
    double worst = 0.0;
    for (size_t i = 0; i < fd.size(); ++i) {
      worst = std::max(worst, oracle::relative_error(g.values[i], fd[i]));
    }
    EXPECT_LT(worst, 1e-4) << "seed " << seed;
  }
}

TEST(Backward, MatchesFiniteDifferencesWithDropoutAndDepth) {
  ModelConfig c = tiny();
  c.hidden_dim = 8;
  c.head_dim = 4;
  c.n_heads = 2;
  c.n_layers = 2;
  c.lora_dropout = 0.3;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    ModelState s = ModelState::init(c, seed);
    Rng rng(seed);
    oracle::randomize_trainable(s, rng);
    const FlatParams anchor = s.flatten();
    const auto seq = random_sequence(rng, c, 6);
    Rng mask(77 + seed);
    const auto fwd = forward(s, seq, Mode::kTrain, &mask);
    const FlatParams g = backward(s, fwd.cache, 1, {}, 0.0, anchor);
    const auto fd = oracle::finite_difference_gradient(s, seq, 1, {}, 0.0, anchor,
                                                       Mode::kTrain, 77 + seed);
    for (size_t i = 0; i < fd.size(); ++i) {
      EXPECT_LT(oracle::relative_error(g.values[i], fd[i]), 1e-4)
          << s.layout()->entries.size() << " coord " << i;
    }
  }
}

TEST(Backward, ProximalGradientVanishesAtAnchor) {
  ModelState s = ModelState::init(tiny(), 2);
  Rng rng(3);
  oracle::randomize_trainable(s, rng);
  const auto seq = random_sequence(rng, tiny(), 5);
  const auto fwd = forward(s, seq, Mode::kEval);
  const FlatParams w = s.flatten();
  EXPECT_EQ(backward(s, fwd.cache, 1, {}, 10.0, w).values,
            backward_cross_entropy(s, fwd.cache, 1, {}).values);
}

TEST(Backward, GradientCoversOnlyTrainableSlots) {
  const ModelState s = ModelState::init(tiny(), 2);
  const auto fwd = forward(s, std::vector<EventId>{1, 2}, Mode::kEval);
  const FlatParams g = backward(s, fwd.cache, 0, {}, 0.0, s.flatten());
  EXPECT_EQ(static_cast<int64_t>(g.size()), tiny().trainable_param_count());
  EXPECT_TRUE(g.same_layout(s.flatten()));
}

TEST(ClassWeights, Examples) {
  std::vector<WindowSequence> data(100);
  for (int i = 0; i < 10; ++i) data[i].label = 1;
  const ClassWeights w = class_weights_from_data(data);
  EXPECT_NEAR(w.normal, 100.0 / 180.0, 1e-12);
  EXPECT_NEAR(w.anomalous, 5.0, 1e-12);
  EXPECT_NEAR(w.normal * 90, w.anomalous * 10, 1e-9);

  std::vector<WindowSequence> balanced(6);
  for (int i = 0; i < 3; ++i) balanced[i].label = 1;
  const ClassWeights b = class_weights_from_data(balanced);
  EXPECT_DOUBLE_EQ(b.normal, 1.0);
  EXPECT_DOUBLE_EQ(b.anomalous, 1.0);

  const ClassWeights single = class_weights_from_data(std::vector<WindowSequence>(4));
  EXPECT_DOUBLE_EQ(single.normal, 1.0);
  EXPECT_DOUBLE_EQ(single.anomalous, 1.0);
}

TEST(Checkpoint, RoundTripsEveryTensor) {
  ModelConfig c = tiny();
  c.n_layers = 2;
  ModelState s = ModelState::init(c, 21);
  Rng rng(22);
  oracle::randomize_trainable(s, rng);
  const auto path = std::filesystem::temp_directory_path() /
                    ("flog_ckpt_" + std::to_string(::getpid()) + ".ckpt");
  save_checkpoint(path, s);
  const ModelState back = load_checkpoint(path, c);
  EXPECT_EQ(back.flatten().values, s.flatten().values);
  EXPECT_EQ(back.frozen().fingerprint(), s.frozen().fingerprint());
  const auto seq = random_sequence(rng, c, 5);
  EXPECT_EQ(forward(back, seq, Mode::kEval).prob, forward(s, seq, Mode::kEval).prob);

  ModelConfig wrong = c;
  wrong.hidden_dim = 16;
  wrong.head_dim = 16;
  EXPECT_THROW(load_checkpoint(path, wrong), std::runtime_error);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace flog
