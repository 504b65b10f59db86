// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "echo/training.hpp"

namespace echo {
namespace {

TEST(CrossEntropy, UniformLogitsGiveLogClassCount) {
  const std::vector<double> z(4, 0.0);
  for (std::size_t y = 0; y < 4; ++y) EXPECT_NEAR(cross_entropy(z, y), std::log(4.0), 1e-15);
}

TEST(CrossEntropy, StableForLargeLogits) {
  const double small = cross_entropy(std::vector<double>{100.0, 0.0}, 0);
  EXPECT_TRUE(std::isfinite(small));
  EXPECT_GE(small, 0.0);
  EXPECT_LT(small, 1e-40);
  EXPECT_NEAR(cross_entropy(std::vector<double>{100.0, 0.0}, 1), 100.0, 1e-12);
}

TEST(CrossEntropy, MatchesLongDoubleEvaluation) {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> z(4);
    for (auto& v : z) v = rng.uniform(-8.0, 8.0);
    const std::size_t y = rng.uniform_int(4);
    long double total = 0;
    for (double v : z) total += std::exp(static_cast<long double>(v));
    const long double expected = -std::log(std::exp(static_cast<long double>(z[y])) / total);
    EXPECT_NEAR(cross_entropy(z, y), static_cast<double>(expected), 1e-10);
  }
}

TEST(CrossEntropy, LabelOutOfRangeIsDataError) {
  EXPECT_THROW(cross_entropy(std::vector<double>{0.0, 1.0}, 2), DataError);
}

ParamStore single_param(Matrix m) { return {{"w", std::move(m)}}; }

TEST(Adam, ZeroGradientWithoutDecayIsIdentity) {
  ParamStore p = single_param(Matrix::column({0.3, -1.7, 2.5}));
  const ParamStore before = p;
  AdamState state;
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  for (int k = 0; k < 3; ++k) adam_step(p, {{"w", Matrix(3, 1, 0.0)}}, state, cfg);
  EXPECT_EQ(p, before);
  for (double v : state.v.at("w").data()) EXPECT_GE(v, 0.0);
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  ParamStore p = single_param(Matrix::column({1.0, 1.0, 1.0, 1.0}));
  const Matrix g = Matrix::column({0.5, -0.02, 3.0, -40.0});
  AdamState state;
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.lr = 1e-3;
  adam_step(p, {{"w", g}}, state, cfg);
  for (std::size_t k = 0; k < 4; ++k) {
    const double sign = g[k] > 0 ? 1.0 : -1.0;
    EXPECT_NEAR(1.0 - p.at("w")[k], cfg.lr * sign, cfg.lr * 1e-6);
  }
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, DecoupledDecayShrinksParameters) {
  ParamStore p = single_param(Matrix::column({2.0, -4.0}));
  AdamState state;
  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.5;
  adam_step(p, {{"w", Matrix(2, 1, 0.0)}}, state, cfg);
  EXPECT_NEAR(p.at("w")[0], 2.0 * (1.0 - 0.005), 1e-15);
  EXPECT_NEAR(p.at("w")[1], -4.0 * (1.0 - 0.005), 1e-15);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  ParamStore p = single_param(Matrix(1, 1, 1.0));
  AdamState state;
  try {
    adam_step(p, {{"w", Matrix(1, 1, std::nan(""))}}, state, TrainConfig{});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("w"), std::string::npos);
  }
}

TEST(Clip, ScalesToGlobalNorm) {
  GradientSet g{{"a", Matrix::column({3.0, 0.0})}, {"b", Matrix::column({0.0, 4.0})}};
  EXPECT_DOUBLE_EQ(clip_gradients(g, 2.5), 5.0);
  EXPECT_DOUBLE_EQ(g.at("a")[0], 1.5);
  EXPECT_DOUBLE_EQ(g.at("b")[1], 2.0);
  EXPECT_DOUBLE_EQ(clip_gradients(g, 10.0), 2.5);
  EXPECT_DOUBLE_EQ(g.at("a")[0], 1.5);
}

TEST(Config, DefaultsAndValidation) {
  const TrainConfig d = TrainConfig::distractor_defaults();
  EXPECT_EQ(d.batch_size, 16u);
  EXPECT_EQ(d.lr, 1e-3);
  EXPECT_EQ(d.weight_decay, 5e-4);
  EXPECT_EQ(d.dropout, 0.3);
  EXPECT_EQ(d.max_epochs, 120u);
  EXPECT_EQ(d.patience, 15u);
  const TrainConfig l = TrainConfig::listops_defaults();
  EXPECT_EQ(l.batch_size, 32u);
  EXPECT_EQ(l.max_epochs, 80u);
  TrainConfig bad = d;
  bad.patience = 200;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = d;
  bad.dropout = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = d;
  bad.lr = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_EQ(train_config_from_json(to_json(d)).patience, d.patience);
}

TEST(Argmax, LowestIndexWinsTiesAndShiftInvariant) {
  EXPECT_EQ(argmax(std::vector<double>{1.0, 3.0, 3.0, 0.0}), 1u);
  EXPECT_EQ(argmax(std::vector<double>{2.0, 2.0}), 0u);
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> z(5);
    for (auto& v : z) v = rng.uniform(-3, 3);
    std::vector<double> shifted = z;
    const double c = rng.uniform(-50, 50);
    for (auto& v : shifted) v += c;
    EXPECT_EQ(argmax(z), argmax(shifted));
  }
}

// Toy task: the label is the first token; the rest is noise.
Dataset toy_dataset(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d{"toy", 4, 2, {}};
  for (std::size_t k = 0; k < n; ++k) {
    Sample s;
    s.label = rng.uniform_int(2);
    s.tokens = {s.label, 2 + rng.uniform_int(2), 2 + rng.uniform_int(2)};
    d.samples.push_back(s);
  }
  return d;
}

ModelConfig toy_model(Variant v) {
  ModelConfig cfg;
  cfg.vocab_size = 4;
  cfg.num_classes = 2;
  cfg.hidden_size = 6;
  cfg.embed_dim = cfg.input_dim = 3;
  cfg.dropout_rate = 0.0;
  return config_for_variant(cfg, v);
}

TEST(Evaluate, ConstantPredictorScoresClassShare) {
  Model m = Model::create(toy_model(Variant::baseline), 0);
  m.params.at("head.W") = Matrix(2, 6, 0.0);
  m.params.at("head.b") = Matrix::column({1.0, 0.0});
  const Dataset d = toy_dataset(2000, 1);
  std::size_t zeros = 0;
  for (const auto& s : d.samples) zeros += s.label == 0;
  EXPECT_DOUBLE_EQ(evaluate(m, d), static_cast<double>(zeros) / 2000.0);
  EXPECT_NEAR(evaluate(m, d), 0.5, 0.05);
}

TEST(Evaluate, OwnPredictionsScorePerfectAndShiftInvariant) {
  Model m = Model::create(toy_model(Variant::echo), 3);
  Dataset d = toy_dataset(200, 2);
  const auto logits = predict_logits(m, [&] {
    std::vector<std::vector<std::size_t>> seqs;
    for (const auto& s : d.samples) seqs.push_back(s.tokens);
    return seqs;
  }());
  for (std::size_t k = 0; k < d.size(); ++k) d.samples[k].label = argmax(logits[k]);
  EXPECT_EQ(evaluate(m, d), 1.0);
  for (double& b : m.params.at("head.b").data()) b += 17.0;
  EXPECT_EQ(evaluate(m, d), 1.0);
}

TEST(Train, SeparableToyReachesFullAccuracy) {
  Model m = Model::create(toy_model(Variant::baseline), 4);
  TrainConfig cfg;
  cfg.lr = 0.02;
  cfg.max_epochs = 60;
  cfg.patience = 60;
  cfg.dropout = 0.0;
  cfg.seed = 1;
  std::size_t first_perfect = 0;
  const RunResult r =
      train(m, toy_dataset(200, 5), toy_dataset(100, 6), nullptr, cfg, [&](const EpochLog& log) {
        if (log.val_accuracy == 1.0 && first_perfect == 0) first_perfect = log.epoch;
      });
  EXPECT_EQ(r.best_val_accuracy, 1.0);
  EXPECT_GT(first_perfect, 0u);
  EXPECT_LT(first_perfect, cfg.max_epochs);
}

TEST(Train, ZeroPatienceStopsAtFirstStaleEpoch) {
  Model m = Model::create(toy_model(Variant::attentive), 4);
  TrainConfig cfg;
  cfg.max_epochs = 50;
  cfg.patience = 0;
  std::vector<EpochLog> logs;
  const RunResult r = train(m, toy_dataset(64, 7), toy_dataset(32, 8), nullptr, cfg,
                            [&](const EpochLog& log) { logs.push_back(log); });
  ASSERT_FALSE(logs.empty());
  for (std::size_t k = 0; k + 1 < logs.size(); ++k) EXPECT_TRUE(logs[k].improved);
  if (r.stopped_epoch < cfg.max_epochs) EXPECT_FALSE(logs.back().improved);
}

TEST(Train, ResultInvariantsAndDeterminism) {
  const Dataset tr = toy_dataset(96, 9), va = toy_dataset(40, 10), te = toy_dataset(40, 11);
  TrainConfig cfg;
  cfg.max_epochs = 6;
  cfg.patience = 2;
  cfg.seed = 3;
  auto run = [&] {
    Model m = Model::create(toy_model(Variant::echo), 8);
    RunResult r = train(m, tr, va, &te, cfg);
    return std::make_pair(r, m.params);
  };
  const auto [a, pa] = run();
  const auto [b, pb] = run();
  EXPECT_EQ(a.loss_curve, b.loss_curve);
  EXPECT_EQ(a.accuracy_curve, b.accuracy_curve);
  EXPECT_EQ(pa, pb);
  EXPECT_EQ(a.loss_curve.size(), a.stopped_epoch);
  EXPECT_EQ(a.accuracy_curve.size(), a.stopped_epoch);
  EXPECT_EQ(a.best_val_accuracy,
            *std::max_element(a.accuracy_curve.begin(), a.accuracy_curve.end()));
  EXPECT_TRUE(a.has_test);

  const RunResult back = run_result_from_json(to_json(a));
  EXPECT_EQ(back.loss_curve, a.loss_curve);
  EXPECT_EQ(back.best_epoch, a.best_epoch);
  std::ostringstream csv;
  write_curves_csv(csv, a);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "epoch,train_loss,val_acc");
}

// Optimisation sanity: repeated steps on one fixed batch lower its loss.
TEST(Train, FixedBatchLossDecreasesForEveryVariant) {
  DistractorSpec spec;
  spec.seq_len = 12;
  spec.num_distractors = 1;
  spec.seed = 13;
  const Dataset d = gen_distractor(spec, 16);
  std::vector<const Sample*> batch;
  for (const auto& s : d.samples) batch.push_back(&s);
  for (Variant v : kAllVariants) {
    ModelConfig mc;
    mc.vocab_size = d.vocab_size;
    mc.num_classes = d.num_classes;
    mc.hidden_size = 8;
    mc.embed_dim = mc.input_dim = 4;
    Model m = Model::create(config_for_variant(mc, v), 2);
    AdamState state;
    TrainConfig cfg;
    cfg.lr = 1e-2;
    const double first = batch_gradients(m, batch, false, 0).loss;
    double last = first;
    for (int step = 0; step < 50; ++step) {
      auto bg = batch_gradients(m, batch, false, 0);
      last = bg.loss;
      clip_gradients(bg.grads, cfg.clip_norm);
      adam_step(m.params, bg.grads, state, cfg);
    }
    EXPECT_LT(last, 0.5 * first) << variant_name(v);
  }
}

TEST(BatchGradients, ParallelMatchesSerialExactly) {
  DistractorSpec spec;
  spec.seq_len = 15;
  spec.seed = 3;
  const Dataset d = gen_distractor(spec, 40);
  std::vector<const Sample*> batch;
  for (const auto& s : d.samples) batch.push_back(&s);
  ModelConfig mc;
  mc.vocab_size = d.vocab_size;
  mc.hidden_size = 8;
  mc.embed_dim = mc.input_dim = 4;
  const Model m = Model::create(config_for_variant(mc, Variant::echo), 1);
  set_default_exec(Exec::serial);
  const BatchGradients serial = batch_gradients(m, batch, true, 77, 8);
  set_default_exec(Exec::parallel);
  const BatchGradients parallel = batch_gradients(m, batch, true, 77, 8);
  EXPECT_EQ(serial.loss, parallel.loss);
  EXPECT_EQ(serial.grads, parallel.grads);
}

}  // namespace
}  // namespace echo
