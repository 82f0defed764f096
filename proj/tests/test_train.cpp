// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "gridtst/error.hpp"
#include "gridtst/experiments.hpp"
#include "gridtst/train.hpp"
#include "test_util.hpp"

using namespace gridtst;

namespace {

ModelConfig tiny_config(std::size_t variates = 4) {
  ModelConfig c;
  c.lookback = 48;
  c.horizon = 12;
  c.variates = variates;
  c.patch_len = 8;
  c.stride = 8;
  c.d_model = 8;
  c.heads = 2;
  c.layers = 2;
  c.dropout = 0.0;
  c.mode = SequencingMode::channel_first;
  return c;
}

struct SineSplits {
  Splits splits;
  ColumnStats stats;
};

SineSplits sine_splits(std::size_t steps, std::size_t variates, std::uint64_t seed) {
  const auto raw = synthesize(SynthKind::sinusoid, steps, variates, seed);
  auto s = chronological_split(raw, SplitSpec::parse("7:1:2"));
  const auto st = standardize(s.train, s.val, s.test);
  s.train = st.train;
  s.val = st.val;
  s.test = st.test;
  return {s, st.stats};
}

}  // namespace

// ---- metrics ----

TEST(Metrics, Examples) {
  const auto y = Tensor::from({1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(mse(y, y), 0.0);
  EXPECT_EQ(mae(y, y), 0.0);
  const auto y1 = Tensor::from({1, 2, 2}, {2, 3, 4, 5});
  EXPECT_DOUBLE_EQ(mse(y1, y), 1.0);
  const auto y2 = Tensor::from({1, 2, 2}, {3, 4, 5, 6});
  EXPECT_DOUBLE_EQ(mae(y2, y), 2.0);
  EXPECT_THROW(mse(y, Tensor::zeros({2, 2})), ShapeError);
}

TEST(Metrics, MatchLoopOracle) {
  Rng rng(1);
  const auto a = testutil::random_tensor({2, 3, 2}, rng);
  const auto b = testutil::random_tensor({2, 3, 2}, rng);
  double se = 0, ae = 0;
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 2; ++k) {
        const double d = a.at({i, j, k}) - b.at({i, j, k});
        se += d * d;
        ae += std::abs(d);
      }
  EXPECT_NEAR(mse(a, b), se / 12, 1e-15);
  EXPECT_NEAR(mae(a, b), ae / 12, 1e-15);
}

// ---- optimizer ----

TEST(AdamTest, ZeroGradientLeavesParametersButCountsStep) {
  auto w = Tensor::from({3}, {1, 2, 3}, true);
  Adam opt({{"w", w}}, AdamConfig{});
  w.zero_grad();
  (void)w.mutable_grad();
  opt.step();
  EXPECT_EQ(std::vector<double>(w.data().begin(), w.data().end()), (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(AdamTest, FirstStepIsMinusLearningRate) {
  auto w = Tensor::scalar(0.5, true);
  AdamConfig cfg;
  cfg.lr = 1e-3;
  Adam opt({{"w", w}}, cfg);
  for (int step = 1; step <= 3; ++step) {
    const double before = w.item();
    w.zero_grad();
    w.mutable_grad()[0] = 1.0;
    opt.step();
    // Bias-corrected moments of a constant gradient are exactly 1.
    EXPECT_NEAR(w.item() - before, -cfg.lr / (1 + cfg.eps), 1e-12) << step;
  }
}

TEST(AdamTest, IdenticalParametersStayIdentical) {
  auto a = Tensor::from({2}, {0.3, -0.7}, true);
  auto b = Tensor::from({2}, {0.3, -0.7}, true);
  Adam opt({{"a", a}, {"b", b}}, AdamConfig{});
  Rng rng(2);
  for (int i = 0; i < 10; ++i) {
    const double g0 = rng.uniform(-1, 1), g1 = rng.uniform(-1, 1);
    for (auto* t : {&a, &b}) {
      t->zero_grad();
      t->mutable_grad()[0] = g0;
      t->mutable_grad()[1] = g1;
    }
    opt.step();
  }
  EXPECT_EQ(std::vector<double>(a.data().begin(), a.data().end()),
            std::vector<double>(b.data().begin(), b.data().end()));
}

TEST(AdamTest, MissingGradientIsNamed) {
  auto w = Tensor::from({1}, {1}, true);
  Adam opt({{"lonely", w}}, AdamConfig{});
  try {
    opt.step();
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("lonely"), std::string::npos);
  }
}

TEST(AdamTest, ClipGradNormRescales) {
  auto w = Tensor::from({2}, {0, 0}, true);
  w.mutable_grad()[0] = 3;
  w.mutable_grad()[1] = 4;
  EXPECT_DOUBLE_EQ(clip_grad_norm({{"w", w}}, 1.0), 5.0);
  EXPECT_NEAR(w.grad()[0], 0.6, 1e-12);
  EXPECT_NEAR(w.grad()[1], 0.8, 1e-12);
}

// ---- variate sampling ----

TEST(Sampling, Examples) {
  Rng rng(3);
  const auto all = sample_variates(7, 1.0, rng);
  EXPECT_EQ(all, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6}));
  const auto two = sample_variates(10, 0.2, rng);
  EXPECT_EQ(two.size(), 2u);
  EXPECT_LT(two[0], two[1]);
  EXPECT_EQ(sample_variates(3, 0.01, rng).size(), 1u);
  EXPECT_THROW(sample_variates(3, 0.0, rng), ConfigError);
  EXPECT_THROW(sample_variates(3, 1.5, rng), ConfigError);
}

TEST(Sampling, UniformInclusionFrequency) {
  Rng rng(4);
  std::vector<int> hits(10, 0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i)
    for (auto v : sample_variates(10, 0.5, rng)) ++hits[v];
  for (int h : hits) EXPECT_NEAR(static_cast<double>(h) / draws, 0.5, 0.02);
}

// ---- persistence ----

TEST(Persistence, ConstantSeriesIsPerfect) {
  const auto ds = make_dataset("c", 50, 2, std::vector<double>(100, 4.0));
  const auto m = persistence_baseline(ds, 10, 5);
  EXPECT_EQ(m.mse, 0.0);
  EXPECT_EQ(m.mae, 0.0);
  EXPECT_EQ(m.count, window_count(50, 10, 5) * 5 * 2);
}

TEST(Persistence, SineMatchesClosedForm) {
  // Windows cover every phase of a period-24 sine equally often, so the
  // average of (sin(a + d) - sin a)^2 over phases a is exactly 1 - cos d.
  const std::size_t period = 24, t = 24, f = 12, k = 10;
  const std::size_t steps = period * k + t + f - 1;
  std::vector<double> v(steps);
  for (std::size_t i = 0; i < steps; ++i) v[i] = std::sin(2 * std::numbers::pi * i / period);
  const auto m = persistence_baseline(make_dataset("s", steps, 1, v), t, f);
  double want = 0;
  for (std::size_t h = 1; h <= f; ++h) want += 1 - std::cos(2 * std::numbers::pi * h / period);
  want /= f;
  EXPECT_NEAR(m.mse, want, 1e-12);
  EXPECT_GE(m.mae, 0.0);
}

// ---- training ----

TEST(Training, ZeroLearningRateKeepsValidationFixed) {
  const auto data = sine_splits(1200, 3, 5);
  auto c = tiny_config(3);
  c.bn_momentum = 0.0;  // running statistics would otherwise drift
  c.dropout = 0.2;
  const WindowSet tr(data.splits.train, c.lookback, c.horizon);
  const WindowSet va(data.splits.val, c.lookback, c.horizon);
  TrainConfig opts;
  opts.adam.lr = 0.0;
  opts.epochs = 3;
  opts.max_steps = 30;
  const auto r = train(build(c), c, tr, va, nullptr, opts);
  ASSERT_GE(r.report.epochs.size(), 2u);
  for (const auto& e : r.report.epochs) EXPECT_EQ(e.val_mse, r.report.epochs[0].val_mse);
}

TEST(Training, OneStepDecreasesBatchLoss) {
  const auto data = sine_splits(1200, 4, 6);
  auto c = tiny_config();
  const WindowSet tr(data.splits.train, c.lookback, c.horizon);
  const auto batch = tr.batch({0, 7, 19, 40, 88, 120, 300, 512});
  bool decreased = false;
  for (double lr : {1e-4, 1e-5}) {
    auto p = build(c);
    ForwardOptions fwd;
    fwd.training = true;
    AdamConfig ac;
    ac.lr = lr;
    Adam opt(p.named_parameters(), ac);
    const auto loss = mse_loss(forward(batch.inputs, p, c, fwd).prediction, batch.targets);
    opt.zero_grad();
    loss.backward();
    opt.step();
    const double after = mse_loss(forward(batch.inputs, p, c, fwd).prediction, batch.targets).item();
    if (after < loss.item()) {
      decreased = true;
      break;
    }
  }
  EXPECT_TRUE(decreased);
}

TEST(Training, SeededRunsAreBitIdentical) {
  const auto data = sine_splits(900, 3, 7);
  auto c = tiny_config(3);
  c.dropout = 0.1;
  const WindowSet tr(data.splits.train, c.lookback, c.horizon);
  const WindowSet va(data.splits.val, c.lookback, c.horizon);
  TrainConfig opts;
  opts.adam.lr = 1e-3;
  opts.epochs = 2;
  opts.max_steps = 20;
  opts.sample_ratio = 0.67;
  const auto a = train(build(c), c, tr, va, nullptr, opts);
  const auto b = train(build(c), c, tr, va, nullptr, opts);
  ASSERT_EQ(a.report.epochs.size(), b.report.epochs.size());
  for (std::size_t i = 0; i < a.report.epochs.size(); ++i) {
    EXPECT_EQ(a.report.epochs[i].train_loss, b.report.epochs[i].train_loss);
    EXPECT_EQ(a.report.epochs[i].val_mse, b.report.epochs[i].val_mse);
  }
  opts.seed += 1;
  const auto d = train(build(c), c, tr, va, nullptr, opts);
  EXPECT_NE(d.report.epochs[0].train_loss, a.report.epochs[0].train_loss);
}

TEST(Training, VerticalScoresScaleWithSampledSubset) {
  const auto data = sine_splits(900, 4, 8);
  auto c = tiny_config(4);
  const WindowSet tr(data.splits.train, c.lookback, c.horizon);
  const WindowSet va(data.splits.val, c.lookback, c.horizon);
  TrainConfig opts;
  opts.epochs = 1;
  opts.max_steps = 2;
  opts.batch_size = 8;
  const auto m = c.patch_count();
  const auto full = train(build(c), c, tr, va, nullptr, opts).report;
  opts.sample_ratio = 0.5;
  const auto half = train(build(c), c, tr, va, nullptr, opts).report;
  EXPECT_EQ(full.batch_variates, 4u);
  EXPECT_EQ(half.batch_variates, 2u);
  // channel_first with L=2: one vertical layer over a batch of 8 windows
  EXPECT_EQ(full.vertical_scores_per_batch, 8u * m * 16);
  EXPECT_EQ(half.vertical_scores_per_batch, 8u * m * 4);
  EXPECT_EQ(half.vertical_scores_per_batch * 4, full.vertical_scores_per_batch);
}

TEST(Training, BeatsPersistenceOnSinusoid) {
  const auto data = sine_splits(3000, 4, 9);
  auto c = tiny_config();
  c.mode = SequencingMode::alternate;
  const WindowSet tr(data.splits.train, c.lookback, c.horizon);
  const WindowSet va(data.splits.val, c.lookback, c.horizon);
  const WindowSet te(data.splits.test, c.lookback, c.horizon);
  TrainConfig opts;
  opts.adam.lr = 1e-3;
  opts.epochs = 5;
  opts.max_steps = 300;
  const auto r = train(build(c), c, tr, va, &te, opts);
  ASSERT_TRUE(r.report.has_test);
  EXPECT_LT(r.report.test.mse, persistence_baseline(te).mse);
  EXPECT_LE(r.report.steps, 300u);
  // The returned snapshot is the best-validation one.
  auto best = r.best;
  const auto& rec = r.report.epochs[r.report.best_epoch - 1];
  EXPECT_EQ(evaluate(best, c, va).mse, rec.val_mse);
}

TEST(Training, DivergenceIsReported) {
  auto c = tiny_config(2);
  std::vector<double> v(2 * 400);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sin(0.1 * static_cast<double>(i));
  v[2 * 30] = std::numeric_limits<double>::quiet_NaN();
  const auto ds = make_dataset("nan", 400, 2, v);
  const WindowSet tr(ds, c.lookback, c.horizon);
  TrainConfig opts;
  opts.epochs = 1;
  EXPECT_THROW(train(build(c), c, tr, tr, nullptr, opts), NumericError);
}

TEST(Training, RejectsBadOptions) {
  const auto data = sine_splits(900, 2, 10);
  auto c = tiny_config(2);
  const WindowSet tr(data.splits.train, c.lookback, c.horizon);
  TrainConfig opts;
  opts.batch_size = 0;
  EXPECT_THROW(train(build(c), c, tr, tr, nullptr, opts), ConfigError);
  opts = {};
  opts.sample_ratio = 0;
  EXPECT_THROW(train(build(c), c, tr, tr, nullptr, opts), ConfigError);
}
