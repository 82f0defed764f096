// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "gridtst/error.hpp"
#include "gridtst/model.hpp"
#include "oracle/reference.hpp"
#include "test_util.hpp"

using namespace gridtst;

namespace {

ModelConfig small_config(SequencingMode mode = SequencingMode::alternate) {
  ModelConfig c;
  c.lookback = 32;
  c.horizon = 6;
  c.variates = 2;
  c.patch_len = 8;
  c.stride = 4;
  c.d_model = 8;
  c.heads = 2;
  c.layers = 2;
  c.dropout = 0.0;
  c.mode = mode;
  return c;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::vector<double> read_weights(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "row,col,weight");
  std::vector<double> w;
  while (std::getline(in, line)) w.push_back(std::stod(line.substr(line.rfind(',') + 1)));
  return w;
}

}  // namespace

// ---- construction ----

TEST(Build, SameSeedGivesIdenticalParameters) {
  const auto c = small_config();
  const auto a = build(c);
  const auto b = build(c);
  const auto na = a.named_parameters();
  const auto nb = b.named_parameters();
  ASSERT_EQ(na.size(), nb.size());
  for (std::size_t i = 0; i < na.size(); ++i) {
    EXPECT_EQ(na[i].first, nb[i].first);
    EXPECT_EQ(values(na[i].second), values(nb[i].second)) << na[i].first;
  }
  auto other = c;
  other.seed = c.seed + 1;
  EXPECT_NE(values(build(other).patch_proj), values(a.patch_proj));
}

TEST(Build, HeadDimensionAndShapes) {
  const auto c = small_config();
  const auto p = build(c);
  EXPECT_EQ(p.layers[0].head_dim(), 4u);
  EXPECT_EQ(p.patch_proj.shape(), (Shape{8, 8}));
  EXPECT_EQ(p.pos_embed.shape(), (Shape{c.patch_count(), 8}));
  EXPECT_EQ(p.head_weight.shape(), (Shape{c.patch_count() * 8, 6}));
  EXPECT_EQ(p.layers[0].d_ff(), 16u);
}

TEST(Build, ParameterCountOfDefaultConfig) {
  ModelConfig c;  // T=336, F=96, P=16, S=8, D=16, H=4, L=2
  EXPECT_EQ(c.patch_count(), 42u);
  EXPECT_EQ(build(c).parameter_count(), 69984u);
}

TEST(Build, ValidateNamesTheField) {
  auto c = small_config();
  c.heads = 3;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("heads"), std::string::npos) << e.what();
  }
  c = small_config();
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.patch_len = 64;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_mode("sideways"), ConfigError);
}

TEST(Sequencing, Examples) {
  using enum Direction;
  EXPECT_EQ(layer_directions(SequencingMode::alternate, 4),
            (std::vector<Direction>{horizontal, vertical, horizontal, vertical}));
  EXPECT_EQ(layer_directions(SequencingMode::channel_first, 4),
            (std::vector<Direction>{vertical, vertical, horizontal, horizontal}));
  EXPECT_EQ(layer_directions(SequencingMode::time_first, 1), (std::vector<Direction>{horizontal}));
  EXPECT_EQ(layer_directions(SequencingMode::channel_first, 3),
            (std::vector<Direction>{vertical, vertical, horizontal}));
  const auto slots = sequence_layers(SequencingMode::time_first, 3);
  for (std::size_t i = 0; i < slots.size(); ++i) EXPECT_EQ(slots[i].index, i);
  for (auto m : {SequencingMode::channel_first, SequencingMode::time_first, SequencingMode::alternate})
    EXPECT_EQ(parse_mode(mode_name(m)), m);
}

// ---- forward ----

TEST(Forward, ZeroHeadPredictsWindowMean) {
  auto c = small_config();
  auto p = build(c);
  for (auto& v : p.head_weight.mutable_data()) v = 0;
  for (auto& v : p.head_bias.mutable_data()) v = 0;
  Rng rng(1);
  const auto x = testutil::random_tensor({3, 32, 2}, rng, false, -4, 9);
  const auto y = forward(x, p, c).prediction;
  ASSERT_EQ(y.shape(), (Shape{3, 6, 2}));
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t n = 0; n < 2; ++n) {
      double mean = 0;
      for (std::size_t t = 0; t < 32; ++t) mean += x.at({b, t, n});
      mean /= 32;
      for (std::size_t f = 0; f < 6; ++f) EXPECT_NEAR(y.at({b, f, n}), mean, 1e-12);
    }
}

TEST(Forward, VariatePermutationEquivariance) {
  for (auto mode : {SequencingMode::channel_first, SequencingMode::time_first, SequencingMode::alternate}) {
    auto c = small_config(mode);
    c.variates = 4;
    Rng rng(2);
    auto p = build(c);
    testutil::randomize(p, rng);
    const auto x = testutil::random_tensor({2, 32, 4}, rng, false, -3, 3);
    const std::vector<std::size_t> perm{3, 1, 0, 2};
    auto px = values(x);
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t t = 0; t < 32; ++t)
        for (std::size_t n = 0; n < 4; ++n) px[(b * 32 + t) * 4 + n] = x.at({b, t, perm[n]});
    const auto y = forward(x, p, c).prediction;
    const auto py = forward(Tensor::from({2, 32, 4}, px), p, c).prediction;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t f = 0; f < 6; ++f)
        for (std::size_t n = 0; n < 4; ++n)
          EXPECT_NEAR(py.at({b, f, n}), y.at({b, f, perm[n]}), 1e-5) << mode_name(mode);
  }
}

TEST(Forward, MatchesLoopOracleInEveryMode) {
  for (auto mode : {SequencingMode::alternate, SequencingMode::channel_first, SequencingMode::time_first}) {
    for (auto norm : {NormKind::batch, NormKind::layer}) {
      auto c = small_config(mode);
      c.norm = norm;
      c.layers = 3;
      Rng rng(3);
      auto p = build(c);
      testutil::randomize(p, rng);
      const auto x = testutil::random_tensor({1, 32, 2}, rng, false, -2, 2);
      const auto y = values(forward(x, p, c).prediction);
      const auto ref = oracle::forward(values(x), 1, 2, p, c);
      ASSERT_EQ(y.size(), ref.size());
      for (std::size_t i = 0; i < y.size(); ++i)
        EXPECT_NEAR(y[i], ref[i], 1e-6) << mode_name(mode) << " " << norm_kind_name(norm);
    }
  }
}

TEST(Forward, SingleVariateModesCoincideWhenVerticalPathBypassed) {
  Rng rng(4);
  auto base = small_config();
  base.variates = 1;
  auto horizontal = AttentionParams::init(8, 2, 16, rng);
  auto vertical = AttentionParams::init(8, 2, 16, rng);
  for (auto* t : {&vertical.w_value, &vertical.b_value, &vertical.w_out, &vertical.b_out,
                  &vertical.w_ff2, &vertical.b_ff2})
    for (auto& v : t->mutable_data()) v = 0;
  for (auto* s : {&vertical.norm1_state, &vertical.norm2_state})
    for (auto& v : s->running_var) v = 1.0 - s->eps;
  const auto x = testutil::random_tensor({2, 32, 1}, rng, false, -2, 2);
  auto shared = build(base);
  testutil::randomize(shared, rng);
  std::vector<std::vector<double>> outs;
  for (auto mode : {SequencingMode::channel_first, SequencingMode::time_first, SequencingMode::alternate}) {
    auto c = base;
    c.mode = mode;
    auto p = shared.clone();
    p.directions = layer_directions(mode, c.layers);
    p.layers.clear();
    for (auto d : p.directions) p.layers.push_back(d == Direction::horizontal ? horizontal : vertical);
    outs.push_back(values(forward(x, p, c).prediction));
  }
  for (std::size_t i = 0; i < outs[0].size(); ++i) {
    EXPECT_NEAR(outs[1][i], outs[0][i], 1e-6);
    EXPECT_NEAR(outs[2][i], outs[0][i], 1e-6);
  }
}

TEST(Forward, FuzzedInputsStayFiniteWithRightShape) {
  Rng rng(5);
  for (int trial = 0; trial < 25; ++trial) {
    ModelConfig c;
    c.patch_len = 2 + rng.below(8);
    c.stride = 1 + rng.below(c.patch_len);
    c.lookback = c.patch_len + rng.below(40);
    c.horizon = 1 + rng.below(10);
    c.heads = 1 + rng.below(3);
    c.d_model = c.heads * (1 + rng.below(4));
    c.layers = 1 + rng.below(3);
    c.dropout = 0;
    c.mode = static_cast<SequencingMode>(rng.below(3));
    c.seed = trial;
    const std::size_t n = 1 + rng.below(5);
    const std::size_t b = 1 + rng.below(3);
    auto p = build(c);
    const double scale = std::pow(10.0, rng.uniform(-4, 6));
    auto x = testutil::random_tensor({b, c.lookback, n}, rng, false, -scale, scale);
    if (trial % 5 == 0) {
      for (auto& v : x.mutable_data()) v = 3.25;  // constant window
    }
    const auto y = forward(x, p, c).prediction;
    ASSERT_EQ(y.shape(), (Shape{b, c.horizon, n}));
    for (double v : y.data()) ASSERT_TRUE(std::isfinite(v)) << trial;
  }
}

TEST(Forward, RejectsWrongLookbackAndTrainingCapture) {
  auto c = small_config();
  auto p = build(c);
  EXPECT_THROW(forward(Tensor::zeros({1, 31, 2}), p, c), ShapeError);
  Rng rng(6);
  ForwardOptions opts;
  opts.training = true;
  opts.rng = &rng;
  opts.capture_attention = true;
  EXPECT_THROW(forward(Tensor::zeros({1, 32, 2}), p, c, opts), ConfigError);
}

TEST(Forward, GradientsMatchFiniteDifferences) {
  ModelConfig c;
  c.lookback = 8;
  c.horizon = 3;
  c.variates = 2;
  c.patch_len = 4;
  c.stride = 2;
  c.d_model = 4;
  c.heads = 2;
  c.layers = 2;
  c.dropout = 0;
  c.mode = SequencingMode::alternate;
  Rng rng(7);
  auto p = build(c);
  testutil::randomize(p, rng, 0.4);
  const auto x = testutil::random_tensor({2, 8, 2}, rng, false, -2, 2);
  const auto target = testutil::random_tensor({2, 3, 2}, rng);
  std::vector<Tensor> inputs;
  for (auto& [name, t] : p.named_parameters()) inputs.push_back(t);
  ForwardOptions opts;
  opts.training = true;
  const double err = grad_check(
      [&](const std::vector<Tensor>&) { return mse_loss(forward(x, p, c, opts).prediction, target); },
      inputs, 1e-5);
  EXPECT_LT(err, 1e-4);
}

// ---- attention export ----

TEST(Export, SingleHeadMapEqualsWeights) {
  auto c = small_config();
  c.heads = 1;
  auto p = build(c);
  Rng rng(8);
  testutil::randomize(p, rng);
  ForwardOptions opts;
  opts.capture_attention = true;
  const auto r = forward(testutil::random_tensor({1, 32, 2}, rng), p, c, opts);
  ASSERT_EQ(r.captures.size(), 2u);
  testutil::TempDir dir("export");
  const auto files = export_attention(r.captures, dir.path(), true);
  // alternate: layer0 horizontal over 2 variates, layer1 vertical over M patches
  const auto m = c.patch_count();
  EXPECT_EQ(files.size(), 2u + 2u + m);
  EXPECT_TRUE(std::filesystem::exists(dir / "layer0_horizontal.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "layer1_vertical.csv"));
  const auto seq0 = read_weights(dir / "layer0_horizontal_seq0.csv");
  ASSERT_EQ(seq0.size(), m * m);
  for (std::size_t i = 0; i < seq0.size(); ++i) EXPECT_DOUBLE_EQ(seq0[i], r.captures[0].weights[i]);
  EXPECT_EQ(read_weights(dir / "layer1_vertical.csv").size(), 4u);
}

TEST(Export, RowsSumToOneInEveryFile) {
  auto c = small_config(SequencingMode::channel_first);
  c.variates = 3;
  auto p = build(c);
  Rng rng(9);
  testutil::randomize(p, rng);
  ForwardOptions opts;
  opts.capture_attention = true;
  const auto r = forward(testutil::random_tensor({2, 32, 3}, rng, false, -3, 3), p, c, opts);
  testutil::TempDir dir("export");
  for (const auto& f : export_attention(r.captures, dir.path(), true)) {
    const auto w = read_weights(f);
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(w.size()))));
    ASSERT_EQ(side * side, w.size());
    for (std::size_t row = 0; row < side; ++row) {
      double s = 0;
      for (std::size_t col = 0; col < side; ++col) s += w[row * side + col];
      EXPECT_NEAR(s, 1.0, 1e-6) << f;
    }
  }
}

TEST(Export, TwoHandSetHeadsAverage) {
  AttentionCapture cap;
  cap.direction = Direction::vertical;
  cap.layer = 3;
  cap.sequences = 1;
  cap.heads = 2;
  cap.length = 2;
  cap.weights = {0.9, 0.1, 0.2, 0.8, 0.3, 0.7, 0.6, 0.4};
  testutil::TempDir dir("export");
  const auto files = export_attention({cap}, dir.path());
  ASSERT_EQ(files.size(), 1u);
  EXPECT_EQ(files[0].filename(), "layer3_vertical.csv");
  const auto w = read_weights(files[0]);
  const std::vector<double> want{0.6, 0.4, 0.4, 0.6};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(w[i], want[i], 1e-15);
  EXPECT_THROW(export_attention({}, dir.path()), ConfigError);
}

// ---- checkpoints ----

TEST(Checkpoint, RoundTripIsBitExact) {
  auto c = small_config(SequencingMode::time_first);
  c.norm = NormKind::layer;
  c.bn_momentum = 0.05;
  Checkpoint ck{c, build(c), {1.5, -2.0}, {0.25, 3.0}, {"a", "b"}};
  Rng rng(10);
  testutil::randomize(ck.params, rng);
  testutil::TempDir dir("ckpt");
  save_checkpoint(ck, dir / "m.bin");
  auto back = load_checkpoint(dir / "m.bin");
  EXPECT_EQ(serialize_model_config(back.config), serialize_model_config(c));
  EXPECT_EQ(back.data_mean, ck.data_mean);
  EXPECT_EQ(back.data_std, ck.data_std);
  EXPECT_EQ(back.columns, ck.columns);
  const auto a = ck.params.named_parameters();
  const auto b = back.params.named_parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(values(a[i].second), values(b[i].second));
  EXPECT_EQ(back.params.layers[1].norm2_state.running_var, ck.params.layers[1].norm2_state.running_var);
  const auto x = testutil::random_tensor({2, 32, 2}, rng);
  EXPECT_EQ(values(forward(x, back.params, back.config).prediction),
            values(forward(x, ck.params, c).prediction));
}

TEST(Checkpoint, ModelConfigTextRoundTrip) {
  auto c = small_config();
  c.dropout = 0.1 + 0.2;
  EXPECT_EQ(parse_model_config(serialize_model_config(c)).dropout, c.dropout);
  EXPECT_THROW(parse_model_config("model.nope=1\n"), ConfigError);
}

TEST(Checkpoint, CorruptOrMissingFilesAreRejected) {
  testutil::TempDir dir("ckpt");
  EXPECT_THROW(load_checkpoint(dir / "absent.bin"), NotFoundError);
  testutil::write_file(dir / "junk.bin", "not a checkpoint at all");
  EXPECT_THROW(load_checkpoint(dir / "junk.bin"), ParseError);
  const auto c = small_config();
  save_checkpoint({c, build(c), {}, {}, {}}, dir / "ok.bin");
  const auto full = testutil::read_file(dir / "ok.bin");
  testutil::write_file(dir / "cut.bin", full.substr(0, full.size() - 100));
  EXPECT_THROW(load_checkpoint(dir / "cut.bin"), ParseError);
}
