// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "gridtst/config.hpp"
#include "gridtst/error.hpp"
#include "test_util.hpp"

using namespace gridtst;

TEST(RunConfigTest, DefaultsFollowTheBenchmarkProtocol) {
  const RunConfig c;
  EXPECT_EQ(c.model.lookback, 336u);
  EXPECT_EQ(c.model.horizon, 96u);
  EXPECT_EQ(c.train.adam.lr, 1e-4);
  EXPECT_EQ(c.train.batch_size, 32u);
  EXPECT_EQ(c.train.patience, 5u);
  EXPECT_EQ(c.train.clip_norm, 5.0);
  EXPECT_EQ(c.data.split.str(), "7:1:2");
}

TEST(RunConfigTest, SerializeParseRoundTrip) {
  RunConfig c;
  c.data.path = "data/ETTh1.csv";
  c.data.split = SplitSpec::parse("6:2:2");
  c.data.csv.drop_indices = {0, 3};
  c.model.mode = SequencingMode::alternate;
  c.model.norm = NormKind::layer;
  c.model.dropout = 0.1 + 0.2;
  c.train.sample_ratio = 0.3;
  c.output_dir = "runs/x";
  c.seed = 99;
  const auto text = c.serialize();
  const auto back = RunConfig::parse(text);
  EXPECT_EQ(back.serialize(), text);
  EXPECT_EQ(back.model.dropout, c.model.dropout);
  EXPECT_EQ(back.data.csv.drop_indices, c.data.csv.drop_indices);
  for (const auto& key : RunConfig::keys()) EXPECT_EQ(back.get(key), c.get(key)) << key;
}

TEST(RunConfigTest, ParseCommentsAndWhitespace) {
  const auto c = RunConfig::parse(
      "# ETTh1\n"
      "data.path = a.csv   # trailing\n"
      "\n"
      "  model.lookback=96\n"
      "model.mode = time_first\n"
      "train.lr = 3e-4\n");
  EXPECT_EQ(c.data.path, "a.csv");
  EXPECT_EQ(c.model.lookback, 96u);
  EXPECT_EQ(c.model.mode, SequencingMode::time_first);
  EXPECT_EQ(c.train.adam.lr, 3e-4);
}

TEST(RunConfigTest, OverridesApplyInOrder) {
  RunConfig c;
  c.set("model.horizon", "192");
  c.set("model.horizon", "336");
  c.set("run.seed", "7");
  EXPECT_EQ(c.model.horizon, 336u);
  EXPECT_EQ(c.get("run.seed"), "7");
  const auto m = c.resolved_model(21);
  EXPECT_EQ(m.variates, 21u);
  EXPECT_EQ(m.seed, 7u);
  EXPECT_EQ(c.resolved_train().seed, 7u);
}

TEST(RunConfigTest, UnknownKeyAndBadValuesAreConfigErrors) {
  RunConfig c;
  EXPECT_THROW(c.set("model.colour", "red"), ConfigError);
  EXPECT_THROW(c.set("model.lookback", "many"), ConfigError);
  EXPECT_THROW(c.set("model.lookback", "-5"), ConfigError);
  EXPECT_THROW(c.set("train.lr", "1e-4x"), ConfigError);
  EXPECT_THROW(c.set("model.mode", "diagonal"), ConfigError);
  EXPECT_THROW(c.set("data.split", "7:1"), ConfigError);
  EXPECT_THROW(c.get("nope"), ConfigError);
  EXPECT_THROW(RunConfig::parse("model.lookback\n"), ConfigError);
  try {
    RunConfig::parse("model.heads = 4\nmodel.wat = 1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("model.wat"), std::string::npos) << e.what();
  }
}

TEST(RunConfigTest, LoadSaveAndMissingFile) {
  testutil::TempDir dir("config");
  RunConfig c;
  c.data.name = "weather";
  c.save(dir / "run.txt");
  EXPECT_EQ(RunConfig::load(dir / "run.txt").data.name, "weather");
  EXPECT_THROW(RunConfig::load(dir / "absent.txt"), NotFoundError);
}

TEST(RunConfigTest, DatasetNameFallsBackToStem) {
  RunConfig c;
  c.data.path = "/x/y/ETTm2.csv";
  EXPECT_EQ(c.dataset_name(), "ETTm2");
  c.data.name = "custom";
  EXPECT_EQ(c.dataset_name(), "custom");
}
