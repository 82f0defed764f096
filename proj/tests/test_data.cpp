// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <algorithm>
#include <cstdlib>
#include <functional>

#include "gridtst/data.hpp"
#include "gridtst/error.hpp"
#include "test_util.hpp"

using namespace gridtst;
using testutil::TempDir;
using testutil::write_file;

namespace {

TimeSeriesDataset ramp(std::size_t steps, std::size_t channels) {
  std::vector<double> v(steps * channels);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  return make_dataset("ramp", steps, channels, v);
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

// ---- CSV ----

TEST(LoadCsv, HeaderlessNumeric) {
  TempDir dir("csv");
  write_file(dir / "a.csv", "1,2\n3,4\n5,6\n");
  const auto ds = load_csv(dir / "a.csv");
  EXPECT_EQ(ds.timesteps, 3u);
  EXPECT_EQ(ds.channels, 2u);
  EXPECT_EQ(ds.at(2, 1), 6.0);
  EXPECT_EQ(ds.name, "a");
}

TEST(LoadCsv, HeaderDetectedAndDateDropped) {
  TempDir dir("csv");
  write_file(dir / "b.csv", "date,HUFL,OT\n2016-07-01 00:00:00,5.8,30.5\n2016-07-01 01:00:00,5.6,27.8\n");
  const auto ds = load_csv(dir / "b.csv");
  EXPECT_EQ(ds.channels, 2u);
  EXPECT_EQ(ds.columns, (std::vector<std::string>{"HUFL", "OT"}));
  EXPECT_EQ(ds.at(1, 1), 27.8);
}

TEST(LoadCsv, DropByIndexAndSelectByName) {
  TempDir dir("csv");
  write_file(dir / "c.csv", "t,a,b,c\n0,1,2,3\n1,4,5,6\n");
  CsvOptions by_index;
  by_index.drop_indices = {0, 2};
  const auto a = load_csv(dir / "c.csv", by_index);
  EXPECT_EQ(a.columns, (std::vector<std::string>{"a", "c"}));
  CsvOptions by_name;
  by_name.value_columns = {"c", "a"};
  const auto b = load_csv(dir / "c.csv", by_name);
  EXPECT_EQ(b.columns, (std::vector<std::string>{"c", "a"}));
  EXPECT_EQ(b.at(1, 0), 6.0);
  by_name.value_columns = {"zz"};
  EXPECT_THROW(load_csv(dir / "c.csv", by_name), ConfigError);
}

TEST(LoadCsv, BlankCellNamesRowAndColumn) {
  TempDir dir("csv");
  write_file(dir / "d.csv", "x,y\n1,2\n3,\n");
  const auto msg = error_of([&] { load_csv(dir / "d.csv"); });
  EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("column 2"), std::string::npos) << msg;
  EXPECT_THROW(load_csv(dir / "d.csv"), ParseError);
}

TEST(LoadCsv, RejectsRaggedNonFiniteAndMissing) {
  TempDir dir("csv");
  write_file(dir / "r.csv", "1,2\n3\n");
  EXPECT_THROW(load_csv(dir / "r.csv"), ParseError);
  write_file(dir / "n.csv", "x,y\n1,nan\n");
  EXPECT_THROW(load_csv(dir / "n.csv"), ParseError);
  write_file(dir / "t.csv", "x,y\n1,abc\n");
  EXPECT_THROW(load_csv(dir / "t.csv"), ParseError);
  const auto msg = error_of([&] { load_csv(dir / "missing.csv"); });
  EXPECT_NE(msg.find("missing.csv"), std::string::npos);
  EXPECT_THROW(load_csv(dir / "missing.csv"), NotFoundError);
}

TEST(LoadCsv, WriteReadRoundTripIsExact) {
  TempDir dir("csv");
  Rng rng(1);
  auto ds = make_dataset("x", 5, 3, testutil::random_values(15, rng, -1e3, 1e3));
  write_csv(dir / "x.csv", ds);
  const auto back = load_csv(dir / "x.csv");
  EXPECT_EQ(back.values, ds.values);
  EXPECT_EQ(back.columns, ds.columns);
}

TEST(LoadCsv, WeatherShapeWhenAvailable) {
  const char* root = std::getenv("GRIDTST_DATA_DIR");
  if (!root || !std::filesystem::exists(std::filesystem::path(root) / "weather.csv")) {
    GTEST_SKIP() << "weather.csv not available (set GRIDTST_DATA_DIR)";
  }
  const auto ds = load_csv(std::filesystem::path(root) / "weather.csv");
  EXPECT_EQ(ds.channels, 21u);
  EXPECT_EQ(ds.timesteps, 52696u);
}

// ---- splits ----

TEST(Split, ExactDivision) {
  const auto s = chronological_split(ramp(100, 1), SplitSpec::parse("7:1:2"));
  EXPECT_EQ(s.train.timesteps, 70u);
  EXPECT_EQ(s.val.timesteps, 10u);
  EXPECT_EQ(s.test.timesteps, 20u);
}

TEST(Split, EtthOneFloorArithmetic) {
  const auto s = chronological_split(ramp(17420, 1), SplitSpec::parse("6:2:2"));
  EXPECT_EQ(s.train.timesteps, 10452u);
  EXPECT_EQ(s.val.timesteps, 3484u);
  EXPECT_EQ(s.test.timesteps, 3484u);
}

TEST(Split, EmptyTestNeedsFlag) {
  const auto ds = ramp(10, 1);
  EXPECT_THROW(chronological_split(ds, SplitSpec::parse("1:1:0")), ConfigError);
  auto spec = SplitSpec::parse("1:1:0");
  spec.allow_empty_test = true;
  const auto s = chronological_split(ds, spec);
  EXPECT_EQ(s.test.timesteps, 0u);
  ASSERT_EQ(s.warnings.size(), 1u);
}

TEST(Split, RejectsZeroAndMalformed) {
  EXPECT_THROW(chronological_split(ramp(10, 1), SplitSpec{0, 1, 1}), ConfigError);
  EXPECT_THROW(chronological_split(ramp(10, 1), SplitSpec{1, -1, 1}), ConfigError);
  EXPECT_THROW(SplitSpec::parse("7:1"), ConfigError);
  EXPECT_THROW(SplitSpec::parse("a:b:c"), ConfigError);
  EXPECT_EQ(SplitSpec::parse("6:2:2").str(), "6:2:2");
}

TEST(Split, ConcatenationReconstructsSource) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t steps = 10 + rng.below(500);
    const std::size_t ch = 1 + rng.below(4);
    const auto ds = make_dataset("r", steps, ch, testutil::random_values(steps * ch, rng));
    const SplitSpec spec{1 + static_cast<int>(rng.below(9)), 1 + static_cast<int>(rng.below(4)),
                         1 + static_cast<int>(rng.below(4))};
    const auto s = chronological_split(ds, spec);
    std::vector<double> joined = s.train.values;
    joined.insert(joined.end(), s.val.values.begin(), s.val.values.end());
    joined.insert(joined.end(), s.test.values.begin(), s.test.values.end());
    EXPECT_EQ(joined, ds.values);
  }
}

// ---- standardization ----

TEST(Standardize, HandArithmetic) {
  const auto train = make_dataset("a", 2, 1, {1, 3});
  const auto st = standardize(train, train, train);
  EXPECT_DOUBLE_EQ(st.stats.mean[0], 2.0);
  EXPECT_DOUBLE_EQ(st.stats.std[0], 1.0);
  EXPECT_EQ(st.train.values, (std::vector<double>{-1, 1}));
}

TEST(Standardize, ConstantColumnClampedWithWarning) {
  const auto train = make_dataset("a", 3, 2, {5, 1, 5, 2, 5, 3});
  const auto st = standardize(train, train, train);
  EXPECT_EQ(st.stats.std[0], 1.0);
  for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(st.train.at(t, 0), 0.0);
  EXPECT_FALSE(st.warnings.empty());
}

TEST(Standardize, ValUsesTrainStatistics) {
  const auto train = make_dataset("a", 2, 1, {1, 3});
  const auto val = make_dataset("a", 2, 1, {10, 20});
  const auto st = standardize(train, val, val);
  EXPECT_EQ(st.val.values, (std::vector<double>{8, 18}));
}

TEST(Standardize, InvertibleWithinTolerance) {
  Rng rng(3);
  const auto ds = make_dataset("r", 200, 3, testutil::random_values(600, rng, -50, 80));
  const auto stats = fit_column_stats(ds);
  const auto back = invert_stats(apply_stats(ds, stats), stats);
  for (std::size_t i = 0; i < ds.values.size(); ++i) EXPECT_NEAR(back.values[i], ds.values[i], 1e-9);
}

TEST(Standardize, StatsSidecarRoundTrip) {
  TempDir dir("stats");
  const ColumnStats stats{{0.1, -2.5, 3.0}, {1.0, 0.3333333333333333, 7.25}};
  write_stats_csv(dir / "stats.csv", stats);
  EXPECT_EQ(testutil::read_file(dir / "stats.csv").substr(0, 23), "variate_index,mean,std\n");
  const auto back = read_stats_csv(dir / "stats.csv");
  EXPECT_EQ(back.mean, stats.mean);
  EXPECT_EQ(back.std, stats.std);
}

// ---- windows ----

TEST(Windows, CountFormula) {
  EXPECT_EQ(window_count(10, 4, 2), 5u);
  EXPECT_EQ(window_count(6, 4, 2), 1u);
  EXPECT_EQ(window_count(3484, 336, 96), 3053u);
  EXPECT_EQ(window_count(5, 4, 2), 0u);
}

TEST(Windows, CountPropertyOverRandomTriples) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t t = 1 + rng.below(50);
    const std::size_t f = 1 + rng.below(20);
    const std::size_t steps = t + f + rng.below(100);
    const auto ds = ramp(steps, 1);
    const WindowSet w(ds, t, f);
    EXPECT_EQ(w.size(), steps - t - f + 1);
    // Last window's target ends exactly at the final step.
    const auto b = w.batch({w.size() - 1});
    EXPECT_EQ(b.targets.data().back(), static_cast<double>(steps - 1));
  }
}

TEST(Windows, TooShortSplitIsExplicit) {
  const auto ds = ramp(5, 1);
  const auto msg = error_of([&] { WindowSet w(ds, 4, 2); });
  EXPECT_NE(msg.find("split too short"), std::string::npos) << msg;
}

TEST(Windows, TargetsFollowInputs) {
  const auto ds = ramp(20, 2);
  const WindowSet w(ds, 4, 3);
  const auto b = w.batch({0, 5});
  ASSERT_EQ(b.inputs.shape(), (Shape{2, 4, 2}));
  ASSERT_EQ(b.targets.shape(), (Shape{2, 3, 2}));
  for (std::size_t i = 0; i < 2; ++i) {
    const std::size_t start = i == 0 ? 0 : 5;
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t n = 0; n < 2; ++n) EXPECT_EQ(b.inputs.at({i, t, n}), ds.at(start + t, n));
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t n = 0; n < 2; ++n) EXPECT_EQ(b.targets.at({i, t, n}), ds.at(start + 4 + t, n));
  }
}

TEST(Windows, VariateSubsetIndexesBothTensors) {
  const auto ds = ramp(12, 4);
  const WindowSet w(ds, 3, 2);
  const std::vector<std::size_t> subset{1, 3};
  const auto b = w.batch({2}, &subset);
  ASSERT_TRUE(b.variate_index.has_value());
  EXPECT_EQ(*b.variate_index, subset);
  EXPECT_EQ(b.inputs.dim(2), 2u);
  EXPECT_EQ(b.inputs.at({0, 0, 1}), ds.at(2, 3));
  EXPECT_EQ(b.targets.at({0, 1, 0}), ds.at(2 + 3 + 1, 1));
}

TEST(Windows, ShuffleIsSeededPermutation) {
  const auto ds = ramp(100, 1);
  const WindowSet w(ds, 5, 5);
  Rng a(7), b(7), c(8);
  const auto oa = w.order(&a);
  EXPECT_EQ(oa, w.order(&b));
  EXPECT_NE(oa, w.order(&c));
  auto sorted = oa;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, w.order(nullptr));
}

TEST(Windows, LookbackPrefixBorrowing) {
  const auto ds = ramp(100, 1);
  const auto s = chronological_split(ds, SplitSpec::parse("7:1:2"));
  const auto val = with_lookback_prefix(s.train, s.val, 8);
  EXPECT_EQ(val.timesteps, 18u);
  EXPECT_EQ(val.at(0, 0), 62.0);
  EXPECT_EQ(window_count(val.timesteps, 8, 2), 9u);
}
