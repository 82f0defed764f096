// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gridtst/rng.hpp"
#include "gridtst/tensor.hpp"

namespace gridtst {

// Row-major [timesteps x channels] matrix; row order is time order.
struct TimeSeriesDataset {
  std::string name;
  std::string frequency;
  std::vector<std::string> columns;
  std::size_t timesteps = 0;
  std::size_t channels = 0;
  std::vector<double> values;

  double at(std::size_t t, std::size_t n) const { return values[t * channels + n]; }
  double& at(std::size_t t, std::size_t n) { return values[t * channels + n]; }

  // Rows [begin, end).
  TimeSeriesDataset slice(std::size_t begin, std::size_t end) const;
  // Copy restricted to the given variate indices, in that order.
  TimeSeriesDataset select(const std::vector<std::size_t>& variates) const;
};

TimeSeriesDataset make_dataset(std::string name, std::size_t timesteps, std::size_t channels,
                               std::vector<double> values);

struct CsvOptions {
  // Columns dropped by header name (ignored for headerless files) or index.
  std::vector<std::string> drop_columns{"date"};
  std::vector<std::size_t> drop_indices;
  // When non-empty, keep exactly these header names in this order.
  std::vector<std::string> value_columns;
};

// The header is detected by a non-numeric cell in the first row.
TimeSeriesDataset load_csv(const std::filesystem::path& path, const CsvOptions& options = {});
void write_csv(const std::filesystem::path& path, const TimeSeriesDataset& ds);

struct SplitSpec {
  int train = 7;
  int val = 1;
  int test = 2;
  bool allow_empty_test = false;

  // "7:1:2"
  static SplitSpec parse(const std::string& text);
  std::string str() const;
};

struct Splits {
  TimeSeriesDataset train;
  TimeSeriesDataset val;
  TimeSeriesDataset test;
  std::vector<std::string> warnings;
};

// Boundaries at floor(timesteps * cumulative_ratio / total_ratio).
Splits chronological_split(const TimeSeriesDataset& ds, const SplitSpec& spec);

struct ColumnStats {
  std::vector<double> mean;
  std::vector<double> std;
};

struct Standardized {
  TimeSeriesDataset train;
  TimeSeriesDataset val;
  TimeSeriesDataset test;
  ColumnStats stats;
  std::vector<std::string> warnings;
};

// Population statistics fitted on `train` only; a zero std is clamped to 1.
Standardized standardize(const TimeSeriesDataset& train, const TimeSeriesDataset& val,
                         const TimeSeriesDataset& test);
ColumnStats fit_column_stats(const TimeSeriesDataset& ds, std::vector<std::string>* warnings = nullptr);
TimeSeriesDataset apply_stats(const TimeSeriesDataset& ds, const ColumnStats& stats);
TimeSeriesDataset invert_stats(const TimeSeriesDataset& ds, const ColumnStats& stats);

// Sidecar CSV: variate_index,mean,std
void write_stats_csv(const std::filesystem::path& path, const ColumnStats& stats);
ColumnStats read_stats_csv(const std::filesystem::path& path);

// Rows of the last `lookback` steps of `previous` followed by `split`.
TimeSeriesDataset with_lookback_prefix(const TimeSeriesDataset& previous,
                                       const TimeSeriesDataset& split, std::size_t lookback);

struct WindowBatch {
  Tensor inputs;   // [batch, T, n]
  Tensor targets;  // [batch, F, n]
  std::optional<std::vector<std::size_t>> variate_index;
  std::vector<std::size_t> starts;
};

// timesteps - lookback - horizon + 1 at stride 1.
std::size_t window_count(std::size_t timesteps, std::size_t lookback, std::size_t horizon);

// Stride-1 sliding windows over one split. The target block starts right
// after the input block.
class WindowSet {
 public:
  // Keeps a pointer to ds, which must outlive the set.
  WindowSet(const TimeSeriesDataset& ds, std::size_t lookback, std::size_t horizon);
  WindowSet(TimeSeriesDataset&&, std::size_t, std::size_t) = delete;

  std::size_t size() const { return count_; }
  std::size_t lookback() const { return lookback_; }
  std::size_t horizon() const { return horizon_; }
  std::size_t channels() const { return ds_->channels; }

  // Windows starting at each of `starts`. When `variates` is given, only those
  // columns are copied, in that order.
  WindowBatch batch(const std::vector<std::size_t>& starts,
                    const std::vector<std::size_t>* variates = nullptr) const;

  // 0..size()-1, shuffled when an rng is given.
  std::vector<std::size_t> order(Rng* rng) const;

 private:
  const TimeSeriesDataset* ds_;
  std::size_t lookback_;
  std::size_t horizon_;
  std::size_t count_;
};

// A single [T, N] block from rows [start, start + length).
std::vector<double> window_values(const TimeSeriesDataset& ds, std::size_t start, std::size_t length);

}  // namespace gridtst
