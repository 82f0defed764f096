// SPDX-License-Identifier: Apache-2.0
//
// Experiment drivers behind the command-line tool. Each writes its artifacts
// under the configured output directory and returns the rows it recorded.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gridtst/config.hpp"
#include "gridtst/data.hpp"
#include "gridtst/model.hpp"
#include "gridtst/train.hpp"

namespace gridtst {

using LogFn = std::function<void(const std::string&)>;

struct PreparedData {
  TimeSeriesDataset train;  // standardized
  TimeSeriesDataset val;
  TimeSeriesDataset test;
  ColumnStats stats;
  std::vector<std::string> columns;
  std::vector<std::string> warnings;
};

TimeSeriesDataset load_dataset(const RunConfig& config);

// Split, standardize with train statistics (or the given ones) and optionally
// borrow the lookback prefix for val/test.
PreparedData prepare_data(const TimeSeriesDataset& raw, const DataConfig& data,
                          std::size_t lookback, const ColumnStats* fixed_stats = nullptr);

struct ResultRow {
  std::string dataset;
  std::size_t lookback = 0;
  std::size_t horizon = 0;
  std::size_t patches = 0;  // M
  std::string mode;         // sequencing mode, or the method for eval rows
  double ratio = 1.0;
  std::uint64_t seed = 0;
  double mse = 0.0;
  double mae = 0.0;
  double val_mse = 0.0;
  double wall_s = 0.0;
};

// dataset,T,F,mode,ratio,seed,mse,mae,wall_s (+ ",M" when with_patches)
std::string results_header(bool with_patches = false);
std::string results_line(const ResultRow& row, bool with_patches = false);
void write_results(const std::filesystem::path& path, const std::vector<ResultRow>& rows,
                   bool with_patches = false);

struct RunOutcome {
  ResultRow row;
  TrainReport report;
  Metrics persistence;
  std::filesystem::path dir;
  std::vector<std::string> warnings;
};

// One training run: writes config.txt, checkpoint.bin, epochs.jsonl,
// report.json, stats.csv and results.csv into dir.
RunOutcome run_training(const RunConfig& config, const TimeSeriesDataset& raw,
                        const std::filesystem::path& dir, const LogFn& log = {});

struct CommandResult {
  std::vector<ResultRow> rows;
  std::filesystem::path results_path;
  std::string selected;  // chosen mode for select-mode
  std::vector<std::string> warnings;
};

// Empty horizons trains config.model.horizon only, directly in output_dir;
// otherwise one sub-directory per horizon.
CommandResult cmd_train(const RunConfig& config, const std::vector<std::size_t>& horizons = {},
                        const LogFn& log = {});

// Test-split metrics of a checkpoint. Split settings come from config.
CommandResult cmd_eval(const std::filesystem::path& checkpoint, const RunConfig& config,
                       bool persistence, const std::optional<std::filesystem::path>& out_csv,
                       const LogFn& log = {});

// Forecast in the original units for a [T, N] window.
TimeSeriesDataset forecast_window(Checkpoint& ckpt, const TimeSeriesDataset& window);
TimeSeriesDataset cmd_forecast(const std::filesystem::path& checkpoint,
                               const std::filesystem::path& window_csv,
                               const std::filesystem::path& out_csv);

std::vector<AttentionCapture> capture_window(Checkpoint& ckpt, const TimeSeriesDataset& window);
std::vector<std::filesystem::path> cmd_export_attention(const std::filesystem::path& checkpoint,
                                                        const std::filesystem::path& window_csv,
                                                        const std::filesystem::path& out_dir,
                                                        bool per_sequence = false);

// jobs > 1 runs trials concurrently, trial i seeded with seed + i.
CommandResult cmd_lookback_sweep(const RunConfig& config, const std::vector<std::size_t>& lengths,
                                 std::size_t jobs = 1, const LogFn& log = {});

// Trains every sequencing mode and keeps the one with the lowest val MSE.
CommandResult cmd_select_mode(const RunConfig& config, const LogFn& log = {});

// Synthetic data.
enum class SynthKind { sinusoid, long_memory };
SynthKind parse_synth_kind(const std::string& text);

// N phase-shifted sines (period 24) plus Gaussian noise.
TimeSeriesDataset synth_sinusoid(std::size_t steps, std::size_t variates, std::uint64_t seed,
                                 double noise = 0.05, double period = 24.0);
// A random smooth pattern repeating every `period` steps plus noise.
TimeSeriesDataset synth_long_memory(std::size_t steps, std::size_t variates, std::uint64_t seed,
                                    double noise = 0.05, std::size_t period = 200);
TimeSeriesDataset synthesize(SynthKind kind, std::size_t steps, std::size_t variates,
                             std::uint64_t seed);

}  // namespace gridtst
