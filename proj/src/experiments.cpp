// SPDX-License-Identifier: Apache-2.0

#include "gridtst/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <fstream>
#include <limits>
#include <mutex>
#include <numbers>
#include <sstream>

#include "json.hpp"

#include "gridtst/error.hpp"
#include "gridtst/text.hpp"

namespace gridtst {

namespace fs = std::filesystem;

namespace {

void emit(const LogFn& log, const std::string& line) {
  if (log) log(line);
}

void append_unique(std::vector<std::string>& dst, const std::vector<std::string>& src) {
  for (const auto& w : src) {
    if (std::find(dst.begin(), dst.end(), w) == dst.end()) dst.push_back(w);
  }
}

nlohmann::json metrics_json(const Metrics& m) {
  return {{"mse", m.mse}, {"mae", m.mae}, {"count", m.count}};
}

void write_report_json(const fs::path& path, const RunOutcome& run) {
  const auto& r = run.report;
  nlohmann::json j;
  j["dataset"] = run.row.dataset;
  j["lookback"] = run.row.lookback;
  j["horizon"] = run.row.horizon;
  j["patches"] = run.row.patches;
  j["mode"] = run.row.mode;
  j["seed"] = run.row.seed;
  j["sample_ratio"] = r.sample_ratio;
  j["best_epoch"] = r.best_epoch;
  j["steps"] = r.steps;
  j["epochs"] = r.epochs.size();
  if (r.has_test) {
    j["test"] = metrics_json(r.test);
    j["persistence"] = metrics_json(run.persistence);
  }
  j["vertical_scores_per_batch"] = r.vertical_scores_per_batch;
  j["horizontal_scores_per_batch"] = r.horizontal_scores_per_batch;
  j["batch_variates"] = r.batch_variates;
  j["peak_rss_mb"] = r.peak_rss_mb;
  j["wall_s"] = r.wall_s;
  j["warnings"] = run.warnings;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

TimeSeriesDataset standardize_window(const Checkpoint& ckpt, const TimeSeriesDataset& window) {
  const auto& c = ckpt.config;
  if (window.timesteps != c.lookback || window.channels != c.variates) {
    throw ShapeError("window must be " + std::to_string(c.lookback) + " rows x " +
                     std::to_string(c.variates) + " variates, got " +
                     std::to_string(window.timesteps) + " x " + std::to_string(window.channels));
  }
  if (ckpt.data_mean.empty()) return window;
  return apply_stats(window, ColumnStats{ckpt.data_mean, ckpt.data_std});
}

double best_val_mse(const TrainReport& r) {
  for (const auto& e : r.epochs) {
    if (e.epoch == r.best_epoch) return e.val_mse;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

// ---- data --------------------------------------------------------------------

TimeSeriesDataset load_dataset(const RunConfig& config) {
  if (config.data.path.empty()) throw ConfigError("data.path is required");
  auto ds = load_csv(config.data.path, config.data.csv);
  ds.name = config.dataset_name();
  return ds;
}

PreparedData prepare_data(const TimeSeriesDataset& raw, const DataConfig& data,
                          std::size_t lookback, const ColumnStats* fixed_stats) {
  const Splits splits = chronological_split(raw, data.split);
  PreparedData out;
  out.columns = raw.columns;
  out.warnings = splits.warnings;
  out.stats = fixed_stats ? *fixed_stats : fit_column_stats(splits.train, &out.warnings);
  out.train = apply_stats(splits.train, out.stats);
  out.val = apply_stats(splits.val, out.stats);
  out.test = apply_stats(splits.test, out.stats);
  if (data.borrow_lookback) {
    const auto val_only = out.val;
    out.val = with_lookback_prefix(out.train, val_only, lookback);
    if (out.test.timesteps) out.test = with_lookback_prefix(val_only, out.test, lookback);
  }
  return out;
}

// ---- results -----------------------------------------------------------------

std::string results_header(bool with_patches) {
  return std::string("dataset,T,F,mode,ratio,seed,mse,mae,wall_s") + (with_patches ? ",M" : "");
}

std::string results_line(const ResultRow& r, bool with_patches) {
  std::ostringstream os;
  os << r.dataset << ',' << r.lookback << ',' << r.horizon << ',' << r.mode << ','
     << text::format_double(r.ratio) << ',' << r.seed << ',' << text::format_double(r.mse) << ','
     << text::format_double(r.mae) << ',' << text::format_double(r.wall_s);
  if (with_patches) os << ',' << r.patches;
  return os.str();
}

void write_results(const fs::path& path, const std::vector<ResultRow>& rows, bool with_patches) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << results_header(with_patches) << '\n';
  for (const auto& r : rows) out << results_line(r, with_patches) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

// ---- training ----------------------------------------------------------------

RunOutcome run_training(const RunConfig& config, const TimeSeriesDataset& raw, const fs::path& dir,
                        const LogFn& log) {
  const ModelConfig mc = config.resolved_model(raw.channels);
  mc.validate();
  const TrainConfig tc = config.resolved_train();
  PreparedData data = prepare_data(raw, config.data, mc.lookback);

  const WindowSet train_w(data.train, mc.lookback, mc.horizon);
  const WindowSet val_w(data.val, mc.lookback, mc.horizon);
  std::optional<WindowSet> test_w;
  if (data.test.timesteps) test_w.emplace(data.test, mc.lookback, mc.horizon);

  fs::create_directories(dir);
  config.save(dir / "config.txt");
  write_stats_csv(dir / "stats.csv", data.stats);
  for (const auto& w : data.warnings) emit(log, "warning: " + w);

  const fs::path jsonl_path = dir / "epochs.jsonl";
  std::ofstream jsonl(jsonl_path);
  if (!jsonl) throw IoError("cannot write " + jsonl_path.string());

  RunOutcome run;
  run.dir = dir;
  run.warnings = data.warnings;
  const std::string name = raw.name.empty() ? config.dataset_name() : raw.name;
  emit(log, name + " T=" + std::to_string(mc.lookback) + " F=" + std::to_string(mc.horizon) +
                " mode=" + mode_name(mc.mode) + ": " + std::to_string(train_w.size()) +
                " train / " + std::to_string(val_w.size()) + " val windows");

  ModelParams params = build(mc);
  auto result = train(params, mc, train_w, val_w, test_w ? &*test_w : nullptr, tc,
                      [&](const EpochRecord& e) {
                        nlohmann::json j{{"epoch", e.epoch},     {"train_loss", e.train_loss},
                                         {"val_mse", e.val_mse}, {"val_mae", e.val_mae},
                                         {"steps", e.steps}};
                        jsonl << j.dump() << '\n';
                        jsonl.flush();
                        emit(log, "  epoch " + std::to_string(e.epoch) + " train_loss " +
                                      text::format_double(e.train_loss) + " val_mse " +
                                      text::format_double(e.val_mse));
                      });

  save_checkpoint(Checkpoint{mc, result.best, data.stats.mean, data.stats.std, data.columns},
                  dir / "checkpoint.bin");

  run.report = std::move(result.report);
  if (test_w) run.persistence = persistence_baseline(*test_w);
  run.row.dataset = name;
  run.row.lookback = mc.lookback;
  run.row.horizon = mc.horizon;
  run.row.patches = mc.patch_count();
  run.row.mode = mode_name(mc.mode);
  run.row.ratio = tc.sample_ratio;
  run.row.seed = tc.seed;
  run.row.mse = run.report.has_test ? run.report.test.mse : std::numeric_limits<double>::quiet_NaN();
  run.row.mae = run.report.has_test ? run.report.test.mae : std::numeric_limits<double>::quiet_NaN();
  run.row.val_mse = best_val_mse(run.report);
  run.row.wall_s = run.report.wall_s;
  write_report_json(dir / "report.json", run);
  write_results(dir / "results.csv", {run.row});
  if (run.report.has_test) {
    emit(log, "  test mse " + text::format_double(run.row.mse) + " mae " +
                  text::format_double(run.row.mae) + " (persistence mse " +
                  text::format_double(run.persistence.mse) + ")");
  }
  return run;
}

CommandResult cmd_train(const RunConfig& config, const std::vector<std::size_t>& horizons,
                        const LogFn& log) {
  const auto raw = load_dataset(config);
  CommandResult out;
  const fs::path root = config.output_dir;
  if (horizons.empty()) {
    auto run = run_training(config, raw, root, log);
    out.rows.push_back(run.row);
    out.warnings = run.warnings;
    out.results_path = root / "results.csv";
    return out;
  }
  for (const auto f : horizons) {
    RunConfig c = config;
    c.model.horizon = f;
    auto run = run_training(c, raw, root / ("F" + std::to_string(f)), log);
    out.rows.push_back(run.row);
    append_unique(out.warnings, run.warnings);
  }
  out.results_path = root / "results.csv";
  write_results(out.results_path, out.rows);
  return out;
}

CommandResult cmd_eval(const fs::path& checkpoint, const RunConfig& config, bool persistence,
                       const std::optional<fs::path>& out_csv, const LogFn& log) {
  Checkpoint ckpt = load_checkpoint(checkpoint);
  const auto raw = load_dataset(config);
  const auto& mc = ckpt.config;
  if (raw.channels != mc.variates) {
    throw ShapeError("dataset " + config.data.path + " has " + std::to_string(raw.channels) +
                     " variates but the checkpoint expects " + std::to_string(mc.variates));
  }
  const ColumnStats stats{ckpt.data_mean, ckpt.data_std};
  const auto data = prepare_data(raw, config.data, mc.lookback, stats.mean.empty() ? nullptr : &stats);
  if (!data.test.timesteps) throw ConfigError("the test split is empty");
  const WindowSet test_w(data.test, mc.lookback, mc.horizon);

  CommandResult out;
  out.warnings = data.warnings;
  ResultRow row;
  row.dataset = raw.name;
  row.lookback = mc.lookback;
  row.horizon = mc.horizon;
  row.patches = mc.patch_count();
  row.mode = mode_name(mc.mode);
  row.ratio = 1.0;
  row.seed = mc.seed;
  const auto m = evaluate(ckpt.params, mc, test_w, std::max<std::size_t>(1, config.train.batch_size));
  row.mse = m.mse;
  row.mae = m.mae;
  out.rows.push_back(row);
  emit(log, "model mse " + text::format_double(m.mse) + " mae " + text::format_double(m.mae));
  if (persistence) {
    const auto b = persistence_baseline(test_w);
    row.mode = "persistence";
    row.mse = b.mse;
    row.mae = b.mae;
    out.rows.push_back(row);
    emit(log, "persistence mse " + text::format_double(b.mse) + " mae " + text::format_double(b.mae));
  }
  if (out_csv) {
    write_results(*out_csv, out.rows);
    out.results_path = *out_csv;
  }
  return out;
}

// ---- inference -----------------------------------------------------------------

TimeSeriesDataset forecast_window(Checkpoint& ckpt, const TimeSeriesDataset& window) {
  const auto& mc = ckpt.config;
  const auto scaled = standardize_window(ckpt, window);
  const Tensor inputs = Tensor::from({1, mc.lookback, mc.variates}, scaled.values);
  const auto result = forward(inputs, ckpt.params, mc);
  const auto pred = result.prediction.data();
  auto out = make_dataset(window.name, mc.horizon, mc.variates,
                          std::vector<double>(pred.begin(), pred.end()));
  out.columns = !ckpt.columns.empty() ? ckpt.columns : window.columns;
  if (!ckpt.data_mean.empty()) {
    out = invert_stats(out, ColumnStats{ckpt.data_mean, ckpt.data_std});
    out.columns = !ckpt.columns.empty() ? ckpt.columns : window.columns;
  }
  return out;
}

TimeSeriesDataset cmd_forecast(const fs::path& checkpoint, const fs::path& window_csv,
                               const fs::path& out_csv) {
  Checkpoint ckpt = load_checkpoint(checkpoint);
  const auto window = load_csv(window_csv);
  auto forecast = forecast_window(ckpt, window);
  write_csv(out_csv, forecast);
  return forecast;
}

std::vector<AttentionCapture> capture_window(Checkpoint& ckpt, const TimeSeriesDataset& window) {
  const auto& mc = ckpt.config;
  const auto scaled = standardize_window(ckpt, window);
  const Tensor inputs = Tensor::from({1, mc.lookback, mc.variates}, scaled.values);
  ForwardOptions options;
  options.capture_attention = true;
  return forward(inputs, ckpt.params, mc, options).captures;
}

std::vector<fs::path> cmd_export_attention(const fs::path& checkpoint, const fs::path& window_csv,
                                           const fs::path& out_dir, bool per_sequence) {
  Checkpoint ckpt = load_checkpoint(checkpoint);
  const auto window = load_csv(window_csv);
  return export_attention(capture_window(ckpt, window), out_dir, per_sequence);
}

// ---- sweeps --------------------------------------------------------------------

CommandResult cmd_lookback_sweep(const RunConfig& config, const std::vector<std::size_t>& lengths,
                                 std::size_t jobs, const LogFn& log) {
  if (lengths.empty()) throw ConfigError("lookback sweep needs at least one length");
  for (const auto t : lengths) {
    if (t < config.model.patch_len) {
      throw ConfigError("lookback " + std::to_string(t) + " is shorter than patch_len " +
                        std::to_string(config.model.patch_len));
    }
  }
  const auto raw = load_dataset(config);
  const fs::path root = config.output_dir;

  std::mutex log_mutex;
  LogFn guarded;
  if (log) {
    guarded = [&](const std::string& line) {
      std::lock_guard lock(log_mutex);
      log(line);
    };
  }
  auto trial = [&](std::size_t i) {
    RunConfig c = config;
    c.model.lookback = lengths[i];
    if (jobs > 1) c.seed = config.seed + i;
    return run_training(c, raw, root / ("T" + std::to_string(lengths[i])), guarded);
  };

  std::vector<RunOutcome> runs(lengths.size());
  if (jobs <= 1) {
    for (std::size_t i = 0; i < lengths.size(); ++i) runs[i] = trial(i);
  } else {
    for (std::size_t begin = 0; begin < lengths.size(); begin += jobs) {
      std::vector<std::future<RunOutcome>> pending;
      for (std::size_t i = begin; i < std::min(lengths.size(), begin + jobs); ++i) {
        pending.push_back(std::async(std::launch::async, trial, i));
      }
      for (std::size_t k = 0; k < pending.size(); ++k) runs[begin + k] = pending[k].get();
    }
  }

  CommandResult out;
  for (const auto& r : runs) {
    out.rows.push_back(r.row);
    append_unique(out.warnings, r.warnings);
  }
  out.results_path = root / "lookback_results.csv";
  write_results(out.results_path, out.rows, true);
  return out;
}

CommandResult cmd_select_mode(const RunConfig& config, const LogFn& log) {
  const auto raw = load_dataset(config);
  const fs::path root = config.output_dir;
  CommandResult out;
  double best = std::numeric_limits<double>::infinity();
  for (const auto mode : {SequencingMode::channel_first, SequencingMode::time_first,
                          SequencingMode::alternate}) {
    RunConfig c = config;
    c.model.mode = mode;
    auto run = run_training(c, raw, root / mode_name(mode), log);
    if (run.row.val_mse < best) {
      best = run.row.val_mse;
      out.selected = mode_name(mode);
    }
    out.rows.push_back(run.row);
    append_unique(out.warnings, run.warnings);
  }
  out.results_path = root / "mode_selection.csv";
  std::ofstream csv(out.results_path);
  if (!csv) throw IoError("cannot write " + out.results_path.string());
  csv << "mode,val_mse,test_mse,test_mae,selected\n";
  for (const auto& r : out.rows) {
    csv << r.mode << ',' << text::format_double(r.val_mse) << ',' << text::format_double(r.mse)
        << ',' << text::format_double(r.mae) << ',' << (r.mode == out.selected ? 1 : 0) << '\n';
  }
  write_results(root / "results.csv", out.rows);
  emit(log, "selected mode " + out.selected + " (val mse " + text::format_double(best) + ")");
  return out;
}

// ---- synthetic data --------------------------------------------------------------

SynthKind parse_synth_kind(const std::string& text) {
  if (text == "sinusoid") return SynthKind::sinusoid;
  if (text == "long_memory" || text == "long-memory") return SynthKind::long_memory;
  throw ConfigError("unknown synthetic dataset '" + text + "' (sinusoid, long_memory)");
}

TimeSeriesDataset synth_sinusoid(std::size_t steps, std::size_t variates, std::uint64_t seed,
                                 double noise, double period) {
  if (steps == 0 || variates == 0) throw ConfigError("synthetic dataset needs steps and variates");
  Rng rng(seed);
  std::vector<double> values(steps * variates);
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t n = 0; n < variates; ++n) {
      const double phase = two_pi * static_cast<double>(n) / static_cast<double>(variates);
      values[t * variates + n] =
          std::sin(two_pi * static_cast<double>(t) / period + phase) + noise * rng.normal();
    }
  }
  auto ds = make_dataset("sinusoid", steps, variates, std::move(values));
  for (std::size_t n = 0; n < variates; ++n) ds.columns[n] = "s" + std::to_string(n);
  return ds;
}

TimeSeriesDataset synth_long_memory(std::size_t steps, std::size_t variates, std::uint64_t seed,
                                    double noise, std::size_t period) {
  if (steps == 0 || variates == 0 || period < 2) {
    throw ConfigError("synthetic dataset needs steps, variates and a period >= 2");
  }
  Rng rng(seed);
  std::vector<double> values(steps * variates);
  for (std::size_t n = 0; n < variates; ++n) {
    std::vector<double> raw(period);
    for (auto& v : raw) v = rng.normal();
    // Circular moving average keeps the pattern smooth but aperiodic within a period.
    const std::size_t half = 4;
    std::vector<double> pattern(period, 0.0);
    for (std::size_t i = 0; i < period; ++i) {
      for (std::size_t k = 0; k <= 2 * half; ++k) pattern[i] += raw[(i + period + k - half) % period];
    }
    double sq = 0.0;
    for (double v : pattern) sq += v * v;
    const double scale = 1.0 / std::sqrt(sq / static_cast<double>(period));
    for (std::size_t t = 0; t < steps; ++t) {
      values[t * variates + n] = pattern[t % period] * scale + noise * rng.normal();
    }
  }
  auto ds = make_dataset("long_memory", steps, variates, std::move(values));
  for (std::size_t n = 0; n < variates; ++n) ds.columns[n] = "s" + std::to_string(n);
  return ds;
}

TimeSeriesDataset synthesize(SynthKind kind, std::size_t steps, std::size_t variates,
                             std::uint64_t seed) {
  return kind == SynthKind::sinusoid ? synth_sinusoid(steps, variates, seed)
                                     : synth_long_memory(steps, variates, seed);
}

}  // namespace gridtst
