// SPDX-License-Identifier: Apache-2.0
//
// gridtst: command-line front end over the C API.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gridtst/gridtst.h"

namespace {

// Exit statuses: 0 success, 1 runtime failure, 2 usage/config error.
int exit_code(gridtst_status st) {
  switch (st) {
    case GRIDTST_OK: return 0;
    case GRIDTST_ERR_INVALID_ARGUMENT:
    case GRIDTST_ERR_CONFIG:
    case GRIDTST_ERR_NOT_FOUND: return 2;
    default: return 1;
  }
}

struct Failure {
  gridtst_status status;
  std::string message;
};

void check(gridtst_status st) {
  if (st != GRIDTST_OK) throw Failure{st, gridtst_last_error()};
}

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;  // key=value
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> lookback;
  std::optional<std::size_t> horizon;
  std::string mode;
  std::optional<double> ratio;
  std::optional<std::size_t> epochs;
};

void add_config_options(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("-c,--config", a.file, "Run config file (key = value lines)");
  cmd->add_option("--set", a.overrides, "Override a config key, e.g. --set train.lr=1e-3")
      ->type_name("KEY=VALUE");
  cmd->add_option("--data", a.data, "Dataset CSV (data.path)");
  cmd->add_option("-o,--out", a.out, "Output directory (run.output_dir)");
  cmd->add_option("--seed", a.seed, "Random seed (run.seed)");
  cmd->add_option("--lookback", a.lookback, "Lookback length T (model.lookback)");
  cmd->add_option("--horizon", a.horizon, "Horizon F (model.horizon)");
  cmd->add_option("--mode", a.mode, "channel_first, time_first or alternate (model.mode)");
  cmd->add_option("--ratio", a.ratio, "Variate sample ratio (train.sample_ratio)");
  cmd->add_option("--epochs", a.epochs, "Maximum epochs (train.epochs)");
}

// Owns a config handle built from the file and then the overrides.
class Config {
 public:
  explicit Config(const ConfigArgs& a) {
    if (a.file.empty()) {
      check(gridtst_config_create(&handle_));
    } else {
      check(gridtst_config_load(a.file.c_str(), &handle_));
    }
    for (const auto& kv : a.overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        throw Failure{GRIDTST_ERR_CONFIG, "--set expects KEY=VALUE, got '" + kv + "'"};
      }
      set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!a.data.empty()) set("data.path", a.data);
    if (!a.out.empty()) set("run.output_dir", a.out);
    if (a.seed) set("run.seed", std::to_string(*a.seed));
    if (a.lookback) set("model.lookback", std::to_string(*a.lookback));
    if (a.horizon) set("model.horizon", std::to_string(*a.horizon));
    if (!a.mode.empty()) set("model.mode", a.mode);
    if (a.ratio) set("train.sample_ratio", CLI::detail::to_string(*a.ratio));
    if (a.epochs) set("train.epochs", std::to_string(*a.epochs));
  }
  ~Config() { gridtst_config_destroy(handle_); }
  Config(const Config&) = delete;
  Config& operator=(const Config&) = delete;

  void set(const std::string& key, const std::string& value) {
    check(gridtst_config_set(handle_, key.c_str(), value.c_str()));
  }
  std::string serialize() const {
    size_t needed = 0;
    check(gridtst_config_serialize(handle_, nullptr, 0, &needed));
    std::string s(needed, '\0');
    check(gridtst_config_serialize(handle_, s.data(), s.size(), &needed));
    s.resize(needed - 1);
    return s;
  }
  const gridtst_config* get() const { return handle_; }

 private:
  gridtst_config* handle_ = nullptr;
};

class Report {
 public:
  ~Report() { gridtst_report_destroy(handle_); }
  gridtst_report** out() { return &handle_; }
  gridtst_report* get() const { return handle_; }

  void print(bool with_val = false) const {
    const auto n = gridtst_report_row_count(handle_);
    for (size_t i = 0; i < gridtst_report_warning_count(handle_); ++i) {
      std::cerr << "warning: " << gridtst_report_warning(handle_, i) << '\n';
    }
    std::printf("%-14s %6s %5s %4s %-14s %6s %12s %12s", "dataset", "T", "F", "M", "mode", "ratio",
                "mse", "mae");
    if (with_val) std::printf(" %12s", "val_mse");
    std::printf(" %9s\n", "wall_s");
    for (size_t i = 0; i < n; ++i) {
      gridtst_result_row r{};
      check(gridtst_report_row(handle_, i, &r));
      std::printf("%-14s %6zu %5zu %4zu %-14s %6.3g %12.6g %12.6g", r.dataset, r.lookback,
                  r.horizon, r.patches, r.mode, r.ratio, r.mse, r.mae);
      if (with_val) std::printf(" %12.6g", r.val_mse);
      std::printf(" %9.2f\n", r.wall_s);
    }
    const std::string path = gridtst_report_results_path(handle_);
    if (!path.empty()) std::printf("results: %s\n", path.c_str());
  }

 private:
  gridtst_report* handle_ = nullptr;
};

class Model {
 public:
  explicit Model(const std::string& path) { check(gridtst_model_load(path.c_str(), &handle_)); }
  ~Model() { gridtst_model_destroy(handle_); }
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  gridtst_model* get() const { return handle_; }

 private:
  gridtst_model* handle_ = nullptr;
};

void log_to_stderr(const char* line, void*) { std::cerr << line << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GridTST: grid attention transformer for multivariate time-series forecasting"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(gridtst_version()));
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  ConfigArgs train_args;
  std::vector<std::size_t> horizon_sweep;
  bool dry_run = false;
  auto* train = app.add_subcommand("train", "Train a model and write checkpoint, logs and results");
  add_config_options(train, train_args);
  train->add_option("--horizon-sweep", horizon_sweep, "Train once per horizon, e.g. 96,192,336,720")
      ->delimiter(',');
  train->add_flag("--print-config", dry_run, "Print the effective config and exit");

  ConfigArgs eval_args;
  std::string eval_ckpt;
  std::string eval_csv;
  bool eval_persistence = false;
  auto* eval = app.add_subcommand("eval", "Test-split metrics of a checkpoint");
  add_config_options(eval, eval_args);
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--metrics", eval_csv, "Write the metrics rows to this CSV");
  eval->add_flag("--persistence", eval_persistence, "Add a persistence-baseline row");

  std::string fc_ckpt;
  std::string fc_window;
  std::string fc_out;
  auto* forecast = app.add_subcommand("forecast", "Forecast the horizon after a lookback window");
  forecast->add_option("--checkpoint", fc_ckpt, "Checkpoint file")->required();
  forecast->add_option("--window", fc_window, "CSV with exactly T rows and N value columns")->required();
  forecast->add_option("-o,--out", fc_out, "Forecast CSV (F rows)")->required();

  std::string ex_ckpt;
  std::string ex_window;
  std::string ex_out;
  bool ex_per_sequence = false;
  auto* export_attn = app.add_subcommand("export-attention", "Write head-averaged attention maps");
  export_attn->add_option("--checkpoint", ex_ckpt, "Checkpoint file")->required();
  export_attn->add_option("--window", ex_window, "CSV with exactly T rows and N value columns")->required();
  export_attn->add_option("-o,--out", ex_out, "Output directory")->required();
  export_attn->add_flag("--per-sequence", ex_per_sequence, "Also write one map per variate/patch step");

  ConfigArgs sweep_args;
  std::vector<std::size_t> lengths;
  std::size_t jobs = 1;
  auto* sweep = app.add_subcommand("lookback-sweep", "Train and evaluate over several lookbacks");
  add_config_options(sweep, sweep_args);
  sweep->add_option("--lengths", lengths, "Lookback lengths, e.g. 96,172,336,512,720")
      ->delimiter(',')
      ->required();
  sweep->add_option("--jobs", jobs, "Concurrent trials (each seeded seed+i when > 1)")
      ->check(CLI::PositiveNumber);

  ConfigArgs select_args;
  auto* select = app.add_subcommand("select-mode", "Pick the sequencing mode by validation MSE");
  add_config_options(select, select_args);

  std::string synth_kind = "sinusoid";
  std::size_t synth_steps = 10000;
  std::size_t synth_variates = 4;
  std::uint64_t synth_seed = 7;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset CSV");
  synth->add_option("--kind", synth_kind, "sinusoid or long_memory");
  synth->add_option("--steps", synth_steps, "Time steps");
  synth->add_option("--variates", synth_variates, "Variates");
  synth->add_option("--seed", synth_seed, "Seed");
  synth->add_option("-o,--out", synth_out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (!quiet) gridtst_set_log_callback(log_to_stderr, nullptr);

  try {
    if (*train) {
      Config config(train_args);
      if (dry_run) {
        std::cout << config.serialize();
        return 0;
      }
      Report report;
      check(gridtst_train(config.get(), horizon_sweep.data(), horizon_sweep.size(), report.out()));
      report.print();
    } else if (*eval) {
      if (eval_args.file.empty()) {
        // Fall back to the snapshot written beside the checkpoint.
        const auto dir = std::filesystem::path(eval_ckpt).parent_path();
        if (std::filesystem::exists(dir / "config.txt")) eval_args.file = (dir / "config.txt").string();
      }
      Config config(eval_args);
      Report report;
      check(gridtst_evaluate(eval_ckpt.c_str(), config.get(), eval_persistence ? 1 : 0,
                             eval_csv.empty() ? nullptr : eval_csv.c_str(), report.out()));
      report.print();
    } else if (*forecast) {
      Model model(fc_ckpt);
      check(gridtst_model_forecast_csv(model.get(), fc_window.c_str(), fc_out.c_str()));
      std::printf("forecast: %s\n", fc_out.c_str());
    } else if (*export_attn) {
      Model model(ex_ckpt);
      size_t files = 0;
      check(gridtst_model_export_attention(model.get(), ex_window.c_str(), ex_out.c_str(),
                                           ex_per_sequence ? 1 : 0, &files));
      std::printf("wrote %zu attention maps to %s\n", files, ex_out.c_str());
    } else if (*sweep) {
      Config config(sweep_args);
      Report report;
      check(gridtst_lookback_sweep(config.get(), lengths.data(), lengths.size(), jobs, report.out()));
      report.print();
    } else if (*select) {
      Config config(select_args);
      Report report;
      check(gridtst_select_mode(config.get(), report.out()));
      report.print(true);
      std::printf("selected: %s\n", gridtst_report_selected(report.get()));
    } else if (*synth) {
      check(gridtst_synthesize(synth_kind.c_str(), synth_steps, synth_variates, synth_seed,
                               synth_out.c_str()));
      std::printf("wrote %s\n", synth_out.c_str());
    }
  } catch (const Failure& f) {
    std::cerr << "error: " << (f.message.empty() ? gridtst_status_name(f.status) : f.message) << '\n';
    return exit_code(f.status);
  }
  return 0;
}
