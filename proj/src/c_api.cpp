// SPDX-License-Identifier: Apache-2.0

#include "gridtst/gridtst.h"

#include <cstring>
#include <mutex>
#include <new>
#include <string>
#include <vector>

#include "gridtst/config.hpp"
#include "gridtst/error.hpp"
#include "gridtst/experiments.hpp"

struct gridtst_config {
  gridtst::RunConfig value;
};

struct gridtst_report {
  gridtst::CommandResult result;
  std::string results_path;
};

struct gridtst_model {
  gridtst::Checkpoint ckpt;
  std::string mode;
  std::string norm;
};

namespace {

thread_local std::string last_error;

std::mutex log_mutex;
gridtst_log_fn log_fn = nullptr;
void* log_user = nullptr;

gridtst::LogFn logger() {
  return [](const std::string& line) {
    std::lock_guard lock(log_mutex);
    if (log_fn) log_fn(line.c_str(), log_user);
  };
}

gridtst_status fail(gridtst_status status, const std::string& message) {
  last_error = message;
  return status;
}

// Runs body, translating exceptions into status codes.
template <typename F>
gridtst_status guarded(F&& body) {
  try {
    body();
    return GRIDTST_OK;
  } catch (const gridtst::ConfigError& e) {
    return fail(GRIDTST_ERR_CONFIG, e.what());
  } catch (const gridtst::NotFoundError& e) {
    return fail(GRIDTST_ERR_NOT_FOUND, e.what());
  } catch (const gridtst::IoError& e) {
    return fail(GRIDTST_ERR_IO, e.what());
  } catch (const gridtst::ParseError& e) {
    return fail(GRIDTST_ERR_PARSE, e.what());
  } catch (const gridtst::ShapeError& e) {
    return fail(GRIDTST_ERR_SHAPE, e.what());
  } catch (const gridtst::NumericError& e) {
    return fail(GRIDTST_ERR_NUMERIC, e.what());
  } catch (const std::bad_alloc&) {
    return fail(GRIDTST_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(GRIDTST_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(GRIDTST_ERR_INTERNAL, "unknown error");
  }
}

gridtst_status null_arg(const char* name) {
  return fail(GRIDTST_ERR_INVALID_ARGUMENT, std::string(name) + " must not be null");
}

gridtst_status copy_out(const std::string& s, char* buf, size_t cap, size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (!buf) return cap == 0 ? GRIDTST_OK : null_arg("buf");
  if (cap < s.size() + 1) {
    return fail(GRIDTST_ERR_INVALID_ARGUMENT,
                "buffer holds " + std::to_string(cap) + " bytes, need " + std::to_string(s.size() + 1));
  }
  std::memcpy(buf, s.c_str(), s.size() + 1);
  return GRIDTST_OK;
}

gridtst_report* make_report(gridtst::CommandResult result) {
  auto* r = new gridtst_report{std::move(result), {}};
  r->results_path = r->result.results_path.string();
  return r;
}

}  // namespace

extern "C" {

const char* gridtst_version(void) { return "1.0.0"; }

const char* gridtst_status_name(gridtst_status status) {
  switch (status) {
    case GRIDTST_OK: return "ok";
    case GRIDTST_ERR_INVALID_ARGUMENT: return "invalid argument";
    case GRIDTST_ERR_CONFIG: return "config error";
    case GRIDTST_ERR_NOT_FOUND: return "not found";
    case GRIDTST_ERR_IO: return "io error";
    case GRIDTST_ERR_PARSE: return "parse error";
    case GRIDTST_ERR_SHAPE: return "shape error";
    case GRIDTST_ERR_NUMERIC: return "numeric error";
    case GRIDTST_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* gridtst_last_error(void) { return last_error.c_str(); }

void gridtst_set_log_callback(gridtst_log_fn fn, void* user) {
  std::lock_guard lock(log_mutex);
  log_fn = fn;
  log_user = user;
}

// ---- config ----

gridtst_status gridtst_config_create(gridtst_config** out) {
  if (!out) return null_arg("out");
  return guarded([&] { *out = new gridtst_config{}; });
}

gridtst_status gridtst_config_load(const char* path, gridtst_config** out) {
  if (!path) return null_arg("path");
  if (!out) return null_arg("out");
  return guarded([&] { *out = new gridtst_config{gridtst::RunConfig::load(path)}; });
}

gridtst_status gridtst_config_parse(const char* text, gridtst_config** out) {
  if (!text) return null_arg("text");
  if (!out) return null_arg("out");
  return guarded([&] { *out = new gridtst_config{gridtst::RunConfig::parse(text)}; });
}

gridtst_status gridtst_config_set(gridtst_config* config, const char* key, const char* value) {
  if (!config) return null_arg("config");
  if (!key) return null_arg("key");
  if (!value) return null_arg("value");
  return guarded([&] { config->value.set(key, value); });
}

gridtst_status gridtst_config_get(const gridtst_config* config, const char* key, char* buf,
                                  size_t cap, size_t* needed) {
  if (!config) return null_arg("config");
  if (!key) return null_arg("key");
  std::string value;
  const auto st = guarded([&] { value = config->value.get(key); });
  return st == GRIDTST_OK ? copy_out(value, buf, cap, needed) : st;
}

gridtst_status gridtst_config_serialize(const gridtst_config* config, char* buf, size_t cap,
                                        size_t* needed) {
  if (!config) return null_arg("config");
  return copy_out(config->value.serialize(), buf, cap, needed);
}

gridtst_status gridtst_config_save(const gridtst_config* config, const char* path) {
  if (!config) return null_arg("config");
  if (!path) return null_arg("path");
  return guarded([&] { config->value.save(path); });
}

size_t gridtst_config_key_count(void) { return gridtst::RunConfig::keys().size(); }

const char* gridtst_config_key(size_t index) {
  const auto& keys = gridtst::RunConfig::keys();
  return index < keys.size() ? keys[index].c_str() : nullptr;
}

void gridtst_config_destroy(gridtst_config* config) { delete config; }

// ---- reports ----

size_t gridtst_report_row_count(const gridtst_report* report) {
  return report ? report->result.rows.size() : 0;
}

gridtst_status gridtst_report_row(const gridtst_report* report, size_t index,
                                  gridtst_result_row* out) {
  if (!report) return null_arg("report");
  if (!out) return null_arg("out");
  if (index >= report->result.rows.size()) {
    return fail(GRIDTST_ERR_INVALID_ARGUMENT, "row index " + std::to_string(index) + " out of range");
  }
  const auto& r = report->result.rows[index];
  *out = gridtst_result_row{r.dataset.c_str(), r.mode.c_str(), r.lookback, r.horizon, r.patches,
                            r.ratio,           r.seed,         r.mse,      r.mae,     r.val_mse,
                            r.wall_s};
  return GRIDTST_OK;
}

const char* gridtst_report_results_path(const gridtst_report* report) {
  return report ? report->results_path.c_str() : "";
}

const char* gridtst_report_selected(const gridtst_report* report) {
  return report ? report->result.selected.c_str() : "";
}

size_t gridtst_report_warning_count(const gridtst_report* report) {
  return report ? report->result.warnings.size() : 0;
}

const char* gridtst_report_warning(const gridtst_report* report, size_t index) {
  if (!report || index >= report->result.warnings.size()) return nullptr;
  return report->result.warnings[index].c_str();
}

void gridtst_report_destroy(gridtst_report* report) { delete report; }

// ---- commands ----

gridtst_status gridtst_train(const gridtst_config* config, const size_t* horizons,
                             size_t horizon_count, gridtst_report** out) {
  if (!config) return null_arg("config");
  if (!out) return null_arg("out");
  if (horizon_count && !horizons) return null_arg("horizons");
  return guarded([&] {
    std::vector<std::size_t> hs(horizons, horizons + horizon_count);
    *out = make_report(gridtst::cmd_train(config->value, hs, logger()));
  });
}

gridtst_status gridtst_evaluate(const char* checkpoint, const gridtst_config* config,
                                int persistence, const char* out_csv, gridtst_report** out) {
  if (!checkpoint) return null_arg("checkpoint");
  if (!config) return null_arg("config");
  if (!out) return null_arg("out");
  return guarded([&] {
    std::optional<std::filesystem::path> csv;
    if (out_csv) csv = out_csv;
    *out = make_report(gridtst::cmd_eval(checkpoint, config->value, persistence != 0, csv, logger()));
  });
}

gridtst_status gridtst_lookback_sweep(const gridtst_config* config, const size_t* lengths,
                                      size_t length_count, size_t jobs, gridtst_report** out) {
  if (!config) return null_arg("config");
  if (!out) return null_arg("out");
  if (length_count && !lengths) return null_arg("lengths");
  return guarded([&] {
    std::vector<std::size_t> ls(lengths, lengths + length_count);
    *out = make_report(gridtst::cmd_lookback_sweep(config->value, ls, jobs, logger()));
  });
}

gridtst_status gridtst_select_mode(const gridtst_config* config, gridtst_report** out) {
  if (!config) return null_arg("config");
  if (!out) return null_arg("out");
  return guarded([&] { *out = make_report(gridtst::cmd_select_mode(config->value, logger())); });
}

gridtst_status gridtst_synthesize(const char* kind, size_t steps, size_t variates, uint64_t seed,
                                  const char* out_csv) {
  if (!kind) return null_arg("kind");
  if (!out_csv) return null_arg("out_csv");
  return guarded([&] {
    gridtst::write_csv(out_csv, gridtst::synthesize(gridtst::parse_synth_kind(kind), steps, variates, seed));
  });
}

// ---- models ----

gridtst_status gridtst_model_load(const char* checkpoint, gridtst_model** out) {
  if (!checkpoint) return null_arg("checkpoint");
  if (!out) return null_arg("out");
  return guarded([&] {
    auto* m = new gridtst_model{gridtst::load_checkpoint(checkpoint), {}, {}};
    m->mode = gridtst::mode_name(m->ckpt.config.mode);
    m->norm = gridtst::norm_kind_name(m->ckpt.config.norm);
    *out = m;
  });
}

gridtst_status gridtst_model_info_get(const gridtst_model* model, gridtst_model_info* out) {
  if (!model) return null_arg("model");
  if (!out) return null_arg("out");
  const auto& c = model->ckpt.config;
  *out = gridtst_model_info{c.lookback, c.horizon, c.variates,  c.patch_len,
                            c.stride,   c.patch_count(), c.d_model, c.heads,
                            c.layers,   model->ckpt.params.parameter_count(),
                            model->mode.c_str(), model->norm.c_str()};
  return GRIDTST_OK;
}

gridtst_status gridtst_model_forecast(gridtst_model* model, const double* window, size_t rows,
                                      size_t cols, double* out, size_t out_len) {
  if (!model) return null_arg("model");
  if (!window) return null_arg("window");
  if (!out) return null_arg("out");
  const auto& c = model->ckpt.config;
  if (out_len < c.horizon * c.variates) {
    return fail(GRIDTST_ERR_INVALID_ARGUMENT,
                "output buffer holds " + std::to_string(out_len) + " values, need " +
                    std::to_string(c.horizon * c.variates));
  }
  return guarded([&] {
    auto ds = gridtst::make_dataset("window", rows, cols, std::vector<double>(window, window + rows * cols));
    const auto forecast = gridtst::forecast_window(model->ckpt, ds);
    std::copy(forecast.values.begin(), forecast.values.end(), out);
  });
}

gridtst_status gridtst_model_forecast_csv(gridtst_model* model, const char* window_csv,
                                          const char* out_csv) {
  if (!model) return null_arg("model");
  if (!window_csv) return null_arg("window_csv");
  if (!out_csv) return null_arg("out_csv");
  return guarded([&] {
    gridtst::write_csv(out_csv, gridtst::forecast_window(model->ckpt, gridtst::load_csv(window_csv)));
  });
}

gridtst_status gridtst_model_export_attention(gridtst_model* model, const char* window_csv,
                                              const char* out_dir, int per_sequence,
                                              size_t* files_written) {
  if (!model) return null_arg("model");
  if (!window_csv) return null_arg("window_csv");
  if (!out_dir) return null_arg("out_dir");
  return guarded([&] {
    const auto captures = gridtst::capture_window(model->ckpt, gridtst::load_csv(window_csv));
    const auto files = gridtst::export_attention(captures, out_dir, per_sequence != 0);
    if (files_written) *files_written = files.size();
  });
}

void gridtst_model_destroy(gridtst_model* model) { delete model; }

}  // extern "C"
