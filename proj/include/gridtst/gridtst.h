/* SPDX-License-Identifier: Apache-2.0
 *
 * GridTST C API. All handles are opaque; every fallible call returns a
 * gridtst_status and leaves a message in gridtst_last_error() (per thread).
 * Strings returned by the library stay valid until the owning handle is
 * destroyed or, for gridtst_last_error, until the next failing call.
 */
#ifndef GRIDTST_GRIDTST_H
#define GRIDTST_GRIDTST_H

#include <stddef.h>
#include <stdint.h>

#if defined(GRIDTST_BUILDING_LIBRARY)
#define GRIDTST_API __attribute__((visibility("default")))
#else
#define GRIDTST_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gridtst_status {
  GRIDTST_OK = 0,
  GRIDTST_ERR_INVALID_ARGUMENT = 1, /* null pointer, buffer too small */
  GRIDTST_ERR_CONFIG = 2,
  GRIDTST_ERR_NOT_FOUND = 3,
  GRIDTST_ERR_IO = 4,
  GRIDTST_ERR_PARSE = 5,
  GRIDTST_ERR_SHAPE = 6,
  GRIDTST_ERR_NUMERIC = 7,
  GRIDTST_ERR_INTERNAL = 8
} gridtst_status;

GRIDTST_API const char* gridtst_version(void);
GRIDTST_API const char* gridtst_status_name(gridtst_status status);
GRIDTST_API const char* gridtst_last_error(void);

/* Progress lines from long-running calls. Pass NULL to silence. */
typedef void (*gridtst_log_fn)(const char* line, void* user);
GRIDTST_API void gridtst_set_log_callback(gridtst_log_fn fn, void* user);

/* ---- run configuration ---- */

typedef struct gridtst_config gridtst_config;

GRIDTST_API gridtst_status gridtst_config_create(gridtst_config** out);
GRIDTST_API gridtst_status gridtst_config_load(const char* path, gridtst_config** out);
GRIDTST_API gridtst_status gridtst_config_parse(const char* text, gridtst_config** out);
GRIDTST_API gridtst_status gridtst_config_set(gridtst_config* config, const char* key,
                                              const char* value);
/* Copies the value into buf (NUL-terminated). *needed receives the size
 * including the terminator. buf == NULL only queries the size; a non-NULL
 * buffer that is too small yields INVALID_ARGUMENT. */
GRIDTST_API gridtst_status gridtst_config_get(const gridtst_config* config, const char* key,
                                              char* buf, size_t cap, size_t* needed);
GRIDTST_API gridtst_status gridtst_config_serialize(const gridtst_config* config, char* buf,
                                                    size_t cap, size_t* needed);
GRIDTST_API gridtst_status gridtst_config_save(const gridtst_config* config, const char* path);
GRIDTST_API size_t gridtst_config_key_count(void);
GRIDTST_API const char* gridtst_config_key(size_t index);
GRIDTST_API void gridtst_config_destroy(gridtst_config* config);

/* ---- experiment reports ---- */

typedef struct gridtst_report gridtst_report;

typedef struct gridtst_result_row {
  const char* dataset;
  const char* mode; /* sequencing mode, or "persistence" for baseline rows */
  size_t lookback;
  size_t horizon;
  size_t patches;
  double ratio;
  uint64_t seed;
  double mse;
  double mae;
  double val_mse;
  double wall_s;
} gridtst_result_row;

GRIDTST_API size_t gridtst_report_row_count(const gridtst_report* report);
GRIDTST_API gridtst_status gridtst_report_row(const gridtst_report* report, size_t index,
                                              gridtst_result_row* out);
/* Path of the results CSV written by the command ("" when none). */
GRIDTST_API const char* gridtst_report_results_path(const gridtst_report* report);
/* Mode chosen by gridtst_select_mode ("" otherwise). */
GRIDTST_API const char* gridtst_report_selected(const gridtst_report* report);
GRIDTST_API size_t gridtst_report_warning_count(const gridtst_report* report);
GRIDTST_API const char* gridtst_report_warning(const gridtst_report* report, size_t index);
GRIDTST_API void gridtst_report_destroy(gridtst_report* report);

/* ---- commands ---- */

/* horizons may be NULL/0 to train config's model.horizon only. */
GRIDTST_API gridtst_status gridtst_train(const gridtst_config* config, const size_t* horizons,
                                         size_t horizon_count, gridtst_report** out);
/* config supplies data.* and train.batch_size; out_csv may be NULL. */
GRIDTST_API gridtst_status gridtst_evaluate(const char* checkpoint, const gridtst_config* config,
                                            int persistence, const char* out_csv,
                                            gridtst_report** out);
GRIDTST_API gridtst_status gridtst_lookback_sweep(const gridtst_config* config,
                                                  const size_t* lengths, size_t length_count,
                                                  size_t jobs, gridtst_report** out);
GRIDTST_API gridtst_status gridtst_select_mode(const gridtst_config* config, gridtst_report** out);
/* kind: "sinusoid" or "long_memory". */
GRIDTST_API gridtst_status gridtst_synthesize(const char* kind, size_t steps, size_t variates,
                                              uint64_t seed, const char* out_csv);

/* ---- trained models ---- */

typedef struct gridtst_model gridtst_model;

typedef struct gridtst_model_info {
  size_t lookback;
  size_t horizon;
  size_t variates;
  size_t patch_len;
  size_t stride;
  size_t patches;
  size_t d_model;
  size_t heads;
  size_t layers;
  size_t parameters;
  const char* mode;
  const char* norm;
} gridtst_model_info;

GRIDTST_API gridtst_status gridtst_model_load(const char* checkpoint, gridtst_model** out);
GRIDTST_API gridtst_status gridtst_model_info_get(const gridtst_model* model,
                                                  gridtst_model_info* out);
/* window: lookback x variates, row-major, original units. out receives
 * horizon x variates values. */
GRIDTST_API gridtst_status gridtst_model_forecast(gridtst_model* model, const double* window,
                                                  size_t rows, size_t cols, double* out,
                                                  size_t out_len);
GRIDTST_API gridtst_status gridtst_model_forecast_csv(gridtst_model* model, const char* window_csv,
                                                      const char* out_csv);
GRIDTST_API gridtst_status gridtst_model_export_attention(gridtst_model* model,
                                                          const char* window_csv,
                                                          const char* out_dir, int per_sequence,
                                                          size_t* files_written);
GRIDTST_API void gridtst_model_destroy(gridtst_model* model);

#ifdef __cplusplus
}
#endif

#endif /* GRIDTST_GRIDTST_H */
