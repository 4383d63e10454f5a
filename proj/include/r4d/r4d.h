/* Copyright (c) 2026, The r4d Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the r4d library. Every function returns an r4d_status; on
 * failure r4d_last_error() describes the problem until the next call on the
 * same thread. Strings returned through char** are owned by the caller and
 * released with r4d_string_free.
 */

#ifndef R4D_R4D_H
#define R4D_R4D_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define R4D_API __declspec(dllexport)
#else
#define R4D_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum r4d_status {
  R4D_OK = 0,
  R4D_ERR_DIMENSION = 1,
  R4D_ERR_PRECONDITION = 2,
  R4D_ERR_CONFIGURATION = 3,
  R4D_ERR_INPUT = 4,
  R4D_ERR_PARSE = 5,
  R4D_ERR_VERSION = 6,
  R4D_ERR_IO = 7,
  R4D_ERR_NUMERIC = 8,
  R4D_ERR_STATE = 9,
  R4D_ERR_ASSIGNMENT = 10,
  R4D_ERR_ARGUMENT = 11, /* null handle or pointer */
  R4D_ERR_INTERNAL = 12
} r4d_status;

typedef struct r4d_dataset r4d_dataset;
typedef struct r4d_model r4d_model;

typedef struct r4d_metrics {
  size_t n;
  double pct_under_5;
  double pct_under_10;
  double pct_under_15;
  double abs_rel;
  double sq_rel;
  double rmse;
  double rmse_log;
} r4d_metrics;

/* Called after each training epoch. */
typedef void (*r4d_epoch_fn)(void* user, size_t epoch, double lr, double train_loss, const r4d_metrics* val);
/* Called after each suite row; metrics is NULL for a failed row. */
typedef void (*r4d_row_fn)(void* user, const char* name, const r4d_metrics* metrics, const char* error);

R4D_API const char* r4d_version(void);
R4D_API const char* r4d_last_error(void);
R4D_API const char* r4d_status_name(r4d_status status);
R4D_API void r4d_string_free(char* s);

/* Writes through a temporary file and a rename. */
R4D_API r4d_status r4d_write_file(const char* path, const char* data, size_t size);

/* --- datasets ------------------------------------------------------------ */

/* spec_text may be NULL for the default scene spec. A non-NULL seed replaces
 * the spec's seed; the same applies to every seed parameter below. */
R4D_API r4d_status r4d_dataset_generate(const char* spec_text, const char* spec_source, const uint64_t* seed,
                                        uint64_t n_scenes, uint64_t first_index, r4d_dataset** out);
R4D_API r4d_status r4d_dataset_load(const char* path, r4d_dataset** out);
R4D_API r4d_status r4d_dataset_save(const r4d_dataset* dataset, const char* path);
R4D_API void r4d_dataset_free(r4d_dataset* dataset);
R4D_API r4d_status r4d_dataset_counts(const r4d_dataset* dataset, size_t* scenes, size_t* targets);
/* Human-readable summary with a target-distance histogram over the edges. */
R4D_API r4d_status r4d_dataset_summary(const r4d_dataset* dataset, const double* edges, size_t n_edges,
                                       char** text);

/* --- configuration ------------------------------------------------------- */

/* Parses and validates run-config text; canonical returns the full key set. */
R4D_API r4d_status r4d_config_check(const char* config_text, const char* source, char** canonical);
R4D_API r4d_status r4d_scene_spec_check(const char* spec_text, const char* source, char** canonical);

/* --- training and evaluation --------------------------------------------- */

/* config_text may be NULL for the default configuration. */
R4D_API r4d_status r4d_train(const r4d_dataset* train_set, const r4d_dataset* val_set, const char* config_text,
                             const char* config_source, const uint64_t* seed, r4d_epoch_fn on_epoch, void* user,
                             r4d_model** out, char** history_csv);
R4D_API r4d_status r4d_model_save(const r4d_model* model, const char* path);
R4D_API r4d_status r4d_model_load(const char* path, r4d_model** out);
R4D_API void r4d_model_free(r4d_model* model);

/* Scores every target. predictions_path may be NULL; edges may be NULL for no
 * per-range rows. table receives a results table (one global row named
 * row_name, then one row per range bucket). */
R4D_API r4d_status r4d_evaluate(r4d_model* model, const r4d_dataset* dataset, const char* row_name,
                                const double* edges, size_t n_edges, const char* predictions_path,
                                r4d_metrics* metrics, char** table);

/* Scores an external prediction file against a labelled dataset. */
R4D_API r4d_status r4d_score_predictions(const char* predictions_path, const r4d_dataset* truth,
                                         const double* edges, size_t n_edges, r4d_metrics* metrics, char** table);

/* suite: "table1", "table4", "table5", "sweep-sigma" or "sweep-refs". grid may
 * be NULL for the default grid. any_failed is set when a row failed. */
R4D_API r4d_status r4d_run_suite(const r4d_dataset* train_set, const r4d_dataset* val_set, const char* suite,
                                 const char* config_text, const char* config_source, const uint64_t* seed,
                                 const double* grid,
                                 size_t n_grid, int measure_latency, r4d_row_fn on_row, void* user, char** table,
                                 int* any_failed);

/* Renders the scene spec's val indices under day, dawn_dusk and night and
 * reports per-regime metrics and degradation relative to day. */
R4D_API r4d_status r4d_domain_shift(r4d_model* model, const char* spec_text, const char* spec_source,
                                    const uint64_t* seed, uint64_t n_scenes, uint64_t first_index, char** table);

/* Writes attention records (JSON lines) and, when plot_path is not NULL, a CSV
 * of target and reference boxes with weights. */
R4D_API r4d_status r4d_dump_attention(r4d_model* model, const r4d_dataset* dataset, const char* records_path,
                                      const char* plot_path, size_t* n_targets);

#ifdef __cplusplus
}
#endif

#endif /* R4D_R4D_H */
