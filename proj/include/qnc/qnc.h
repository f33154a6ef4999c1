/* Copyright 2026 The qnc Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

/* C interface to the qnc library.
 *
 * Every fallible call returns a qnc_status. On failure the message is
 * available from qnc_last_error() on the same thread until the next call.
 * Strings returned through char** out-parameters are owned by the caller and
 * released with qnc_string_free. Handles are released with their _free
 * function; passing NULL to any _free function is a no-op.
 */

#ifndef QNC_QNC_H
#define QNC_QNC_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define QNC_API __declspec(dllexport)
#else
#define QNC_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum qnc_status {
    QNC_OK = 0,
    QNC_ERR_USAGE = 1,
    QNC_ERR_DATA = 2,
    QNC_ERR_NUMERICAL = 3
} qnc_status;

typedef struct qnc_dataset qnc_dataset;
typedef struct qnc_model qnc_model;

/* Progress lines; `line` is valid only for the duration of the call. */
typedef void (*qnc_log_fn)(const char *line, void *user);

QNC_API const char *qnc_version(void);
QNC_API const char *qnc_last_error(void);
QNC_API void qnc_string_free(char *s);

/* Dataset generation. `task` is "iid", "nm" or "vs". */
typedef struct qnc_generate_options {
    const char *task;
    double t_total;
    size_t steps;
    size_t nodes;
    double edge_prob;
    size_t samples;
    uint64_t seed;
    /* VS only; ignored unless has_stickiness is nonzero. */
    int has_stickiness;
    double stickiness;
    /* 0 = exact populations. */
    size_t shots;
} qnc_generate_options;

QNC_API void qnc_generate_options_init(qnc_generate_options *opts);

QNC_API qnc_status qnc_dataset_generate(const qnc_generate_options *opts, unsigned threads, qnc_dataset **out);
QNC_API qnc_status qnc_dataset_read(const char *path, qnc_dataset **out);
QNC_API qnc_status qnc_dataset_write(const qnc_dataset *ds, const char *path);
/* JSON header of the dataset. */
QNC_API qnc_status qnc_dataset_header(const qnc_dataset *ds, char **json);
QNC_API size_t qnc_dataset_size(const qnc_dataset *ds);
QNC_API void qnc_dataset_free(qnc_dataset *ds);

typedef struct qnc_train_options {
    const char *model;
    uint64_t seed;
    /* Search trials; above 1 runs the hyperparameter search. */
    size_t budget;
    size_t epochs;
    size_t patience;
    /* Balanced training rows kept; 0 keeps all. */
    size_t subsample;
    unsigned threads;
    qnc_log_fn log;
    void *log_user;
} qnc_train_options;

QNC_API void qnc_train_options_init(qnc_train_options *opts);

/* Trains and tests once. The model keeps its training report. */
QNC_API qnc_status qnc_train(const qnc_dataset *ds, const qnc_train_options *opts, qnc_model **out);
/* Training report (JSON) and per-epoch curve (CSV, empty for SVMs). Only
 * models returned by qnc_train carry them. */
QNC_API qnc_status qnc_model_report(const qnc_model *model, char **json, char **csv);
/* Writes <out_dir>/reports/<stem>.report.json (and .report.csv); returns the
 * JSON path. */
QNC_API qnc_status qnc_model_write_report(const qnc_model *model, const char *out_dir, const char *stem, char **path);
/* Test accuracy measured at training time, in percent. */
QNC_API double qnc_model_test_accuracy(const qnc_model *model);

QNC_API qnc_status qnc_model_save(const qnc_model *model, const char *path);
QNC_API qnc_status qnc_model_load(const char *path, qnc_model **out);
/* {"name", "display", "kind", "meta"}. */
QNC_API qnc_status qnc_model_info(const qnc_model *model, char **json);
QNC_API void qnc_model_free(qnc_model *model);

/* Accuracy in percent on `split` ("train", "validation" or "test").
 * `warnings` receives a JSON array of strings and may be NULL. */
QNC_API qnc_status qnc_evaluate(const qnc_model *model, const qnc_dataset *ds, const char *split, unsigned threads,
                                double *accuracy, size_t *n, char **warnings);

/* One dataset (cached under <out_dir>/datasets) and one trained model per M.
 * `csv` receives "M,gamma,validation_gamma" rows; `warnings` a JSON array. */
QNC_API qnc_status qnc_sweep_m(const qnc_generate_options *base, const size_t *m_list, size_t m_count,
                               const qnc_train_options *train, const char *out_dir, char **csv, char **warnings);

/* IID at t = 2 with M = 15 and M = 30. With dry_run set nothing is computed
 * and `json` lists the planned specs; otherwise it holds both results. */
QNC_API qnc_status qnc_scaling(const qnc_generate_options *base, const qnc_train_options *train,
                               const char *out_dir, int dry_run, char **json);

/* Results grid from every report below `reports_dir`. Either output may be
 * NULL. */
QNC_API qnc_status qnc_report(const char *reports_dir, char **csv, char **text);

#ifdef __cplusplus
}
#endif

#endif
