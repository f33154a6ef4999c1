// Copyright 2026 The qnc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "qnc/qnc.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "qnc/dataset.hpp"
#include "qnc/error.hpp"
#include "qnc/experiment.hpp"

struct qnc_dataset {
    qnc::dataset::Dataset ds;
};

struct qnc_model {
    qnc::experiment::Classifier model;
    // Present only for models produced by qnc_train.
    std::optional<qnc::experiment::TrainOutcome> outcome;
};

namespace {

using nlohmann::ordered_json;
namespace ex = qnc::experiment;

thread_local std::string last_error;

qnc_status fail(qnc_status code, const std::string &message) {
    last_error = message;
    return code;
}

template <class F>
qnc_status guarded(F &&body) {
    try {
        last_error.clear();
        body();
        return QNC_OK;
    } catch (const qnc::Error &e) {
        return fail(static_cast<qnc_status>(e.kind()), e.what());
    } catch (const std::bad_alloc &) {
        return fail(QNC_ERR_NUMERICAL, "out of memory");
    } catch (const std::exception &e) {
        return fail(QNC_ERR_DATA, e.what());
    }
}

void require(const void *p, const char *what) {
    if (p == nullptr) throw qnc::ValidationError(std::string(what) + " must not be NULL");
}

char *dup(const std::string &s) {
    char *out = static_cast<char *>(std::malloc(s.size() + 1));
    if (out == nullptr) throw std::bad_alloc();
    std::memcpy(out, s.data(), s.size() + 1);
    return out;
}

void put(char **dst, const std::string &s) {
    if (dst != nullptr) *dst = dup(s);
}

qnc::dataset::PresetOptions preset_options(const qnc_generate_options &o) {
    require(o.task, "task");
    qnc::dataset::PresetOptions p;
    p.task = qnc::dataset::parse_task(o.task);
    p.t_total = o.t_total;
    p.steps = o.steps;
    p.nodes = o.nodes;
    p.edge_prob = o.edge_prob;
    p.n_samples = o.samples;
    p.master_seed = o.seed;
    if (o.has_stickiness) p.stickiness = o.stickiness;
    p.shots = o.shots;
    return p;
}

ex::TrainSettings train_settings(const qnc_train_options &o) {
    ex::TrainSettings s;
    s.seed = o.seed;
    s.budget = o.budget;
    s.epochs = o.epochs;
    s.patience = o.patience;
    s.subsample = o.subsample;
    s.threads = o.threads;
    if (o.log != nullptr) {
        qnc_log_fn fn = o.log;
        void *user = o.log_user;
        s.log = [fn, user](const std::string &line) { fn(line.c_str(), user); };
    }
    return s;
}

ordered_json strings(const std::vector<std::string> &v) {
    ordered_json out = ordered_json::array();
    for (const auto &s : v) out.push_back(s);
    return out;
}

}  // namespace

extern "C" {

const char *qnc_version(void) { return "1.0.0"; }

const char *qnc_last_error(void) { return last_error.c_str(); }

void qnc_string_free(char *s) { std::free(s); }

void qnc_generate_options_init(qnc_generate_options *opts) {
    if (opts == nullptr) return;
    const qnc::dataset::PresetOptions d;
    opts->task = "iid";
    opts->t_total = d.t_total;
    opts->steps = d.steps;
    opts->nodes = d.nodes;
    opts->edge_prob = d.edge_prob;
    opts->samples = d.n_samples;
    opts->seed = d.master_seed;
    opts->has_stickiness = 0;
    opts->stickiness = 0.0;
    opts->shots = d.shots;
}

qnc_status qnc_dataset_generate(const qnc_generate_options *opts, unsigned threads, qnc_dataset **out) {
    return guarded([&] {
        require(opts, "options");
        require(out, "out");
        *out = nullptr;
        const auto spec = qnc::dataset::make_task_spec(preset_options(*opts));
        *out = new qnc_dataset{qnc::dataset::generate(spec, threads)};
    });
}

qnc_status qnc_dataset_read(const char *path, qnc_dataset **out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        *out = nullptr;
        *out = new qnc_dataset{qnc::dataset::read_qncd_file(path)};
    });
}

qnc_status qnc_dataset_write(const qnc_dataset *ds, const char *path) {
    return guarded([&] {
        require(ds, "dataset");
        require(path, "path");
        qnc::dataset::write_qncd_file(ds->ds, path);
    });
}

qnc_status qnc_dataset_header(const qnc_dataset *ds, char **json) {
    return guarded([&] {
        require(ds, "dataset");
        require(json, "json");
        *json = dup(qnc::dataset::header_json(ds->ds));
    });
}

size_t qnc_dataset_size(const qnc_dataset *ds) { return ds == nullptr ? 0 : ds->ds.size(); }

void qnc_dataset_free(qnc_dataset *ds) { delete ds; }

void qnc_train_options_init(qnc_train_options *opts) {
    if (opts == nullptr) return;
    const ex::TrainSettings d;
    opts->model = "m-bigru-max";
    opts->seed = d.seed;
    opts->budget = d.budget;
    opts->epochs = d.epochs;
    opts->patience = d.patience;
    opts->subsample = d.subsample;
    opts->threads = d.threads;
    opts->log = nullptr;
    opts->log_user = nullptr;
}

qnc_status qnc_train(const qnc_dataset *ds, const qnc_train_options *opts, qnc_model **out) {
    return guarded([&] {
        require(ds, "dataset");
        require(opts, "options");
        require(opts->model, "model name");
        require(out, "out");
        *out = nullptr;
        auto outcome = ex::train_model(ds->ds, opts->model, train_settings(*opts));
        ex::Classifier model = outcome.model;
        *out = new qnc_model{std::move(model), std::move(outcome)};
    });
}

qnc_status qnc_model_report(const qnc_model *model, char **json, char **csv) {
    return guarded([&] {
        require(model, "model");
        if (!model->outcome) throw qnc::ValidationError("model carries no training report");
        put(json, model->outcome->report_json);
        put(csv, model->outcome->curve_csv);
    });
}

qnc_status qnc_model_write_report(const qnc_model *model, const char *out_dir, const char *stem, char **path) {
    return guarded([&] {
        require(model, "model");
        require(out_dir, "output directory");
        require(stem, "stem");
        if (!model->outcome) throw qnc::ValidationError("model carries no training report");
        ex::OutputTree tree{out_dir};
        tree.create();
        put(path, ex::write_report(tree, stem, *model->outcome).string());
    });
}

double qnc_model_test_accuracy(const qnc_model *model) {
    return model != nullptr && model->outcome ? model->outcome->test_accuracy : 0.0;
}

qnc_status qnc_model_save(const qnc_model *model, const char *path) {
    return guarded([&] {
        require(model, "model");
        require(path, "path");
        model->model.save(path);
    });
}

qnc_status qnc_model_load(const char *path, qnc_model **out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        *out = nullptr;
        *out = new qnc_model{ex::Classifier::load(path), std::nullopt};
    });
}

qnc_status qnc_model_info(const qnc_model *model, char **json) {
    return guarded([&] {
        require(model, "model");
        require(json, "json");
        const auto &info = model->model.info();
        ordered_json j;
        j["name"] = info.name;
        j["display"] = info.display;
        j["kind"] = model->model.is_svm() ? "svm" : "neural";
        j["meta"] = ordered_json::parse(model->model.meta_json());
        *json = dup(j.dump(2));
    });
}

void qnc_model_free(qnc_model *model) { delete model; }

qnc_status qnc_evaluate(const qnc_model *model, const qnc_dataset *ds, const char *split, unsigned threads,
                        double *accuracy, size_t *n, char **warnings) {
    return guarded([&] {
        require(model, "model");
        require(ds, "dataset");
        require(split, "split");
        require(accuracy, "accuracy");
        const auto r = ex::evaluate(model->model, ds->ds, qnc::dataset::parse_split(split), threads);
        *accuracy = r.accuracy;
        if (n != nullptr) *n = r.n;
        put(warnings, strings(r.warnings).dump());
    });
}

qnc_status qnc_sweep_m(const qnc_generate_options *base, const size_t *m_list, size_t m_count,
                       const qnc_train_options *train, const char *out_dir, char **csv, char **warnings) {
    return guarded([&] {
        require(base, "base options");
        require(train, "train options");
        require(out_dir, "output directory");
        if (m_count > 0) require(m_list, "M list");
        ex::SweepSettings s;
        s.base = preset_options(*base);
        s.m_list.assign(m_list, m_list + m_count);
        if (train->model != nullptr) s.model = train->model;
        s.train = train_settings(*train);
        s.tree.root = out_dir;
        std::vector<std::string> notes;
        const auto rows = ex::sweep_m(s, &notes);
        put(csv, ex::sweep_csv(rows));
        put(warnings, strings(notes).dump());
    });
}

qnc_status qnc_scaling(const qnc_generate_options *base, const qnc_train_options *train, const char *out_dir,
                       int dry_run, char **json) {
    return guarded([&] {
        require(base, "base options");
        require(train, "train options");
        require(json, "json");
        const auto plan = ex::scaling_plan(preset_options(*base));
        const std::string model = train->model != nullptr ? train->model : "m-bigru-max";
        ex::find_model(model);
        ordered_json rows = ordered_json::array();
        for (const auto &spec : plan) {
            ordered_json row;
            row["steps"] = spec.steps;
            row["delta"] = spec.delta();
            row["task"] = ex::task_key(spec);
            row["spec"] = ordered_json::parse(qnc::dataset::header_json(qnc::dataset::Dataset{spec, {}}));
            if (!dry_run) {
                require(out_dir, "output directory");
                const auto r = ex::run_experiment(ex::OutputTree{out_dir}, spec, model, train_settings(*train));
                row["accuracy"] = r.accuracy;
                row["validation_accuracy"] = r.validation_accuracy;
                row["model_path"] = r.model_path;
                row["report_path"] = r.report_path;
            }
            rows.push_back(std::move(row));
        }
        ordered_json out;
        out["model"] = ex::find_model(model).name;
        out["dry_run"] = dry_run != 0;
        out["runs"] = std::move(rows);
        *json = dup(out.dump(2));
    });
}

qnc_status qnc_report(const char *reports_dir, char **csv, char **text) {
    return guarded([&] {
        require(reports_dir, "reports directory");
        const auto table = ex::collect_reports(reports_dir);
        put(csv, table.csv());
        put(text, table.text());
    });
}

}  // extern "C"
