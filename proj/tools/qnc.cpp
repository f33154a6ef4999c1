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

// qnc: generate walk datasets, train and evaluate classifiers, run the
// resolution experiments and collect the results table.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "qnc/qnc.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Carries a qnc_status out of a command.
struct Failure {
    qnc_status code;
    std::string message;
};

void check(qnc_status s) {
    if (s != QNC_OK) throw Failure{s, qnc_last_error()};
}

struct StringDeleter {
    void operator()(char *p) const { qnc_string_free(p); }
};
using CString = std::unique_ptr<char, StringDeleter>;

std::string take(char *p) {
    CString owned(p);
    return p == nullptr ? std::string() : std::string(p);
}

struct DatasetDeleter {
    void operator()(qnc_dataset *p) const { qnc_dataset_free(p); }
};
struct ModelDeleter {
    void operator()(qnc_model *p) const { qnc_model_free(p); }
};
using Dataset = std::unique_ptr<qnc_dataset, DatasetDeleter>;
using Model = std::unique_ptr<qnc_model, ModelDeleter>;

Dataset read_dataset(const std::string &path) {
    qnc_dataset *ds = nullptr;
    check(qnc_dataset_read(path.c_str(), &ds));
    return Dataset(ds);
}

void log_line(const char *line, void *) { std::fprintf(stderr, "%s\n", line); }

void write_text(const fs::path &path, const std::string &text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw Failure{QNC_ERR_DATA, "cannot write " + path.string()};
}

std::string fixed(double v, int digits) {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(digits);
    out << v;
    return out.str();
}

unsigned env_threads() {
    const char *v = std::getenv("QNC_THREADS");
    if (v == nullptr || *v == '\0') return 0;
    try {
        return static_cast<unsigned>(std::stoul(v));
    } catch (const std::exception &) {
        throw Failure{QNC_ERR_USAGE, std::string("QNC_THREADS is not a number: ") + v};
    }
}

struct Common {
    std::string out_dir = "qnc-out";
    std::optional<unsigned> threads;
    bool quiet = false;

    unsigned thread_count() const { return threads ? *threads : env_threads(); }
};

struct DataFlags {
    std::string task = "iid";
    double t_total = 1.0;
    size_t steps = 15;
    size_t nodes = 40;
    double edge_prob = 0.5;
    size_t samples = 20000;
    uint64_t seed = 0;
    std::optional<double> stickiness;
    size_t shots = 0;

    void add(CLI::App *cmd, bool with_steps) {
        cmd->add_option("--task", task, "Classification task")->check(CLI::IsMember({"iid", "nm", "vs"}));
        cmd->add_option("--t-total", t_total, "Total evolution time");
        if (with_steps) cmd->add_option("--steps", steps, "Snapshots after the initial state (M)");
        cmd->add_option("--nodes", nodes, "Graph nodes (d)");
        cmd->add_option("--edge-prob", edge_prob, "Edge probability of the random graph");
        cmd->add_option("--samples", samples, "Number of samples (even)");
        cmd->add_option("--seed", seed, "Master seed");
        cmd->add_option("--stickiness", stickiness, "VS: coloured class from a Metropolis chain with this stickiness");
        cmd->add_option("--shots", shots, "Measurement shots per snapshot (0 = exact populations)");
    }

    qnc_generate_options options() const {
        qnc_generate_options o;
        qnc_generate_options_init(&o);
        o.task = task.c_str();
        o.t_total = t_total;
        o.steps = steps;
        o.nodes = nodes;
        o.edge_prob = edge_prob;
        o.samples = samples;
        o.seed = seed;
        o.has_stickiness = stickiness.has_value();
        o.stickiness = stickiness.value_or(0.0);
        o.shots = shots;
        return o;
    }
};

struct TrainFlags {
    std::string model = "m-bigru-max";
    uint64_t seed = 0;
    size_t budget = 1;
    size_t epochs = 200;
    size_t patience = 10;
    size_t subsample = 0;

    void add(CLI::App *cmd, bool with_seed) {
        cmd->add_option("--model", model, "Model name, e.g. m-svm-single or m-bigru-max");
        if (with_seed) cmd->add_option("--seed", seed, "Training seed");
        cmd->add_option("--budget", budget, "Hyperparameter trials; above 1 runs the search");
        cmd->add_option("--epochs", epochs, "Epoch cap for neural models");
        cmd->add_option("--patience", patience, "Early-stopping patience in epochs");
        cmd->add_option("--subsample", subsample, "Balanced training rows to keep (0 = all)");
    }

    qnc_train_options options(const Common &c) const {
        qnc_train_options o;
        qnc_train_options_init(&o);
        o.model = model.c_str();
        o.seed = seed;
        o.budget = budget;
        o.epochs = epochs;
        o.patience = patience;
        o.subsample = subsample;
        o.threads = c.thread_count();
        if (!c.quiet) o.log = log_line;
        return o;
    }
};

std::string t_label(double t) {
    std::ostringstream out;
    out << t;
    return out.str();
}

int cmd_generate(const Common &c, const DataFlags &d, std::string out) {
    if (out.empty()) {
        out = (fs::path(c.out_dir) / "datasets" /
               (d.task + "-t" + t_label(d.t_total) + "-M" + std::to_string(d.steps) + "-s" + std::to_string(d.seed) +
                ".qncd"))
                  .string();
    }
    const auto opts = d.options();
    qnc_dataset *raw = nullptr;
    check(qnc_dataset_generate(&opts, c.thread_count(), &raw));
    Dataset ds(raw);
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    check(qnc_dataset_write(ds.get(), out.c_str()));
    char *header = nullptr;
    check(qnc_dataset_header(ds.get(), &header));
    const json h = json::parse(take(header));
    std::cout << "wrote " << out << "\n";
    for (const char *key : {"task", "t_total", "steps", "nodes", "edge_prob", "n_samples", "master_seed"}) {
        if (h.contains(key)) std::cout << "  " << key << ": " << h[key].dump() << "\n";
    }
    return 0;
}

std::string model_stem(const std::string &report_json, const std::string &model, uint64_t seed) {
    const json r = json::parse(report_json);
    const std::string task = r.value("task", std::string("data"));
    return r.value("model", model) + "__" + task + "__s" + std::to_string(seed);
}

int cmd_train(const Common &c, const TrainFlags &t, const std::string &data, std::string out) {
    Dataset ds = read_dataset(data);
    const auto opts = t.options(c);
    qnc_model *raw = nullptr;
    check(qnc_train(ds.get(), &opts, &raw));
    Model model(raw);
    char *report = nullptr;
    check(qnc_model_report(model.get(), &report, nullptr));
    const std::string report_json = take(report);
    const std::string stem = model_stem(report_json, t.model, t.seed);
    if (out.empty()) {
        const bool svm = json::parse(report_json).value("kind", "") == "svm";
        out = (fs::path(c.out_dir) / "models" / (stem + (svm ? ".json" : ".qncm"))).string();
    }
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    check(qnc_model_save(model.get(), out.c_str()));
    char *report_path = nullptr;
    check(qnc_model_write_report(model.get(), c.out_dir.c_str(), stem.c_str(), &report_path));
    std::cout << "model: " << out << "\n"
              << "report: " << take(report_path) << "\n"
              << "test accuracy: " << fixed(qnc_model_test_accuracy(model.get()), 1) << "%\n";
    return 0;
}

int cmd_eval(const Common &c, const std::string &model_path, const std::string &data, const std::string &split) {
    qnc_model *raw = nullptr;
    check(qnc_model_load(model_path.c_str(), &raw));
    Model model(raw);
    Dataset ds = read_dataset(data);
    double accuracy = 0.0;
    size_t n = 0;
    char *warnings = nullptr;
    check(qnc_evaluate(model.get(), ds.get(), split.c_str(), c.thread_count(), &accuracy, &n, &warnings));
    const json w = json::parse(take(warnings));
    for (const auto &line : w) std::cerr << "warning: " << line.get<std::string>() << "\n";

    json record;
    record["model"] = model_path;
    record["data"] = data;
    record["split"] = split;
    record["n"] = n;
    record["accuracy"] = accuracy;
    record["warnings"] = w;
    const fs::path path =
        fs::path(c.out_dir) / "reports" / (fs::path(model_path).stem().string() + "." + split + ".eval.json");
    write_text(path, record.dump(2) + "\n");
    std::cout << "gamma (" << split << ", n=" << n << "): " << fixed(accuracy, 1) << "%\n";
    return 0;
}

std::vector<size_t> parse_m_list(const std::string &text) {
    std::vector<size_t> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        size_t used = 0;
        unsigned long v = 0;
        try {
            v = std::stoul(item, &used);
        } catch (const std::exception &) {
            used = 0;
        }
        if (used == 0 || used != item.size()) throw Failure{QNC_ERR_USAGE, "bad --m-list entry '" + item + "'"};
        out.push_back(v);
    }
    if (out.empty()) throw Failure{QNC_ERR_USAGE, "--m-list is empty"};
    return out;
}

int cmd_sweep(const Common &c, const DataFlags &d, TrainFlags t, const std::string &m_list, std::string csv_out) {
    const auto ms = parse_m_list(m_list);
    t.seed = d.seed;
    const auto base = d.options();
    const auto opts = t.options(c);
    char *csv = nullptr;
    char *warnings = nullptr;
    check(qnc_sweep_m(&base, ms.data(), ms.size(), &opts, c.out_dir.c_str(), &csv, &warnings));
    const std::string table = take(csv);
    for (const auto &line : json::parse(take(warnings))) std::cerr << "warning: " << line.get<std::string>() << "\n";
    if (csv_out.empty()) {
        csv_out = (fs::path(c.out_dir) / "reports" /
                   ("sweep-m__" + d.task + "-" + t_label(d.t_total) + "__" + t.model + "__s" + std::to_string(d.seed) +
                    ".csv"))
                      .string();
    }
    write_text(csv_out, table);
    std::cout << table << "csv: " << csv_out << "\n";
    return 0;
}

int cmd_scaling(const Common &c, const DataFlags &d, TrainFlags t, bool dry_run) {
    t.seed = d.seed;
    const auto base = d.options();
    const auto opts = t.options(c);
    char *out = nullptr;
    check(qnc_scaling(&base, &opts, c.out_dir.c_str(), dry_run ? 1 : 0, &out));
    const json r = json::parse(take(out));
    for (const auto &run : r["runs"]) {
        std::cout << "M=" << run["steps"].get<size_t>() << "  delta=" << run["delta"].get<double>()
                  << "  task=" << run["task"].get<std::string>();
        if (run.contains("accuracy")) std::cout << "  gamma=" << fixed(run["accuracy"].get<double>(), 1) << "%";
        std::cout << "\n";
        if (dry_run) std::cout << "  " << run["spec"].dump() << "\n";
    }
    if (!dry_run) {
        write_text(fs::path(c.out_dir) / "reports" / ("scaling__" + t.model + "__s" + std::to_string(d.seed) + ".json"),
                   r.dump(2) + "\n");
    }
    return 0;
}

int cmd_report(const Common &c, std::string reports, std::string csv_out) {
    if (reports.empty()) reports = (fs::path(c.out_dir) / "reports").string();
    char *csv = nullptr;
    char *text = nullptr;
    check(qnc_report(reports.c_str(), &csv, &text));
    const std::string table = take(csv);
    std::cout << take(text);
    if (csv_out.empty()) csv_out = (fs::path(c.out_dir) / "results.csv").string();
    write_text(csv_out, table);
    std::cout << "csv: " << csv_out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"Quantum-walk noise classification: datasets, models and experiments"};
    app.set_version_flag("--version", std::string(qnc_version()));
    app.require_subcommand(1);

    Common common;
    app.add_option("--out-dir", common.out_dir, "Root of the datasets/, models/ and reports/ tree")
        ->capture_default_str();
    app.add_option("--threads", common.threads, "Worker threads (default: QNC_THREADS or all cores)");
    app.add_flag("--quiet", common.quiet, "Suppress progress output");

    DataFlags gen;
    std::string gen_out;
    auto *generate = app.add_subcommand("generate", "Generate a dataset file");
    gen.add(generate, true);
    generate->add_option("--out", gen_out, "Output file (default under <out-dir>/datasets)");

    TrainFlags tr;
    std::string train_data, train_out;
    auto *train = app.add_subcommand("train", "Train a model and write its report");
    tr.add(train, true);
    train->add_option("--data", train_data, "Dataset file")->required();
    train->add_option("--out", train_out, "Model file (default under <out-dir>/models)");

    std::string eval_model, eval_data, eval_split = "test";
    auto *eval = app.add_subcommand("eval", "Accuracy of a trained model on one split");
    eval->add_option("--model", eval_model, "Model file")->required();
    eval->add_option("--data", eval_data, "Dataset file")->required();
    eval->add_option("--split", eval_split, "Split to evaluate")
        ->check(CLI::IsMember({"train", "validation", "test"}))
        ->capture_default_str();

    DataFlags sw;
    sw.task = "nm";
    TrainFlags sw_train;
    std::string m_list = "15,30,45,60", sweep_csv;
    auto *sweep = app.add_subcommand("sweep-m", "Accuracy against the number of snapshots M");
    sw.add(sweep, false);
    sw_train.add(sweep, false);
    sweep->add_option("--m-list", m_list, "Comma-separated M values")->capture_default_str();
    sweep->add_option("--csv", sweep_csv, "CSV output (default under <out-dir>/reports)");

    DataFlags sc;
    TrainFlags sc_train;
    bool dry_run = false;
    auto *scaling = app.add_subcommand("scaling", "IID at t = 2 with M = 15 against M = 30");
    scaling->add_option("--samples", sc.samples, "Samples per dataset");
    scaling->add_option("--nodes", sc.nodes, "Graph nodes (d)");
    scaling->add_option("--edge-prob", sc.edge_prob, "Edge probability of the random graph");
    scaling->add_option("--seed", sc.seed, "Master and training seed");
    sc_train.add(scaling, false);
    scaling->add_flag("--dry-run", dry_run, "Print the planned datasets without computing");

    std::string report_dir, report_csv;
    auto *report = app.add_subcommand("report", "Collect reports into the results table");
    report->add_option("--reports", report_dir, "Reports directory (default <out-dir>/reports)");
    report->add_option("--csv", report_csv, "CSV output (default <out-dir>/results.csv)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        return QNC_ERR_USAGE;
    }

    try {
        if (*generate) return cmd_generate(common, gen, gen_out);
        if (*train) return cmd_train(common, tr, train_data, train_out);
        if (*eval) return cmd_eval(common, eval_model, eval_data, eval_split);
        if (*sweep) return cmd_sweep(common, sw, sw_train, m_list, sweep_csv);
        if (*scaling) return cmd_scaling(common, sc, sc_train, dry_run);
        if (*report) return cmd_report(common, report_dir, report_csv);
    } catch (const Failure &f) {
        std::cerr << "error: " << f.message << "\n";
        return f.code;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return QNC_ERR_DATA;
    }
    return QNC_ERR_USAGE;
}
