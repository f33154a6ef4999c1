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

#ifndef QNC_EXPERIMENT_HPP
#define QNC_EXPERIMENT_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "qnc/dataset.hpp"
#include "qnc/neural.hpp"
#include "qnc/svm.hpp"

namespace qnc::experiment {

using Log = std::function<void(const std::string &)>;

struct Preset {
    std::string name;
    dataset::PresetOptions options;
};

/// iid-0.1, iid-1, nm-0.1, nm-1, vs-0.1, vs-1 at M = 15, d = 40, N = 20000.
const std::vector<Preset> &presets();
const Preset &find_preset(std::string_view name);

/// Column key of a dataset: the preset name when the spec has preset shape
/// (M = 15, d = 40), otherwise e.g. "nm-1-M30".
std::string task_key(const dataset::TaskSpec &spec);

/// Hex digest of everything that determines sample q except n_samples.
/// Two datasets with equal identity share sample q for every common q.
std::string dataset_identity(const dataset::TaskSpec &spec);

/// Content-derived file name used by the sweep cache.
std::string cache_file_name(const dataset::TaskSpec &spec);

struct ModelInfo {
    std::string name;     // lower case, e.g. "m-bigru-max"
    std::string display;  // e.g. "m-biGRU-max"
    dataset::FeatureMode features = dataset::FeatureMode::full;
    bool is_svm = false;
    neural::Family family = neural::Family::rnn;
    neural::CellKind cell = neural::CellKind::gru;
    bool bidirectional = false;
    neural::Aggregation aggregation = neural::Aggregation::last_hidden;
};

/// The twelve models in table order.
const std::vector<ModelInfo> &roster();
/// Case-insensitive lookup; throws ValidationError for unknown names.
const ModelInfo &find_model(std::string_view name);

/// Single configuration trained when no search is requested.
neural::ModelConfig default_config(const ModelInfo &info, size_t steps, size_t width);
/// Recurrent depth runs to 6 instead of 4 when `deep` is set (NM at t = 0.1).
neural::SearchSpace search_space(const ModelInfo &info, size_t steps, size_t width, bool deep = false);

struct TrainSettings {
    uint64_t seed = 0;
    /// Search trials; values above 1 run the successive-halving search.
    size_t budget = 1;
    size_t epochs = 200;
    size_t patience = 10;
    /// Training rows kept (balanced, lowest indices first); 0 keeps all.
    size_t subsample = 0;
    unsigned threads = 0;
    Log log;
};

/// Per-column standardization fitted on training rows: (x - mean) / scale.
/// Constant columns keep scale 1. Empty means identity.
struct InputScaling {
    Eigen::RowVectorXd mean;
    Eigen::RowVectorXd scale;

    static InputScaling fit(const Eigen::MatrixXd &x);
    bool empty() const noexcept { return mean.size() == 0; }
    Eigen::MatrixXd apply(const Eigen::MatrixXd &x) const;
};

/// A trained SVM or neural network plus the metadata needed to evaluate it
/// without leakage.
class Classifier {
   public:
    Classifier(svm::SvmModel model, std::string name, std::string meta_json);
    Classifier(neural::Network net, std::string name, std::string meta_json);

    const ModelInfo &info() const;
    bool is_svm() const noexcept { return std::holds_alternative<svm::SvmModel>(model_); }
    const svm::SvmModel &svm_model() const { return std::get<svm::SvmModel>(model_); }
    const neural::Network &network() const { return std::get<neural::Network>(model_); }
    const std::string &meta_json() const noexcept { return meta_; }
    /// Applied to inputs before the network; SVMs see raw populations.
    const InputScaling &input_scaling() const noexcept { return scaling_; }
    void set_input_scaling(InputScaling scaling);

    /// Predicted labels for a feature matrix in this model's layout.
    std::vector<int> predict(const Eigen::MatrixXd &x, unsigned threads = 0) const;
    /// Class probabilities (2 x n) for neural models, one-hot for SVMs.
    Eigen::MatrixXd predict_proba(const Eigen::MatrixXd &x, unsigned threads = 0) const;

    /// SVMs are JSON, networks the binary model format; load sniffs which.
    void save(const std::filesystem::path &path) const;
    static Classifier load(const std::filesystem::path &path);

   private:
    std::variant<svm::SvmModel, neural::Network> model_;
    std::string name_;
    std::string meta_;
    InputScaling scaling_;
};

struct TrainOutcome {
    Classifier model;
    std::string task;
    double validation_accuracy = 0.0;
    double test_accuracy = 0.0;
    /// Full training report (JSON) and, for networks, the per-epoch CSV.
    std::string report_json;
    std::string curve_csv;
};

/// Splits, optionally subsamples, selects hyperparameters on validation and
/// measures test accuracy once for the chosen model.
TrainOutcome train_model(const dataset::Dataset &ds, std::string_view model_name, const TrainSettings &settings);

struct EvalOutcome {
    double accuracy = 0.0;
    size_t n = 0;
    dataset::SplitPart split = dataset::SplitPart::test;
    std::vector<std::string> warnings;
};

/// Accuracy on one split of `ds`. Throws DataError when any evaluated
/// sample was part of the model's training split, or when the dataset does
/// not match the model's input layout.
EvalOutcome evaluate(const Classifier &model, const dataset::Dataset &ds, dataset::SplitPart split,
                     unsigned threads = 0);

/// datasets/, models/ and reports/ below one root.
struct OutputTree {
    std::filesystem::path root;

    std::filesystem::path datasets() const { return root / "datasets"; }
    std::filesystem::path models() const { return root / "models"; }
    std::filesystem::path reports() const { return root / "reports"; }
    void create() const;
};

/// Writes <reports>/<stem>.report.json (and .csv when there is a curve).
std::filesystem::path write_report(const OutputTree &tree, const std::string &stem, const TrainOutcome &outcome);

/// Loads the cached dataset for `spec` or generates and caches it.
dataset::Dataset cached_dataset(const OutputTree &tree, const dataset::TaskSpec &spec, unsigned threads,
                                const Log &log = {});

struct SweepRow {
    size_t steps = 0;
    double accuracy = 0.0;
    double validation_accuracy = 0.0;
    std::string model_path;
    std::string report_path;
};

/// Loads or generates the dataset for `spec`, trains `model`, saves the
/// model under models/ and its report under reports/.
SweepRow run_experiment(const OutputTree &tree, const dataset::TaskSpec &spec, std::string_view model,
                        const TrainSettings &settings);

struct SweepSettings {
    dataset::PresetOptions base;
    std::vector<size_t> m_list{15, 30, 45, 60};
    std::string model = "m-bigru-max";
    TrainSettings train;
    OutputTree tree;
};

/// One dataset and one trained model per M (duplicates dropped with a
/// warning appended to `warnings`); rows in first-seen order.
std::vector<SweepRow> sweep_m(const SweepSettings &settings, std::vector<std::string> *warnings = nullptr);
std::string sweep_csv(const std::vector<SweepRow> &rows);

/// The two specs of the time-resolution experiment: t = 2 at M = 15 and 30.
std::vector<dataset::TaskSpec> scaling_plan(const dataset::PresetOptions &base);

struct ResultsTable {
    std::vector<std::string> models;   // display names, table order
    std::vector<std::string> columns;  // task keys
    std::vector<std::vector<std::optional<double>>> cells;
    std::vector<std::vector<std::string>> sources;  // report file per filled cell

    std::string csv() const;
    std::string text() const;
};

/// Builds the 12 x 6 table from every *.report.json below `reports`; a cell
/// holds the best test accuracy among its reports. Extra task keys found in
/// reports are appended as columns.
ResultsTable collect_reports(const std::filesystem::path &reports);

}  // namespace qnc::experiment

#endif
