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

#ifndef QNC_NEURAL_HPP
#define QNC_NEURAL_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qnc/rng.hpp"

namespace qnc::neural {

inline constexpr std::string_view kTrainerVersion = "qnc-train-1.0.0";

enum class Activation { relu, sigmoid, tanh };
enum class CellKind { gru, lstm };
enum class Aggregation { last_hidden, attention, max_pool };
enum class Family { mlp, rnn };

std::string_view activation_name(Activation a);
Activation parse_activation(std::string_view name);
std::string_view cell_name(CellKind c);
CellKind parse_cell(std::string_view name);
std::string_view aggregation_name(Aggregation a);
Aggregation parse_aggregation(std::string_view name);

/// Feed-forward stack. `hidden` lists the hidden widths; the output layer
/// always has 2 units followed by softmax.
struct MlpConfig {
    size_t input_dim = 0;
    std::vector<size_t> hidden;
    std::vector<Activation> activations;  // one per hidden layer
    double dropout = 0.0;
    double weight_decay = 0.0;

    bool operator==(const MlpConfig &) const = default;
};

/// Recurrent encoder, aggregation and feed-forward head. `head.input_dim`
/// is derived from the encoder and ignored on input.
struct RnnConfig {
    size_t input_dim = 0;
    CellKind cell = CellKind::gru;
    size_t layers = 1;
    size_t hidden_dim = 64;
    bool bidirectional = true;
    Aggregation aggregation = Aggregation::max_pool;
    size_t att_dim = 64;
    MlpConfig head;
    double dropout = 0.0;
    double weight_decay = 0.0;

    size_t directions() const noexcept { return bidirectional ? 2 : 1; }
    /// Width of the aggregated vector a.
    size_t aggregate_dim() const noexcept { return directions() * hidden_dim; }

    bool operator==(const RnnConfig &) const = default;
};

struct ModelConfig {
    Family family = Family::mlp;
    MlpConfig mlp;
    RnnConfig rnn;
    /// Time steps a sample is split into (1 for feed-forward models).
    size_t steps = 1;

    double weight_decay() const noexcept { return family == Family::mlp ? mlp.weight_decay : rnn.weight_decay; }
    /// Throws ValidationError on out-of-range sizes or probabilities.
    void validate() const;

    bool operator==(const ModelConfig &) const = default;
};

ModelConfig make_mlp(size_t input_dim, std::vector<size_t> hidden, Activation activation, double dropout = 0.0,
                     double weight_decay = 0.0);
ModelConfig make_rnn(size_t input_dim, size_t steps, CellKind cell, size_t layers, size_t hidden_dim,
                     bool bidirectional, Aggregation aggregation, size_t att_dim = 64, size_t head_width = 64,
                     double dropout = 0.0, double weight_decay = 0.0);

std::string config_to_json(const ModelConfig &config);
ModelConfig config_from_json(std::string_view json);

/// A contiguous slice of the parameter vector holding one weight matrix
/// (column-major rows x cols) or bias (cols = 1).
struct ParamBlock {
    std::string name;
    size_t offset = 0;
    size_t rows = 0;
    size_t cols = 0;

    size_t size() const noexcept { return rows * cols; }
};

/// Per-sample forward intermediates useful to tests and diagnostics.
struct ForwardTrace {
    /// Encoder outputs at the last layer, one (dirs * hidden) x batch matrix
    /// per time step: u_t = h_t (+) h~_t.
    std::vector<Eigen::MatrixXd> encoded;
    /// Aggregated vectors, aggregate_dim x batch.
    Eigen::MatrixXd aggregate;
    /// Attention weights, steps x batch (attention models only).
    Eigen::MatrixXd attention;
};

/// Parameters plus architecture. Inputs are batches laid out one sample
/// per row: row i of x holds the flattened steps x width sequence.
class Network {
   public:
    explicit Network(ModelConfig config);

    const ModelConfig &config() const noexcept { return config_; }
    const std::vector<ParamBlock> &blocks() const noexcept { return blocks_; }
    size_t parameter_count() const noexcept { return static_cast<size_t>(theta_.size()); }

    Eigen::VectorXd &parameters() noexcept { return theta_; }
    const Eigen::VectorXd &parameters() const noexcept { return theta_; }
    Eigen::Map<Eigen::MatrixXd> block(std::string_view name);
    Eigen::Map<const Eigen::MatrixXd> block(std::string_view name) const;
    const ParamBlock &find_block(std::string_view name) const;

    /// Uniform Glorot for feed-forward and input weights, orthogonal
    /// recurrent weights, zero biases except LSTM forget gates at 1.
    void initialize(RandomStream &rng);

    /// Class probabilities, 2 x batch. `dropout_rng` non-null selects train
    /// mode (fresh inverted-dropout masks); null is evaluation mode.
    Eigen::MatrixXd forward(const Eigen::MatrixXd &x, RandomStream *dropout_rng = nullptr,
                            ForwardTrace *trace = nullptr) const;

    /// Mean cross entropy of the batch plus (wd / 2) |theta|^2; the gradient
    /// of that quantity is written to `grad` (resized to the parameter count).
    double loss_and_gradient(const Eigen::MatrixXd &x, std::span<const int> labels, Eigen::VectorXd &grad,
                             RandomStream *dropout_rng = nullptr) const;

    /// Loss only, same definition as loss_and_gradient.
    double loss(const Eigen::MatrixXd &x, std::span<const int> labels, RandomStream *dropout_rng = nullptr) const;

    void save(std::ostream &out, std::string_view meta_json = "{}") const;
    /// Returns the network and writes the stored metadata JSON to `meta_json`.
    static Network load(std::istream &in, std::string *meta_json = nullptr);

   private:
    struct Impl;
    void layout();
    size_t add_block(const std::string &name, size_t rows, size_t cols);

    ModelConfig config_;
    std::vector<ParamBlock> blocks_;
    Eigen::VectorXd theta_;
};

/// Softmax of a logit column vector.
Eigen::VectorXd softmax(const Eigen::VectorXd &logits);

/// Warnings issued by cross_entropy when a predicted probability was
/// clamped; process-wide, monotone.
size_t cross_entropy_clamp_count();

/// -sum_j y_j log(yhat_j), with yhat clamped at 1e-12.
double cross_entropy(std::span<const double> predicted, std::span<const double> target);

/// Percent of columns (2 x n probabilities) whose argmax equals the label;
/// ties go to class 0.
double accuracy(const Eigen::MatrixXd &probabilities, std::span<const int> labels);
double accuracy(std::span<const std::pair<std::array<double, 2>, std::array<double, 2>>> pairs);
int argmax2(double p0, double p1) noexcept;

/// Single-step cells on column batches (input_dim x batch). Gate order
/// follows the (r, z, n) and (i, f, g, o) conventions; w_ih is
/// (gates * hidden) x input, w_hh is (gates * hidden) x hidden.
struct GruWeights {
    Eigen::MatrixXd w_ih, w_hh;
    Eigen::VectorXd b_ih, b_hh;
};
struct LstmWeights {
    Eigen::MatrixXd w_ih, w_hh;
    Eigen::VectorXd b_ih, b_hh;
};
Eigen::MatrixXd gru_cell(const Eigen::MatrixXd &x, const Eigen::MatrixXd &h, const GruWeights &w);
/// Returns (h', c').
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> lstm_cell(const Eigen::MatrixXd &x, const Eigen::MatrixXd &h,
                                                      const Eigen::MatrixXd &c, const LstmWeights &w);

struct AdamState {
    Eigen::VectorXd m, v;
    size_t step = 0;
};

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// Coupled L2: grad += weight_decay * theta before the moment update.
    double weight_decay = 0.0;
};

/// One bias-corrected Adam update. Throws NumericalError on a non-finite
/// gradient, naming the first offending index.
void adam_step(Eigen::VectorXd &theta, const Eigen::VectorXd &grad, AdamState &state, const AdamOptions &options);

struct GradientCheckResult {
    double max_relative_error = 0.0;
    size_t checked = 0;
    std::string worst_block;
    size_t worst_index = 0;
};

/// Central differences on at least `min_params` parameters spread over
/// every block; relative error |a - n| / max(|a|, |n|, 1e-6). Evaluation
/// mode (no dropout).
GradientCheckResult gradient_check(const Network &net, const Eigen::MatrixXd &x, std::span<const int> labels,
                                   double epsilon = 1e-5, size_t min_params = 200, uint64_t seed = 0);

struct TrainOptions {
    size_t batch_size = 16;
    double lr = 1e-3;
    size_t epoch_cap = 200;
    size_t patience = 10;
    uint64_t seed = 0;
    /// Workers for validation passes (0 = default). Results do not depend
    /// on it.
    unsigned threads = 1;
    /// Called after each epoch with the epoch index (1-based) and record.
    std::function<void(size_t, double, double, double)> on_epoch;
};

struct EpochRecord {
    size_t epoch = 0;
    double train_risk = 0.0;
    double validation_risk = 0.0;
    double validation_accuracy = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    size_t stopping_epoch = 0;
    size_t best_epoch = 0;
    double best_validation_risk = 0.0;
    double best_validation_accuracy = 0.0;
    std::optional<double> test_accuracy;
    double wall_seconds = 0.0;
    uint64_t seed = 0;
    ModelConfig config;
    TrainOptions options;
    std::string stop_reason;

    std::string to_json(std::string_view extra_json = "{}") const;
    std::string to_csv() const;
};

/// Resumable mini-batch Adam training with early stopping on validation
/// risk. The best-validation weights are kept separately and exposed by
/// best_network().
class Trainer {
   public:
    Trainer(ModelConfig config, const TrainOptions &options);

    /// Trains until `epoch_limit` total epochs, the cap, or early stop.
    void run_until(size_t epoch_limit, const Eigen::MatrixXd &train_x, std::span<const int> train_y,
                   const Eigen::MatrixXd &val_x, std::span<const int> val_y);

    bool finished() const noexcept { return finished_; }
    size_t epochs_run() const noexcept { return report_.epochs.size(); }
    const TrainReport &report() const noexcept { return report_; }
    TrainReport &report() noexcept { return report_; }
    const Network &current_network() const noexcept { return net_; }
    Network best_network() const;

   private:
    double run_epoch(const Eigen::MatrixXd &train_x, std::span<const int> train_y);

    Network net_;
    TrainOptions options_;
    AdamState adam_;
    RandomStream shuffle_rng_;
    RandomStream dropout_rng_;
    Eigen::VectorXd best_theta_;
    size_t since_best_ = 0;
    bool finished_ = false;
    TrainReport report_;
};

/// Full training run: run_until(epoch_cap), returning the best network.
std::pair<Network, TrainReport> train(const ModelConfig &config, const Eigen::MatrixXd &train_x,
                                      std::span<const int> train_y, const Eigen::MatrixXd &val_x,
                                      std::span<const int> val_y, const TrainOptions &options);

/// Class probabilities in evaluation mode, processed in chunks.
Eigen::MatrixXd predict_proba(const Network &net, const Eigen::MatrixXd &x, unsigned threads = 1);

/// Candidate values per hyperparameter; singletons pin a value.
struct SearchSpace {
    Family family = Family::rnn;
    // MLP
    std::vector<Activation> activations{Activation::relu, Activation::sigmoid, Activation::tanh};
    std::vector<size_t> mlp_layers{2, 3, 4, 5, 6};  // L, hidden layers = L - 1
    // RNN
    CellKind cell = CellKind::gru;
    bool bidirectional = true;
    Aggregation aggregation = Aggregation::max_pool;
    std::vector<size_t> rnn_layers{1, 2, 3, 4};
    std::vector<size_t> att_dims{16, 32, 64, 128, 256, 512};
    size_t head_width = 64;
    // Shared
    std::vector<size_t> widths{16, 32, 64, 128, 256, 512};
    std::vector<double> weight_decays{0.0, 1e-4, 1e-3};
    std::vector<double> dropouts{0.0, 0.2, 0.5};
    size_t input_dim = 0;
    size_t steps = 1;
};

ModelConfig sample_config(const SearchSpace &space, RandomStream &rng);

struct SearchTrial {
    size_t index = 0;
    ModelConfig config;
    size_t epochs_run = 0;
    size_t last_rung = 0;  // 1, 2 or 3
    double validation_accuracy = 0.0;
    double validation_risk = 0.0;
};

struct SearchResult {
    size_t best_index = 0;
    std::vector<SearchTrial> trials;
    Network best_network;
    TrainReport best_report;
};

/// Random search over `space` with successive halving: every trial trains
/// to a quarter of the epoch cap, the top third continues to half, the top
/// third of those to the full cap. Ranking and final choice use validation
/// accuracy; ties go to the lower trial index.
SearchResult hyperparameter_search(const SearchSpace &space, size_t budget, const Eigen::MatrixXd &train_x,
                                   std::span<const int> train_y, const Eigen::MatrixXd &val_x,
                                   std::span<const int> val_y, const TrainOptions &options, unsigned threads = 1);

}  // namespace qnc::neural

#endif
