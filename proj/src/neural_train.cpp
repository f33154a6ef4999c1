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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "qnc/error.hpp"
#include "qnc/neural.hpp"
#include "qnc/parallel.hpp"

namespace qnc::neural {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using nlohmann::ordered_json;

void adam_step(Vec &theta, const Vec &grad, AdamState &state, const AdamOptions &o) {
    if (grad.size() != theta.size()) throw ValidationError("gradient and parameter sizes differ");
    for (Eigen::Index i = 0; i < grad.size(); ++i) {
        if (!std::isfinite(grad(i))) {
            throw NumericalError("non-finite gradient at parameter " + std::to_string(i));
        }
    }
    if (state.m.size() != theta.size()) {
        state.m = Vec::Zero(theta.size());
        state.v = Vec::Zero(theta.size());
        state.step = 0;
    }
    Vec g = grad;
    if (o.weight_decay > 0.0) g += o.weight_decay * theta;
    ++state.step;
    state.m = o.beta1 * state.m + (1.0 - o.beta1) * g;
    state.v = o.beta2 * state.v + (1.0 - o.beta2) * g.cwiseAbs2();
    const auto t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(o.beta1, t);
    const double c2 = 1.0 - std::pow(o.beta2, t);
    theta.array() -= o.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + o.eps);
}

GradientCheckResult gradient_check(const Network &net, const Mat &x, std::span<const int> labels, double eps,
                                   size_t min_params, uint64_t seed) {
    Vec analytic;
    net.loss_and_gradient(x, labels, analytic);
    Network probe = net;
    RandomStream rng(seed);

    // At least 8 coordinates per block, the rest proportional to block size.
    const size_t total = net.parameter_count();
    GradientCheckResult out;
    for (const auto &b : net.blocks()) {
        const size_t share = (min_params * b.size() + total - 1) / total;
        const size_t count = std::min(b.size(), std::max<size_t>(8, share));
        std::vector<size_t> idx(b.size());
        std::iota(idx.begin(), idx.end(), size_t{0});
        for (size_t k = 0; k < count; ++k) std::swap(idx[k], idx[k + rng.below(b.size() - k)]);
        for (size_t k = 0; k < count; ++k) {
            const auto i = static_cast<Eigen::Index>(b.offset + idx[k]);
            const double keep = probe.parameters()(i);
            probe.parameters()(i) = keep + eps;
            const double up = probe.loss(x, labels);
            probe.parameters()(i) = keep - eps;
            const double down = probe.loss(x, labels);
            probe.parameters()(i) = keep;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic(i);
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
            ++out.checked;
            if (rel > out.max_relative_error || out.worst_block.empty()) {
                out.max_relative_error = rel;
                out.worst_block = b.name;
                out.worst_index = idx[k];
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation.

Mat predict_proba(const Network &net, const Mat &x, unsigned threads) {
    constexpr Eigen::Index kChunk = 256;
    const Eigen::Index n = x.rows();
    Mat out(2, n);
    const auto chunks = static_cast<size_t>((n + kChunk - 1) / kChunk);
    parallel_for(chunks, threads, [&](size_t c) {
        const Eigen::Index lo = static_cast<Eigen::Index>(c) * kChunk;
        const Eigen::Index len = std::min(kChunk, n - lo);
        out.middleCols(lo, len) = net.forward(x.middleRows(lo, len));
    });
    return out;
}

namespace {

double mean_cross_entropy(const Mat &probs, std::span<const int> labels) {
    double total = 0.0;
    for (size_t i = 0; i < labels.size(); ++i) {
        const std::array<double, 2> target{labels[i] == 0 ? 1.0 : 0.0, labels[i] == 1 ? 1.0 : 0.0};
        const auto c = static_cast<Eigen::Index>(i);
        const std::array<double, 2> pred{probs(0, c), probs(1, c)};
        total += cross_entropy(pred, target);
    }
    return total / static_cast<double>(labels.size());
}

void check_data(const Mat &x, std::span<const int> y, const char *what) {
    if (x.rows() == 0 || static_cast<size_t>(x.rows()) != y.size()) {
        throw ValidationError(std::string(what) + " features and labels must be non-empty and aligned");
    }
    for (int v : y) {
        if (v != 0 && v != 1) throw ValidationError(std::string(what) + " labels must be 0 or 1");
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Training.

Trainer::Trainer(ModelConfig config, const TrainOptions &options)
    : net_(std::move(config)),
      options_(options),
      shuffle_rng_(mix_seed(options.seed, stream_tag("shuffle"))),
      dropout_rng_(mix_seed(options.seed, stream_tag("dropout"))) {
    if (options_.batch_size < 1) throw ValidationError("batch size must be positive");
    if (!(options_.lr > 0.0)) throw ValidationError("learning rate must be positive");
    if (options_.epoch_cap < 1) throw ValidationError("epoch cap must be positive");
    if (options_.patience < 1) throw ValidationError("patience must be positive");
    RandomStream init(mix_seed(options_.seed, stream_tag("init")));
    net_.initialize(init);
    best_theta_ = net_.parameters();
    report_.seed = options_.seed;
    report_.config = net_.config();
    report_.options = options_;
    report_.options.on_epoch = nullptr;
    report_.best_validation_risk = std::numeric_limits<double>::infinity();
}

double Trainer::run_epoch(const Mat &train_x, std::span<const int> train_y) {
    const size_t n = train_y.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    for (size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng_.below(i)]);

    // The decay term lives in the loss, so Adam itself gets none.
    AdamOptions adam;
    adam.lr = options_.lr;
    Vec grad;
    double risk = 0.0;
    for (size_t lo = 0; lo < n; lo += options_.batch_size) {
        const size_t len = std::min(options_.batch_size, n - lo);
        Mat xb(static_cast<Eigen::Index>(len), train_x.cols());
        std::vector<int> yb(len);
        for (size_t k = 0; k < len; ++k) {
            xb.row(static_cast<Eigen::Index>(k)) = train_x.row(static_cast<Eigen::Index>(order[lo + k]));
            yb[k] = train_y[order[lo + k]];
        }
        const double loss = net_.loss_and_gradient(xb, yb, grad, &dropout_rng_);
        if (!std::isfinite(loss)) throw NumericalError("non-finite training loss");
        adam_step(net_.parameters(), grad, adam_, adam);
        risk += loss * static_cast<double>(len);
    }
    return risk / static_cast<double>(n);
}

void Trainer::run_until(size_t epoch_limit, const Mat &train_x, std::span<const int> train_y, const Mat &val_x,
                        std::span<const int> val_y) {
    check_data(train_x, train_y, "training");
    check_data(val_x, val_y, "validation");
    const auto start = std::chrono::steady_clock::now();
    const size_t limit = std::min(epoch_limit, options_.epoch_cap);
    while (!finished_ && report_.epochs.size() < limit) {
        EpochRecord rec;
        rec.epoch = report_.epochs.size() + 1;
        rec.train_risk = run_epoch(train_x, train_y);
        const Mat probs = predict_proba(net_, val_x, options_.threads);
        rec.validation_risk = mean_cross_entropy(probs, val_y);
        rec.validation_accuracy = accuracy(probs, val_y);
        if (!std::isfinite(rec.validation_risk)) throw NumericalError("non-finite validation risk");
        report_.epochs.push_back(rec);
        if (rec.validation_risk < report_.best_validation_risk) {
            report_.best_validation_risk = rec.validation_risk;
            report_.best_validation_accuracy = rec.validation_accuracy;
            report_.best_epoch = rec.epoch;
            best_theta_ = net_.parameters();
            since_best_ = 0;
        } else {
            ++since_best_;
        }
        report_.stopping_epoch = rec.epoch;
        if (options_.on_epoch) {
            options_.on_epoch(rec.epoch, rec.train_risk, rec.validation_risk, rec.validation_accuracy);
        }
        if (since_best_ >= options_.patience) {
            finished_ = true;
            report_.stop_reason = "patience";
        } else if (rec.epoch >= options_.epoch_cap) {
            finished_ = true;
            report_.stop_reason = "epoch_cap";
        }
    }
    if (!finished_ && report_.stop_reason.empty()) report_.stop_reason = "paused";
    report_.wall_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

Network Trainer::best_network() const {
    Network net = net_;
    net.parameters() = best_theta_;
    return net;
}

std::pair<Network, TrainReport> train(const ModelConfig &config, const Mat &train_x, std::span<const int> train_y,
                                      const Mat &val_x, std::span<const int> val_y, const TrainOptions &options) {
    Trainer t(config, options);
    t.run_until(options.epoch_cap, train_x, train_y, val_x, val_y);
    return {t.best_network(), t.report()};
}

std::string TrainReport::to_json(std::string_view extra_json) const {
    ordered_json j;
    j["trainer_version"] = kTrainerVersion;
    j["seed"] = seed;
    j["config"] = ordered_json::parse(config_to_json(config));
    j["options"] = {{"batch_size", options.batch_size},
                    {"lr", options.lr},
                    {"epoch_cap", options.epoch_cap},
                    {"patience", options.patience}};
    j["stopping_epoch"] = stopping_epoch;
    j["best_epoch"] = best_epoch;
    j["stop_reason"] = stop_reason;
    j["best_validation_risk"] = best_validation_risk;
    j["best_validation_accuracy"] = best_validation_accuracy;
    j["test_accuracy"] = test_accuracy ? ordered_json(*test_accuracy) : ordered_json(nullptr);
    j["wall_seconds"] = wall_seconds;
    ordered_json curve = ordered_json::array();
    for (const auto &e : epochs) {
        curve.push_back({{"epoch", e.epoch},
                         {"train_risk", e.train_risk},
                         {"validation_risk", e.validation_risk},
                         {"validation_accuracy", e.validation_accuracy}});
    }
    j["epochs"] = curve;
    const auto extra = ordered_json::parse(extra_json);
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    return j.dump(2);
}

std::string TrainReport::to_csv() const {
    std::ostringstream out;
    out.precision(10);
    out << "epoch,train_risk,validation_risk,validation_accuracy\n";
    for (const auto &e : epochs) {
        out << e.epoch << ',' << e.train_risk << ',' << e.validation_risk << ',' << e.validation_accuracy << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Search.

namespace {

template <typename T>
const T &pick(const std::vector<T> &options, RandomStream &rng, const char *what) {
    if (options.empty()) throw ValidationError(std::string("search space has no ") + what + " candidates");
    return options[rng.below(options.size())];
}

}  // namespace

ModelConfig sample_config(const SearchSpace &s, RandomStream &rng) {
    if (s.input_dim < 1 || s.steps < 1) throw ValidationError("search space needs input dimension and steps");
    const double wd = pick(s.weight_decays, rng, "weight decay");
    const double dropout = pick(s.dropouts, rng, "dropout");
    if (s.family == Family::mlp) {
        const size_t layers = pick(s.mlp_layers, rng, "layer count");
        if (layers < 1) throw ValidationError("feed-forward depth must be at least 1");
        const Activation act = pick(s.activations, rng, "activation");
        std::vector<size_t> hidden(layers - 1);
        for (auto &w : hidden) w = pick(s.widths, rng, "width");
        ModelConfig c = make_mlp(s.input_dim * s.steps, std::move(hidden), act, dropout, wd);
        return c;
    }
    const size_t layers = pick(s.rnn_layers, rng, "layer count");
    const size_t width = pick(s.widths, rng, "width");
    size_t att = 64;
    if (s.aggregation == Aggregation::attention) att = pick(s.att_dims, rng, "attention dimension");
    return make_rnn(s.input_dim, s.steps, s.cell, layers, width, s.bidirectional, s.aggregation, att, s.head_width,
                    dropout, wd);
}

SearchResult hyperparameter_search(const SearchSpace &space, size_t budget, const Mat &train_x,
                                   std::span<const int> train_y, const Mat &val_x, std::span<const int> val_y,
                                   const TrainOptions &options, unsigned threads) {
    if (budget < 1) throw ValidationError("search budget must be at least 1");
    RandomStream rng(mix_seed(options.seed, stream_tag("search")));
    std::vector<Trainer> trainers;
    std::vector<SearchTrial> trials(budget);
    trainers.reserve(budget);
    for (size_t i = 0; i < budget; ++i) {
        TrainOptions o = options;
        o.seed = mix_seed(options.seed, i);
        o.on_epoch = nullptr;
        o.threads = 1;
        trials[i].index = i;
        trials[i].config = sample_config(space, rng);
        trainers.emplace_back(trials[i].config, o);
    }

    const size_t cap = options.epoch_cap;
    const std::array<size_t, 3> rungs{std::max<size_t>(1, cap / 4), std::max<size_t>(1, cap / 2), cap};
    std::vector<size_t> alive(budget);
    std::iota(alive.begin(), alive.end(), size_t{0});
    for (size_t r = 0; r < rungs.size(); ++r) {
        parallel_for(alive.size(), threads, [&](size_t k) {
            trainers[alive[k]].run_until(rungs[r], train_x, train_y, val_x, val_y);
        });
        for (size_t i : alive) {
            const auto &rep = trainers[i].report();
            trials[i].epochs_run = trainers[i].epochs_run();
            trials[i].last_rung = r + 1;
            trials[i].validation_accuracy = rep.best_validation_accuracy;
            trials[i].validation_risk = rep.best_validation_risk;
        }
        // Stable sort keeps the lower index first among equal accuracies.
        std::stable_sort(alive.begin(), alive.end(), [&](size_t a, size_t b) {
            return trials[a].validation_accuracy > trials[b].validation_accuracy;
        });
        if (r + 1 < rungs.size()) alive.resize((alive.size() + 2) / 3);
    }
    const size_t best = alive.front();
    SearchResult out{best, std::move(trials), trainers[best].best_network(), trainers[best].report()};
    out.best_report.options.on_epoch = nullptr;
    return out;
}

}  // namespace qnc::neural
