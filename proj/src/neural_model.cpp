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
#include <atomic>
#include <cmath>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "byte_io.hpp"
#include "qnc/error.hpp"
#include "qnc/neural.hpp"

namespace qnc::neural {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using CMap = Eigen::Map<const Mat>;
using GMap = Eigen::Map<Mat>;
using nlohmann::ordered_json;

std::string_view activation_name(Activation a) {
    switch (a) {
        case Activation::relu:
            return "relu";
        case Activation::sigmoid:
            return "sigmoid";
        case Activation::tanh:
            return "tanh";
    }
    return "?";
}

Activation parse_activation(std::string_view name) {
    if (name == "relu") return Activation::relu;
    if (name == "sigmoid") return Activation::sigmoid;
    if (name == "tanh") return Activation::tanh;
    throw ValidationError("unknown activation '" + std::string(name) + "'");
}

std::string_view cell_name(CellKind c) { return c == CellKind::gru ? "gru" : "lstm"; }

CellKind parse_cell(std::string_view name) {
    if (name == "gru") return CellKind::gru;
    if (name == "lstm") return CellKind::lstm;
    throw ValidationError("unknown recurrent cell '" + std::string(name) + "'");
}

std::string_view aggregation_name(Aggregation a) {
    switch (a) {
        case Aggregation::last_hidden:
            return "last";
        case Aggregation::attention:
            return "attention";
        case Aggregation::max_pool:
            return "max";
    }
    return "?";
}

Aggregation parse_aggregation(std::string_view name) {
    if (name == "last") return Aggregation::last_hidden;
    if (name == "attention") return Aggregation::attention;
    if (name == "max") return Aggregation::max_pool;
    throw ValidationError("unknown aggregation '" + std::string(name) + "'");
}

namespace {

void check_width(size_t w, const char *what) {
    if (w < 1 || w > 512) throw ValidationError(std::string(what) + " must lie in [1, 512], got " + std::to_string(w));
}

void check_probability(double p, const char *what) {
    if (!(p >= 0.0 && p < 1.0)) throw ValidationError(std::string(what) + " must lie in [0, 1)");
}

void check_mlp(const MlpConfig &m, bool check_input) {
    if (check_input && m.input_dim < 1) throw ValidationError("input dimension must be positive");
    if (m.activations.size() != m.hidden.size()) throw ValidationError("one activation per hidden layer is required");
    for (size_t w : m.hidden) check_width(w, "hidden width");
    check_probability(m.dropout, "dropout probability");
    if (!(m.weight_decay >= 0.0)) throw ValidationError("weight decay must be nonnegative");
}

}  // namespace

void ModelConfig::validate() const {
    if (family == Family::mlp) {
        check_mlp(mlp, true);
        if (steps < 1) throw ValidationError("steps must be positive");
        return;
    }
    if (rnn.input_dim < 1) throw ValidationError("input dimension must be positive");
    if (steps < 1) throw ValidationError("sequence length must be at least 1");
    if (rnn.layers < 1 || rnn.layers > 6) throw ValidationError("recurrent layers must lie in [1, 6]");
    check_width(rnn.hidden_dim, "hidden dimension");
    if (rnn.aggregation == Aggregation::attention) check_width(rnn.att_dim, "attention dimension");
    check_mlp(rnn.head, false);
    check_probability(rnn.dropout, "dropout probability");
    if (!(rnn.weight_decay >= 0.0)) throw ValidationError("weight decay must be nonnegative");
}

ModelConfig make_mlp(size_t input_dim, std::vector<size_t> hidden, Activation activation, double dropout,
                     double weight_decay) {
    ModelConfig c;
    c.family = Family::mlp;
    c.mlp.input_dim = input_dim;
    c.mlp.activations.assign(hidden.size(), activation);
    c.mlp.hidden = std::move(hidden);
    c.mlp.dropout = dropout;
    c.mlp.weight_decay = weight_decay;
    c.steps = 1;
    c.validate();
    return c;
}

ModelConfig make_rnn(size_t input_dim, size_t steps, CellKind cell, size_t layers, size_t hidden_dim,
                     bool bidirectional, Aggregation aggregation, size_t att_dim, size_t head_width, double dropout,
                     double weight_decay) {
    ModelConfig c;
    c.family = Family::rnn;
    c.steps = steps;
    c.rnn.input_dim = input_dim;
    c.rnn.cell = cell;
    c.rnn.layers = layers;
    c.rnn.hidden_dim = hidden_dim;
    c.rnn.bidirectional = bidirectional;
    c.rnn.aggregation = aggregation;
    c.rnn.att_dim = att_dim;
    c.rnn.dropout = dropout;
    c.rnn.weight_decay = weight_decay;
    c.rnn.head.input_dim = c.rnn.aggregate_dim();
    if (head_width > 0) {
        c.rnn.head.hidden = {head_width};
        c.rnn.head.activations = {Activation::relu};
    }
    c.rnn.head.dropout = dropout;
    c.rnn.head.weight_decay = weight_decay;
    c.validate();
    return c;
}

namespace {

ordered_json mlp_json(const MlpConfig &m) {
    ordered_json j;
    j["input_dim"] = m.input_dim;
    j["hidden"] = m.hidden;
    std::vector<std::string> acts;
    for (auto a : m.activations) acts.emplace_back(activation_name(a));
    j["activations"] = acts;
    j["dropout"] = m.dropout;
    j["weight_decay"] = m.weight_decay;
    return j;
}

MlpConfig mlp_from(const ordered_json &j) {
    MlpConfig m;
    m.input_dim = j.at("input_dim").get<size_t>();
    m.hidden = j.at("hidden").get<std::vector<size_t>>();
    for (const auto &a : j.at("activations")) m.activations.push_back(parse_activation(a.get<std::string>()));
    m.dropout = j.at("dropout").get<double>();
    m.weight_decay = j.at("weight_decay").get<double>();
    return m;
}

}  // namespace

std::string config_to_json(const ModelConfig &c) {
    ordered_json j;
    j["family"] = c.family == Family::mlp ? "mlp" : "rnn";
    j["steps"] = c.steps;
    if (c.family == Family::mlp) {
        j["mlp"] = mlp_json(c.mlp);
    } else {
        ordered_json r;
        r["input_dim"] = c.rnn.input_dim;
        r["cell"] = cell_name(c.rnn.cell);
        r["layers"] = c.rnn.layers;
        r["hidden_dim"] = c.rnn.hidden_dim;
        r["bidirectional"] = c.rnn.bidirectional;
        r["aggregation"] = aggregation_name(c.rnn.aggregation);
        r["att_dim"] = c.rnn.att_dim;
        r["dropout"] = c.rnn.dropout;
        r["weight_decay"] = c.rnn.weight_decay;
        r["head"] = mlp_json(c.rnn.head);
        j["rnn"] = r;
    }
    return j.dump();
}

ModelConfig config_from_json(std::string_view text) {
    try {
        const auto j = ordered_json::parse(text);
        ModelConfig c;
        const auto family = j.at("family").get<std::string>();
        c.steps = j.at("steps").get<size_t>();
        if (family == "mlp") {
            c.family = Family::mlp;
            c.mlp = mlp_from(j.at("mlp"));
        } else if (family == "rnn") {
            c.family = Family::rnn;
            const auto &r = j.at("rnn");
            c.rnn.input_dim = r.at("input_dim").get<size_t>();
            c.rnn.cell = parse_cell(r.at("cell").get<std::string>());
            c.rnn.layers = r.at("layers").get<size_t>();
            c.rnn.hidden_dim = r.at("hidden_dim").get<size_t>();
            c.rnn.bidirectional = r.at("bidirectional").get<bool>();
            c.rnn.aggregation = parse_aggregation(r.at("aggregation").get<std::string>());
            c.rnn.att_dim = r.at("att_dim").get<size_t>();
            c.rnn.dropout = r.at("dropout").get<double>();
            c.rnn.weight_decay = r.at("weight_decay").get<double>();
            c.rnn.head = mlp_from(r.at("head"));
        } else {
            throw ValidationError("unknown model family '" + family + "'");
        }
        c.validate();
        return c;
    } catch (const nlohmann::json::exception &e) {
        throw DataError(std::string("malformed model configuration: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Elementary pieces.

Vec softmax(const Vec &logits) {
    const double m = logits.maxCoeff();
    Vec e = (logits.array() - m).exp().matrix();
    return e / e.sum();
}

namespace {

std::atomic<size_t> g_clamp_count{0};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Mat sigmoid(const Mat &x) { return x.unaryExpr([](double v) { return sigmoid(v); }); }

Mat column_softmax(const Mat &logits) {
    Mat out(logits.rows(), logits.cols());
    for (Eigen::Index b = 0; b < logits.cols(); ++b) {
        const double m = logits.col(b).maxCoeff();
        out.col(b) = (logits.col(b).array() - m).exp().matrix();
        out.col(b) /= out.col(b).sum();
    }
    return out;
}

Mat activate(Activation a, const Mat &z) {
    switch (a) {
        case Activation::relu:
            return z.cwiseMax(0.0);
        case Activation::sigmoid:
            return sigmoid(z);
        case Activation::tanh:
            return z.array().tanh().matrix();
    }
    return z;
}

// d act / dz expressed through z and a = act(z).
Mat activation_slope(Activation act, const Mat &z, const Mat &a) {
    switch (act) {
        case Activation::relu:
            return (z.array() > 0.0).cast<double>().matrix();
        case Activation::sigmoid:
            return (a.array() * (1.0 - a.array())).matrix();
        case Activation::tanh:
            return (1.0 - a.array().square()).matrix();
    }
    return Mat::Ones(z.rows(), z.cols());
}

Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, RandomStream &rng) {
    Mat m(rows, cols);
    const double keep = 1.0 - p;
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform() < keep ? 1.0 / keep : 0.0;
    }
    return m;
}

}  // namespace

size_t cross_entropy_clamp_count() { return g_clamp_count.load(); }

double cross_entropy(std::span<const double> predicted, std::span<const double> target) {
    if (predicted.size() != target.size()) throw ValidationError("prediction and target sizes differ");
    double out = 0.0;
    for (size_t j = 0; j < predicted.size(); ++j) {
        if (target[j] == 0.0) continue;
        double p = predicted[j];
        if (p < 1e-12) {
            p = 1e-12;
            g_clamp_count.fetch_add(1);
        }
        out -= target[j] * std::log(p);
    }
    return out;
}

int argmax2(double p0, double p1) noexcept { return p1 > p0 ? 1 : 0; }

double accuracy(const Mat &probabilities, std::span<const int> labels) {
    if (labels.empty()) throw ValidationError("accuracy needs at least one prediction");
    if (static_cast<size_t>(probabilities.cols()) != labels.size() || probabilities.rows() != 2) {
        throw ValidationError("probabilities must be 2 x n with n labels");
    }
    size_t correct = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        const auto c = static_cast<Eigen::Index>(i);
        correct += argmax2(probabilities(0, c), probabilities(1, c)) == labels[i];
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
}

double accuracy(std::span<const std::pair<std::array<double, 2>, std::array<double, 2>>> pairs) {
    if (pairs.empty()) throw ValidationError("accuracy needs at least one prediction");
    size_t correct = 0;
    for (const auto &[truth, pred] : pairs) correct += argmax2(truth[0], truth[1]) == argmax2(pred[0], pred[1]);
    return 100.0 * static_cast<double>(correct) / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------------
// Cells. Gate blocks are stacked row-wise in the documented order.

namespace {

struct GruStep {
    Mat x, h, r, z, n, ghn, out;
};

struct LstmStep {
    Mat x, h, c, i, f, g, o, c_new, tanh_c, out;
};

template <typename WIh, typename WHh, typename BIh, typename BHh>
void gru_forward(const Mat &x, const Mat &h, const WIh &w_ih, const WHh &w_hh, const BIh &b_ih, const BHh &b_hh,
                 GruStep &s) {
    const Eigen::Index hd = h.rows();
    Mat gi = w_ih * x;
    gi.colwise() += b_ih;
    Mat gh = w_hh * h;
    gh.colwise() += b_hh;
    s.x = x;
    s.h = h;
    s.r = sigmoid(gi.topRows(hd) + gh.topRows(hd));
    s.z = sigmoid(gi.middleRows(hd, hd) + gh.middleRows(hd, hd));
    s.ghn = gh.bottomRows(hd);
    s.n = (gi.bottomRows(hd).array() + s.r.array() * s.ghn.array()).tanh().matrix();
    s.out = ((1.0 - s.z.array()) * s.n.array() + s.z.array() * h.array()).matrix();
}

template <typename WIh, typename WHh, typename BIh, typename BHh>
void lstm_forward(const Mat &x, const Mat &h, const Mat &c, const WIh &w_ih, const WHh &w_hh, const BIh &b_ih,
                  const BHh &b_hh, LstmStep &s) {
    const Eigen::Index hd = h.rows();
    Mat g = w_ih * x + w_hh * h;
    g.colwise() += b_ih + b_hh;
    s.x = x;
    s.h = h;
    s.c = c;
    s.i = sigmoid(g.topRows(hd));
    s.f = sigmoid(g.middleRows(hd, hd));
    s.g = g.middleRows(2 * hd, hd).array().tanh().matrix();
    s.o = sigmoid(g.bottomRows(hd));
    s.c_new = (s.f.array() * c.array() + s.i.array() * s.g.array()).matrix();
    s.tanh_c = s.c_new.array().tanh().matrix();
    s.out = (s.o.array() * s.tanh_c.array()).matrix();
}

}  // namespace

Mat gru_cell(const Mat &x, const Mat &h, const GruWeights &w) {
    if (w.w_ih.cols() != x.rows() || w.w_hh.cols() != h.rows() || w.w_ih.rows() != 3 * h.rows() ||
        w.w_hh.rows() != 3 * h.rows() || x.cols() != h.cols()) {
        throw ValidationError("GRU cell dimension mismatch");
    }
    GruStep s;
    gru_forward(x, h, w.w_ih, w.w_hh, w.b_ih, w.b_hh, s);
    return s.out;
}

std::pair<Mat, Mat> lstm_cell(const Mat &x, const Mat &h, const Mat &c, const LstmWeights &w) {
    if (w.w_ih.cols() != x.rows() || w.w_hh.cols() != h.rows() || w.w_ih.rows() != 4 * h.rows() ||
        w.w_hh.rows() != 4 * h.rows() || x.cols() != h.cols() || c.rows() != h.rows() || c.cols() != h.cols()) {
        throw ValidationError("LSTM cell dimension mismatch");
    }
    LstmStep s;
    lstm_forward(x, h, c, w.w_ih, w.w_hh, w.b_ih, w.b_hh, s);
    return {s.out, s.c_new};
}

// ---------------------------------------------------------------------------
// Network layout.

Network::Network(ModelConfig config) : config_(std::move(config)) {
    if (config_.family == Family::rnn) config_.rnn.head.input_dim = config_.rnn.aggregate_dim();
    config_.validate();
    layout();
}

size_t Network::add_block(const std::string &name, size_t rows, size_t cols) {
    const size_t offset = blocks_.empty() ? 0 : blocks_.back().offset + blocks_.back().size();
    blocks_.push_back({name, offset, rows, cols});
    return offset;
}

namespace {

std::string direction_prefix(size_t dir, size_t layer) {
    return std::string("rnn.") + (dir == 0 ? "fwd" : "bwd") + std::to_string(layer);
}

size_t gate_count(CellKind c) { return c == CellKind::gru ? 3 : 4; }

}  // namespace

void Network::layout() {
    blocks_.clear();
    auto add_ff = [&](const std::string &prefix, const MlpConfig &m) {
        size_t in = m.input_dim;
        for (size_t l = 0; l < m.hidden.size(); ++l) {
            add_block(prefix + ".w" + std::to_string(l), m.hidden[l], in);
            add_block(prefix + ".b" + std::to_string(l), m.hidden[l], 1);
            in = m.hidden[l];
        }
        const std::string last = std::to_string(m.hidden.size());
        add_block(prefix + ".w" + last, 2, in);
        add_block(prefix + ".b" + last, 2, 1);
    };
    if (config_.family == Family::mlp) {
        add_ff("mlp", config_.mlp);
    } else {
        const RnnConfig &r = config_.rnn;
        const size_t gates = gate_count(r.cell) * r.hidden_dim;
        for (size_t dir = 0; dir < r.directions(); ++dir) {
            for (size_t l = 0; l < r.layers; ++l) {
                const std::string p = direction_prefix(dir, l);
                add_block(p + ".w_ih", gates, l == 0 ? r.input_dim : r.hidden_dim);
                add_block(p + ".w_hh", gates, r.hidden_dim);
                add_block(p + ".b_ih", gates, 1);
                add_block(p + ".b_hh", gates, 1);
            }
        }
        if (r.aggregation == Aggregation::attention) {
            add_block("att.w", r.att_dim, r.aggregate_dim());
            add_block("att.b", r.att_dim, 1);
            add_block("att.c", r.att_dim, 1);
        }
        add_ff("head", r.head);
    }
    theta_ = Vec::Zero(static_cast<Eigen::Index>(blocks_.back().offset + blocks_.back().size()));
}

const ParamBlock &Network::find_block(std::string_view name) const {
    for (const auto &b : blocks_) {
        if (b.name == name) return b;
    }
    throw ValidationError("no parameter block named '" + std::string(name) + "'");
}

Eigen::Map<Mat> Network::block(std::string_view name) {
    const auto &b = find_block(name);
    return {theta_.data() + b.offset, static_cast<Eigen::Index>(b.rows), static_cast<Eigen::Index>(b.cols)};
}

Eigen::Map<const Mat> Network::block(std::string_view name) const {
    const auto &b = find_block(name);
    return {theta_.data() + b.offset, static_cast<Eigen::Index>(b.rows), static_cast<Eigen::Index>(b.cols)};
}

void Network::initialize(RandomStream &rng) {
    theta_.setZero();
    auto glorot = [&](GMap m, double fan_in, double fan_out) {
        const double a = std::sqrt(6.0 / (fan_in + fan_out));
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-a, a);
        }
    };
    auto orthogonal = [&](Eigen::Block<GMap> m) {
        Mat g(m.rows(), m.cols());
        for (Eigen::Index j = 0; j < g.cols(); ++j) {
            for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = rng.normal();
        }
        Eigen::HouseholderQR<Mat> qr(g);
        Mat q = qr.householderQ() * Mat::Identity(g.rows(), g.cols());
        const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
        for (Eigen::Index k = 0; k < q.cols(); ++k) {
            if (r(k, k) < 0.0) q.col(k) = -q.col(k);
        }
        m = q;
    };
    for (const auto &b : blocks_) {
        GMap m(theta_.data() + b.offset, static_cast<Eigen::Index>(b.rows), static_cast<Eigen::Index>(b.cols));
        const std::string &n = b.name;
        const bool is_bias = b.cols == 1 && (n.ends_with(".b_ih") || n.ends_with(".b_hh") || n.find(".b") != std::string::npos);
        if (n.ends_with(".w_ih")) {
            // One Glorot range per gate block.
            const auto hd = static_cast<double>(config_.rnn.hidden_dim);
            glorot(m, static_cast<double>(b.cols), hd);
        } else if (n.ends_with(".w_hh")) {
            const auto hd = static_cast<Eigen::Index>(config_.rnn.hidden_dim);
            for (Eigen::Index g = 0; g < m.rows() / hd; ++g) orthogonal(m.block(g * hd, 0, hd, hd));
        } else if (n == "att.c") {
            glorot(m, static_cast<double>(b.rows), 1.0);
        } else if (is_bias) {
            if (config_.family == Family::rnn && config_.rnn.cell == CellKind::lstm && n.ends_with(".b_ih")) {
                const auto hd = static_cast<Eigen::Index>(config_.rnn.hidden_dim);
                m.block(hd, 0, hd, 1).setOnes();
            }
        } else {
            glorot(m, static_cast<double>(b.cols), static_cast<double>(b.rows));
        }
    }
}

// ---------------------------------------------------------------------------
// Forward and backward passes.

struct Network::Impl {
    struct FfCache {
        std::vector<Mat> inputs;  // input of each layer (after dropout for hidden outputs)
        std::vector<Mat> pre;
        std::vector<Mat> post;  // activation before dropout
        std::vector<Mat> masks;
    };

    struct LayerCache {
        std::vector<GruStep> gru;
        std::vector<LstmStep> lstm;
        std::vector<Mat> in_masks;  // dropout on this layer's inputs (layers > 0)
    };

    struct RnnCache {
        // [direction][layer]
        std::vector<std::vector<LayerCache>> layers;
        std::vector<Mat> u;  // per time step, aggregate_dim x B
        Mat aggregate;
        Eigen::MatrixXi argmax;  // max pooling: winning step per (feature, sample)
        std::vector<Mat> att_v;
        Mat att_alpha;  // steps x B
        FfCache head;
    };

    static CMap cblock(const Network &net, const std::string &name) {
        const auto &b = net.find_block(name);
        return {net.theta_.data() + b.offset, static_cast<Eigen::Index>(b.rows), static_cast<Eigen::Index>(b.cols)};
    }

    static GMap gblock(const Network &net, Vec &grad, const std::string &name) {
        const auto &b = net.find_block(name);
        return {grad.data() + b.offset, static_cast<Eigen::Index>(b.rows), static_cast<Eigen::Index>(b.cols)};
    }

    static Mat ff_forward(const Network &net, const std::string &prefix, const MlpConfig &m, const Mat &x,
                          RandomStream *rng, FfCache &cache) {
        cache = FfCache{};
        Mat a = x;
        for (size_t l = 0; l < m.hidden.size(); ++l) {
            const std::string k = std::to_string(l);
            cache.inputs.push_back(a);
            Mat z = cblock(net, prefix + ".w" + k) * a;
            z.colwise() += cblock(net, prefix + ".b" + k).col(0);
            Mat post = activate(m.activations[l], z);
            cache.pre.push_back(std::move(z));
            a = post;
            if (rng && m.dropout > 0.0) {
                cache.masks.push_back(dropout_mask(a.rows(), a.cols(), m.dropout, *rng));
                a = a.cwiseProduct(cache.masks.back());
            } else {
                cache.masks.emplace_back();
            }
            cache.post.push_back(std::move(post));
        }
        cache.inputs.push_back(a);
        const std::string k = std::to_string(m.hidden.size());
        Mat logits = cblock(net, prefix + ".w" + k) * a;
        logits.colwise() += cblock(net, prefix + ".b" + k).col(0);
        return logits;
    }

    // Returns the gradient with respect to the stack input.
    static Mat ff_backward(const Network &net, Vec &grad, const std::string &prefix, const MlpConfig &m,
                           const FfCache &cache, const Mat &dlogits) {
        const size_t last = m.hidden.size();
        std::string k = std::to_string(last);
        gblock(net, grad, prefix + ".w" + k).noalias() += dlogits * cache.inputs[last].transpose();
        gblock(net, grad, prefix + ".b" + k).col(0) += dlogits.rowwise().sum();
        Mat da = cblock(net, prefix + ".w" + k).transpose() * dlogits;
        for (size_t l = last; l-- > 0;) {
            k = std::to_string(l);
            if (cache.masks[l].size() > 0) da = da.cwiseProduct(cache.masks[l]);
            const Mat dz = da.cwiseProduct(activation_slope(m.activations[l], cache.pre[l], cache.post[l]));
            gblock(net, grad, prefix + ".w" + k).noalias() += dz * cache.inputs[l].transpose();
            gblock(net, grad, prefix + ".b" + k).col(0) += dz.rowwise().sum();
            da = cblock(net, prefix + ".w" + k).transpose() * dz;
        }
        return da;
    }

    // Runs one direction's stack over `seq` (already in processing order);
    // returns the top-layer outputs in processing order.
    static std::vector<Mat> stack_forward(const Network &net, size_t dir, const std::vector<Mat> &seq,
                                          RandomStream *rng, std::vector<LayerCache> &caches) {
        const RnnConfig &r = net.config_.rnn;
        const auto hd = static_cast<Eigen::Index>(r.hidden_dim);
        const Eigen::Index batch = seq.front().cols();
        caches.assign(r.layers, LayerCache{});
        std::vector<Mat> inputs = seq;
        for (size_t l = 0; l < r.layers; ++l) {
            LayerCache &lc = caches[l];
            if (l > 0 && rng && r.dropout > 0.0) {
                for (auto &x : inputs) {
                    lc.in_masks.push_back(dropout_mask(x.rows(), x.cols(), r.dropout, *rng));
                    x = x.cwiseProduct(lc.in_masks.back());
                }
            }
            const std::string p = direction_prefix(dir, l);
            const CMap w_ih = cblock(net, p + ".w_ih");
            const CMap w_hh = cblock(net, p + ".w_hh");
            const Vec b_ih = cblock(net, p + ".b_ih").col(0);
            const Vec b_hh = cblock(net, p + ".b_hh").col(0);
            Mat h = Mat::Zero(hd, batch);
            Mat c = Mat::Zero(hd, batch);
            std::vector<Mat> outputs;
            outputs.reserve(inputs.size());
            for (const Mat &x : inputs) {
                if (r.cell == CellKind::gru) {
                    lc.gru.emplace_back();
                    gru_forward(x, h, w_ih, w_hh, b_ih, b_hh, lc.gru.back());
                    h = lc.gru.back().out;
                } else {
                    lc.lstm.emplace_back();
                    lstm_forward(x, h, c, w_ih, w_hh, b_ih, b_hh, lc.lstm.back());
                    h = lc.lstm.back().out;
                    c = lc.lstm.back().c_new;
                }
                outputs.push_back(h);
            }
            inputs = std::move(outputs);
        }
        return inputs;
    }

    // d_out: gradient on top-layer outputs in processing order.
    static void stack_backward(const Network &net, Vec &grad, size_t dir, const std::vector<LayerCache> &caches,
                               std::vector<Mat> d_out) {
        const RnnConfig &r = net.config_.rnn;
        const auto hd = static_cast<Eigen::Index>(r.hidden_dim);
        for (size_t l = r.layers; l-- > 0;) {
            const LayerCache &lc = caches[l];
            const std::string p = direction_prefix(dir, l);
            const CMap w_ih = cblock(net, p + ".w_ih");
            const CMap w_hh = cblock(net, p + ".w_hh");
            GMap g_wih = gblock(net, grad, p + ".w_ih");
            GMap g_whh = gblock(net, grad, p + ".w_hh");
            GMap g_bih = gblock(net, grad, p + ".b_ih");
            GMap g_bhh = gblock(net, grad, p + ".b_hh");
            const size_t steps = d_out.size();
            const Eigen::Index batch = d_out.front().cols();
            std::vector<Mat> d_in(steps);
            Mat dh_next = Mat::Zero(hd, batch);
            Mat dc_next = Mat::Zero(hd, batch);
            for (size_t t = steps; t-- > 0;) {
                const Mat dh = d_out[t] + dh_next;
                if (r.cell == CellKind::gru) {
                    const GruStep &s = lc.gru[t];
                    const Mat dn = dh.cwiseProduct((1.0 - s.z.array()).matrix());
                    const Mat dz = dh.cwiseProduct(s.h - s.n);
                    const Mat dn_pre = dn.cwiseProduct((1.0 - s.n.array().square()).matrix());
                    const Mat dr = dn_pre.cwiseProduct(s.ghn);
                    Mat dgi(3 * hd, batch);
                    Mat dgh(3 * hd, batch);
                    dgi.topRows(hd) = dr.cwiseProduct((s.r.array() * (1.0 - s.r.array())).matrix());
                    dgi.middleRows(hd, hd) = dz.cwiseProduct((s.z.array() * (1.0 - s.z.array())).matrix());
                    dgi.bottomRows(hd) = dn_pre;
                    dgh.topRows(2 * hd) = dgi.topRows(2 * hd);
                    dgh.bottomRows(hd) = dn_pre.cwiseProduct(s.r);
                    g_wih.noalias() += dgi * s.x.transpose();
                    g_whh.noalias() += dgh * s.h.transpose();
                    g_bih.col(0) += dgi.rowwise().sum();
                    g_bhh.col(0) += dgh.rowwise().sum();
                    d_in[t].noalias() = w_ih.transpose() * dgi;
                    dh_next = dh.cwiseProduct(s.z);
                    dh_next.noalias() += w_hh.transpose() * dgh;
                } else {
                    const LstmStep &s = lc.lstm[t];
                    const Mat d_o = dh.cwiseProduct(s.tanh_c);
                    const Mat dc = dc_next + dh.cwiseProduct(s.o).cwiseProduct((1.0 - s.tanh_c.array().square()).matrix());
                    Mat dg(4 * hd, batch);
                    dg.topRows(hd) = dc.cwiseProduct(s.g).cwiseProduct((s.i.array() * (1.0 - s.i.array())).matrix());
                    dg.middleRows(hd, hd) = dc.cwiseProduct(s.c).cwiseProduct((s.f.array() * (1.0 - s.f.array())).matrix());
                    dg.middleRows(2 * hd, hd) = dc.cwiseProduct(s.i).cwiseProduct((1.0 - s.g.array().square()).matrix());
                    dg.bottomRows(hd) = d_o.cwiseProduct((s.o.array() * (1.0 - s.o.array())).matrix());
                    g_wih.noalias() += dg * s.x.transpose();
                    g_whh.noalias() += dg * s.h.transpose();
                    const Vec bias_grad = dg.rowwise().sum();
                    g_bih.col(0) += bias_grad;
                    g_bhh.col(0) += bias_grad;
                    d_in[t].noalias() = w_ih.transpose() * dg;
                    dh_next.noalias() = w_hh.transpose() * dg;
                    dc_next = dc.cwiseProduct(s.f);
                }
            }
            if (l == 0) break;
            if (!lc.in_masks.empty()) {
                for (size_t t = 0; t < steps; ++t) d_in[t] = d_in[t].cwiseProduct(lc.in_masks[t]);
            }
            d_out = std::move(d_in);
        }
    }

    static std::vector<Mat> split_steps(const Network &net, const Mat &x) {
        const size_t steps = net.config_.steps;
        const auto width = static_cast<Eigen::Index>(net.config_.rnn.input_dim);
        if (static_cast<size_t>(x.cols()) != steps * static_cast<size_t>(width)) {
            throw ValidationError("input has " + std::to_string(x.cols()) + " columns, model expects " +
                                  std::to_string(steps * static_cast<size_t>(width)));
        }
        std::vector<Mat> seq(steps);
        for (size_t t = 0; t < steps; ++t) seq[t] = x.middleCols(static_cast<Eigen::Index>(t) * width, width).transpose();
        return seq;
    }

    static Mat rnn_forward(const Network &net, const Mat &x, RandomStream *rng, RnnCache &cache) {
        const RnnConfig &r = net.config_.rnn;
        const auto hd = static_cast<Eigen::Index>(r.hidden_dim);
        std::vector<Mat> seq = split_steps(net, x);
        const size_t steps = seq.size();
        const Eigen::Index batch = x.rows();

        cache.layers.assign(r.directions(), {});
        std::vector<Mat> fwd = stack_forward(net, 0, seq, rng, cache.layers[0]);
        std::vector<Mat> bwd;
        if (r.bidirectional) {
            std::reverse(seq.begin(), seq.end());
            bwd = stack_forward(net, 1, seq, rng, cache.layers[1]);
            std::reverse(bwd.begin(), bwd.end());  // back to original time order
        }
        const auto adim = static_cast<Eigen::Index>(r.aggregate_dim());
        cache.u.assign(steps, Mat());
        for (size_t t = 0; t < steps; ++t) {
            cache.u[t].resize(adim, batch);
            cache.u[t].topRows(hd) = fwd[t];
            if (r.bidirectional) cache.u[t].bottomRows(hd) = bwd[t];
        }

        Mat a(adim, batch);
        switch (r.aggregation) {
            case Aggregation::last_hidden:
                a.topRows(hd) = fwd.back();
                if (r.bidirectional) a.bottomRows(hd) = bwd.front();
                break;
            case Aggregation::max_pool:
                cache.argmax.resize(adim, batch);
                a = cache.u[0];
                cache.argmax.setZero();
                for (size_t t = 1; t < steps; ++t) {
                    for (Eigen::Index b = 0; b < batch; ++b) {
                        for (Eigen::Index j = 0; j < adim; ++j) {
                            if (cache.u[t](j, b) > a(j, b)) {
                                a(j, b) = cache.u[t](j, b);
                                cache.argmax(j, b) = static_cast<int>(t);
                            }
                        }
                    }
                }
                break;
            case Aggregation::attention: {
                const CMap w = cblock(net, "att.w");
                const Vec bias = cblock(net, "att.b").col(0);
                const Vec ctx = cblock(net, "att.c").col(0);
                cache.att_v.assign(steps, Mat());
                Mat scores(static_cast<Eigen::Index>(steps), batch);
                for (size_t t = 0; t < steps; ++t) {
                    Mat pre = w * cache.u[t];
                    pre.colwise() += bias;
                    cache.att_v[t] = pre.array().tanh().matrix();
                    scores.row(static_cast<Eigen::Index>(t)) = ctx.transpose() * cache.att_v[t];
                }
                cache.att_alpha = column_softmax(scores);
                a.setZero();
                for (size_t t = 0; t < steps; ++t) {
                    a += cache.u[t] * cache.att_alpha.row(static_cast<Eigen::Index>(t)).asDiagonal();
                }
                break;
            }
        }
        cache.aggregate = a;
        return ff_forward(net, "head", r.head, a, rng, cache.head);
    }

    static void rnn_backward(const Network &net, Vec &grad, const RnnCache &cache, const Mat &dlogits) {
        const RnnConfig &r = net.config_.rnn;
        const auto hd = static_cast<Eigen::Index>(r.hidden_dim);
        const size_t steps = cache.u.size();
        const Eigen::Index batch = dlogits.cols();
        const Mat da = ff_backward(net, grad, "head", r.head, cache.head, dlogits);

        std::vector<Mat> du(steps, Mat::Zero(static_cast<Eigen::Index>(r.aggregate_dim()), batch));
        switch (r.aggregation) {
            case Aggregation::last_hidden:
                du[steps - 1].topRows(hd) += da.topRows(hd);
                if (r.bidirectional) du[0].bottomRows(hd) += da.bottomRows(hd);
                break;
            case Aggregation::max_pool:
                for (Eigen::Index b = 0; b < batch; ++b) {
                    for (Eigen::Index j = 0; j < da.rows(); ++j) du[static_cast<size_t>(cache.argmax(j, b))](j, b) += da(j, b);
                }
                break;
            case Aggregation::attention: {
                const CMap w = cblock(net, "att.w");
                const Vec ctx = cblock(net, "att.c").col(0);
                GMap gw = gblock(net, grad, "att.w");
                GMap gb = gblock(net, grad, "att.b");
                GMap gc = gblock(net, grad, "att.c");
                // dalpha_t = <da, u_t>; ds_t = alpha_t (dalpha_t - sum_k alpha_k dalpha_k).
                Mat dalpha(static_cast<Eigen::Index>(steps), batch);
                for (size_t t = 0; t < steps; ++t) {
                    dalpha.row(static_cast<Eigen::Index>(t)) = (da.array() * cache.u[t].array()).colwise().sum();
                    du[t] += da * cache.att_alpha.row(static_cast<Eigen::Index>(t)).asDiagonal();
                }
                const Eigen::RowVectorXd mean = (cache.att_alpha.array() * dalpha.array()).colwise().sum();
                const Mat ds = (cache.att_alpha.array() * (dalpha.rowwise() - mean).array()).matrix();
                for (size_t t = 0; t < steps; ++t) {
                    const Eigen::RowVectorXd ds_t = ds.row(static_cast<Eigen::Index>(t));
                    gc.col(0) += cache.att_v[t] * ds_t.transpose();
                    const Mat dpre = (ctx * ds_t).cwiseProduct((1.0 - cache.att_v[t].array().square()).matrix());
                    gw.noalias() += dpre * cache.u[t].transpose();
                    gb.col(0) += dpre.rowwise().sum();
                    du[t].noalias() += w.transpose() * dpre;
                }
                break;
            }
        }

        std::vector<Mat> d_fwd(steps);
        for (size_t t = 0; t < steps; ++t) d_fwd[t] = du[t].topRows(hd);
        stack_backward(net, grad, 0, cache.layers[0], std::move(d_fwd));
        if (r.bidirectional) {
            std::vector<Mat> d_bwd(steps);
            for (size_t t = 0; t < steps; ++t) d_bwd[steps - 1 - t] = du[t].bottomRows(hd);
            stack_backward(net, grad, 1, cache.layers[1], std::move(d_bwd));
        }
    }

    static Mat logits(const Network &net, const Mat &x, RandomStream *rng, RnnCache &rc, FfCache &fc) {
        if (net.config_.family == Family::mlp) {
            if (static_cast<size_t>(x.cols()) != net.config_.mlp.input_dim) {
                throw ValidationError("input has " + std::to_string(x.cols()) + " columns, model expects " +
                                      std::to_string(net.config_.mlp.input_dim));
            }
            return ff_forward(net, "mlp", net.config_.mlp, x.transpose(), rng, fc);
        }
        return rnn_forward(net, x, rng, rc);
    }
};

Mat Network::forward(const Mat &x, RandomStream *dropout_rng, ForwardTrace *trace) const {
    Impl::RnnCache rc;
    Impl::FfCache fc;
    const Mat probs = column_softmax(Impl::logits(*this, x, dropout_rng, rc, fc));
    if (trace) {
        trace->encoded = rc.u;
        trace->aggregate = rc.aggregate;
        trace->attention = rc.att_alpha;
    }
    return probs;
}

namespace {

double batch_cross_entropy(const Mat &probs, std::span<const int> labels) {
    double total = 0.0;
    for (size_t b = 0; b < labels.size(); ++b) {
        const int y = labels[b];
        if (y != 0 && y != 1) throw ValidationError("labels must be 0 or 1");
        const std::array<double, 2> target{y == 0 ? 1.0 : 0.0, y == 1 ? 1.0 : 0.0};
        const std::array<double, 2> pred{probs(0, static_cast<Eigen::Index>(b)), probs(1, static_cast<Eigen::Index>(b))};
        total += cross_entropy(pred, target);
    }
    return total / static_cast<double>(labels.size());
}

}  // namespace

double Network::loss(const Mat &x, std::span<const int> labels, RandomStream *dropout_rng) const {
    if (static_cast<size_t>(x.rows()) != labels.size() || labels.empty()) {
        throw ValidationError("batch and label counts differ");
    }
    const double wd = config_.weight_decay();
    return batch_cross_entropy(forward(x, dropout_rng), labels) + 0.5 * wd * theta_.squaredNorm();
}

double Network::loss_and_gradient(const Mat &x, std::span<const int> labels, Vec &grad,
                                  RandomStream *dropout_rng) const {
    if (static_cast<size_t>(x.rows()) != labels.size() || labels.empty()) {
        throw ValidationError("batch and label counts differ");
    }
    Impl::RnnCache rc;
    Impl::FfCache fc;
    const Mat probs = column_softmax(Impl::logits(*this, x, dropout_rng, rc, fc));
    const double ce = batch_cross_entropy(probs, labels);

    // d(mean CE)/d logits = (p - y) / B.
    Mat dlogits = probs;
    for (size_t b = 0; b < labels.size(); ++b) dlogits(labels[b], static_cast<Eigen::Index>(b)) -= 1.0;
    dlogits /= static_cast<double>(labels.size());

    grad = Vec::Zero(theta_.size());
    if (config_.family == Family::mlp) {
        Impl::ff_backward(*this, grad, "mlp", config_.mlp, fc, dlogits);
    } else {
        Impl::rnn_backward(*this, grad, rc, dlogits);
    }
    const double wd = config_.weight_decay();
    if (wd > 0.0) grad += wd * theta_;
    return ce + 0.5 * wd * theta_.squaredNorm();
}

// ---------------------------------------------------------------------------
// Persistence: "QNCM", u16 version, u32 header length, JSON header, then the
// parameters as little-endian f64.

namespace {
constexpr char kModelMagic[4] = {'Q', 'N', 'C', 'M'};
constexpr uint16_t kModelVersion = 1;
}  // namespace

void Network::save(std::ostream &out, std::string_view meta_json) const {
    ordered_json header;
    header["config"] = ordered_json::parse(config_to_json(config_));
    header["n_params"] = theta_.size();
    header["storage"] = "f64";
    header["meta"] = ordered_json::parse(meta_json);
    const std::string text = header.dump();
    detail::ByteWriter w;
    w.put_bytes(std::string_view(kModelMagic, 4));
    w.put<uint16_t>(kModelVersion);
    w.put<uint32_t>(static_cast<uint32_t>(text.size()));
    w.put_bytes(text);
    for (Eigen::Index i = 0; i < theta_.size(); ++i) w.put<double>(theta_(i));
    out.write(reinterpret_cast<const char *>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw DataError("failed writing model stream");
}

Network Network::load(std::istream &in, std::string *meta_json) {
    const auto buf = detail::slurp(in);
    if (buf.size() < 10 || !std::equal(buf.begin(), buf.begin() + 4, kModelMagic)) {
        throw DataError("not a neural model file");
    }
    detail::ByteReader r(buf, 4);
    const auto version = r.get<uint16_t>();
    if (version != kModelVersion) throw DataError("unsupported model version " + std::to_string(version));
    const auto len = static_cast<size_t>(r.get<uint32_t>());
    if (buf.size() < 10 + len) throw DataError("model file is truncated");
    ordered_json header;
    try {
        header = ordered_json::parse(std::string_view(reinterpret_cast<const char *>(buf.data()) + 10, len));
    } catch (const nlohmann::json::exception &e) {
        throw DataError(std::string("malformed model header: ") + e.what());
    }
    r.skip(len);
    Network net(config_from_json(header.at("config").dump()));
    const auto n = header.at("n_params").get<size_t>();
    if (n != net.parameter_count()) throw DataError("model parameter count does not match its architecture");
    if (buf.size() != 10 + len + 8 * n) throw DataError("model payload has the wrong size");
    for (size_t i = 0; i < n; ++i) net.theta_(static_cast<Eigen::Index>(i)) = r.get<double>();
    if (!net.theta_.allFinite()) throw DataError("model holds non-finite parameters");
    if (meta_json) *meta_json = header.contains("meta") ? header.at("meta").dump() : "{}";
    return net;
}

}  // namespace qnc::neural
