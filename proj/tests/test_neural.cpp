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

#include <cmath>
#include <numbers>
#include <sstream>

#include <gtest/gtest.h>

#include "qnc/error.hpp"
#include "qnc/neural.hpp"

namespace qnc::neural {
namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

Mat random_matrix(Eigen::Index rows, Eigen::Index cols, uint64_t seed, double scale = 1.0) {
    RandomStream rng(seed);
    Mat m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = scale * rng.normal();
    }
    return m;
}

std::vector<int> alternating_labels(size_t n) {
    std::vector<int> y(n);
    for (size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % 2);
    return y;
}

Network initialized(const ModelConfig &c, uint64_t seed = 7) {
    Network net(c);
    RandomStream rng(seed);
    net.initialize(rng);
    return net;
}

// ---------------------------------------------------------------------------
// Softmax, cross entropy, accuracy.

TEST(Softmax, ClosedForms) {
    const Vec half = softmax(Vec::Zero(2));
    EXPECT_DOUBLE_EQ(half(0), 0.5);
    EXPECT_NEAR(softmax(Vec::Constant(2, 3.0))(0), 0.5, 1e-15);
    Vec l(2);
    l << std::log(3.0), 0.0;
    const Vec p = softmax(l);
    EXPECT_NEAR(p(0), 0.75, 1e-12);
    EXPECT_NEAR(p(1), 0.25, 1e-12);
}

TEST(Softmax, PositiveAndNormalizedForExtremeLogits) {
    for (double big : {1e-3, 10.0, 700.0, 1e6}) {
        Vec l(2);
        l << big, -big;
        const Vec p = softmax(l);
        EXPECT_GE(p(1), 0.0);
        EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    }
}

TEST(Mlp, ZeroWeightsGiveEvenOdds) {
    Network net(make_mlp(5, {4, 3}, Activation::tanh));
    const Mat probs = net.forward(random_matrix(3, 5, 1));
    EXPECT_TRUE(probs.isApprox(Mat::Constant(2, 3, 0.5), 1e-15));
}

TEST(Mlp, SingleLayerReproducesLogits) {
    Network net(make_mlp(2, {}, Activation::relu));
    net.block("mlp.w0") << 1.0, 0.0, 0.0, 1.0;
    const Mat x = (Mat(2, 2) << std::log(3.0), 0.0, 3.0, 3.0).finished();
    const Mat p = net.forward(x);
    EXPECT_NEAR(p(0, 0), 0.75, 1e-12);
    EXPECT_NEAR(p(0, 1), 0.5, 1e-12);
}

TEST(Mlp, DimensionMismatchThrows) {
    Network net(make_mlp(5, {4}, Activation::relu));
    EXPECT_THROW(net.forward(Mat::Zero(2, 4)), ValidationError);
}

TEST(CrossEntropy, Examples) {
    const std::array<double, 2> one{1.0, 0.0};
    const std::array<double, 2> two{0.0, 1.0};
    EXPECT_DOUBLE_EQ(cross_entropy(std::array{1.0, 0.0}, one), 0.0);
    EXPECT_NEAR(cross_entropy(std::array{0.5, 0.5}, two), std::numbers::ln2, 1e-15);
    EXPECT_NEAR(cross_entropy(std::array{0.75, 0.25}, two), std::log(4.0), 1e-15);
}

TEST(CrossEntropy, ZeroProbabilityIsClampedAndCounted) {
    const size_t before = cross_entropy_clamp_count();
    const double v = cross_entropy(std::array{1.0, 0.0}, std::array{0.0, 1.0});
    EXPECT_NEAR(v, -std::log(1e-12), 1e-9);
    EXPECT_EQ(cross_entropy_clamp_count(), before + 1);
}

TEST(Accuracy, Examples) {
    using P = std::pair<std::array<double, 2>, std::array<double, 2>>;
    const std::vector<P> right{{{1, 0}, {0.9, 0.1}}, {{0, 1}, {0.2, 0.8}}};
    const std::vector<P> wrong{{{1, 0}, {0.1, 0.9}}, {{0, 1}, {0.8, 0.2}}};
    const std::vector<P> three{{{1, 0}, {0.9, 0.1}}, {{0, 1}, {0.2, 0.8}}, {{0, 1}, {0.3, 0.7}}, {{0, 1}, {0.6, 0.4}}};
    EXPECT_DOUBLE_EQ(accuracy(right), 100.0);
    EXPECT_DOUBLE_EQ(accuracy(wrong), 0.0);
    EXPECT_DOUBLE_EQ(accuracy(three), 75.0);
    EXPECT_THROW(accuracy(std::vector<P>{}), ValidationError);
}

TEST(Accuracy, TiesGoToClassZero) {
    const Mat probs = Mat::Constant(2, 2, 0.5);
    const std::vector<int> y{0, 1};
    EXPECT_DOUBLE_EQ(accuracy(probs, y), 50.0);
    EXPECT_EQ(argmax2(0.5, 0.5), 0);
}

// ---------------------------------------------------------------------------
// Cells.

GruWeights gru_weights(Eigen::Index in, Eigen::Index hd, uint64_t seed, double scale) {
    return {random_matrix(3 * hd, in, seed, scale), random_matrix(3 * hd, hd, seed + 1, scale),
            random_matrix(3 * hd, 1, seed + 2, scale).col(0), random_matrix(3 * hd, 1, seed + 3, scale).col(0)};
}

LstmWeights lstm_weights(Eigen::Index in, Eigen::Index hd, uint64_t seed, double scale) {
    return {random_matrix(4 * hd, in, seed, scale), random_matrix(4 * hd, hd, seed + 1, scale),
            random_matrix(4 * hd, 1, seed + 2, scale).col(0), random_matrix(4 * hd, 1, seed + 3, scale).col(0)};
}

TEST(Cells, ZeroWeightsZeroCarryStayZero) {
    const Mat x = random_matrix(3, 2, 5);
    const Mat h = Mat::Zero(4, 2);
    EXPECT_TRUE(gru_cell(x, h, gru_weights(3, 4, 1, 0.0)).isZero(0.0));
    const auto [h2, c2] = lstm_cell(x, h, h, lstm_weights(3, 4, 1, 0.0));
    EXPECT_TRUE(h2.isZero(0.0));
    EXPECT_TRUE(c2.isZero(0.0));
}

TEST(Cells, GruSaturatedUpdateGateKeepsCarry) {
    GruWeights w = gru_weights(3, 4, 11, 1.0);
    w.b_ih.segment(4, 4).setConstant(40.0);
    const Mat x = random_matrix(3, 5, 2);
    const Mat h = random_matrix(4, 5, 3, 0.5);
    EXPECT_LT((gru_cell(x, h, w) - h).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Cells, LstmClosedGatesClearCellState) {
    LstmWeights w = lstm_weights(3, 4, 21, 1.0);
    w.b_ih.segment(0, 4).setConstant(-40.0);  // input gate
    w.b_ih.segment(4, 4).setConstant(-40.0);  // forget gate
    const Mat x = random_matrix(3, 5, 2);
    const Mat h = random_matrix(4, 5, 3, 0.5);
    const Mat c = random_matrix(4, 5, 4, 2.0);
    const auto [h2, c2] = lstm_cell(x, h, c, w);
    EXPECT_LT(c2.cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT(h2.cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Cells, GruMatchesHandComputedUpdate) {
    // One unit, one input: every gate written out as a scalar.
    GruWeights w{Mat(3, 1), Mat(3, 1), Vec(3), Vec(3)};
    w.w_ih << 0.3, -0.2, 0.5;
    w.w_hh << 0.1, 0.4, -0.6;
    w.b_ih << 0.05, -0.1, 0.2;
    w.b_hh << -0.03, 0.07, 0.01;
    const double x = 0.8, h = -0.4;
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    const double r = sig(0.3 * x + 0.05 + 0.1 * h - 0.03);
    const double z = sig(-0.2 * x - 0.1 + 0.4 * h + 0.07);
    const double n = std::tanh(0.5 * x + 0.2 + r * (-0.6 * h + 0.01));
    const double expected = (1 - z) * n + z * h;
    EXPECT_NEAR(gru_cell(Mat::Constant(1, 1, x), Mat::Constant(1, 1, h), w)(0, 0), expected, 1e-15);
}

TEST(Cells, LstmMatchesHandComputedUpdate) {
    LstmWeights w{Mat(4, 1), Mat(4, 1), Vec(4), Vec(4)};
    w.w_ih << 0.3, -0.2, 0.5, 0.7;
    w.w_hh << 0.1, 0.4, -0.6, 0.2;
    w.b_ih << 0.05, 1.0, 0.2, -0.3;
    w.b_hh << -0.03, 0.07, 0.01, 0.1;
    const double x = 0.8, h = -0.4, c = 0.6;
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    const double i = sig(0.3 * x + 0.1 * h + 0.02);
    const double f = sig(-0.2 * x + 0.4 * h + 1.07);
    const double g = std::tanh(0.5 * x - 0.6 * h + 0.21);
    const double o = sig(0.7 * x + 0.2 * h - 0.2);
    const double c2 = f * c + i * g;
    const auto [hn, cn] = lstm_cell(Mat::Constant(1, 1, x), Mat::Constant(1, 1, h), Mat::Constant(1, 1, c), w);
    EXPECT_NEAR(cn(0, 0), c2, 1e-15);
    EXPECT_NEAR(hn(0, 0), o * std::tanh(c2), 1e-15);
}

TEST(Cells, DimensionMismatchThrows) {
    EXPECT_THROW(gru_cell(Mat::Zero(3, 1), Mat::Zero(4, 1), gru_weights(2, 4, 1, 1.0)), ValidationError);
    EXPECT_THROW(lstm_cell(Mat::Zero(3, 1), Mat::Zero(4, 1), Mat::Zero(3, 1), lstm_weights(3, 4, 1, 1.0)),
                 ValidationError);
}

// ---------------------------------------------------------------------------
// Encoder and aggregation.

TEST(Encoder, SingleStepAggregationsAgree) {
    const Mat x = random_matrix(4, 3, 9);
    std::vector<Mat> aggregates;
    for (auto agg : {Aggregation::last_hidden, Aggregation::attention, Aggregation::max_pool}) {
        Network net = initialized(make_rnn(3, 1, CellKind::gru, 2, 5, true, agg, 6), 3);
        ForwardTrace tr;
        net.forward(x, nullptr, &tr);
        ASSERT_EQ(tr.encoded.size(), 1u);
        EXPECT_TRUE(tr.aggregate.isApprox(tr.encoded[0], 1e-14));
        if (agg == Aggregation::attention) {
            EXPECT_TRUE(tr.attention.isApprox(Mat::Ones(1, 4), 1e-14));
        }
        aggregates.push_back(tr.aggregate);
    }
    EXPECT_TRUE(aggregates[0].isApprox(aggregates[2], 1e-14));
}

TEST(Encoder, AttentionWeightsFormADistribution) {
    Network net = initialized(make_rnn(3, 12, CellKind::lstm, 1, 5, true, Aggregation::attention, 7));
    ForwardTrace tr;
    net.forward(random_matrix(6, 36, 4), nullptr, &tr);
    ASSERT_EQ(tr.attention.rows(), 12);
    for (Eigen::Index b = 0; b < 6; ++b) {
        EXPECT_NEAR(tr.attention.col(b).sum(), 1.0, 1e-12);
        EXPECT_GT(tr.attention.col(b).minCoeff(), 0.0);
    }
}

TEST(Encoder, MaxPoolDominatesEveryStep) {
    Network net = initialized(make_rnn(3, 10, CellKind::gru, 1, 5, true, Aggregation::max_pool));
    ForwardTrace tr;
    net.forward(random_matrix(6, 30, 4), nullptr, &tr);
    for (const Mat &u : tr.encoded) EXPECT_TRUE(((tr.aggregate - u).array() >= 0.0).all());
}

TEST(Encoder, LastHiddenConcatenatesForwardEndAndBackwardStart) {
    Network net = initialized(make_rnn(3, 7, CellKind::lstm, 2, 4, true, Aggregation::last_hidden));
    ForwardTrace tr;
    net.forward(random_matrix(2, 21, 4), nullptr, &tr);
    EXPECT_TRUE(tr.aggregate.topRows(4).isApprox(tr.encoded.back().topRows(4)));
    EXPECT_TRUE(tr.aggregate.bottomRows(4).isApprox(tr.encoded.front().bottomRows(4)));
}

TEST(Encoder, ConstantInputContractsToFixedPoint) {
    Network net(make_rnn(3, 40, CellKind::gru, 1, 8, false, Aggregation::last_hidden));
    RandomStream rng(5);
    net.initialize(rng);
    for (const char *name : {"rnn.fwd0.w_ih", "rnn.fwd0.w_hh", "rnn.fwd0.b_ih", "rnn.fwd0.b_hh"}) {
        net.block(name) *= 0.1;
    }
    Mat x(1, 120);
    for (int t = 0; t < 40; ++t) x.middleCols(3 * t, 3) << 0.7, -0.2, 1.1;
    ForwardTrace tr;
    net.forward(x, nullptr, &tr);
    double prev = std::numeric_limits<double>::infinity();
    for (size_t t = 5; t < tr.encoded.size(); ++t) {
        const double d = (tr.encoded[t] - tr.encoded[t - 1]).norm();
        EXPECT_LE(d, prev + 1e-15) << "step " << t;
        prev = d;
    }
}

TEST(Encoder, ReversalSwapsDirectionsWithMirroredWeights) {
    for (auto cell : {CellKind::gru, CellKind::lstm}) {
        Network net = initialized(make_rnn(3, 9, cell, 2, 4, true, Aggregation::last_hidden), 13);
        for (size_t l = 0; l < 2; ++l) {
            for (const char *part : {".w_ih", ".w_hh", ".b_ih", ".b_hh"}) {
                const std::string suffix = std::to_string(l) + part;
                net.block("rnn.bwd" + suffix) = net.block("rnn.fwd" + suffix);
            }
        }
        const Mat x = random_matrix(2, 27, 8);
        Mat rev(2, 27);
        for (int t = 0; t < 9; ++t) rev.middleCols(3 * t, 3) = x.middleCols(3 * (8 - t), 3);
        ForwardTrace a, b;
        net.forward(x, nullptr, &a);
        net.forward(rev, nullptr, &b);
        EXPECT_TRUE(a.aggregate.topRows(4).isApprox(b.aggregate.bottomRows(4), 1e-13));
        EXPECT_TRUE(a.aggregate.bottomRows(4).isApprox(b.aggregate.topRows(4), 1e-13));
    }
}

TEST(Encoder, WrongSequenceLengthThrows) {
    Network net(make_rnn(3, 4, CellKind::gru, 1, 4, true, Aggregation::max_pool));
    EXPECT_THROW(net.forward(Mat::Zero(2, 13)), ValidationError);
}

// ---------------------------------------------------------------------------
// Gradient checks.

void expect_gradient_ok(const ModelConfig &c, size_t steps_width, uint64_t seed) {
    Network net = initialized(c, seed);
    // Nonzero biases so every block sees a nontrivial gradient.
    RandomStream rng(seed + 100);
    for (Eigen::Index i = 0; i < net.parameters().size(); ++i) net.parameters()(i) += 0.05 * rng.normal();
    const Mat x = random_matrix(6, static_cast<Eigen::Index>(steps_width), seed + 1);
    const auto y = alternating_labels(6);
    const auto r = gradient_check(net, x, y, 1e-5, 200, seed);
    EXPECT_GE(r.checked, 200u);
    EXPECT_LT(r.max_relative_error, 1e-4) << "worst block " << r.worst_block << " index " << r.worst_index;
}

TEST(GradientCheck, MlpTwoHiddenLayers) {
    for (auto act : {Activation::relu, Activation::sigmoid, Activation::tanh}) {
        expect_gradient_ok(make_mlp(7, {16, 9}, act, 0.0, 1e-3), 7, 1);
    }
}

struct RnnCase {
    CellKind cell;
    bool bidirectional;
    Aggregation aggregation;
    size_t layers;
};

class RnnGradient : public ::testing::TestWithParam<RnnCase> {};

TEST_P(RnnGradient, BelowTolerance) {
    const auto p = GetParam();
    const auto c = make_rnn(3, 16, p.cell, p.layers, 5, p.bidirectional, p.aggregation, 6, 8, 0.0, 1e-4);
    expect_gradient_ok(c, 48, 31);
}

INSTANTIATE_TEST_SUITE_P(
    Architectures, RnnGradient,
    ::testing::Values(RnnCase{CellKind::gru, false, Aggregation::last_hidden, 1},
                      RnnCase{CellKind::lstm, false, Aggregation::last_hidden, 2},
                      RnnCase{CellKind::gru, true, Aggregation::last_hidden, 2},
                      RnnCase{CellKind::lstm, true, Aggregation::last_hidden, 1},
                      RnnCase{CellKind::gru, true, Aggregation::attention, 2},
                      RnnCase{CellKind::lstm, true, Aggregation::attention, 1},
                      RnnCase{CellKind::gru, true, Aggregation::max_pool, 1},
                      RnnCase{CellKind::lstm, true, Aggregation::max_pool, 3}));

TEST(GradientCheck, CoversEveryBlockIncludingContext) {
    Network net = initialized(make_rnn(2, 4, CellKind::gru, 1, 3, true, Aggregation::attention, 4));
    const auto r = gradient_check(net, random_matrix(4, 8, 2), alternating_labels(4), 1e-5, 200, 3);
    size_t floor = 0;
    for (const auto &b : net.blocks()) floor += std::min<size_t>(b.size(), 8);
    EXPECT_GE(r.checked, std::max<size_t>(floor, 200));
    EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_block;
}

// ---------------------------------------------------------------------------
// Dropout.

TEST(Dropout, InvertedMasksPreserveTheMean) {
    // Hidden units are constant 1; output logit 0 averages the masked units,
    // so it equals kept / (width * (1 - p)).
    const size_t width = 512;
    const double p = 0.5;
    Network net(make_mlp(1, {width}, Activation::relu, p));
    net.block("mlp.b0").setOnes();
    net.block("mlp.w1").row(0).setConstant(1.0 / static_cast<double>(width));
    const Mat x = Mat::Zero(1, 1);
    RandomStream rng(17);
    double sum = 0.0;
    const int draws = 400;
    for (int k = 0; k < draws; ++k) {
        const Mat probs = net.forward(x, &rng);
        const double logit = std::log(probs(0, 0) / probs(1, 0));
        const double kept = logit * static_cast<double>(width) * (1.0 - p);
        EXPECT_NEAR(kept, std::round(kept), 1e-6);
        sum += logit;
    }
    // Each draw has standard deviation sqrt(p / ((1 - p) width)) ~ 0.044.
    EXPECT_NEAR(sum / draws, 1.0, 4.0 * 0.0442 / std::sqrt(draws));
    EXPECT_NEAR(std::log(net.forward(x)(0, 0) / net.forward(x)(1, 0)), 1.0, 1e-12);
}

TEST(Dropout, EvaluationModeIsDeterministic) {
    Network net = initialized(make_rnn(3, 5, CellKind::lstm, 2, 4, true, Aggregation::max_pool, 8, 8, 0.5));
    const Mat x = random_matrix(3, 15, 1);
    EXPECT_TRUE(net.forward(x).isApprox(net.forward(x), 0.0));
    RandomStream rng(2);
    EXPECT_FALSE(net.forward(x, &rng).isApprox(net.forward(x), 1e-9));
}

// ---------------------------------------------------------------------------
// Adam.

TEST(Adam, ZeroGradientOrRateLeavesWeights) {
    Vec theta = Vec::LinSpaced(5, -1.0, 1.0);
    const Vec before = theta;
    AdamState s;
    adam_step(theta, Vec::Zero(5), s, {});
    EXPECT_TRUE(theta.isApprox(before, 0.0));
    AdamOptions o;
    o.lr = 0.0;
    adam_step(theta, Vec::Constant(5, 3.0), s, o);
    EXPECT_TRUE(theta.isApprox(before, 0.0));
}

TEST(Adam, ConstantGradientStepApproachesRate) {
    Vec theta = Vec::Zero(3);
    const Vec g = (Vec(3) << 2.0, -0.01, 50.0).finished();
    AdamState s;
    AdamOptions o;
    for (int k = 0; k < 2000; ++k) adam_step(theta, g, s, o);
    const Vec before = theta;
    adam_step(theta, g, s, o);
    for (int i = 0; i < 3; ++i) {
        EXPECT_NEAR((before(i) - theta(i)) / (o.lr * (g(i) > 0 ? 1.0 : -1.0)), 1.0, 1e-3);
    }
}

TEST(Adam, FirstStepHasMagnitudeRate) {
    Vec theta = Vec::Zero(2);
    AdamState s;
    adam_step(theta, (Vec(2) << 3.0, -4.0).finished(), s, {});
    EXPECT_NEAR(theta(0), -1e-3, 1e-9);
    EXPECT_NEAR(theta(1), 1e-3, 1e-9);
}

TEST(Adam, NonFiniteGradientAborts) {
    Vec theta = Vec::Zero(3);
    AdamState s;
    Vec g = Vec::Zero(3);
    g(1) = std::nan("");
    try {
        adam_step(theta, g, s, {});
        FAIL();
    } catch (const NumericalError &e) {
        EXPECT_NE(std::string(e.what()).find("parameter 1"), std::string::npos);
    }
}

// ---------------------------------------------------------------------------
// Training.

struct Toy {
    Mat x;
    std::vector<int> y;
};

Toy separable(size_t n, uint64_t seed) {
    RandomStream rng(seed);
    Toy t{Mat(static_cast<Eigen::Index>(n), 2), std::vector<int>(n)};
    for (size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % 2);
        const double margin = 0.3 + rng.uniform();
        const double along = rng.uniform(-2.0, 2.0);
        const double s = label == 1 ? margin : -margin;
        // Direction (1, 1) / sqrt 2 separates the classes.
        t.x(static_cast<Eigen::Index>(i), 0) = (s + along) / std::numbers::sqrt2;
        t.x(static_cast<Eigen::Index>(i), 1) = (s - along) / std::numbers::sqrt2;
        t.y[i] = label;
    }
    return t;
}

TEST(Train, SeparableToyReachesFullAccuracy) {
    const Toy tr = separable(200, 1);
    const Toy va = separable(100, 2);
    TrainOptions o;
    o.epoch_cap = 50;
    o.seed = 3;
    const auto [net, rep] = train(make_mlp(2, {8}, Activation::relu), tr.x, tr.y, va.x, va.y, o);
    double best = 0.0;
    for (const auto &e : rep.epochs) best = std::max(best, e.validation_accuracy);
    EXPECT_DOUBLE_EQ(best, 100.0);
    EXPECT_DOUBLE_EQ(accuracy(net.forward(va.x), va.y), rep.best_validation_accuracy);
}

TEST(Train, ShuffledLabelsStayAtChance) {
    RandomStream rng(4);
    auto noise = [&](size_t n) {
        Toy t{random_matrix(static_cast<Eigen::Index>(n), 6, rng.next_u64()), alternating_labels(n)};
        for (size_t i = n; i > 1; --i) std::swap(t.y[i - 1], t.y[rng.below(i)]);
        return t;
    };
    const Toy tr = noise(400);
    const Toy va = noise(2000);
    TrainOptions o;
    o.epoch_cap = 20;
    o.seed = 9;
    const auto [net, rep] = train(make_mlp(6, {16}, Activation::tanh), tr.x, tr.y, va.x, va.y, o);
    EXPECT_NEAR(accuracy(net.forward(va.x), va.y), 50.0, 3.0);
}

TEST(Train, EarlyStoppingIsExact) {
    const Toy tr = separable(60, 5);
    Toy va = separable(40, 6);
    for (size_t i = 0; i < va.y.size(); i += 3) va.y[i] = 1 - va.y[i];  // validation noise forces a stop
    TrainOptions o;
    o.epoch_cap = 300;
    o.patience = 4;
    o.seed = 1;
    const auto [net, rep] = train(make_mlp(2, {32, 32}, Activation::relu), tr.x, tr.y, va.x, va.y, o);
    ASSERT_EQ(rep.stop_reason, "patience");
    EXPECT_EQ(rep.stopping_epoch, rep.best_epoch + o.patience);
    EXPECT_EQ(rep.epochs.size(), rep.stopping_epoch);
    double best = std::numeric_limits<double>::infinity();
    for (const auto &e : rep.epochs) best = std::min(best, e.validation_risk);
    EXPECT_EQ(best, rep.best_validation_risk);
    EXPECT_EQ(rep.epochs[rep.best_epoch - 1].validation_risk, best);
    for (size_t e = rep.best_epoch; e < rep.epochs.size(); ++e) EXPECT_GE(rep.epochs[e].validation_risk, best);
    // The returned weights are the best epoch's.
    const Mat probs = net.forward(va.x);
    double ce = 0.0;
    for (size_t i = 0; i < va.y.size(); ++i) ce -= std::log(probs(va.y[i], static_cast<Eigen::Index>(i)));
    EXPECT_NEAR(ce / static_cast<double>(va.y.size()), best, 1e-12);
}

TEST(Train, EpochCapIsHonored) {
    const Toy tr = separable(40, 5);
    const Toy va = separable(20, 6);
    TrainOptions o;
    o.epoch_cap = 3;
    const auto rep = train(make_mlp(2, {4}, Activation::tanh), tr.x, tr.y, va.x, va.y, o).second;
    EXPECT_EQ(rep.stopping_epoch, 3u);
    EXPECT_EQ(rep.stop_reason, "epoch_cap");
}

TEST(Train, IdenticalSeedsGiveIdenticalReports) {
    const Toy tr = separable(64, 5);
    const Toy va = separable(32, 6);
    TrainOptions o;
    o.epoch_cap = 6;
    o.seed = 42;
    const auto cfg = make_rnn(1, 2, CellKind::lstm, 1, 4, true, Aggregation::attention, 4, 8, 0.2, 1e-4);
    const auto a = train(cfg, tr.x, tr.y, va.x, va.y, o);
    o.threads = 4;
    const auto b = train(cfg, tr.x, tr.y, va.x, va.y, o);
    ASSERT_EQ(a.second.epochs.size(), b.second.epochs.size());
    for (size_t e = 0; e < a.second.epochs.size(); ++e) {
        EXPECT_EQ(a.second.epochs[e].train_risk, b.second.epochs[e].train_risk);
        EXPECT_EQ(a.second.epochs[e].validation_risk, b.second.epochs[e].validation_risk);
    }
    EXPECT_TRUE(a.first.parameters() == b.first.parameters());
    o.seed = 43;
    const auto c = train(cfg, tr.x, tr.y, va.x, va.y, o);
    EXPECT_NE(a.second.epochs[0].train_risk, c.second.epochs[0].train_risk);
}

TEST(Train, ResumingMatchesSingleRun) {
    const Toy tr = separable(48, 5);
    const Toy va = separable(24, 6);
    TrainOptions o;
    o.epoch_cap = 7;
    o.seed = 8;
    const auto cfg = make_mlp(2, {6}, Activation::sigmoid, 0.2);
    Trainer once(cfg, o);
    once.run_until(7, tr.x, tr.y, va.x, va.y);
    Trainer twice(cfg, o);
    twice.run_until(3, tr.x, tr.y, va.x, va.y);
    EXPECT_FALSE(twice.finished());
    twice.run_until(7, tr.x, tr.y, va.x, va.y);
    EXPECT_TRUE(once.current_network().parameters() == twice.current_network().parameters());
    EXPECT_TRUE(once.best_network().parameters() == twice.best_network().parameters());
}

TEST(Train, ReportSerializes) {
    const Toy tr = separable(32, 5);
    const Toy va = separable(16, 6);
    TrainOptions o;
    o.epoch_cap = 2;
    auto rep = train(make_mlp(2, {4}, Activation::tanh), tr.x, tr.y, va.x, va.y, o).second;
    rep.test_accuracy = 87.5;
    const std::string js = rep.to_json(R"({"model":"m-test"})");
    EXPECT_NE(js.find("\"test_accuracy\": 87.5"), std::string::npos);
    EXPECT_NE(js.find("\"model\": \"m-test\""), std::string::npos);
    EXPECT_NE(js.find(std::string(kTrainerVersion)), std::string::npos);
    const std::string csv = rep.to_csv();
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Train, RejectsBadInput) {
    const Toy tr = separable(8, 5);
    TrainOptions o;
    EXPECT_THROW(train(make_mlp(2, {4}, Activation::tanh), tr.x, std::vector<int>(3), tr.x, tr.y, o),
                 ValidationError);
    o.batch_size = 0;
    EXPECT_THROW(Trainer(make_mlp(2, {4}, Activation::tanh), o), ValidationError);
}

// ---------------------------------------------------------------------------
// Configuration and persistence.

TEST(Config, ValidatesRanges) {
    EXPECT_THROW(make_mlp(3, {513}, Activation::relu), ValidationError);
    EXPECT_THROW(make_mlp(3, {0}, Activation::relu), ValidationError);
    EXPECT_THROW(make_mlp(3, {4}, Activation::relu, 1.0), ValidationError);
    EXPECT_THROW(make_rnn(3, 4, CellKind::gru, 7, 4, true, Aggregation::max_pool), ValidationError);
    EXPECT_THROW(make_rnn(3, 4, CellKind::gru, 1, 4, true, Aggregation::attention, 600), ValidationError);
    EXPECT_THROW(parse_activation("gelu"), ValidationError);
}

TEST(Config, JsonRoundTrip) {
    for (const auto &c : {make_mlp(640, {128, 32}, Activation::sigmoid, 0.2, 1e-4),
                          make_rnn(40, 16, CellKind::lstm, 3, 64, true, Aggregation::attention, 32, 64, 0.5, 1e-3)}) {
        EXPECT_EQ(config_from_json(config_to_json(c)), c);
    }
    EXPECT_THROW(config_from_json("{\"family\":\"rnn\"}"), DataError);
}

TEST(Persistence, SaveLoadRoundTrip) {
    const Network net = initialized(make_rnn(3, 4, CellKind::gru, 2, 5, true, Aggregation::attention, 6));
    std::stringstream buf;
    net.save(buf, R"({"note":"x"})");
    std::string meta;
    const Network back = Network::load(buf, &meta);
    EXPECT_EQ(back.config(), net.config());
    EXPECT_TRUE(back.parameters() == net.parameters());
    EXPECT_EQ(meta, R"({"note":"x"})");
    const Mat x = random_matrix(2, 12, 3);
    EXPECT_TRUE(back.forward(x).isApprox(net.forward(x), 0.0));
}

TEST(Persistence, CorruptFilesAreRejected) {
    const Network net = initialized(make_mlp(3, {4}, Activation::relu));
    std::stringstream buf;
    net.save(buf);
    std::string bytes = buf.str();
    std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(Network::load(truncated), DataError);
    std::string bad = bytes;
    bad[0] = 'X';
    std::stringstream magic(bad);
    EXPECT_THROW(Network::load(magic), DataError);
}

TEST(Network, BlocksTileTheParameterVector) {
    const Network net(make_rnn(4, 3, CellKind::lstm, 2, 5, true, Aggregation::attention, 6, 7));
    size_t offset = 0;
    for (const auto &b : net.blocks()) {
        EXPECT_EQ(b.offset, offset) << b.name;
        offset += b.size();
    }
    EXPECT_EQ(offset, net.parameter_count());
    // Two directions x two layers x four tensors, three attention, two head layers x two.
    EXPECT_EQ(net.blocks().size(), 16u + 3u + 4u);
    EXPECT_EQ(net.find_block("rnn.bwd1.w_ih").cols, 5u);
    EXPECT_EQ(net.find_block("att.w").cols, 10u);
}

TEST(Network, LstmForgetBiasStartsAtOne) {
    const Network net = initialized(make_rnn(2, 3, CellKind::lstm, 1, 4, false, Aggregation::last_hidden));
    const auto b = net.block("rnn.fwd0.b_ih");
    EXPECT_TRUE(b.middleRows(4, 4).isOnes(0.0));
    EXPECT_TRUE(b.topRows(4).isZero(0.0));
    const auto w = net.block("rnn.fwd0.w_hh");
    for (int g = 0; g < 4; ++g) {
        const Mat q = w.middleRows(4 * g, 4);
        EXPECT_TRUE((q.transpose() * q).isIdentity(1e-12));
    }
}

// ---------------------------------------------------------------------------
// Search.

TEST(Search, BudgetOneTrainsOneConfigToTheCap) {
    const Toy tr = separable(48, 1);
    const Toy va = separable(24, 2);
    SearchSpace space;
    space.family = Family::mlp;
    space.input_dim = 2;
    space.widths = {4, 8};
    TrainOptions o;
    o.epoch_cap = 5;
    o.patience = 100;
    const auto r = hyperparameter_search(space, 1, tr.x, tr.y, va.x, va.y, o);
    ASSERT_EQ(r.trials.size(), 1u);
    EXPECT_EQ(r.best_index, 0u);
    EXPECT_EQ(r.trials[0].epochs_run, 5u);
    EXPECT_EQ(r.trials[0].last_rung, 3u);
    EXPECT_EQ(r.best_report.stopping_epoch, 5u);
}

TEST(Search, SameSeedSameConfigsAndWinner) {
    const Toy tr = separable(48, 1);
    const Toy va = separable(24, 2);
    SearchSpace space;
    space.family = Family::rnn;
    space.input_dim = 1;
    space.steps = 2;
    space.widths = {4, 8};
    space.rnn_layers = {1, 2};
    TrainOptions o;
    o.epoch_cap = 4;
    o.seed = 11;
    const auto a = hyperparameter_search(space, 6, tr.x, tr.y, va.x, va.y, o, 1);
    const auto b = hyperparameter_search(space, 6, tr.x, tr.y, va.x, va.y, o, 3);
    EXPECT_EQ(a.best_index, b.best_index);
    for (size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(a.trials[i].config, b.trials[i].config);
        EXPECT_EQ(a.trials[i].epochs_run, b.trials[i].epochs_run);
    }
    EXPECT_TRUE(a.best_network.parameters() == b.best_network.parameters());
    // Successive halving: 6 -> 2 -> 1.
    size_t third = 0, second = 0;
    for (const auto &t : a.trials) {
        third += t.last_rung == 3;
        second += t.last_rung >= 2;
    }
    EXPECT_EQ(second, 2u);
    EXPECT_EQ(third, 1u);
    EXPECT_EQ(a.trials[a.best_index].last_rung, 3u);
}

TEST(Search, SingletonSpaceReturnsThatConfig) {
    const Toy tr = separable(32, 1);
    const Toy va = separable(16, 2);
    SearchSpace space;
    space.family = Family::mlp;
    space.input_dim = 2;
    space.activations = {Activation::tanh};
    space.mlp_layers = {3};
    space.widths = {5};
    space.weight_decays = {1e-4};
    space.dropouts = {0.2};
    TrainOptions o;
    o.epoch_cap = 2;
    const auto r = hyperparameter_search(space, 4, tr.x, tr.y, va.x, va.y, o);
    EXPECT_EQ(r.best_network.config(), make_mlp(2, {5, 5}, Activation::tanh, 0.2, 1e-4));
}

TEST(Search, ZeroBudgetRejected) {
    SearchSpace space;
    space.input_dim = 1;
    EXPECT_THROW(hyperparameter_search(space, 0, Mat::Zero(2, 1), std::vector<int>{0, 1}, Mat::Zero(2, 1),
                                       std::vector<int>{0, 1}, TrainOptions{}),
                 ValidationError);
}

}  // namespace
}  // namespace qnc::neural
