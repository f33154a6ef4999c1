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

#include "qnc/noise.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "qnc/error.hpp"

namespace qnc::noise {

namespace {

constexpr double kSumTolerance = 1e-12;

void check_support(const std::vector<double> &support, size_t n_probs) {
    if (support.empty()) throw ValidationError("distribution support is empty");
    if (support.size() != n_probs) {
        throw ValidationError("support has " + std::to_string(support.size()) + " values but " +
                              std::to_string(n_probs) + " probabilities were given");
    }
    for (size_t i = 0; i < support.size(); ++i) {
        if (!std::isfinite(support[i])) throw ValidationError("support value is not finite");
        if (i > 0 && !(support[i] > support[i - 1])) {
            throw ValidationError("support must be strictly increasing");
        }
    }
}

// Index of the first cdf entry exceeding u; the tail guard lands on the last
// index with positive mass so rounding never selects a zero-probability value.
size_t invert_cdf(const double *cdf, const double *probs, size_t n, double u) {
    size_t j = static_cast<size_t>(std::upper_bound(cdf, cdf + n, u) - cdf);
    if (j >= n) {
        j = n - 1;
        while (j > 0 && probs[j] <= 0.0) --j;
    }
    return j;
}

}  // namespace

DiscreteDistribution::DiscreteDistribution(std::vector<double> support, std::vector<double> probs)
    : support_(std::move(support)), weights_(probs), probs_(std::move(probs)) {
    check_support(support_, probs_.size());
    double total = 0.0;
    for (double p : probs_) {
        if (!(p >= 0.0) || !std::isfinite(p)) throw ValidationError("probabilities must be finite and >= 0");
        total += p;
    }
    if (std::abs(total - 1.0) > kSumTolerance) {
        throw ValidationError("probabilities sum to " + std::to_string(total) + ", not 1");
    }
    finish();
}

DiscreteDistribution DiscreteDistribution::from_weights(std::vector<double> support,
                                                        std::vector<double> weights) {
    check_support(support, weights.size());
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("weights must be finite and >= 0");
        total += w;
    }
    if (!(total > 0.0)) throw ValidationError("weights must have a positive sum");
    DiscreteDistribution out;
    out.support_ = std::move(support);
    out.weights_ = std::move(weights);
    out.probs_.reserve(out.weights_.size());
    for (double w : out.weights_) out.probs_.push_back(w / total);
    out.finish();
    return out;
}

void DiscreteDistribution::finish() {
    cdf_.resize(probs_.size());
    std::partial_sum(probs_.begin(), probs_.end(), cdf_.begin());
}

double DiscreteDistribution::mean() const {
    return std::inner_product(support_.begin(), support_.end(), probs_.begin(), 0.0);
}

size_t DiscreteDistribution::draw_index(RandomStream &rng) const {
    return invert_cdf(cdf_.data(), probs_.data(), cdf_.size(), rng.uniform());
}

TransitionMatrix::TransitionMatrix(Eigen::MatrixXd entries) : entries_(std::move(entries)) {
    if (entries_.rows() == 0 || entries_.rows() != entries_.cols()) {
        throw ValidationError("transition matrix must be square and nonempty");
    }
    for (Eigen::Index j = 0; j < entries_.cols(); ++j) {
        double total = 0.0;
        for (Eigen::Index i = 0; i < entries_.rows(); ++i) {
            double p = entries_(i, j);
            if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("transition entries must lie in [0, 1]");
            total += p;
        }
        if (std::abs(total - 1.0) > kSumTolerance) {
            throw ValidationError("transition column " + std::to_string(j) + " sums to " +
                                  std::to_string(total));
        }
    }
    column_cdf_ = entries_;
    for (Eigen::Index j = 0; j < entries_.cols(); ++j) {
        for (Eigen::Index i = 1; i < entries_.rows(); ++i) column_cdf_(i, j) += column_cdf_(i - 1, j);
    }
}

size_t TransitionMatrix::draw_next(size_t prev, RandomStream &rng) const {
    const auto n = static_cast<size_t>(entries_.rows());
    return invert_cdf(column_cdf_.col(static_cast<Eigen::Index>(prev)).data(),
                      entries_.col(static_cast<Eigen::Index>(prev)).data(), n, rng.uniform());
}

NoiseProcess::NoiseProcess(DiscreteDistribution dist) : dist_(std::move(dist)) {}

NoiseProcess::NoiseProcess(DiscreteDistribution dist, TransitionMatrix transition,
                           std::optional<double> stickiness)
    : dist_(std::move(dist)), transition_(std::move(transition)), stickiness_(stickiness) {
    if (transition_->size() != dist_.size()) {
        throw ValidationError("transition matrix dimension " + std::to_string(transition_->size()) +
                              " does not match support size " + std::to_string(dist_.size()));
    }
}

CouplingSequence sample_iid(const DiscreteDistribution &dist, size_t m, RandomStream &rng) {
    if (m == 0) throw ValidationError("sequence length must be at least 1");
    CouplingSequence out(m);
    for (auto &g : out) g = dist.support()[dist.draw_index(rng)];
    return out;
}

CouplingSequence sample_markov(const NoiseProcess &process, size_t m, RandomStream &rng) {
    if (process.kind() != NoiseKind::markov) {
        throw ValidationError("sample_markov called with an i.i.d. process");
    }
    if (m == 0) throw ValidationError("sequence length must be at least 1");
    const auto &support = process.dist().support();
    const auto &t = *process.transition();
    CouplingSequence out(m);
    size_t j = process.dist().draw_index(rng);
    out[0] = support[j];
    for (size_t k = 1; k < m; ++k) {
        j = t.draw_next(j, rng);
        out[k] = support[j];
    }
    return out;
}

CouplingSequence sample(const NoiseProcess &process, size_t m, RandomStream &rng) {
    return process.kind() == NoiseKind::iid ? sample_iid(process.dist(), m, rng)
                                            : sample_markov(process, m, rng);
}

std::vector<double> stationary_distribution(const TransitionMatrix &t) {
    // Iterate P <- T P from the identity: every column converges to the
    // stationary law exactly when the chain is irreducible and aperiodic.
    constexpr int kMaxIterations = 100000;
    constexpr double kSpread = 1e-13;
    const Eigen::MatrixXd &m = t.entries();
    const Eigen::Index n = m.rows();
    Eigen::MatrixXd p = Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd next(n, n);
    for (int it = 0; it < kMaxIterations; ++it) {
        next.noalias() = m * p;
        p.swap(next);
        double spread = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) spread = std::max(spread, p.row(i).maxCoeff() - p.row(i).minCoeff());
        if (spread <= kSpread) {
            Eigen::VectorXd pi = p.rowwise().mean();
            pi /= pi.sum();
            for (int polish = 0; polish < 8; ++polish) {
                Eigen::VectorXd q = m * pi;
                pi = q / q.sum();
            }
            return {pi.data(), pi.data() + n};
        }
    }
    throw NumericalError("transition matrix is not ergodic: power iteration did not converge in " +
                         std::to_string(kMaxIterations) + " iterations");
}

TransitionMatrix metropolis_chain(const DiscreteDistribution &target, double stickiness) {
    if (!(stickiness >= 0.0 && stickiness < 1.0)) throw ValidationError("stickiness must lie in [0, 1)");
    const auto &pi = target.probs();
    const auto n = static_cast<Eigen::Index>(pi.size());
    const double propose = (1.0 - stickiness) / static_cast<double>(n);
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index from = 0; from < n; ++from) {
        double leave = 0.0;
        for (Eigen::Index to = 0; to < n; ++to) {
            if (to == from) continue;
            double accept = pi[from] > 0.0 ? std::min(1.0, pi[to] / pi[from]) : 1.0;
            t(to, from) = propose * accept;
            leave += t(to, from);
        }
        t(from, from) = 1.0 - leave;
    }
    return TransitionMatrix(std::move(t));
}

TransitionMatrix dirichlet_transition(size_t d, RandomStream &rng) {
    if (d == 0) throw ValidationError("transition dimension must be positive");
    const auto n = static_cast<Eigen::Index>(d);
    Eigen::MatrixXd t(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        double total = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            t(i, j) = rng.exponential();
            total += t(i, j);
        }
        t.col(j) /= total;
    }
    return TransitionMatrix(std::move(t));
}

DiscreteDistribution skewed_law() {
    return DiscreteDistribution::from_weights({1, 2, 3, 4, 5}, {0.0124, 0.04236, 0.0820, 0.2398, 0.6234});
}

DiscreteDistribution flat_law() {
    return DiscreteDistribution::from_weights({1, 2, 3, 4, 5}, {0.1782, 0.1865, 0.2, 0.2107, 0.2245});
}

double lag1_autocorrelation(std::span<const double> values) {
    const size_t n = values.size();
    if (n < 2) return 0.0;
    double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
    double num = 0.0;
    double den = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double c = values[i] - mean;
        den += c * c;
        if (i + 1 < n) num += c * (values[i + 1] - mean);
    }
    return den > 0.0 ? num / den : 0.0;
}

}  // namespace qnc::noise
