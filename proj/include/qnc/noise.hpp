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

#ifndef QNC_NOISE_HPP
#define QNC_NOISE_HPP

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "qnc/rng.hpp"

namespace qnc::noise {

/// Finite-support law Prob(g) = sum_j p_j delta(g - g_j).
class DiscreteDistribution {
   public:
    /// Throws ValidationError unless support is finite and strictly
    /// increasing, probs are nonnegative and sum to 1 within 1e-12.
    DiscreteDistribution(std::vector<double> support, std::vector<double> probs);

    /// Accepts any nonnegative weights with a positive sum. The weights are
    /// kept verbatim (published tables do not sum to exactly 1) and
    /// normalized into probs().
    static DiscreteDistribution from_weights(std::vector<double> support, std::vector<double> weights);

    const std::vector<double> &support() const noexcept { return support_; }
    const std::vector<double> &probs() const noexcept { return probs_; }
    const std::vector<double> &weights() const noexcept { return weights_; }
    size_t size() const noexcept { return support_.size(); }
    double mean() const;

    /// Index drawn by inverse CDF from exactly one uniform variate.
    size_t draw_index(RandomStream &rng) const;

    bool operator==(const DiscreteDistribution &) const = default;

   private:
    DiscreteDistribution() = default;
    void finish();

    std::vector<double> support_;
    std::vector<double> weights_;
    std::vector<double> probs_;
    std::vector<double> cdf_;
};

/// Left-stochastic one-step transition matrix:
/// at(next, prev) = p(g_k = g_next | g_{k-1} = g_prev). Columns sum to 1.
class TransitionMatrix {
   public:
    explicit TransitionMatrix(Eigen::MatrixXd entries);

    const Eigen::MatrixXd &entries() const noexcept { return entries_; }
    double at(size_t next, size_t prev) const { return entries_(next, prev); }
    size_t size() const noexcept { return static_cast<size_t>(entries_.rows()); }

    /// Next index given the previous one; consumes one uniform.
    size_t draw_next(size_t prev, RandomStream &rng) const;

    bool operator==(const TransitionMatrix &other) const { return entries_ == other.entries_; }

   private:
    Eigen::MatrixXd entries_;
    Eigen::MatrixXd column_cdf_;
};

enum class NoiseKind { iid, markov };

/// A coupling-noise source: i.i.d. when no transition matrix is attached,
/// an order-1 Markov chain otherwise. `stickiness` is set only for chains
/// built by metropolis_chain and is carried as metadata.
class NoiseProcess {
   public:
    explicit NoiseProcess(DiscreteDistribution dist);
    NoiseProcess(DiscreteDistribution dist, TransitionMatrix transition,
                 std::optional<double> stickiness = std::nullopt);

    NoiseKind kind() const noexcept { return transition_ ? NoiseKind::markov : NoiseKind::iid; }
    const DiscreteDistribution &dist() const noexcept { return dist_; }
    const std::optional<TransitionMatrix> &transition() const noexcept { return transition_; }
    const std::optional<double> &stickiness() const noexcept { return stickiness_; }

    bool operator==(const NoiseProcess &) const = default;

   private:
    DiscreteDistribution dist_;
    std::optional<TransitionMatrix> transition_;
    std::optional<double> stickiness_;
};

/// Values g_{t_0} ... g_{t_{M-1}}, each copied from the support.
using CouplingSequence = std::vector<double>;

CouplingSequence sample_iid(const DiscreteDistribution &dist, size_t m, RandomStream &rng);

/// First value from process.dist(), then each value from the transition
/// column of its predecessor. No burn-in.
CouplingSequence sample_markov(const NoiseProcess &process, size_t m, RandomStream &rng);

/// Dispatches on process.kind().
CouplingSequence sample(const NoiseProcess &process, size_t m, RandomStream &rng);

/// Stationary law of an irreducible aperiodic chain by power iteration.
/// Throws NumericalError when the iteration does not settle within 1e5 steps.
std::vector<double> stationary_distribution(const TransitionMatrix &t);

/// Metropolis chain with uniform proposals whose stationary law is `target`.
/// With probability `stickiness` the chain stays put before proposing.
TransitionMatrix metropolis_chain(const DiscreteDistribution &target, double stickiness);

/// Each column drawn from Dirichlet(1, ..., 1).
TransitionMatrix dirichlet_transition(size_t d, RandomStream &rng);

/// Published coupling laws over the support {1, 2, 3, 4, 5}.
DiscreteDistribution skewed_law();
DiscreteDistribution flat_law();

/// Lag-1 sample autocorrelation of a sequence.
double lag1_autocorrelation(std::span<const double> values);

}  // namespace qnc::noise

#endif
