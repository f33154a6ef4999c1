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

#include "qnc/dynamics.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include <gtest/gtest.h>

#include "qnc/error.hpp"

using namespace qnc;
using namespace qnc::dynamics;

namespace {

const std::complex<double> kI(0.0, 1.0);

GraphTopology two_node() { return GraphTopology(2, {{1, 2}}); }

void expect_valid_rows(const PopulationSequence &seq) {
    for (Eigen::Index k = 0; k < seq.populations.rows(); ++k) {
        EXPECT_NEAR(seq.populations.row(k).sum(), 1.0, 1e-9);
        EXPECT_GE(seq.populations.row(k).minCoeff(), -1e-12);
    }
}

}  // namespace

TEST(Topology, RejectsMalformedEdges) {
    EXPECT_THROW(GraphTopology(3, {{1, 1}}), ValidationError);
    EXPECT_THROW(GraphTopology(3, {{1, 2}, {2, 1}}), ValidationError);
    EXPECT_THROW(GraphTopology(3, {{0, 2}}), ValidationError);
    EXPECT_THROW(GraphTopology(3, {{1, 4}}), ValidationError);
}

TEST(Topology, CompleteGraphAtUnitProbability) {
    RandomStream rng(1);
    EXPECT_EQ(random_topology(4, 1.0, rng).edges().size(), 6u);
}

TEST(Topology, MeanEdgeCount) {
    RandomStream rng(77);
    const size_t draws = 10000;
    double total = 0.0;
    for (size_t i = 0; i < draws; ++i) total += static_cast<double>(random_topology(40, 0.1, rng).edges().size());
    // Sum of draws * 780 Bernoulli(0.1).
    const double n = 780.0 * draws;
    EXPECT_LE(std::abs(total - 0.1 * n), 3.0 * std::sqrt(n * 0.1 * 0.9));
}

TEST(Topology, Deterministic) {
    RandomStream a(5);
    RandomStream b(5);
    EXPECT_EQ(random_topology(40, 0.3, a), random_topology(40, 0.3, b));
}

TEST(Adjacency, Examples) {
    Eigen::MatrixXd expected(2, 2);
    expected << 0, 3, 3, 0;
    EXPECT_EQ(adjacency(two_node(), 3.0), expected);
    EXPECT_TRUE(adjacency(GraphTopology(4, {}), 2.0).isZero(0.0));
    EXPECT_TRUE(adjacency(GraphTopology(3, {{1, 2}, {2, 3}}), 0.0).isZero(0.0));
    EXPECT_THROW(adjacency(two_node(), INFINITY), ValidationError);
}

TEST(Liouvillian, ZeroHamiltonian) { EXPECT_TRUE(liouvillian(Eigen::MatrixXd::Zero(3, 3)).isZero(0.0)); }

TEST(Liouvillian, TwoNodeByHand) {
    // -i (I (x) X - X (x) I), X the Pauli flip; written out entry by entry.
    Eigen::MatrixXd ix(4, 4);
    ix << 0, 1, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 1, 0;
    Eigen::MatrixXd xi(4, 4);
    xi << 0, 0, 1, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0, 1, 0, 0;
    const Eigen::MatrixXcd expected = -kI * (ix - xi).cast<std::complex<double>>();
    EXPECT_TRUE(liouvillian(adjacency(two_node(), 1.0)).isApprox(expected, 0.0));
    EXPECT_EQ(liouvillian(adjacency(two_node(), 1.0)), expected);
}

TEST(Liouvillian, SkewHermitian) {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        RandomStream rng(seed);
        const auto a = adjacency(random_topology(6, 0.5, rng), rng.uniform(0.5, 5.0));
        const Eigen::MatrixXcd l = liouvillian(a);
        EXPECT_LT((l + l.adjoint()).cwiseAbs().maxCoeff(), 1e-14);
    }
}

TEST(Liouvillian, RejectsAsymmetric) {
    Eigen::MatrixXd a(2, 2);
    a << 0, 1, 2, 0;
    EXPECT_THROW(liouvillian(a), ValidationError);
}

TEST(Jacobi, ReconstructsMatrix) {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        RandomStream rng(seed);
        const auto a = adjacency(random_topology(40, 0.5, rng), 1.0);
        const auto eig = jacobi_eigen(a);
        const Eigen::MatrixXd rebuilt = eig.vectors * eig.values.asDiagonal() * eig.vectors.transpose();
        EXPECT_LT((rebuilt - a).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_LT((eig.vectors.transpose() * eig.vectors - Eigen::MatrixXd::Identity(40, 40)).cwiseAbs().maxCoeff(),
                  1e-12);
        // Independent oracle: Eigen's own symmetric solver.
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(a);
        EXPECT_LT((ref.eigenvalues() - eig.values).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(StepUnitary, ZeroHamiltonianKeepsState) {
    QuantumState psi(3);
    psi << std::complex<double>(0.6, 0), std::complex<double>(0, 0.8), 0;
    EXPECT_LT((step_unitary(psi, Eigen::MatrixXd::Zero(3, 3), 0.7) - psi).norm(), 1e-15);
}

TEST(StepUnitary, RabiHalfPeriod) {
    QuantumState psi(2);
    psi << 1, 0;
    const auto out = step_unitary(psi, adjacency(two_node(), 1.0), std::numbers::pi / 2);
    EXPECT_NEAR(std::norm(out(0)), 0.0, 1e-9);
    EXPECT_NEAR(std::norm(out(1)), 1.0, 1e-9);
}

TEST(StepUnitary, SemigroupAndNorm) {
    RandomStream rng(3);
    const auto a = adjacency(random_topology(12, 0.4, rng), 2.0);
    QuantumState psi = QuantumState::Zero(12);
    psi(4) = 1.0;
    const auto twice = step_unitary(step_unitary(psi, a, 0.3), a, 0.3);
    const auto once = step_unitary(psi, a, 0.6);
    EXPECT_LT((twice - once).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(once.norm(), 1.0, 1e-10);
    EXPECT_THROW(step_unitary(psi, a, 0.0), ValidationError);
}

TEST(Evolve, ZeroCouplingsAreStatic) {
    RandomStream rng(9);
    const auto top = random_topology(10, 0.5, rng);
    const auto seq = evolve(top, {0, 0, 0, 0}, 3, 0.1);
    for (Eigen::Index k = 0; k <= 4; ++k) EXPECT_EQ(seq.populations.row(k), seq.populations.row(0));
    EXPECT_EQ(seq.populations(0, 2), 1.0);
}

TEST(Evolve, RabiClosedForm) {
    // P_1(t) = cos^2(g t), P_2(t) = sin^2(g t).
    for (double g = 1; g <= 5; ++g) {
        for (int i = 1; i <= 40; ++i) {
            const double t = 2.0 * std::numbers::pi * i / 40.0;
            for (const auto &seq : {evolve(two_node(), {g}, 1, t), evolve_vectorized(two_node(), {g}, 1, t)}) {
                EXPECT_NEAR(seq.populations(1, 0), std::pow(std::cos(g * t), 2), 1e-9);
                EXPECT_NEAR(seq.populations(1, 1), std::pow(std::sin(g * t), 2), 1e-9);
            }
        }
    }
}

TEST(Evolve, MultiStepRabiUsesCumulativePhase) {
    const auto seq = evolve(two_node(), {1, 3, 2}, 2, 0.1);
    double theta = 0.0;
    const double gs[] = {1, 3, 2};
    for (int k = 0; k < 3; ++k) {
        theta += 0.1 * gs[k];
        EXPECT_NEAR(seq.populations(k + 1, 1), std::pow(std::cos(theta), 2), 1e-12);
    }
}

TEST(Evolve, UnitarityAtPaperScale) {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        RandomStream rng(seed);
        const auto top = random_topology(40, 0.5, rng);
        noise::CouplingSequence g(15);
        for (auto &x : g) x = static_cast<double>(1 + rng.below(5));
        const auto seq = evolve(top, g, 1 + rng.below(40), 1.0 / 15.0);
        EXPECT_EQ(seq.populations.rows(), 16);
        expect_valid_rows(seq);
    }
}

TEST(Evolve, AgreesWithVectorizedPropagator) {
    RandomStream rng(2718);
    for (int instance = 0; instance < 100; ++instance) {
        const size_t d = 2 + rng.below(7);
        const auto top = random_topology(d, rng.uniform(0.2, 1.0), rng);
        noise::CouplingSequence g(1 + rng.below(6));
        for (auto &x : g) x = rng.uniform(0.0, 5.0);
        const size_t start = 1 + rng.below(d);
        const double delta = rng.uniform(0.01, 0.5);
        const auto fast = evolve(top, g, start, delta);
        const auto slow = evolve_vectorized(top, g, start, delta);
        expect_valid_rows(slow);
        EXPECT_LE((fast.populations - slow.populations).cwiseAbs().maxCoeff(), 1e-8) << "instance " << instance;
    }
}

TEST(Evolve, VectorizedZeroHamiltonian) {
    const auto seq = evolve_vectorized(GraphTopology(3, {}), {2, 2}, 2, 0.5);
    for (Eigen::Index k = 0; k <= 2; ++k) EXPECT_EQ(seq.populations.row(k), seq.populations.row(0));
}

TEST(Evolve, PermutationEquivariance) {
    RandomStream rng(31);
    const size_t d = 12;
    const auto top = random_topology(d, 0.4, rng);
    std::vector<size_t> perm(d);
    std::iota(perm.begin(), perm.end(), 1);
    for (size_t i = d; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    const noise::CouplingSequence g{1, 4, 2, 5, 3};
    const auto base = evolve(top, g, 3, 0.2);
    const auto moved = evolve(top.relabeled(perm), g, perm[2], 0.2);
    for (size_t v = 0; v < d; ++v) {
        for (Eigen::Index k = 0; k <= 5; ++k) {
            EXPECT_NEAR(moved.populations(k, static_cast<Eigen::Index>(perm[v] - 1)),
                        base.populations(k, static_cast<Eigen::Index>(v)), 1e-12);
        }
    }
}

TEST(Evolve, RejectsBadArguments) {
    EXPECT_THROW(evolve(two_node(), {1}, 0, 0.1), ValidationError);
    EXPECT_THROW(evolve(two_node(), {1}, 3, 0.1), ValidationError);
    EXPECT_THROW(evolve(two_node(), {}, 1, 0.1), ValidationError);
    EXPECT_THROW(evolve(two_node(), {1}, 1, -0.1), ValidationError);
}
