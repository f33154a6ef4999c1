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

#ifndef QNC_DYNAMICS_HPP
#define QNC_DYNAMICS_HPP

#include <complex>
#include <cstddef>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qnc/noise.hpp"
#include "qnc/rng.hpp"

namespace qnc::dynamics {

/// Undirected simple graph on nodes 1..d. Edges are stored as (s, l) with
/// s < l, sorted lexicographically.
class GraphTopology {
   public:
    GraphTopology(size_t nodes, std::vector<std::pair<size_t, size_t>> edges);

    size_t nodes() const noexcept { return nodes_; }
    const std::vector<std::pair<size_t, size_t>> &edges() const noexcept { return edges_; }

    /// Same graph with node v relabeled to perm[v - 1] (1-based values).
    GraphTopology relabeled(const std::vector<size_t> &perm) const;

    bool operator==(const GraphTopology &) const = default;

   private:
    size_t nodes_;
    std::vector<std::pair<size_t, size_t>> edges_;
};

/// Erdos-Renyi G(d, p): each of the d(d-1)/2 pairs is included independently,
/// visiting pairs in lexicographic order with one uniform each.
GraphTopology random_topology(size_t d, double edge_prob, RandomStream &rng);

/// Hamiltonian with coupling g on every edge and zero node energies.
Eigen::MatrixXd adjacency(const GraphTopology &topology, double g);

/// Generator of the vectorized von Neumann equation (hbar = 1),
/// L = -i (I (x) A - A^T (x) I), acting on column-stacked density matrices.
Eigen::MatrixXcd liouvillian(const Eigen::MatrixXd &a);

struct SymmetricEigen {
    Eigen::VectorXd values;
    Eigen::MatrixXd vectors;  // columns are orthonormal eigenvectors
    int sweeps = 0;
};

/// Cyclic Jacobi eigendecomposition of a real symmetric matrix. Stops once
/// the off-diagonal Frobenius norm falls below 1e-12 * ||A||_F; throws
/// NumericalError after 100 sweeps.
SymmetricEigen jacobi_eigen(const Eigen::MatrixXd &a);

using QuantumState = Eigen::VectorXcd;

/// exp(-i delta A) state, through the eigendecomposition of A.
QuantumState step_unitary(const QuantumState &state, const Eigen::MatrixXd &a, double delta);

/// Occupation probabilities at t_0 .. t_M. Row k holds P_{t_k}.
struct PopulationSequence {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> populations;
    double delta = 0.0;

    size_t steps() const noexcept { return static_cast<size_t>(populations.rows()) - 1; }
    size_t nodes() const noexcept { return static_cast<size_t>(populations.cols()); }
    double time(size_t k) const noexcept { return static_cast<double>(k) * delta; }
};

/// Pure-state propagation from a node delta. initial_node is 1-based.
///
/// Every A_k = g_k A_1 shares the eigenvectors of the unit-coupling
/// adjacency, so A_1 is diagonalized once and each step multiplies the
/// eigenbasis amplitudes by exp(-i delta g_k lambda).
PopulationSequence evolve(const GraphTopology &topology, const noise::CouplingSequence &couplings,
                          size_t initial_node, double delta);

/// Density-matrix propagation lambda <- exp(L_k delta) lambda on the d^2
/// vector, reading the diagonal of rho after each step. O(d^6) per step;
/// meant as an independent cross-check of evolve().
PopulationSequence evolve_vectorized(const GraphTopology &topology, const noise::CouplingSequence &couplings,
                                     size_t initial_node, double delta);

}  // namespace qnc::dynamics

#endif
