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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

#include "qnc/error.hpp"

namespace qnc::dynamics {

GraphTopology::GraphTopology(size_t nodes, std::vector<std::pair<size_t, size_t>> edges)
    : nodes_(nodes), edges_(std::move(edges)) {
    if (nodes_ < 1) throw ValidationError("graph must have at least one node");
    for (auto &[s, l] : edges_) {
        if (s == l) throw ValidationError("self-loop on node " + std::to_string(s));
        if (s < 1 || l < 1 || s > nodes_ || l > nodes_) {
            throw ValidationError("edge (" + std::to_string(s) + ", " + std::to_string(l) +
                                  ") is outside [1, " + std::to_string(nodes_) + "]");
        }
        if (s > l) std::swap(s, l);
    }
    std::sort(edges_.begin(), edges_.end());
    if (std::adjacent_find(edges_.begin(), edges_.end()) != edges_.end()) {
        throw ValidationError("duplicate edge in topology");
    }
}

GraphTopology GraphTopology::relabeled(const std::vector<size_t> &perm) const {
    if (perm.size() != nodes_) throw ValidationError("permutation size does not match node count");
    std::vector<std::pair<size_t, size_t>> out;
    out.reserve(edges_.size());
    for (auto [s, l] : edges_) out.emplace_back(perm[s - 1], perm[l - 1]);
    return GraphTopology(nodes_, std::move(out));
}

GraphTopology random_topology(size_t d, double edge_prob, RandomStream &rng) {
    if (d < 2) throw ValidationError("random topology needs at least 2 nodes");
    if (!(edge_prob > 0.0 && edge_prob <= 1.0)) throw ValidationError("edge probability must lie in (0, 1]");
    std::vector<std::pair<size_t, size_t>> edges;
    for (size_t s = 1; s <= d; ++s) {
        for (size_t l = s + 1; l <= d; ++l) {
            if (rng.uniform() < edge_prob) edges.emplace_back(s, l);
        }
    }
    return GraphTopology(d, std::move(edges));
}

Eigen::MatrixXd adjacency(const GraphTopology &topology, double g) {
    if (!std::isfinite(g)) throw ValidationError("coupling must be finite");
    const auto d = static_cast<Eigen::Index>(topology.nodes());
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d, d);
    for (auto [s, l] : topology.edges()) {
        a(static_cast<Eigen::Index>(s - 1), static_cast<Eigen::Index>(l - 1)) = g;
        a(static_cast<Eigen::Index>(l - 1), static_cast<Eigen::Index>(s - 1)) = g;
    }
    return a;
}

namespace {

void require_symmetric(const Eigen::MatrixXd &a) {
    if (a.rows() != a.cols()) throw ValidationError("matrix must be square");
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = i + 1; j < a.cols(); ++j) {
            if (a(i, j) != a(j, i)) throw ValidationError("matrix must be symmetric");
        }
    }
}

double off_diagonal_norm(const Eigen::MatrixXd &a) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            if (i != j) s += a(i, j) * a(i, j);
        }
    }
    return std::sqrt(s);
}

}  // namespace

Eigen::MatrixXcd liouvillian(const Eigen::MatrixXd &a) {
    require_symmetric(a);
    const Eigen::Index d = a.rows();
    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(d, d);
    Eigen::MatrixXd generator = Eigen::kroneckerProduct(id, a).eval() - Eigen::kroneckerProduct(a.transpose(), id).eval();
    return std::complex<double>(0.0, -1.0) * generator.cast<std::complex<double>>();
}

SymmetricEigen jacobi_eigen(const Eigen::MatrixXd &input) {
    constexpr int kMaxSweeps = 100;
    require_symmetric(input);
    const Eigen::Index n = input.rows();
    Eigen::MatrixXd a = input;
    Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
    const double threshold = 1e-12 * input.norm();

    int sweep = 0;
    for (;; ++sweep) {
        double off = off_diagonal_norm(a);
        if (off <= threshold) break;
        if (sweep == kMaxSweeps) {
            std::ostringstream msg;
            msg << "Jacobi eigendecomposition did not converge in " << kMaxSweeps << " sweeps (n=" << n
                << ", ||A||_F=" << input.norm() << ", off-diagonal norm=" << off << ")";
            throw NumericalError(msg.str());
        }
        for (Eigen::Index p = 0; p < n - 1; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double tau = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<Eigen::Index> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) { return a(x, x) < a(y, y); });
    SymmetricEigen out;
    out.values.resize(n);
    out.vectors.resize(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        out.values(k) = a(order[static_cast<size_t>(k)], order[static_cast<size_t>(k)]);
        out.vectors.col(k) = v.col(order[static_cast<size_t>(k)]);
    }
    out.sweeps = sweep;
    return out;
}

QuantumState step_unitary(const QuantumState &state, const Eigen::MatrixXd &a, double delta) {
    if (!(delta > 0.0)) throw ValidationError("time step must be positive");
    if (state.size() != a.rows()) throw ValidationError("state dimension does not match Hamiltonian");
    const SymmetricEigen eig = jacobi_eigen(a);
    const Eigen::MatrixXcd vectors = eig.vectors.cast<std::complex<double>>();
    Eigen::VectorXcd coeff = vectors.transpose() * state;
    for (Eigen::Index k = 0; k < coeff.size(); ++k) coeff(k) *= std::polar(1.0, -delta * eig.values(k));
    return vectors * coeff;
}

namespace {

void check_evolve_args(const GraphTopology &topology, const noise::CouplingSequence &couplings,
                       size_t initial_node, double delta) {
    if (initial_node < 1 || initial_node > topology.nodes()) {
        throw ValidationError("initial node " + std::to_string(initial_node) + " outside [1, " +
                              std::to_string(topology.nodes()) + "]");
    }
    if (couplings.empty()) throw ValidationError("coupling sequence must not be empty");
    if (!(delta > 0.0)) throw ValidationError("time step must be positive");
    for (double g : couplings) {
        if (!std::isfinite(g)) throw ValidationError("coupling must be finite");
    }
}

}  // namespace

PopulationSequence evolve(const GraphTopology &topology, const noise::CouplingSequence &couplings,
                          size_t initial_node, double delta) {
    check_evolve_args(topology, couplings, initial_node, delta);
    const auto d = static_cast<Eigen::Index>(topology.nodes());
    const auto steps = static_cast<Eigen::Index>(couplings.size());
    const SymmetricEigen eig = jacobi_eigen(adjacency(topology, 1.0));

    PopulationSequence out;
    out.delta = delta;
    out.populations.setZero(steps + 1, d);
    const Eigen::Index start = static_cast<Eigen::Index>(initial_node) - 1;
    out.populations(0, start) = 1.0;

    // Amplitudes of the initial delta in the eigenbasis.
    const Eigen::VectorXd c = eig.vectors.row(start).transpose();
    Eigen::VectorXd re_coeff(d);
    Eigen::VectorXd im_coeff(d);
    Eigen::VectorXd re(d);
    Eigen::VectorXd im(d);
    double theta = 0.0;
    for (Eigen::Index k = 0; k < steps; ++k) {
        theta += delta * couplings[static_cast<size_t>(k)];
        if (theta == 0.0) {
            out.populations.row(k + 1) = out.populations.row(0);
            continue;
        }
        for (Eigen::Index j = 0; j < d; ++j) {
            const double phase = theta * eig.values(j);
            re_coeff(j) = c(j) * std::cos(phase);
            im_coeff(j) = -c(j) * std::sin(phase);
        }
        re.noalias() = eig.vectors * re_coeff;
        im.noalias() = eig.vectors * im_coeff;
        out.populations.row(k + 1) = (re.array().square() + im.array().square()).matrix().transpose();
    }
    return out;
}

PopulationSequence evolve_vectorized(const GraphTopology &topology, const noise::CouplingSequence &couplings,
                                     size_t initial_node, double delta) {
    check_evolve_args(topology, couplings, initial_node, delta);
    const auto d = static_cast<Eigen::Index>(topology.nodes());
    const auto steps = static_cast<Eigen::Index>(couplings.size());
    const Eigen::Index start = static_cast<Eigen::Index>(initial_node) - 1;

    PopulationSequence out;
    out.delta = delta;
    out.populations.setZero(steps + 1, d);
    out.populations(0, start) = 1.0;

    // vec(rho) stacks columns: rho(s, l) lives at index s + l d.
    Eigen::VectorXcd lambda = Eigen::VectorXcd::Zero(d * d);
    lambda(start + start * d) = 1.0;
    for (Eigen::Index k = 0; k < steps; ++k) {
        const Eigen::MatrixXcd generator = liouvillian(adjacency(topology, couplings[static_cast<size_t>(k)])) * delta;
        const Eigen::MatrixXcd propagator = generator.exp();
        lambda = propagator * lambda;
        for (Eigen::Index s = 0; s < d; ++s) out.populations(k + 1, s) = lambda(s + s * d).real();
    }
    return out;
}

}  // namespace qnc::dynamics
