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

#ifndef QNC_SVM_HPP
#define QNC_SVM_HPP

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace qnc::svm {

enum class KernelKind { linear, polynomial, rbf };

struct KernelSpec {
    KernelKind kind = KernelKind::linear;
    int degree = 2;       // polynomial
    double scale = 1.0;   // polynomial
    double offset = 1.0;  // polynomial
    double gamma = 1.0;   // rbf

    static KernelSpec linear() { return {}; }
    static KernelSpec polynomial(int degree, double scale, double offset);
    static KernelSpec rbf(double gamma);

    /// Throws ValidationError unless degree is 2, 3 or 4 and gamma > 0.
    void validate() const;
    std::string describe() const;

    bool operator==(const KernelSpec &) const = default;
};

double kernel_eval(const KernelSpec &spec, std::span<const double> x, std::span<const double> y);

struct SvmModel {
    KernelSpec kernel;
    double c = 1.0;
    double bias = 0.0;
    /// alpha_i y_i per support vector.
    std::vector<double> duals;
    /// One row per support vector.
    Eigen::MatrixXd support_vectors;

    size_t dimension() const noexcept { return static_cast<size_t>(support_vectors.cols()); }
    size_t n_support() const noexcept { return duals.size(); }
};

struct SmoOptions {
    double tol = 1e-3;
    /// Total pair updates allowed; 0 selects max(1e5, 50 n).
    size_t max_iterations = 0;
    /// Kernel-row cache budget in bytes.
    size_t cache_bytes = size_t{256} << 20;
    /// Record the dual objective after every pair update.
    bool trace_objective = false;
};

struct SmoResult {
    SvmModel model;
    /// Full dual vector alpha (unsigned), aligned with the training rows.
    std::vector<double> alpha;
    size_t iterations = 0;
    /// max_i(-y_i grad_i) over I_up minus min over I_low at exit.
    double kkt_gap = 0.0;
    double objective = 0.0;
    std::vector<double> objective_trace;
};

/// Soft-margin dual by SMO with maximal-violating-pair selection.
/// labels are +-1. Throws NumericalError carrying the final KKT gap when the
/// iteration cap is reached.
SmoResult train_svm(const Eigen::MatrixXd &features, std::span<const int> labels, const KernelSpec &kernel,
                    double c, const SmoOptions &options = {});

struct Prediction {
    int label = 0;  // 0 or 1
    double decision = 0.0;
};

Prediction predict_svm(const SvmModel &model, std::span<const double> x);
std::vector<Prediction> predict_svm(const SvmModel &model, const Eigen::MatrixXd &rows);

/// Dual objective W(alpha) = sum alpha - 1/2 sum_ij alpha_i alpha_j y_i y_j K_ij.
double dual_objective(const Eigen::MatrixXd &features, std::span<const int> labels, const KernelSpec &kernel,
                      std::span<const double> alpha);

/// Candidate kernels for a feature dimension p: linear, polynomial of degree
/// 2..4 with scale 1/p and offset 1, and RBF with gamma in `gamma_factors`/p.
std::vector<KernelSpec> kernel_grid(size_t p, std::span<const double> gamma_factors);
std::vector<double> default_c_grid();
std::vector<double> default_gamma_factors();

struct GridTrial {
    KernelSpec kernel;
    double c = 0.0;
    double validation_accuracy = 0.0;  // percent
    size_t n_support = 0;
    size_t iterations = 0;
    bool converged = true;
};

struct GridResult {
    SvmModel best;
    GridTrial best_trial;
    std::vector<GridTrial> trials;
};

/// Trains every (kernel, C) pair on the training rows and keeps the best
/// validation accuracy; ties go to the earlier grid entry. Trials that hit
/// the iteration cap are recorded and skipped. `threads` workers train
/// trials concurrently (0 = default).
GridResult grid_search(const Eigen::MatrixXd &train_x, std::span<const int> train_y, const Eigen::MatrixXd &val_x,
                       std::span<const int> val_y, std::span<const KernelSpec> kernels, std::span<const double> cs,
                       const SmoOptions &options = {}, unsigned threads = 0);

/// Labels {0,1} -> {-1,+1}.
std::vector<int> signed_labels(std::span<const int> labels01);

}  // namespace qnc::svm

#endif
