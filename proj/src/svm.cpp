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

#include "qnc/svm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <list>
#include <sstream>
#include <unordered_map>

#include "qnc/error.hpp"
#include "qnc/parallel.hpp"

namespace qnc::svm {

KernelSpec KernelSpec::polynomial(int degree, double scale, double offset) {
    KernelSpec k;
    k.kind = KernelKind::polynomial;
    k.degree = degree;
    k.scale = scale;
    k.offset = offset;
    return k;
}

KernelSpec KernelSpec::rbf(double gamma) {
    KernelSpec k;
    k.kind = KernelKind::rbf;
    k.gamma = gamma;
    return k;
}

void KernelSpec::validate() const {
    if (kind == KernelKind::polynomial) {
        if (degree < 2 || degree > 4) throw ValidationError("polynomial degree must be 2, 3 or 4");
        if (!std::isfinite(scale) || !std::isfinite(offset)) throw ValidationError("polynomial scale and offset must be finite");
    }
    if (kind == KernelKind::rbf && !(gamma > 0.0 && std::isfinite(gamma))) {
        throw ValidationError("rbf gamma must be positive");
    }
}

std::string KernelSpec::describe() const {
    std::ostringstream s;
    switch (kind) {
        case KernelKind::linear:
            s << "linear";
            break;
        case KernelKind::polynomial:
            s << "poly(degree=" << degree << ", scale=" << scale << ", offset=" << offset << ")";
            break;
        case KernelKind::rbf:
            s << "rbf(gamma=" << gamma << ")";
            break;
    }
    return s.str();
}

namespace {

// Kernel value from the inner product and the two squared norms.
inline double kernel_from_dot(const KernelSpec &k, double dot, double nx, double ny) {
    switch (k.kind) {
        case KernelKind::linear:
            return dot;
        case KernelKind::polynomial: {
            const double base = k.scale * dot + k.offset;
            double r = base * base;
            if (k.degree >= 3) r *= base;
            if (k.degree == 4) r *= base;
            return r;
        }
        case KernelKind::rbf:
            return std::exp(-k.gamma * std::max(0.0, nx + ny - 2.0 * dot));
    }
    return 0.0;
}

// Rows of the training kernel matrix: fully materialized when it fits the
// budget, otherwise computed on demand behind an LRU cache.
class KernelRows {
   public:
    KernelRows(const Eigen::MatrixXd &x, const KernelSpec &kernel, size_t budget_bytes)
        : x_(x), kernel_(kernel), n_(static_cast<size_t>(x.rows())), norms_(x.rowwise().squaredNorm()) {
        diag_.resize(n_);
        for (size_t i = 0; i < n_; ++i) {
            diag_[i] = kernel_from_dot(kernel_, norms_(static_cast<Eigen::Index>(i)), norms_(static_cast<Eigen::Index>(i)),
                                       norms_(static_cast<Eigen::Index>(i)));
        }
        const size_t row_bytes = std::max<size_t>(1, n_ * sizeof(double));
        if (n_ * row_bytes <= budget_bytes) {
            full_.resize(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_));
            full_.noalias() = x_ * x_.transpose();
            for (Eigen::Index j = 0; j < full_.cols(); ++j) {
                for (Eigen::Index i = 0; i < full_.rows(); ++i) full_(i, j) = kernel_from_dot(kernel_, full_(i, j), norms_(i), norms_(j));
            }
        } else {
            capacity_ = std::max<size_t>(2, budget_bytes / row_bytes);
        }
    }

    const double *row(size_t i) {
        if (full_.size() > 0) return full_.col(static_cast<Eigen::Index>(i)).data();
        auto hit = index_.find(i);
        if (hit != index_.end()) {
            lru_.splice(lru_.begin(), lru_, hit->second);
            return hit->second->second.data();
        }
        if (lru_.size() >= capacity_) {
            index_.erase(lru_.back().first);
            lru_.pop_back();
        }
        std::vector<double> r(n_);
        const Eigen::VectorXd dots = x_ * x_.row(static_cast<Eigen::Index>(i)).transpose();
        const double ni = norms_(static_cast<Eigen::Index>(i));
        for (size_t j = 0; j < n_; ++j) r[j] = kernel_from_dot(kernel_, dots(static_cast<Eigen::Index>(j)), ni, norms_(static_cast<Eigen::Index>(j)));
        lru_.emplace_front(i, std::move(r));
        index_[i] = lru_.begin();
        return lru_.front().second.data();
    }

    double diag(size_t i) const { return diag_[i]; }

   private:
    const Eigen::MatrixXd &x_;
    KernelSpec kernel_;
    size_t n_;
    Eigen::VectorXd norms_;
    std::vector<double> diag_;
    Eigen::MatrixXd full_;
    size_t capacity_ = 0;
    std::list<std::pair<size_t, std::vector<double>>> lru_;
    std::unordered_map<size_t, std::list<std::pair<size_t, std::vector<double>>>::iterator> index_;
};

void check_training_input(const Eigen::MatrixXd &x, std::span<const int> y, double c) {
    if (x.rows() < 2) throw ValidationError("SVM training needs at least 2 points");
    if (static_cast<size_t>(x.rows()) != y.size()) throw ValidationError("feature and label counts differ");
    bool pos = false;
    bool neg = false;
    for (int v : y) {
        if (v == 1) pos = true;
        else if (v == -1) neg = true;
        else throw ValidationError("SVM labels must be -1 or +1");
    }
    if (!pos || !neg) throw ValidationError("SVM training needs both labels present");
    if (!(c > 0.0) || !std::isfinite(c)) throw ValidationError("C must be positive and finite");
    if (!x.allFinite()) throw ValidationError("features must be finite");
}

SmoResult smo(const Eigen::MatrixXd &x, std::span<const int> y, KernelRows &k, const KernelSpec &kernel, double c,
              const SmoOptions &opt) {
    constexpr double kTau = 1e-12;
    const size_t n = y.size();
    const size_t cap = opt.max_iterations ? opt.max_iterations : std::max<size_t>(100000, 50 * n);
    std::vector<double> alpha(n, 0.0);
    std::vector<double> grad(n, -1.0);  // grad_i = (Q alpha)_i - 1

    auto is_up = [&](size_t t) { return (y[t] == 1 && alpha[t] < c) || (y[t] == -1 && alpha[t] > 0.0); };
    auto is_low = [&](size_t t) { return (y[t] == -1 && alpha[t] < c) || (y[t] == 1 && alpha[t] > 0.0); };
    auto objective = [&] {
        double w = 0.0;
        for (size_t t = 0; t < n; ++t) w += alpha[t] * (1.0 - grad[t]);
        return 0.5 * w;
    };

    SmoResult result;
    double gap = 0.0;
    size_t iter = 0;
    for (;; ++iter) {
        double m_up = -std::numeric_limits<double>::infinity();
        double m_low = std::numeric_limits<double>::infinity();
        size_t i = n;
        size_t j = n;
        for (size_t t = 0; t < n; ++t) {
            const double v = -y[t] * grad[t];
            if (is_up(t) && v > m_up) {
                m_up = v;
                i = t;
            }
            if (is_low(t) && v < m_low) {
                m_low = v;
                j = t;
            }
        }
        gap = m_up - m_low;
        if (i == n || j == n || gap <= opt.tol) break;
        if (iter >= cap) {
            std::ostringstream msg;
            msg << "SMO did not converge within " << cap << " pair updates (" << kernel.describe() << ", C=" << c
                << ", final KKT violation " << gap << ", tolerance " << opt.tol << ")";
            throw NumericalError(msg.str());
        }

        const double *ki = k.row(i);
        const double *kj = k.row(j);
        const double old_i = alpha[i];
        const double old_j = alpha[j];
        double quad = k.diag(i) + k.diag(j) - 2.0 * ki[j];
        if (quad <= 0.0) quad = kTau;

        // Two-variable subproblem along the feasible line, clipped to the box.
        if (y[i] != y[j]) {
            const double delta = (-grad[i] - grad[j]) / quad;
            const double diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if (diff > 0.0) {
                if (alpha[j] < 0.0) {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if (alpha[i] < 0.0) {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if (diff > 0.0) {
                if (alpha[i] > c) {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if (alpha[j] > c) {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            const double delta = (grad[i] - grad[j]) / quad;
            const double sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if (sum > c) {
                if (alpha[i] > c) {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if (alpha[j] < 0.0) {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if (sum > c) {
                if (alpha[j] > c) {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if (alpha[i] < 0.0) {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        const double di = (alpha[i] - old_i) * y[i];
        const double dj = (alpha[j] - old_j) * y[j];
        for (size_t t = 0; t < n; ++t) grad[t] += y[t] * (di * ki[t] + dj * kj[t]);
        if (opt.trace_objective) result.objective_trace.push_back(objective());
    }

    // Bias from free vectors, else the midpoint of the feasible interval.
    double ub = std::numeric_limits<double>::infinity();
    double lb = -std::numeric_limits<double>::infinity();
    double free_sum = 0.0;
    size_t n_free = 0;
    for (size_t t = 0; t < n; ++t) {
        const double yg = y[t] * grad[t];
        if (alpha[t] >= c) {
            if (y[t] == -1) ub = std::min(ub, yg);
            else lb = std::max(lb, yg);
        } else if (alpha[t] <= 0.0) {
            if (y[t] == 1) ub = std::min(ub, yg);
            else lb = std::max(lb, yg);
        } else {
            free_sum += yg;
            ++n_free;
        }
    }
    const double rho = n_free > 0 ? free_sum / static_cast<double>(n_free) : 0.5 * (ub + lb);

    SvmModel model;
    model.kernel = kernel;
    model.c = c;
    model.bias = -rho;
    std::vector<size_t> sv;
    for (size_t t = 0; t < n; ++t) {
        if (alpha[t] > 0.0) sv.push_back(t);
    }
    model.support_vectors.resize(static_cast<Eigen::Index>(sv.size()), x.cols());
    model.duals.resize(sv.size());
    for (size_t s = 0; s < sv.size(); ++s) {
        model.support_vectors.row(static_cast<Eigen::Index>(s)) = x.row(static_cast<Eigen::Index>(sv[s]));
        model.duals[s] = alpha[sv[s]] * y[sv[s]];
    }

    result.objective = objective();
    result.model = std::move(model);
    result.alpha = std::move(alpha);
    result.iterations = iter;
    result.kkt_gap = gap;
    return result;
}

}  // namespace

double kernel_eval(const KernelSpec &spec, std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw ValidationError("kernel arguments have dimensions " + std::to_string(x.size()) + " and " +
                              std::to_string(y.size()));
    }
    double dot = 0.0;
    double nx = 0.0;
    double ny = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        dot += x[i] * y[i];
        nx += x[i] * x[i];
        ny += y[i] * y[i];
    }
    if (spec.kind == KernelKind::rbf) {
        double sq = 0.0;
        for (size_t i = 0; i < x.size(); ++i) sq += (x[i] - y[i]) * (x[i] - y[i]);
        return std::exp(-spec.gamma * sq);
    }
    return kernel_from_dot(spec, dot, nx, ny);
}

SmoResult train_svm(const Eigen::MatrixXd &features, std::span<const int> labels, const KernelSpec &kernel, double c,
                    const SmoOptions &options) {
    kernel.validate();
    check_training_input(features, labels, c);
    KernelRows rows(features, kernel, options.cache_bytes);
    return smo(features, labels, rows, kernel, c, options);
}

Prediction predict_svm(const SvmModel &model, std::span<const double> x) {
    if (x.size() != model.dimension()) {
        throw ValidationError("input has dimension " + std::to_string(x.size()) + ", model expects " +
                              std::to_string(model.dimension()));
    }
    double f = model.bias;
    std::vector<double> sv(model.dimension());
    for (size_t s = 0; s < model.n_support(); ++s) {
        const auto row = model.support_vectors.row(static_cast<Eigen::Index>(s));
        for (size_t j = 0; j < sv.size(); ++j) sv[j] = row(static_cast<Eigen::Index>(j));
        f += model.duals[s] * kernel_eval(model.kernel, sv, x);
    }
    return {f > 0.0 ? 1 : 0, f};
}

std::vector<Prediction> predict_svm(const SvmModel &model, const Eigen::MatrixXd &rows) {
    if (static_cast<size_t>(rows.cols()) != model.dimension()) {
        throw ValidationError("inputs have dimension " + std::to_string(rows.cols()) + ", model expects " +
                              std::to_string(model.dimension()));
    }
    const Eigen::MatrixXd dots = rows * model.support_vectors.transpose();
    const Eigen::VectorXd rn = rows.rowwise().squaredNorm();
    const Eigen::VectorXd sn = model.support_vectors.rowwise().squaredNorm();
    std::vector<Prediction> out(static_cast<size_t>(rows.rows()));
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
        double f = model.bias;
        for (Eigen::Index s = 0; s < dots.cols(); ++s) {
            f += model.duals[static_cast<size_t>(s)] * kernel_from_dot(model.kernel, dots(r, s), rn(r), sn(s));
        }
        out[static_cast<size_t>(r)] = {f > 0.0 ? 1 : 0, f};
    }
    return out;
}

double dual_objective(const Eigen::MatrixXd &features, std::span<const int> labels, const KernelSpec &kernel,
                      std::span<const double> alpha) {
    const auto n = static_cast<size_t>(features.rows());
    if (labels.size() != n || alpha.size() != n) throw ValidationError("dual objective inputs differ in length");
    KernelRows rows(features, kernel, n * n * sizeof(double));
    double lin = 0.0;
    double quad = 0.0;
    for (size_t i = 0; i < n; ++i) {
        lin += alpha[i];
        if (alpha[i] == 0.0) continue;
        const double *ki = rows.row(i);
        for (size_t j = 0; j < n; ++j) quad += alpha[i] * alpha[j] * labels[i] * labels[j] * ki[j];
    }
    return lin - 0.5 * quad;
}

std::vector<KernelSpec> kernel_grid(size_t p, std::span<const double> gamma_factors) {
    if (p == 0) throw ValidationError("feature dimension must be positive");
    const double inv = 1.0 / static_cast<double>(p);
    std::vector<KernelSpec> out{KernelSpec::linear()};
    for (int degree = 2; degree <= 4; ++degree) out.push_back(KernelSpec::polynomial(degree, inv, 1.0));
    for (double f : gamma_factors) out.push_back(KernelSpec::rbf(f * inv));
    return out;
}

std::vector<double> default_c_grid() { return {0.1, 1.0, 10.0, 100.0}; }

std::vector<double> default_gamma_factors() { return {0.1, 1.0, 10.0}; }

GridResult grid_search(const Eigen::MatrixXd &train_x, std::span<const int> train_y, const Eigen::MatrixXd &val_x,
                       std::span<const int> val_y, std::span<const KernelSpec> kernels, std::span<const double> cs,
                       const SmoOptions &options, unsigned threads) {
    if (kernels.empty() || cs.empty()) throw ValidationError("hyperparameter grid is empty");
    if (static_cast<size_t>(val_x.rows()) != val_y.size() || val_y.empty()) {
        throw ValidationError("validation features and labels differ in length");
    }
    for (const auto &k : kernels) k.validate();
    check_training_input(train_x, train_y, cs[0]);

    std::vector<GridTrial> trials(kernels.size() * cs.size());
    std::vector<SvmModel> models(trials.size());
    for (size_t ki = 0; ki < kernels.size(); ++ki) {
        KernelRows rows(train_x, kernels[ki], options.cache_bytes);
        const bool shared = static_cast<size_t>(train_x.rows()) * static_cast<size_t>(train_x.rows()) * sizeof(double) <=
                            options.cache_bytes;
        auto run = [&](size_t ci) {
            const size_t t = ki * cs.size() + ci;
            GridTrial &trial = trials[t];
            trial.kernel = kernels[ki];
            trial.c = cs[ci];
            try {
                SmoResult r;
                if (shared) {
                    r = smo(train_x, train_y, rows, kernels[ki], cs[ci], options);
                } else {
                    KernelRows own(train_x, kernels[ki], options.cache_bytes);
                    r = smo(train_x, train_y, own, kernels[ki], cs[ci], options);
                }
                trial.iterations = r.iterations;
                trial.n_support = r.model.n_support();
                size_t correct = 0;
                const auto pred = predict_svm(r.model, val_x);
                for (size_t i = 0; i < pred.size(); ++i) correct += (pred[i].label == 1) == (val_y[i] == 1);
                trial.validation_accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(pred.size());
                models[t] = std::move(r.model);
            } catch (const NumericalError &) {
                trial.converged = false;
            }
        };
        // The dense kernel matrix is read-only during SMO, so C values may share it.
        parallel_for(cs.size(), shared ? threads : 1, run);
    }

    GridResult out;
    out.trials = trials;
    bool found = false;
    for (size_t t = 0; t < trials.size(); ++t) {
        if (!trials[t].converged) continue;
        if (!found || trials[t].validation_accuracy > out.best_trial.validation_accuracy) {
            out.best_trial = trials[t];
            out.best = models[t];
            found = true;
        }
    }
    if (!found) throw NumericalError("no SVM configuration in the grid converged");
    return out;
}

std::vector<int> signed_labels(std::span<const int> labels01) {
    std::vector<int> out(labels01.size());
    for (size_t i = 0; i < labels01.size(); ++i) {
        if (labels01[i] != 0 && labels01[i] != 1) throw ValidationError("labels must be 0 or 1");
        out[i] = labels01[i] == 1 ? 1 : -1;
    }
    return out;
}

}  // namespace qnc::svm
