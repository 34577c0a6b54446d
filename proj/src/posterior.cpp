#include "ebunfold/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace ebunfold {

PosteriorModel::PosteriorModel(Vector y, Matrix K, PenaltyMatrix penalty, double delta)
    : y_(std::move(y)), K_(std::move(K)), penalty_(std::move(penalty)), delta_(delta) {
    if (y_.size() != K_.rows())
        throw ConfigError("count vector length " + std::to_string(y_.size()) +
                          " does not match response rows " + std::to_string(K_.rows()));
    if (K_.cols() != penalty_.omega_a.rows() || penalty_.omega_a.rows() != penalty_.omega_a.cols())
        throw ConfigError("penalty dimension does not match response columns");
    if (!(delta_ > 0.0) || !std::isfinite(delta_)) throw ConfigError("delta must be positive and finite");
    for (Eigen::Index i = 0; i < y_.size(); ++i) {
        if (!(y_(i) >= 0.0) || y_(i) != std::floor(y_(i)))
            throw ConfigError("counts must be non-negative integers");
    }
    if (!K_.allFinite()) throw ConfigError("response matrix has non-finite entries");
    if ((K_.array() < 0.0).any()) throw ConfigError("response matrix has negative entries");
    for (Eigen::Index j = 0; j < K_.cols(); ++j) {
        if (K_.col(j).maxCoeff() <= 0.0)
            throw ConfigError("response column " + std::to_string(j + 1) +
                              " is identically zero; coefficient is unidentifiable");
    }
    log_factorial_ = y_.unaryExpr([](double v) { return std::lgamma(v + 1.0); });
}

PosteriorModel PosteriorModel::with_delta(double delta) const {
    PosteriorModel copy = *this;
    if (!(delta > 0.0) || !std::isfinite(delta)) throw ConfigError("delta must be positive and finite");
    copy.delta_ = delta;
    return copy;
}

void PosteriorModel::check_beta(const Vector& beta) const {
    if (beta.size() != K_.cols()) throw std::invalid_argument("coefficient vector has the wrong length");
    if (beta.hasNaN()) throw std::invalid_argument("coefficient vector contains NaN");
    if ((beta.array() < 0.0).any()) throw std::invalid_argument("coefficients must be non-negative");
}

double PosteriorModel::log_likelihood(const Vector& beta) const {
    check_beta(beta);
    const Vector mu = K_ * beta;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
        if (y_(i) > 0.0) {
            if (mu(i) <= 0.0) return -std::numeric_limits<double>::infinity();
            sum += y_(i) * std::log(mu(i));
        }
        sum -= mu(i) + log_factorial_(i);
    }
    return sum;
}

double PosteriorModel::log_prior(const Vector& beta) const {
    check_beta(beta);
    return ebunfold::log_prior(penalty_, delta_, beta);
}

double PosteriorModel::log_posterior(const Vector& beta) const {
    const double ll = log_likelihood(beta);
    if (!std::isfinite(ll)) return ll;
    return ll + log_prior(beta);
}

Vector PosteriorModel::gradient(const Vector& beta) const {
    check_beta(beta);
    const Vector mu = K_ * beta;
    Vector ratio(mu.size());
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
        if (y_(i) > 0.0 && mu(i) <= 0.0)
            throw NumericalError("gradient undefined: smeared mean of bin " + std::to_string(i + 1) +
                                 " is zero while its count is positive");
        ratio(i) = (y_(i) > 0.0 ? y_(i) / mu(i) : 0.0) - 1.0;
    }
    return K_.transpose() * ratio - 2.0 * delta_ * (penalty_.omega_a * beta);
}

Vector PosteriorModel::curvature(const Vector& beta) const {
    check_beta(beta);
    const Vector mu = K_ * beta;
    Vector w(mu.size());
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
        if (y_(i) > 0.0 && mu(i) <= 0.0)
            throw NumericalError("curvature undefined: zero smeared mean with positive count");
        w(i) = y_(i) > 0.0 ? y_(i) / (mu(i) * mu(i)) : 0.0;
    }
    return -(K_.array().square().matrix().transpose() * w) - 2.0 * delta_ * penalty_.omega_a.diagonal();
}

double log_likelihood(const PosteriorModel& model, const Vector& beta) { return model.log_likelihood(beta); }

double quadratic_form(const Matrix& omega, const Vector& beta) { return beta.dot(omega * beta); }

double log_prior(const PenaltyMatrix& penalty, double delta, const Vector& beta) {
    if (!(delta > 0.0)) throw std::invalid_argument("delta must be positive");
    if (beta.size() != penalty.size()) throw std::invalid_argument("coefficient vector has the wrong length");
    return 0.5 * penalty.size() * std::log(delta) - delta * quadratic_form(penalty.omega_a, beta);
}

// ---------------------------------------------------------------------------
// NNLS

namespace {

Vector solve_passive(const Matrix& A, const Vector& b, const std::vector<int>& passive) {
    Matrix Ap(A.rows(), static_cast<Eigen::Index>(passive.size()));
    for (std::size_t k = 0; k < passive.size(); ++k) Ap.col(static_cast<Eigen::Index>(k)) = A.col(passive[k]);
    return Ap.colPivHouseholderQr().solve(b);
}

}  // namespace

NnlsResult nnls(const Matrix& A, const Vector& b, int max_iterations) {
    const Eigen::Index n = A.cols();
    if (A.rows() != b.size()) throw std::invalid_argument("nnls: dimension mismatch");
    if (max_iterations <= 0) max_iterations = static_cast<int>(3 * n) + 10;
    NnlsResult res;
    res.x = Vector::Zero(n);
    std::vector<bool> passive(n, false);
    std::vector<bool> blocked(n, false);  // reset whenever x moves
    const double tol = 10.0 * std::numeric_limits<double>::epsilon() *
                       A.cwiseAbs().colwise().sum().maxCoeff() * static_cast<double>(std::max(A.rows(), n)) *
                       std::max(1.0, b.cwiseAbs().maxCoeff());

    auto passive_indices = [&] {
        std::vector<int> idx;
        for (Eigen::Index j = 0; j < n; ++j)
            if (passive[j]) idx.push_back(static_cast<int>(j));
        return idx;
    };

    int outer = 0;
    for (;;) {
        const Vector w = A.transpose() * (b - A * res.x);
        int t = -1;
        double best_w = tol;
        for (Eigen::Index j = 0; j < n; ++j)
            if (!passive[j] && !blocked[j] && w(j) > best_w) {
                best_w = w(j);
                t = static_cast<int>(j);
            }
        if (t < 0) break;
        if (++outer > max_iterations)
            throw NnlsNotConverged("nnls: iteration cap of " + std::to_string(max_iterations) + " exceeded",
                                   res.x);
        passive[t] = true;

        bool first = true;
        for (;;) {
            const std::vector<int> idx = passive_indices();
            const Vector z = solve_passive(A, b, idx);
            if ((z.array() > 0.0).all()) {
                res.x.setZero();
                for (std::size_t k = 0; k < idx.size(); ++k) res.x(idx[k]) = z(static_cast<Eigen::Index>(k));
                std::fill(blocked.begin(), blocked.end(), false);
                break;
            }
            if (first) {
                // Rounding can make the entering variable non-positive right away;
                // drop it and try the next candidate.
                const auto pos = std::find(idx.begin(), idx.end(), t) - idx.begin();
                if (z(pos) <= 0.0) {
                    passive[t] = false;
                    blocked[t] = true;
                    break;
                }
            }
            first = false;
            double alpha = 1.0;
            int hit = -1;
            for (std::size_t k = 0; k < idx.size(); ++k) {
                const double zk = z(static_cast<Eigen::Index>(k));
                if (zk <= 0.0) {
                    const double xk = res.x(idx[k]);
                    const double a = xk / (xk - zk);
                    if (a < alpha || hit < 0) {
                        alpha = std::min(alpha, a);
                        hit = idx[k];
                    }
                }
            }
            for (std::size_t k = 0; k < idx.size(); ++k) {
                const int j = idx[k];
                res.x(j) += alpha * (z(static_cast<Eigen::Index>(k)) - res.x(j));
                if (j == hit || res.x(j) <= 0.0) {
                    res.x(j) = 0.0;
                    passive[j] = false;
                }
            }
            std::fill(blocked.begin(), blocked.end(), false);
        }
    }
    res.iterations = outer;
    res.residual_norm = (A * res.x - b).norm();
    return res;
}

BinnedCounts extend_counts_to(const BinnedCounts& counts, Interval domain, double step) {
    if (!(step > 0.0)) throw std::invalid_argument("extend_counts_to: step must be positive");
    std::vector<double> edges = counts.binning.edges();
    std::vector<std::int64_t> y = counts.y;
    while (edges.front() > domain.lo + 1e-9 * step) {
        edges.insert(edges.begin(), std::max(domain.lo, edges.front() - step));
        y.insert(y.begin(), counts.y.front());
    }
    while (edges.back() < domain.hi - 1e-9 * step) {
        edges.push_back(std::min(domain.hi, edges.back() + step));
        y.push_back(counts.y.back());
    }
    return BinnedCounts{std::move(y), BinningScheme(std::move(edges))};
}

Vector nnls_init(const ResponseMatrix& k_tilde, const Vector& y) {
    if (y.size() != k_tilde.rows()) throw std::invalid_argument("nnls_init: dimension mismatch");
    return nnls(k_tilde.K, y).x;
}

Vector nnls_init(const SplineBasis& basis, const BinnedCounts& counts) {
    const auto& knots = basis.breakpoints();
    const double span = (knots.back() - knots.front()) / static_cast<double>(knots.size() - 1);
    const BinnedCounts extended = extend_counts_to(counts, basis.domain(), span);
    const ResponseMatrix k_tilde = delta_kernel_response(basis, extended.binning);
    return nnls_init(k_tilde, extended.as_vector());
}

}  // namespace ebunfold
