#pragma once

#include "ebunfold/basis.hpp"
#include "ebunfold/common.hpp"
#include "ebunfold/forward.hpp"
#include "ebunfold/simulate.hpp"

#include <string>

namespace ebunfold {

/// Counts y, response K, penalty Ω_A and prior scale δ. All δ-independent
/// additive constants of the log-prior are dropped.
class PosteriorModel {
public:
    PosteriorModel(Vector y, Matrix K, PenaltyMatrix penalty, double delta);

    const Vector& y() const { return y_; }
    const Matrix& K() const { return K_; }
    const PenaltyMatrix& penalty() const { return penalty_; }
    const Matrix& omega_a() const { return penalty_.omega_a; }
    double delta() const { return delta_; }
    int dim() const { return static_cast<int>(K_.cols()); }
    int bins() const { return static_cast<int>(K_.rows()); }

    /// Same data with a different δ.
    PosteriorModel with_delta(double delta) const;

    /// Σ_i (y_i log μ_i − μ_i − log y_i!).
    double log_likelihood(const Vector& beta) const;
    double log_prior(const Vector& beta) const;
    double log_posterior(const Vector& beta) const;
    /// ∂/∂β_k of the log posterior. Throws NumericalError where μ_i = 0 < y_i.
    Vector gradient(const Vector& beta) const;
    /// Diagonal of the Hessian: −Σ_i K_ik² y_i/μ_i² − 2δ(Ω_A)_kk.
    Vector curvature(const Vector& beta) const;

private:
    void check_beta(const Vector& beta) const;

    Vector y_;
    Matrix K_;
    PenaltyMatrix penalty_;
    double delta_;
    Vector log_factorial_;
};

double log_likelihood(const PosteriorModel& model, const Vector& beta);

/// (p/2) log δ − δ βᵀΩ_Aβ.
double log_prior(const PenaltyMatrix& penalty, double delta, const Vector& beta);

double quadratic_form(const Matrix& omega, const Vector& beta);

struct NnlsResult {
    Vector x;
    int iterations = 0;
    double residual_norm = 0.0;
};

/// min ‖Ax − b‖₂ subject to x ≥ 0 by the Lawson-Hanson active-set method.
NnlsResult nnls(const Matrix& A, const Vector& b, int max_iterations = 0);

/// Raised when the active-set iteration exceeds its cap; carries the best iterate.
class NnlsNotConverged : public ConvergenceError {
public:
    NnlsNotConverged(const std::string& what, Vector best) : ConvergenceError(what), best_(std::move(best)) {}
    const Vector& best() const { return best_; }

private:
    Vector best_;
};

/// Pads a histogram by repeating its outermost counts until the bins cover
/// `domain`: one added bin of width `step` per missing step, the last one
/// clipped to the domain boundary.
BinnedCounts extend_counts_to(const BinnedCounts& counts, Interval domain, double step);

/// Non-negative least-squares spline fit to the smeared data, β_init =
/// argmin_{β≥0} ‖K̃β − y‖², with y edge-extended by one knot span per
/// missing span when E is wider than F.
Vector nnls_init(const SplineBasis& basis, const BinnedCounts& counts);
Vector nnls_init(const ResponseMatrix& k_tilde, const Vector& y);

}  // namespace ebunfold
