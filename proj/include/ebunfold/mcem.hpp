#pragma once

#include "ebunfold/basis.hpp"
#include "ebunfold/common.hpp"
#include "ebunfold/posterior.hpp"
#include "ebunfold/sampler.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ebunfold {

struct McemConfig {
    double delta0 = 1e-5;
    int T = 20;
    int S_em = 500;
    int S_final = 1000;
    int burn_in_initial = 500;  // first E-step, chain starts at the NNLS fit
    int burn_in_em = 100;       // later E-steps and the final run, warm-started
    std::uint64_t seed = 0;
    // Stop early once |Δ log δ| < rel_tol for three consecutive iterations; 0 disables.
    double rel_tol = 0.0;

    void validate() const;
};

struct McemTrace {
    std::vector<double> delta_path;    // δ^(0), ..., δ^(T)
    std::vector<double> mean_kappa;    // per E-step
    std::vector<double> acceptance;    // per E-step, mean over coordinates
    int iterations() const { return static_cast<int>(mean_kappa.size()); }
};

struct McemResult {
    double delta_hat = 0.0;
    Vector beta_hat;
    McemTrace trace;
    ChainSample final_chain;
};

/// Monte Carlo EM for the marginal maximum likelihood estimate of δ, followed
/// by a posterior run at δ̂ whose sample mean is the point estimate.
McemResult mcem_fit(const Vector& y, const Matrix& K, const PenaltyMatrix& penalty, const Vector& beta_init,
                    const McemConfig& cfg);

/// Closed-form maximizer of the Monte Carlo E-step objective, p S / (2 Σ_s βᵀΩ_Aβ).
double m_step(const Matrix& draws, const PenaltyMatrix& penalty);

/// (1/S) Σ_s log p(β^(s) | δ).
double q_tilde(double delta, const Matrix& draws, const PenaltyMatrix& penalty);

void write_trace_csv(const McemTrace& trace, const std::string& path);

}  // namespace ebunfold
