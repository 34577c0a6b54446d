#pragma once

#include "ebunfold/common.hpp"
#include "ebunfold/posterior.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ebunfold {

struct SamplerConfig {
    int burn_in = 500;
    int n_samples = 1000;
    std::uint64_t seed = 0;
    Vector beta_init;
};

/// Draws of one chain (rows are sweeps, columns coefficients) with
/// per-coordinate mixing statistics.
struct ChainSample {
    Matrix draws;
    Vector acceptance_rate;       // fraction of accepted moves over the recorded sweeps
    Vector mean_accept_prob;      // average MH acceptance probability min(1, r)
    Vector kappa;                 // integrated autocorrelation time (initial convex sequence)
    Vector ess;                   // S / kappa
    std::vector<std::string> warnings;

    int size() const { return static_cast<int>(draws.rows()); }
    int dim() const { return static_cast<int>(draws.cols()); }
    Vector mean() const { return draws.colwise().mean().transpose(); }
};

/// Single-component Metropolis-Hastings (Metropolis-within-Gibbs) sampler of
/// the posterior truncated to β ≥ 0. Each coordinate proposal is the Gaussian
/// obtained from a second-order Taylor expansion of the log-likelihood around
/// the current value combined with the exact quadratic log-prior, truncated to
/// [0, ∞). Negative-mean proposals are drawn through an exponential envelope
/// for the Gaussian tail.
ChainSample sample_posterior(const PosteriorModel& model, const SamplerConfig& cfg);

/// Gaussian approximation N(mean, variance) of the full conditional of β_k.
struct CoordinateProposal {
    double mean = 0.0;
    double variance = 0.0;
};

/// Builds the proposal for coordinate k at state (beta, mu = Kβ).
CoordinateProposal coordinate_proposal(const PosteriorModel& model, const Vector& beta, const Vector& mu,
                                       int k);

/// Log density of N(mean, var) truncated to [0, ∞).
double truncated_normal_logpdf(double x, double mean, double variance);

/// Exact draw from N(mean, var) truncated to [0, ∞).
double truncated_normal_draw(double mean, double variance, Rng& rng);

/// log Φ(x), accurate far into the lower tail.
double log_normal_cdf(double x);

struct AutocorrEstimate {
    double kappa = 1.0;
    bool degenerate = false;
};

/// Geyer's initial convex sequence estimate of the integrated autocorrelation
/// time κ = 1 + 2 Σ ρ_k, floored at 1. A constant series gives κ = S and is
/// flagged degenerate, as is a series whose positive sequence does not
/// terminate within the first quarter of the lags.
AutocorrEstimate autocorr_time_icse_detail(std::span<const double> series);
double autocorr_time_icse(std::span<const double> series);

/// Empirical autocorrelation at lags 0..max_lag.
std::vector<double> autocorrelation(std::span<const double> series, int max_lag);

struct CoordinateDiagnostics {
    int index = 0;  // 1-based coefficient index
    double mean = 0.0;
    double sd = 0.0;
    double acceptance = 0.0;
    double kappa = 1.0;
    double ess = 0.0;
    double lag1 = 0.0;
    bool degenerate = false;
};

struct ChainDiagnostics {
    int n_samples = 0;
    std::vector<CoordinateDiagnostics> coordinates;
    double mean_acceptance = 0.0;
    double mean_kappa = 0.0;
    double min_ess = 0.0;
    std::vector<std::string> warnings;

    nlohmann::json to_json() const;
    static ChainDiagnostics from_json(const nlohmann::json& j);
};

ChainDiagnostics chain_diagnostics(const ChainSample& chain);

/// Series for trace, histogram, autocorrelation and cumulative-mean plots.
struct PlotSeries {
    std::vector<double> trace;
    std::vector<double> histogram_edges;
    std::vector<double> histogram_counts;
    std::vector<double> acf;
    std::vector<double> cumulative_mean;
};

PlotSeries plot_series(const ChainSample& chain, int coordinate, int bins = 30, int max_lag = 50);

}  // namespace ebunfold
