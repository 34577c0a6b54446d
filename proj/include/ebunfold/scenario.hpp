#pragma once

#include "ebunfold/basis.hpp"
#include "ebunfold/common.hpp"
#include "ebunfold/forward.hpp"
#include "ebunfold/mcem.hpp"
#include "ebunfold/simulate.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ebunfold {

/// Everything needed to simulate and unfold one setup.
struct Scenario {
    std::string name;
    std::optional<IntensityModel> truth;  // absent for real data
    Interval true_space;
    Interval smeared_space;
    int bins = 40;
    std::vector<double> edges;  // explicit edges override `bins` when non-empty
    int interior_knots = 26;
    int order = 4;
    double gamma_l = 5.0;
    double gamma_r = 5.0;
    SmearingKernel kernel = GaussianConvolution{1.0};
    Efficiency efficiency;
    // Fraction of smeared events kept for unfolding (binomial split); 1 keeps all.
    double keep_fraction = 1.0;
    McemConfig mcem;

    BinningScheme binning() const;
    void validate() const;
};

/// Two Gaussian peaks on a uniform background, E = F = [-7, 7], unit Gaussian smearing.
Scenario gmm_scenario(double lambda_tot);

/// Breit-Wigner line shape generated on [65, 115] with Crystal Ball smearing,
/// unfolded on F = [82.5, 97.5] from E = [81.5, 98.5] using the 70% split.
Scenario z_scenario(double lambda_tot = 67778.0);

/// Discretized problem.
struct Setup {
    SplineBasis basis;
    BinningScheme binning;
    ResponseMatrix K;
    ResponseMatrix K_tilde;
    PenaltyMatrix penalty;
    double leakage = 0.0;  // kernel mass reaching F from outside E
};

Setup prepare(const Scenario& scenario, const AssemblyOptions& options = {});

/// Poisson process → thinning and smearing → histogram → optional binomial split.
BinnedCounts simulate_counts(const Scenario& scenario, std::uint64_t seed);

/// Expected histogram under the true intensity, including thinning, smearing
/// losses outside F and the binomial split.
Vector expected_counts(const Scenario& scenario);

/// NNLS start, nudged off the boundary if some occupied bin would get zero mean.
Vector initial_beta(const Setup& setup, const BinnedCounts& counts);

McemResult unfold_counts(const Setup& setup, const BinnedCounts& counts, const McemConfig& cfg);

}  // namespace ebunfold
