#pragma once

#include "ebunfold/basis.hpp"
#include "ebunfold/common.hpp"
#include "ebunfold/forward.hpp"

#include <cstdint>
#include <span>
#include <utility>
#include <variant>
#include <vector>

namespace ebunfold {

struct MixtureComponent {
    double weight = 0.0;
    double mean = 0.0;
    double variance = 1.0;
};

/// f(s) = λ_tot { Σ_k π_k N(s | mean_k, var_k) + π_u / |E| } on E. The Gaussian
/// components are not renormalized to E, so ∫_E f is slightly below λ_tot
/// when the components have mass outside E.
struct GaussianMixtureIntensity {
    double lambda_tot = 0.0;
    std::vector<MixtureComponent> components;
    double uniform_weight = 0.0;
    Interval domain;
};

/// Cauchy line shape f(m) = λ_tot p(m) / P(E) truncated and renormalized to E.
struct BreitWignerIntensity {
    double lambda_tot = 0.0;
    double mode = 91.1876;
    double width = 2.4952;  // full width at half maximum
    Interval domain;
};

struct SplineIntensity {
    SplineBasis basis;
    Vector beta;
};

using IntensityModel = std::variant<GaussianMixtureIntensity, BreitWignerIntensity, SplineIntensity>;

void validate_intensity(const IntensityModel& model);
Interval intensity_domain(const IntensityModel& model);
/// f(s); zero outside the model's domain.
double intensity_at(const IntensityModel& model, double s);
/// Closed-form ∫_E f.
double total_intensity(const IntensityModel& model);

struct BinnedCounts {
    std::vector<std::int64_t> y;
    BinningScheme binning;

    std::int64_t total() const;
    Vector as_vector() const;
};

/// τ ~ Poisson(∫_E f) true points drawn i.i.d. from f / ∫_E f.
std::vector<double> sample_process(const IntensityModel& model, std::uint64_t seed);

/// Keep each point with probability ε(X), smear survivors with k_resp(.|X) and
/// drop those landing outside F.
std::vector<double> thin_and_smear(std::span<const double> points, const Efficiency& eff,
                                   const SmearingKernel& kernel, Interval smeared_space,
                                   std::uint64_t seed);

/// Draw Y ~ k_resp(.|s).
double draw_response(const SmearingKernel& kernel, double s, Rng& rng);

/// Histogram with half-open bins and a closed last bin.
BinnedCounts bin_points(std::span<const double> points, const BinningScheme& binning);

/// Per bin, Binomial(y_i, keep_prob) into the first output and the rest into the second.
std::pair<BinnedCounts, BinnedCounts> binomial_split(const BinnedCounts& counts, double keep_prob,
                                                     std::uint64_t seed);

/// y* ~ Poisson(mean), independently per bin.
BinnedCounts poisson_counts(const Vector& mean, const BinningScheme& binning, Rng& rng);

// Scenario presets.

/// Two Gaussian peaks on a uniform background on E = [-7, 7].
GaussianMixtureIntensity gmm_intensity(double lambda_tot);

/// Fitted Crystal Ball response of the Z-boson invariant-mass example.
CrystalBall z_crystal_ball();

}  // namespace ebunfold
