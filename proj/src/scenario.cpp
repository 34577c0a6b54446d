#include "ebunfold/scenario.hpp"

#include "ebunfold/posterior.hpp"

#include <algorithm>
#include <cmath>

namespace ebunfold {

BinningScheme Scenario::binning() const {
    if (!edges.empty()) return BinningScheme(edges);
    return BinningScheme::uniform(smeared_space, bins);
}

void Scenario::validate() const {
    if (!(true_space.hi > true_space.lo)) throw ConfigError("true space E must be a non-empty interval");
    if (!(smeared_space.hi > smeared_space.lo)) throw ConfigError("smeared space F must be a non-empty interval");
    if (edges.empty() && bins < 1) throw ConfigError("need at least one bin");
    if (interior_knots < 0) throw ConfigError("number of interior knots must be >= 0");
    if (order < 3) throw ConfigError("spline order must be >= 3 for the curvature penalty");
    if (!(gamma_l > 0.0) || !(gamma_r > 0.0)) throw ConfigError("boundary hyperparameters must be positive");
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ConfigError("keep fraction must lie in (0, 1]");
    validate_kernel(kernel);
    if (truth) validate_intensity(*truth);
    mcem.validate();
}

Scenario gmm_scenario(double lambda_tot) {
    Scenario s;
    s.name = "gmm";
    s.truth = gmm_intensity(lambda_tot);
    s.true_space = {-7.0, 7.0};
    s.smeared_space = {-7.0, 7.0};
    s.bins = 40;
    s.interior_knots = 26;
    s.order = 4;
    s.gamma_l = s.gamma_r = 5.0;
    s.kernel = GaussianConvolution{1.0};
    s.mcem.delta0 = 1e-5;
    s.mcem.T = 20;
    s.mcem.S_em = 500;
    s.mcem.S_final = 1000;
    return s;
}

Scenario z_scenario(double lambda_tot) {
    Scenario s;
    s.name = "z";
    BreitWignerIntensity bw;
    bw.lambda_tot = lambda_tot;
    bw.domain = {65.0, 115.0};
    s.truth = bw;
    s.true_space = {81.5, 98.5};
    s.smeared_space = {82.5, 97.5};
    s.bins = 30;
    s.interior_knots = 34;
    s.order = 4;
    s.gamma_l = s.gamma_r = 70.0;
    s.kernel = z_crystal_ball();
    s.keep_fraction = 0.7;
    s.mcem.delta0 = 1e-6;
    s.mcem.T = 20;
    s.mcem.S_em = 500;
    s.mcem.S_final = 5000;
    return s;
}

Setup prepare(const Scenario& scenario, const AssemblyOptions& options) {
    scenario.validate();
    SplineBasis basis = make_uniform_basis(scenario.true_space, scenario.interior_knots, scenario.order);
    BinningScheme binning = scenario.binning();
    const ForwardKernel kernel = full_kernel(scenario.kernel, scenario.efficiency);
    ResponseMatrix K = assemble_response(basis, binning, kernel, options);
    ResponseMatrix K_tilde = delta_kernel_response(basis, binning);
    PenaltyMatrix penalty = curvature_penalty(basis, scenario.gamma_l, scenario.gamma_r);
    const double leakage = kernel_mass_outside_true_space(kernel, scenario.true_space, binning.range());
    return Setup{std::move(basis), std::move(binning), std::move(K), std::move(K_tilde), std::move(penalty),
                 leakage};
}

BinnedCounts simulate_counts(const Scenario& scenario, std::uint64_t seed) {
    if (!scenario.truth) throw ConfigError("scenario '" + scenario.name + "' has no known truth to simulate");
    const BinningScheme binning = scenario.binning();
    const std::vector<double> points = sample_process(*scenario.truth, seed);
    const std::vector<double> smeared =
        thin_and_smear(points, scenario.efficiency, scenario.kernel, binning.range(), seed);
    BinnedCounts counts = bin_points(smeared, binning);
    if (scenario.keep_fraction < 1.0) counts = binomial_split(counts, scenario.keep_fraction, seed).first;
    return counts;
}

Vector expected_counts(const Scenario& scenario) {
    if (!scenario.truth) throw ConfigError("scenario '" + scenario.name + "' has no known truth");
    const BinningScheme binning = scenario.binning();
    const Interval domain = intensity_domain(*scenario.truth);
    const GaussLegendre rule(16);
    const int panels = std::max(400, static_cast<int>(std::ceil(domain.width() / 0.05)));
    const double h = domain.width() / panels;
    Vector mu = Vector::Zero(binning.size());
    for (int k = 0; k < panels; ++k) {
        const double a = domain.lo + k * h;
        const double mid = a + 0.5 * h;
        for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
            const double s = mid + 0.5 * h * rule.nodes[q];
            const double w = 0.5 * h * rule.weights[q] * intensity_at(*scenario.truth, s) * scenario.efficiency(s);
            if (w == 0.0) continue;
            for (int i = 0; i < binning.size(); ++i) {
                const auto prob = response_probability(scenario.kernel, binning.lower(i), binning.upper(i), s);
                mu(i) += w * (prob ? *prob
                                   : rule.integrate([&](double t) { return response_density(scenario.kernel, t, s); },
                                                    binning.lower(i), binning.upper(i)));
            }
        }
    }
    return scenario.keep_fraction * mu;
}

Vector initial_beta(const Setup& setup, const BinnedCounts& counts) {
    if (counts.binning.edges() != setup.binning.edges())
        throw ConfigError("histogram binning does not match the configured binning");
    Vector beta = nnls_init(setup.basis, counts);
    const Vector y = counts.as_vector();
    const Vector mu = setup.K.K * beta;
    bool feasible = true;
    for (Eigen::Index i = 0; i < y.size(); ++i)
        if (y(i) > 0.0 && !(mu(i) > 0.0)) feasible = false;
    if (!feasible) {
        const double scale = std::max(beta.maxCoeff(), y.sum() / setup.K.K.sum());
        beta.array() += 1e-6 * std::max(scale, 1e-12);
    }
    return beta;
}

McemResult unfold_counts(const Setup& setup, const BinnedCounts& counts, const McemConfig& cfg) {
    const Vector beta0 = initial_beta(setup, counts);
    return mcem_fit(counts.as_vector(), setup.K.K, setup.penalty, beta0, cfg);
}

}  // namespace ebunfold
