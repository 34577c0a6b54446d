#include "ebunfold/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace ebunfold {

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double cauchy_cdf(const BreitWignerIntensity& bw, double m) {
    return 0.5 + std::atan((m - bw.mode) / (0.5 * bw.width)) / std::numbers::pi;
}

}  // namespace

void validate_intensity(const IntensityModel& model) {
    std::visit(
        [](const auto& m) {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, GaussianMixtureIntensity>) {
                if (!(m.lambda_tot >= 0.0)) throw ConfigError("lambda_tot must be non-negative");
                if (!(m.domain.hi > m.domain.lo)) throw ConfigError("intensity domain must be nonempty");
                double sum = m.uniform_weight;
                if (m.uniform_weight < 0.0) throw ConfigError("mixture weights must be non-negative");
                for (const auto& c : m.components) {
                    if (c.weight < 0.0) throw ConfigError("mixture weights must be non-negative");
                    if (!(c.variance > 0.0)) throw ConfigError("mixture variances must be positive");
                    sum += c.weight;
                }
                if (std::abs(sum - 1.0) > 1e-12) throw ConfigError("mixture weights must sum to 1");
            } else if constexpr (std::is_same_v<M, BreitWignerIntensity>) {
                if (!(m.lambda_tot >= 0.0)) throw ConfigError("lambda_tot must be non-negative");
                if (!(m.width > 0.0)) throw ConfigError("Breit-Wigner width must be positive");
                if (!(m.domain.hi > m.domain.lo)) throw ConfigError("intensity domain must be nonempty");
            } else {
                if (m.beta.size() != m.basis.size())
                    throw ConfigError("spline intensity coefficients do not match the basis");
                if ((m.beta.array() < 0.0).any())
                    throw ConfigError("spline intensity coefficients must be non-negative");
            }
        },
        model);
}

Interval intensity_domain(const IntensityModel& model) {
    return std::visit(
        [](const auto& m) -> Interval {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, SplineIntensity>) return m.basis.domain();
            else return m.domain;
        },
        model);
}

double intensity_at(const IntensityModel& model, double s) {
    if (!intensity_domain(model).contains(s)) return 0.0;
    return std::visit(
        [s](const auto& m) -> double {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, GaussianMixtureIntensity>) {
                double density = m.uniform_weight / m.domain.width();
                for (const auto& c : m.components) {
                    const double sd = std::sqrt(c.variance);
                    const double z = (s - c.mean) / sd;
                    density += c.weight * std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
                }
                return m.lambda_tot * density;
            } else if constexpr (std::is_same_v<M, BreitWignerIntensity>) {
                const double mass = cauchy_cdf(m, m.domain.hi) - cauchy_cdf(m, m.domain.lo);
                const double half = 0.5 * m.width;
                const double p = m.width / (2.0 * std::numbers::pi) /
                                 ((s - m.mode) * (s - m.mode) + half * half);
                return m.lambda_tot * p / mass;
            } else {
                const Vector b = m.basis.eval(s, 0);
                return b.dot(m.beta);
            }
        },
        model);
}

double total_intensity(const IntensityModel& model) {
    return std::visit(
        [](const auto& m) -> double {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, GaussianMixtureIntensity>) {
                double mass = m.uniform_weight;
                for (const auto& c : m.components) {
                    const double sd = std::sqrt(c.variance);
                    mass += c.weight * (normal_cdf((m.domain.hi - c.mean) / sd) -
                                        normal_cdf((m.domain.lo - c.mean) / sd));
                }
                return m.lambda_tot * mass;
            } else if constexpr (std::is_same_v<M, BreitWignerIntensity>) {
                return m.lambda_tot;
            } else {
                const Vector integrals = m.basis.integrate(m.basis.domain().lo, m.basis.domain().hi);
                return integrals.dot(m.beta);
            }
        },
        model);
}

std::int64_t BinnedCounts::total() const { return std::accumulate(y.begin(), y.end(), std::int64_t{0}); }

Vector BinnedCounts::as_vector() const {
    Vector v(static_cast<Eigen::Index>(y.size()));
    for (std::size_t i = 0; i < y.size(); ++i) v(static_cast<Eigen::Index>(i)) = static_cast<double>(y[i]);
    return v;
}

std::vector<double> sample_process(const IntensityModel& model, std::uint64_t seed) {
    validate_intensity(model);
    Rng rng = make_rng(seed, 0);
    const double total = total_intensity(model);
    if (!(total > 0.0)) return {};
    const auto tau = std::poisson_distribution<std::int64_t>(total)(rng);
    std::vector<double> points;
    points.reserve(static_cast<std::size_t>(tau));
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    std::visit(
        [&](const auto& m) {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, GaussianMixtureIntensity>) {
                std::vector<double> weights;
                for (const auto& c : m.components) weights.push_back(c.weight);
                weights.push_back(m.uniform_weight);
                std::discrete_distribution<int> pick(weights.begin(), weights.end());
                std::normal_distribution<double> normal(0.0, 1.0);
                const int uniform_index = static_cast<int>(m.components.size());
                while (static_cast<std::int64_t>(points.size()) < tau) {
                    const int k = pick(rng);
                    double x;
                    if (k == uniform_index) {
                        x = m.domain.lo + m.domain.width() * unif(rng);
                    } else {
                        x = m.components[k].mean + std::sqrt(m.components[k].variance) * normal(rng);
                    }
                    if (m.domain.contains(x)) points.push_back(x);
                }
            } else if constexpr (std::is_same_v<M, BreitWignerIntensity>) {
                const double lo = cauchy_cdf(m, m.domain.lo), hi = cauchy_cdf(m, m.domain.hi);
                for (std::int64_t i = 0; i < tau; ++i) {
                    const double u = lo + (hi - lo) * unif(rng);
                    const double x = m.mode + 0.5 * m.width * std::tan(std::numbers::pi * (u - 0.5));
                    points.push_back(std::clamp(x, m.domain.lo, m.domain.hi));
                }
            } else {
                const Vector integrals = m.basis.integrate(m.basis.domain().lo, m.basis.domain().hi);
                std::vector<double> weights(m.beta.size());
                for (Eigen::Index j = 0; j < m.beta.size(); ++j) weights[j] = m.beta(j) * integrals(j);
                std::discrete_distribution<int> pick(weights.begin(), weights.end());
                const auto& t = m.basis.padded_knots();
                const int order = m.basis.order();
                while (static_cast<std::int64_t>(points.size()) < tau) {
                    const int j = pick(rng);
                    const double a = t[j], b = t[j + order];
                    const double x = a + (b - a) * unif(rng);
                    // B_j <= 1 everywhere, so a uniform envelope suffices.
                    if (unif(rng) <= m.basis.eval(x, 0)(j)) points.push_back(x);
                }
            }
        },
        model);
    return points;
}

double draw_response(const SmearingKernel& kernel, double s, Rng& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    return std::visit(
        [&](const auto& k) -> double {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, GaussianConvolution>) {
                return s + k.sigma * normal(rng);
            } else if constexpr (std::is_same_v<K, CrystalBall>) {
                const double c = crystal_ball_norm(k.sigma, k.alpha, k.gamma);
                const double tail = crystal_ball_cdf(k.delta_m - k.alpha * k.sigma, k.delta_m, k.sigma,
                                                     k.alpha, k.gamma);
                double z;
                if (unif(rng) < tail) {
                    // Invert the power-law tail CDF.
                    const double ratio = k.gamma / k.alpha;
                    const double amp = std::pow(ratio, k.gamma) * std::exp(-0.5 * k.alpha * k.alpha);
                    const double u = tail * (1.0 - unif(rng));  // (0, tail]
                    const double base =
                        std::pow(u * (k.gamma - 1.0) / (c * k.sigma * amp), 1.0 / (1.0 - k.gamma));
                    z = std::min(ratio - k.alpha - base, -k.alpha);
                } else {
                    do z = normal(rng);
                    while (z <= -k.alpha);
                }
                return s + k.delta_m + k.sigma * z;
            } else {
                if (!(s >= k.s_grid.front() && s <= k.s_grid.back()))
                    throw NumericalError("tabulated kernel undefined at true value outside its grid");
                auto it = std::upper_bound(k.s_grid.begin(), k.s_grid.end(), s);
                const int i = std::clamp(static_cast<int>(it - k.s_grid.begin()) - 1, 0,
                                         static_cast<int>(k.s_grid.size()) - 2);
                const double bound =
                    std::max(k.density.row(i).maxCoeff(), k.density.row(i + 1).maxCoeff());
                if (!(bound > 0.0)) throw NumericalError("tabulated kernel has no mass at this true value");
                const double lo = k.t_grid.front(), hi = k.t_grid.back();
                for (;;) {
                    const double t = lo + (hi - lo) * unif(rng);
                    if (unif(rng) * bound <= k(t, s)) return t;
                }
            }
        },
        kernel);
}

std::vector<double> thin_and_smear(std::span<const double> points, const Efficiency& eff,
                                   const SmearingKernel& kernel, Interval smeared_space,
                                   std::uint64_t seed) {
    validate_kernel(kernel);
    Rng rng = make_rng(seed, 1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> out;
    out.reserve(points.size());
    for (double x : points) {
        const double e = eff(x);
        if (e < 1.0 && unif(rng) >= e) continue;
        const double y = draw_response(kernel, x, rng);
        if (smeared_space.contains(y)) out.push_back(y);
    }
    return out;
}

BinnedCounts bin_points(std::span<const double> points, const BinningScheme& binning) {
    BinnedCounts counts{std::vector<std::int64_t>(binning.size(), 0), binning};
    for (double x : points) {
        const auto bin = binning.locate(x);
        if (!bin)
            throw std::out_of_range("point " + std::to_string(x) + " lies outside the binning range");
        ++counts.y[*bin];
    }
    return counts;
}

std::pair<BinnedCounts, BinnedCounts> binomial_split(const BinnedCounts& counts, double keep_prob,
                                                     std::uint64_t seed) {
    if (!(keep_prob >= 0.0 && keep_prob <= 1.0)) throw ConfigError("keep probability must lie in [0, 1]");
    Rng rng = make_rng(seed, 2);
    BinnedCounts kept{std::vector<std::int64_t>(counts.y.size(), 0), counts.binning};
    BinnedCounts rest = kept;
    for (std::size_t i = 0; i < counts.y.size(); ++i) {
        if (counts.y[i] < 0) throw std::invalid_argument("bin counts must be non-negative");
        const auto k = std::binomial_distribution<std::int64_t>(counts.y[i], keep_prob)(rng);
        kept.y[i] = k;
        rest.y[i] = counts.y[i] - k;
    }
    return {kept, rest};
}

BinnedCounts poisson_counts(const Vector& mean, const BinningScheme& binning, Rng& rng) {
    if (mean.size() != binning.size()) throw std::invalid_argument("mean vector does not match binning");
    BinnedCounts out{std::vector<std::int64_t>(binning.size(), 0), binning};
    for (int i = 0; i < binning.size(); ++i) {
        if (!(mean(i) >= 0.0)) throw NumericalError("Poisson mean must be non-negative");
        out.y[i] = mean(i) > 0.0 ? std::poisson_distribution<std::int64_t>(mean(i))(rng) : 0;
    }
    return out;
}

GaussianMixtureIntensity gmm_intensity(double lambda_tot) {
    GaussianMixtureIntensity m;
    m.lambda_tot = lambda_tot;
    m.components = {{0.2, -2.0, 1.0}, {0.5, 2.0, 1.0}};
    m.uniform_weight = 0.3;
    m.domain = {-7.0, 7.0};
    return m;
}

CrystalBall z_crystal_ball() { return CrystalBall{0.58, 0.99, 1.81, 1.60}; }

}  // namespace ebunfold
