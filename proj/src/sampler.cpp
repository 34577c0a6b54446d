#include "ebunfold/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace ebunfold {

double log_normal_cdf(double x) {
    if (x > -37.0) return std::log(0.5 * std::erfc(-x / std::numbers::sqrt2));
    // Asymptotic expansion of the Mills ratio.
    const double x2 = x * x;
    const double series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
    return -0.5 * x2 - std::log(-x) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(series);
}

double truncated_normal_logpdf(double x, double mean, double variance) {
    if (x < 0.0) return -std::numeric_limits<double>::infinity();
    const double sd = std::sqrt(variance);
    const double z = (x - mean) / sd;
    return -0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi) - std::log(sd) - log_normal_cdf(mean / sd);
}

double truncated_normal_draw(double mean, double variance, Rng& rng) {
    const double sd = std::sqrt(variance);
    const double lower = -mean / sd;  // standardized truncation point
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double z;
    if (lower <= 0.0) {
        std::normal_distribution<double> normal(0.0, 1.0);
        do z = normal(rng);
        while (z < lower);
    } else {
        // Exponential envelope for the Gaussian tail beyond `lower`.
        const double rate = 0.5 * (lower + std::sqrt(lower * lower + 4.0));
        for (;;) {
            z = lower - std::log1p(-unif(rng)) / rate;
            const double d = z - rate;
            if (unif(rng) <= std::exp(-0.5 * d * d)) break;
        }
    }
    return std::max(0.0, mean + sd * z);
}

namespace {

struct LikelihoodSlope {
    double d1 = 0.0;  // ∂ log L / ∂β_k
    double d2 = 0.0;  // ∂² log L / ∂β_k²
};

LikelihoodSlope likelihood_slope(const Vector& y, const Matrix& K, const Vector& mu, int k) {
    LikelihoodSlope s;
    const auto col = K.col(k);
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
        const double kik = col(i);
        if (kik == 0.0) continue;
        if (y(i) > 0.0) {
            const double r = y(i) / mu(i);
            s.d1 += kik * (r - 1.0);
            s.d2 -= kik * kik * r / mu(i);
        } else {
            s.d1 -= kik;
        }
    }
    return s;
}

CoordinateProposal make_proposal(const LikelihoodSlope& s, double delta, double omega_kk, double omega_off,
                                 double b0) {
    const double precision = -s.d2 + 2.0 * delta * omega_kk;
    if (!(precision > 0.0) || !std::isfinite(precision))
        throw NumericalError("non-positive proposal variance; full conditional is not log-concave");
    CoordinateProposal q;
    q.variance = 1.0 / precision;
    q.mean = (s.d1 - s.d2 * b0 - 2.0 * delta * omega_off) * q.variance;
    if (!std::isfinite(q.mean)) throw NumericalError("non-finite proposal mean");
    return q;
}

}  // namespace

CoordinateProposal coordinate_proposal(const PosteriorModel& model, const Vector& beta, const Vector& mu,
                                       int k) {
    const Matrix& omega = model.omega_a();
    const double off = omega.col(k).dot(beta) - omega(k, k) * beta(k);
    return make_proposal(likelihood_slope(model.y(), model.K(), mu, k), model.delta(), omega(k, k), off,
                         beta(k));
}

ChainSample sample_posterior(const PosteriorModel& model, const SamplerConfig& cfg) {
    const int p = model.dim();
    if (cfg.n_samples < 1) throw ConfigError("number of MCMC samples must be >= 1");
    if (cfg.burn_in < 0) throw ConfigError("burn-in must be >= 0");
    if (cfg.beta_init.size() != p) throw ConfigError("MCMC start vector has the wrong length");
    if ((cfg.beta_init.array() < 0.0).any()) throw ConfigError("MCMC start vector must be non-negative");
    if (!std::isfinite(model.log_posterior(cfg.beta_init)))
        throw NumericalError("MCMC start point has zero posterior density");

    const Vector& y = model.y();
    const Matrix& K = model.K();
    const Matrix& omega = model.omega_a();
    const double delta = model.delta();
    const Eigen::Index n = K.rows();

    Rng rng = make_rng(cfg.seed, 0x5a3);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    Vector beta = cfg.beta_init;
    Vector mu = K * beta;
    Vector omega_beta = omega * beta;
    Vector mu_new(n);
    const Vector col_sums = K.colwise().sum().transpose();

    ChainSample chain;
    chain.draws.resize(cfg.n_samples, p);
    Vector accepted = Vector::Zero(p);
    Vector accept_prob = Vector::Zero(p);

    const int total = cfg.burn_in + cfg.n_samples;
    for (int sweep = 0; sweep < total; ++sweep) {
        const bool recording = sweep >= cfg.burn_in;
        for (int k = 0; k < p; ++k) {
            const double b0 = beta(k);
            const double a = omega(k, k);
            const double off = omega_beta(k) - a * b0;
            const CoordinateProposal fwd = make_proposal(likelihood_slope(y, K, mu, k), delta, a, off, b0);
            const double b1 = truncated_normal_draw(fwd.mean, fwd.variance, rng);
            const double step = b1 - b0;

            // Log target ratio of the full conditional.
            double log_ratio = -step * col_sums(k);
            bool feasible = true;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double kik = K(i, k);
                mu_new(i) = mu(i) + kik * step;
                if (y(i) > 0.0 && kik != 0.0) {
                    if (mu_new(i) <= 0.0) {
                        feasible = false;
                        break;
                    }
                    const double x = kik * step / mu(i);
                    // Second-order series is exact in double precision for tiny x.
                    log_ratio += y(i) * (std::abs(x) < 1e-8 ? x * (1.0 - 0.5 * x) : std::log1p(x));
                }
            }
            double alpha = 0.0;
            if (feasible) {
                log_ratio -= delta * (a * (b1 * b1 - b0 * b0) + 2.0 * off * step);
                const CoordinateProposal rev =
                    make_proposal(likelihood_slope(y, K, mu_new, k), delta, a, off, b1);
                log_ratio += truncated_normal_logpdf(b0, rev.mean, rev.variance) -
                             truncated_normal_logpdf(b1, fwd.mean, fwd.variance);
                alpha = log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
            }
            const double u = unif(rng);
            const bool accept = feasible && u < alpha;
            if (accept) {
                beta(k) = b1;
                mu.swap(mu_new);
                omega_beta.noalias() += omega.col(k) * step;
            }
            if (recording) {
                accepted(k) += accept ? 1.0 : 0.0;
                accept_prob(k) += alpha;
            }
        }
        // Full recomputation bounds incremental drift.
        mu.noalias() = K * beta;
        omega_beta.noalias() = omega * beta;
        if (recording) chain.draws.row(sweep - cfg.burn_in) = beta.transpose();
    }

    chain.acceptance_rate = accepted / cfg.n_samples;
    chain.mean_accept_prob = accept_prob / cfg.n_samples;
    chain.kappa.resize(p);
    chain.ess.resize(p);
    std::vector<double> series(cfg.n_samples);
    for (int k = 0; k < p; ++k) {
        for (int s = 0; s < cfg.n_samples; ++s) series[s] = chain.draws(s, k);
        const AutocorrEstimate est = cfg.n_samples >= 10 ? autocorr_time_icse_detail(series)
                                                         : AutocorrEstimate{1.0, true};
        chain.kappa(k) = est.kappa;
        chain.ess(k) = cfg.n_samples / est.kappa;
        if (accepted(k) == 0.0)
            chain.warnings.push_back("coefficient " + std::to_string(k + 1) +
                                     ": every proposal was rejected in the recorded run");
    }
    return chain;
}

// ---------------------------------------------------------------------------
// Autocorrelation

namespace {

double autocovariance(std::span<const double> x, double mean, std::size_t lag) {
    const std::size_t n = x.size();
    double sum = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) sum += (x[i] - mean) * (x[i + lag] - mean);
    return sum / static_cast<double>(n);
}

// Greatest convex minorant of (i, v_i), evaluated at the integer abscissae.
std::vector<double> convex_minorant(const std::vector<double>& v) {
    const std::size_t n = v.size();
    if (n < 3) return v;
    std::vector<std::size_t> hull;
    for (std::size_t i = 0; i < n; ++i) {
        while (hull.size() >= 2) {
            const std::size_t a = hull[hull.size() - 2], b = hull.back();
            // Drop b if it lies on or above the chord from a to i.
            const double cross = (v[b] - v[a]) * static_cast<double>(i - a) -
                                 (v[i] - v[a]) * static_cast<double>(b - a);
            if (cross >= 0.0) hull.pop_back();
            else break;
        }
        hull.push_back(i);
    }
    std::vector<double> out(n);
    for (std::size_t h = 0; h + 1 < hull.size(); ++h) {
        const std::size_t a = hull[h], b = hull[h + 1];
        for (std::size_t i = a; i <= b; ++i)
            out[i] = v[a] + (v[b] - v[a]) * static_cast<double>(i - a) / static_cast<double>(b - a);
    }
    return out;
}

}  // namespace

AutocorrEstimate autocorr_time_icse_detail(std::span<const double> series) {
    const std::size_t n = series.size();
    if (n < 10) throw std::invalid_argument("autocorrelation time needs at least 10 observations");
    const double mean = std::accumulate(series.begin(), series.end(), 0.0) / static_cast<double>(n);
    const double gamma0 = autocovariance(series, mean, 0);
    if (!(gamma0 > 1e-300 * std::max(1.0, mean * mean))) return {static_cast<double>(n), true};

    // Initial positive sequence of pair sums Γ_m = γ_{2m} + γ_{2m+1}.
    std::vector<double> pairs;
    bool terminated = false;
    for (std::size_t m = 0; 2 * m + 1 < n; ++m) {
        const double g = (m == 0 ? gamma0 : autocovariance(series, mean, 2 * m)) +
                         autocovariance(series, mean, 2 * m + 1);
        if (g <= 0.0) {
            terminated = true;
            break;
        }
        pairs.push_back(g);
    }
    // Initial monotone, then convex, sequence.
    for (std::size_t m = 1; m < pairs.size(); ++m) pairs[m] = std::min(pairs[m], pairs[m - 1]);
    pairs = convex_minorant(pairs);

    const double var = -gamma0 + 2.0 * std::accumulate(pairs.begin(), pairs.end(), 0.0);
    AutocorrEstimate est;
    est.kappa = std::max(1.0, var / gamma0);
    est.degenerate = !terminated || 2 * pairs.size() > n / 4;
    return est;
}

double autocorr_time_icse(std::span<const double> series) { return autocorr_time_icse_detail(series).kappa; }

std::vector<double> autocorrelation(std::span<const double> series, int max_lag) {
    const std::size_t n = series.size();
    std::vector<double> acf;
    if (n == 0) return acf;
    const double mean = std::accumulate(series.begin(), series.end(), 0.0) / static_cast<double>(n);
    const double g0 = autocovariance(series, mean, 0);
    for (int lag = 0; lag <= max_lag && static_cast<std::size_t>(lag) < n; ++lag)
        acf.push_back(g0 > 0.0 ? autocovariance(series, mean, static_cast<std::size_t>(lag)) / g0 : 0.0);
    return acf;
}

// ---------------------------------------------------------------------------
// Diagnostics

ChainDiagnostics chain_diagnostics(const ChainSample& chain) {
    if (chain.size() == 0) throw std::invalid_argument("empty chain");
    ChainDiagnostics d;
    d.n_samples = chain.size();
    d.warnings = chain.warnings;
    std::vector<double> series(chain.size());
    double min_ess = std::numeric_limits<double>::infinity();
    for (int k = 0; k < chain.dim(); ++k) {
        for (int s = 0; s < chain.size(); ++s) series[s] = chain.draws(s, k);
        CoordinateDiagnostics c;
        c.index = k + 1;
        const double mean = std::accumulate(series.begin(), series.end(), 0.0) / series.size();
        double ss = 0.0;
        for (double v : series) ss += (v - mean) * (v - mean);
        c.mean = mean;
        c.sd = series.size() > 1 ? std::sqrt(ss / (series.size() - 1)) : 0.0;
        c.acceptance = chain.acceptance_rate.size() > k ? chain.acceptance_rate(k) : 0.0;
        if (series.size() >= 10) {
            const AutocorrEstimate est = autocorr_time_icse_detail(series);
            c.kappa = est.kappa;
            c.degenerate = est.degenerate;
        } else {
            c.kappa = 1.0;
            c.degenerate = true;
        }
        c.ess = chain.size() / c.kappa;
        const auto acf = autocorrelation(series, 1);
        c.lag1 = acf.size() > 1 ? acf[1] : 0.0;
        d.mean_acceptance += c.acceptance;
        d.mean_kappa += c.kappa;
        min_ess = std::min(min_ess, c.ess);
        if (c.degenerate)
            d.warnings.push_back("coefficient " + std::to_string(c.index) +
                                 ": autocorrelation estimate is degenerate");
        d.coordinates.push_back(c);
    }
    d.mean_acceptance /= chain.dim();
    d.mean_kappa /= chain.dim();
    d.min_ess = min_ess;
    return d;
}

nlohmann::json ChainDiagnostics::to_json() const {
    nlohmann::json j;
    j["n_samples"] = n_samples;
    j["mean_acceptance"] = mean_acceptance;
    j["mean_kappa"] = mean_kappa;
    j["min_ess"] = min_ess;
    j["warnings"] = warnings;
    auto& arr = j["coordinates"] = nlohmann::json::array();
    for (const auto& c : coordinates) {
        arr.push_back({{"index", c.index},
                       {"mean", c.mean},
                       {"sd", c.sd},
                       {"acceptance", c.acceptance},
                       {"kappa", c.kappa},
                       {"ess", c.ess},
                       {"lag1_autocorrelation", c.lag1},
                       {"degenerate", c.degenerate}});
    }
    return j;
}

ChainDiagnostics ChainDiagnostics::from_json(const nlohmann::json& j) {
    ChainDiagnostics d;
    d.n_samples = j.at("n_samples").get<int>();
    d.mean_acceptance = j.at("mean_acceptance").get<double>();
    d.mean_kappa = j.at("mean_kappa").get<double>();
    d.min_ess = j.at("min_ess").get<double>();
    d.warnings = j.value("warnings", std::vector<std::string>{});
    for (const auto& c : j.at("coordinates")) {
        CoordinateDiagnostics cd;
        cd.index = c.at("index").get<int>();
        cd.mean = c.at("mean").get<double>();
        cd.sd = c.at("sd").get<double>();
        cd.acceptance = c.at("acceptance").get<double>();
        cd.kappa = c.at("kappa").get<double>();
        cd.ess = c.at("ess").get<double>();
        cd.lag1 = c.at("lag1_autocorrelation").get<double>();
        cd.degenerate = c.value("degenerate", false);
        d.coordinates.push_back(cd);
    }
    return d;
}

PlotSeries plot_series(const ChainSample& chain, int coordinate, int bins, int max_lag) {
    if (coordinate < 0 || coordinate >= chain.dim()) throw std::out_of_range("coordinate out of range");
    PlotSeries out;
    out.trace.resize(chain.size());
    for (int s = 0; s < chain.size(); ++s) out.trace[s] = chain.draws(s, coordinate);
    double sum = 0.0;
    for (int s = 0; s < chain.size(); ++s) {
        sum += out.trace[s];
        out.cumulative_mean.push_back(sum / (s + 1));
    }
    out.acf = autocorrelation(out.trace, max_lag);
    const auto [lo_it, hi_it] = std::minmax_element(out.trace.begin(), out.trace.end());
    double lo = *lo_it, hi = *hi_it;
    if (hi <= lo) hi = lo + 1.0;
    out.histogram_counts.assign(bins, 0.0);
    for (int b = 0; b <= bins; ++b) out.histogram_edges.push_back(lo + (hi - lo) * b / bins);
    for (double v : out.trace) {
        int b = static_cast<int>((v - lo) / (hi - lo) * bins);
        out.histogram_counts[std::clamp(b, 0, bins - 1)] += 1.0;
    }
    return out;
}

}  // namespace ebunfold
