#include "ebunfold/mcem.hpp"

#include "ebunfold/csv.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace ebunfold {

void McemConfig::validate() const {
    if (!(delta0 > 0.0) || !std::isfinite(delta0)) throw ConfigError("delta0 must be positive and finite");
    if (T < 1) throw ConfigError("MCEM needs at least one iteration");
    if (S_em < 1 || S_final < 1) throw ConfigError("MCMC sample sizes must be >= 1");
    if (burn_in_initial < 0 || burn_in_em < 0) throw ConfigError("burn-in must be >= 0");
    if (rel_tol < 0.0) throw ConfigError("rel_tol must be >= 0");
}

double m_step(const Matrix& draws, const PenaltyMatrix& penalty) {
    if (draws.rows() < 1) throw std::invalid_argument("m_step needs at least one draw");
    if (draws.cols() != penalty.size()) throw std::invalid_argument("m_step: dimension mismatch");
    double q = 0.0;
    for (Eigen::Index s = 0; s < draws.rows(); ++s) {
        const Vector b = draws.row(s).transpose();
        q += quadratic_form(penalty.omega_a, b);
    }
    if (!(q > 0.0))
        throw NumericalError("M-step undefined: the penalty quadratic form vanishes on every draw");
    return static_cast<double>(penalty.size()) * static_cast<double>(draws.rows()) / (2.0 * q);
}

double q_tilde(double delta, const Matrix& draws, const PenaltyMatrix& penalty) {
    double sum = 0.0;
    for (Eigen::Index s = 0; s < draws.rows(); ++s) sum += log_prior(penalty, delta, draws.row(s).transpose());
    return sum / static_cast<double>(draws.rows());
}

namespace {

std::string format_path(const std::vector<double>& path) {
    std::ostringstream os;
    for (std::size_t i = 0; i < path.size(); ++i) os << (i ? ", " : "") << format_double(path[i]);
    return os.str();
}

}  // namespace

McemResult mcem_fit(const Vector& y, const Matrix& K, const PenaltyMatrix& penalty, const Vector& beta_init,
                    const McemConfig& cfg) {
    cfg.validate();
    PosteriorModel model(y, K, penalty, cfg.delta0);

    McemResult res;
    res.trace.delta_path.push_back(cfg.delta0);
    Vector start = beta_init;
    double delta = cfg.delta0;
    int stable = 0;
    for (int t = 0; t < cfg.T; ++t) {
        SamplerConfig sc;
        sc.burn_in = t == 0 ? cfg.burn_in_initial : cfg.burn_in_em;
        sc.n_samples = cfg.S_em;
        sc.seed = stream_seed(cfg.seed, static_cast<std::uint64_t>(t));
        sc.beta_init = start;
        const ChainSample chain = sample_posterior(model.with_delta(delta), sc);

        double next;
        try {
            next = m_step(chain.draws, penalty);
        } catch (const NumericalError& e) {
            throw NumericalError(std::string(e.what()) + "; delta path: " + format_path(res.trace.delta_path));
        }
        if (!std::isfinite(next) || !(next > 0.0))
            throw NumericalError("non-finite delta update; delta path: " + format_path(res.trace.delta_path));

        res.trace.mean_kappa.push_back(chain.kappa.mean());
        res.trace.acceptance.push_back(chain.acceptance_rate.mean());
        res.trace.delta_path.push_back(next);
        start = chain.mean();

        if (cfg.rel_tol > 0.0) {
            stable = std::abs(std::log(next / delta)) < cfg.rel_tol ? stable + 1 : 0;
            delta = next;
            if (stable >= 3) break;
        } else {
            delta = next;
        }
    }

    res.delta_hat = delta;
    SamplerConfig sc;
    sc.burn_in = cfg.burn_in_em;
    sc.n_samples = cfg.S_final;
    sc.seed = stream_seed(cfg.seed, 0xf1a1ULL);
    sc.beta_init = start;
    res.final_chain = sample_posterior(model.with_delta(delta), sc);
    res.beta_hat = res.final_chain.mean();
    return res;
}

void write_trace_csv(const McemTrace& trace, const std::string& path) {
    std::vector<std::vector<double>> rows;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t t = 0; t < trace.delta_path.size(); ++t) {
        // Row t holds δ^(t) and the statistics of the E-step chain that produced it.
        const bool has_chain = t > 0 && t - 1 < trace.mean_kappa.size();
        rows.push_back({static_cast<double>(t), trace.delta_path[t], has_chain ? trace.mean_kappa[t - 1] : nan,
                        has_chain ? trace.acceptance[t - 1] : nan});
    }
    write_csv(path, {"iteration", "delta", "mean_kappa", "acceptance"}, rows);
}

}  // namespace ebunfold
