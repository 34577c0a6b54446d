#include "ebunfold/uq.hpp"

#include "ebunfold/csv.hpp"
#include "ebunfold/simulate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace ebunfold {

std::string to_string(Scheme s) { return s == Scheme::Scheme1 ? "scheme1" : "scheme2"; }
std::string to_string(BandKind k) { return k == BandKind::Percentile ? "percentile" : "basic"; }

Scheme parse_scheme(const std::string& s) {
    if (s == "1" || s == "scheme1") return Scheme::Scheme1;
    if (s == "2" || s == "scheme2") return Scheme::Scheme2;
    throw ConfigError("unknown bootstrap scheme '" + s + "' (expected 1 or 2)");
}

BandKind parse_band_kind(const std::string& s) {
    if (s == "percentile") return BandKind::Percentile;
    if (s == "basic") return BandKind::Basic;
    throw ConfigError("unknown band kind '" + s + "' (expected percentile or basic)");
}

void BootstrapConfig::validate() const {
    if (R < 2) throw ConfigError("bootstrap needs R >= 2 replicates");
    if (!(alpha > 0.0 && alpha < 0.5)) throw ConfigError("alpha must lie in (0, 0.5)");
    if (workers < 1) throw ConfigError("worker count must be >= 1");
    if (grid.empty()) throw ConfigError("bootstrap evaluation grid is empty");
    if (bias_correction && scheme != Scheme::Scheme1)
        throw ConfigError("bias correction requires resampling scheme 1");
}

void parallel_for(int count, int workers, const std::function<void(int)>& fn) {
    workers = std::max(1, std::min(workers, count));
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto run = [&] {
        for (int i = next++; i < count; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    if (workers == 1) {
        run();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(run);
        for (auto& t : pool) t.join();
    }
    if (error) std::rethrow_exception(error);
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile level outside [0, 1]");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::pair<Vector, Vector> percentile_band(const Matrix& replicates, double alpha) {
    if (replicates.rows() < 2) throw std::invalid_argument("percentile band needs at least two replicates");
    const Eigen::Index g = replicates.cols();
    Vector lower(g), upper(g);
    std::vector<double> column(replicates.rows());
    for (Eigen::Index j = 0; j < g; ++j) {
        for (Eigen::Index r = 0; r < replicates.rows(); ++r) column[r] = replicates(r, j);
        lower(j) = quantile(column, alpha);
        upper(j) = quantile(column, 1.0 - alpha);
    }
    return {lower, upper};
}

std::pair<Vector, Vector> basic_band(const Vector& f_hat, const Matrix& replicates, double alpha,
                                     bool clip_nonneg) {
    if (f_hat.size() != replicates.cols()) throw std::invalid_argument("basic band: grid size mismatch");
    const auto [q_lo, q_hi] = percentile_band(replicates, alpha);
    Vector lower = 2.0 * f_hat - q_hi;
    Vector upper = 2.0 * f_hat - q_lo;
    if (clip_nonneg) {
        lower = lower.cwiseMax(0.0);
        upper = upper.cwiseMax(0.0);
    }
    return {lower, upper};
}

Vector bias_correct(const Vector& f_hat, const Matrix& replicates, Scheme scheme) {
    if (scheme != Scheme::Scheme1)
        throw ConfigError("bias correction is only defined for replicates resampled around the fit (scheme 1)");
    if (f_hat.size() != replicates.cols()) throw std::invalid_argument("bias correction: grid size mismatch");
    if (replicates.rows() < 1) throw std::invalid_argument("bias correction needs replicates");
    return 2.0 * f_hat - replicates.colwise().mean().transpose();
}

double ise(const std::function<double(double)>& f_hat, const std::function<double(double)>& f_true,
           Interval domain, int panels) {
    if (panels < 1) throw std::invalid_argument("ise needs at least one panel");
    const GaussLegendre rule(5);
    const double h = domain.width() / panels;
    double total = 0.0;
    for (int k = 0; k < panels; ++k) {
        const double a = domain.lo + k * h;
        const double b = k + 1 == panels ? domain.hi : a + h;
        total += rule.integrate(
            [&](double s) {
                const double d = f_hat(s) - f_true(s);
                return d * d;
            },
            a, b);
    }
    return total;
}

UnfoldResult bootstrap_unfold(const Vector& y, const Matrix& K, const PenaltyMatrix& penalty,
                              const SplineBasis& basis, const McemResult& base, const McemConfig& mcem_cfg,
                              const BootstrapConfig& bs, const ReplicateInit& init) {
    bs.validate();
    if (y.size() != K.rows() || base.beta_hat.size() != K.cols())
        throw ConfigError("bootstrap inputs have inconsistent dimensions");

    UnfoldResult res;
    res.beta_hat = base.beta_hat;
    res.delta_hat = base.delta_hat;
    res.grid = bs.grid;
    res.f_hat = eval_intensity(basis, base.beta_hat, bs.grid);
    res.band_kind = bs.band;
    res.scheme = bs.scheme;
    res.R_requested = bs.R;

    const Vector mean = bs.scheme == Scheme::Scheme1 ? Vector(K * base.beta_hat) : y;
    McemConfig rep_cfg = mcem_cfg;
    rep_cfg.delta0 = base.delta_hat;

    const Eigen::Index g = static_cast<Eigen::Index>(bs.grid.size());
    std::vector<std::optional<Vector>> curves(bs.R);
    std::vector<double> deltas(bs.R, 0.0);
    std::vector<std::string> errors(bs.R);
    parallel_for(bs.R, bs.workers, [&](int r) {
        try {
            Rng rng = make_rng(bs.seed, 2 * static_cast<std::uint64_t>(r));
            Vector y_star(mean.size());
            for (Eigen::Index i = 0; i < mean.size(); ++i) {
                if (mean(i) > 0.0) {
                    std::poisson_distribution<long long> pois(mean(i));
                    y_star(i) = static_cast<double>(pois(rng));
                } else {
                    y_star(i) = 0.0;
                }
            }
            McemConfig cfg = rep_cfg;
            cfg.seed = stream_seed(bs.seed, 2 * static_cast<std::uint64_t>(r) + 1);
            const Vector start = init ? init(y_star) : base.beta_hat;
            const McemResult fit = mcem_fit(y_star, K, penalty, start, cfg);
            curves[r] = eval_intensity(basis, fit.beta_hat, bs.grid);
            deltas[r] = fit.delta_hat;
        } catch (const std::exception& e) {
            errors[r] = e.what();
        }
    });

    std::vector<int> ok;
    for (int r = 0; r < bs.R; ++r) {
        if (curves[r]) ok.push_back(r);
        else res.warnings.push_back("replicate " + std::to_string(r) + " dropped: " + errors[r]);
    }
    res.R_effective = static_cast<int>(ok.size());
    if (res.R_effective < 2)
        throw ConvergenceError("bootstrap failed: only " + std::to_string(res.R_effective) + " of " +
                               std::to_string(bs.R) + " replicates succeeded");
    if (bs.R - res.R_effective > 0.05 * bs.R)
        res.warnings.push_back(std::to_string(bs.R - res.R_effective) + " of " + std::to_string(bs.R) +
                               " bootstrap replicates were dropped (more than 5%)");

    Matrix reps(res.R_effective, g);
    for (int k = 0; k < res.R_effective; ++k) {
        reps.row(k) = curves[ok[k]]->transpose();
        res.replicate_deltas.push_back(deltas[ok[k]]);
    }
    std::tie(res.lower, res.upper) = bs.band == BandKind::Percentile ? percentile_band(reps, bs.alpha)
                                                                     : basic_band(res.f_hat, reps, bs.alpha,
                                                                                  bs.clip_nonneg);
    if (bs.band == BandKind::Basic && !bs.clip_nonneg && (res.lower.array() < 0.0).any())
        res.warnings.push_back("basic band has negative lower limits (not clipped)");
    if (bs.bias_correction) res.f_bc = bias_correct(res.f_hat, reps, bs.scheme);
    if (bs.keep_replicates) res.replicates = std::move(reps);
    return res;
}

std::vector<MiseRow> mise_study(const std::function<Scenario(double)>& scenario,
                                const std::vector<double>& lambdas, int reps, std::uint64_t seed,
                                int workers) {
    if (reps < 2) throw ConfigError("MISE study needs at least two repetitions");
    std::vector<MiseRow> table;
    for (std::size_t li = 0; li < lambdas.size(); ++li) {
        const double lambda = lambdas[li];
        if (!(lambda > 0.0)) throw ConfigError("MISE study intensities must be positive");
        const Scenario sc = scenario(lambda);
        if (!sc.truth) throw ConfigError("scenario '" + sc.name + "' has no known truth");
        const Setup setup = prepare(sc);
        const std::uint64_t lambda_seed = stream_seed(seed, li);
        std::vector<double> errors(reps, std::numeric_limits<double>::quiet_NaN());
        parallel_for(reps, workers, [&](int r) {
            try {
                const std::uint64_t rep_seed = stream_seed(lambda_seed, static_cast<std::uint64_t>(r));
                const BinnedCounts counts = simulate_counts(sc, rep_seed);
                McemConfig cfg = sc.mcem;
                cfg.seed = stream_seed(rep_seed, 99);
                const McemResult fit = unfold_counts(setup, counts, cfg);
                const IntensityModel& truth = *sc.truth;
                errors[r] = ise([&](double s) { return setup.basis.eval(s, 0).dot(fit.beta_hat); },
                                [&](double s) { return intensity_at(truth, s); }, sc.true_space);
            } catch (const std::exception&) {
            }
        });
        MiseRow row;
        row.lambda = lambda;
        double sum = 0.0, sum2 = 0.0;
        for (double e : errors) {
            if (std::isnan(e)) {
                ++row.failures;
                continue;
            }
            const double v = e / (lambda * lambda);
            sum += v;
            sum2 += v * v;
            ++row.reps;
        }
        if (row.reps < 2) throw ConvergenceError("MISE study: too many failed repetitions at λ = " + format_double(lambda));
        row.mise_over_lambda2 = sum / row.reps;
        const double var = (sum2 - row.reps * row.mise_over_lambda2 * row.mise_over_lambda2) / (row.reps - 1);
        row.std_error = std::sqrt(std::max(0.0, var) / row.reps);
        table.push_back(row);
    }
    return table;
}

void write_mise_csv(const std::vector<MiseRow>& rows, const std::string& path) {
    std::vector<std::vector<double>> out;
    for (const auto& r : rows)
        out.push_back({r.lambda, r.mise_over_lambda2, r.std_error, static_cast<double>(r.reps),
                       static_cast<double>(r.failures)});
    write_csv(path, {"lambda", "mise_over_lambda2", "std_error", "reps", "failures"}, out);
}

}  // namespace ebunfold
