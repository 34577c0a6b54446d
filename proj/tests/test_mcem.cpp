#include "ebunfold/mcem.hpp"
#include "ebunfold/scenario.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/minima.hpp>
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace ebunfold;
using boost::math::quadrature::gauss_kronrod;

namespace {

PenaltyMatrix explicit_penalty(const Matrix& a) {
    PenaltyMatrix p;
    p.omega = p.omega_a = a;
    return p;
}

Matrix random_draws(int s, int p, std::uint64_t seed) {
    Rng rng(seed);
    std::gamma_distribution<double> g(2.0, 3.0);
    Matrix d(s, p);
    for (int i = 0; i < s; ++i)
        for (int j = 0; j < p; ++j) d(i, j) = g(rng);
    return d;
}

}  // namespace

TEST_SUITE("mcem") {

TEST_CASE("M-step closed form") {
    const PenaltyMatrix pen = curvature_penalty(make_uniform_basis({0, 1}, 4, 4), 2.0, 3.0);
    const Matrix one = random_draws(1, 8, 1);
    const Vector b = one.row(0).transpose();
    CHECK(m_step(one, pen) == doctest::Approx(8.0 / (2.0 * b.dot(pen.omega_a * b))).epsilon(1e-14));
    // Scaling draws by c scales δ by 1/c².
    const Matrix d = random_draws(50, 8, 2);
    CHECK(m_step(3.0 * d, pen) == doctest::Approx(m_step(d, pen) / 9.0).epsilon(1e-13));
    // Duplicating draws leaves δ unchanged.
    Matrix dd(100, 8);
    dd << d, d;
    CHECK(m_step(dd, pen) == doctest::Approx(m_step(d, pen)).epsilon(1e-13));
}

TEST_CASE("M-step maximizes the Monte Carlo objective") {
    const PenaltyMatrix pen = curvature_penalty(make_uniform_basis({-7, 7}, 10, 4), 5.0, 5.0);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const Matrix d = random_draws(20, pen.size(), 100 + seed);
        const double closed = m_step(d, pen);
        // Golden-section search over log δ, independent of the closed form.
        const auto best = boost::math::tools::brent_find_minima(
            [&](double ld) { return -q_tilde(std::exp(ld), d, pen); }, std::log(closed) - 10.0,
            std::log(closed) + 10.0, 52);
        CHECK(std::exp(best.first) == doctest::Approx(closed).epsilon(1e-6));
        // Derivative of the objective vanishes at the closed form.
        const double h = 1e-5 * closed;
        const double slope = (q_tilde(closed + h, d, pen) - q_tilde(closed - h, d, pen)) / (2 * h);
        CHECK(std::abs(slope * closed) < 1e-6 * pen.size());
    }
}

TEST_CASE("Monte Carlo objective on a grid") {
    const PenaltyMatrix pen = curvature_penalty(make_uniform_basis({0, 1}, 3, 4), 1.0, 1.0);
    const Matrix d = random_draws(30, pen.size(), 7);
    const double closed = m_step(d, pen);
    double best_val = -std::numeric_limits<double>::infinity(), best_delta = 0.0;
    for (int i = -400; i <= 400; ++i) {
        const double delta = closed * std::pow(10.0, i / 100.0);
        const double v = q_tilde(delta, d, pen);
        if (v > best_val) {
            best_val = v;
            best_delta = delta;
        }
    }
    CHECK(best_delta == doctest::Approx(closed).epsilon(1e-12));
    // q̃ is the mean of per-draw log priors.
    double mean = 0.0;
    for (int s = 0; s < d.rows(); ++s) mean += log_prior(pen, 0.7, d.row(s).transpose());
    CHECK(q_tilde(0.7, d, pen) == doctest::Approx(mean / d.rows()).epsilon(1e-13));
    // Strict concavity in log δ: second difference is negative.
    const double a = q_tilde(closed * 0.5, d, pen), b = q_tilde(closed, d, pen), c = q_tilde(closed * 2.0, d, pen);
    CHECK(a + c - 2 * b < 0.0);
}

TEST_CASE("M-step rejects a vanishing quadratic form") {
    const PenaltyMatrix pen = curvature_penalty(make_uniform_basis({0, 1}, 3, 4), 1.0, 1.0);
    CHECK_THROWS_AS(m_step(Matrix::Zero(5, pen.size()), pen), NumericalError);
    CHECK_THROWS(m_step(Matrix::Zero(0, pen.size()), pen));
}

TEST_CASE("MCEM reaches the marginal maximum likelihood in one dimension") {
    // y ~ Poisson(β), β ≥ 0 with density 2√(δa/π) exp(−δaβ²). The marginal
    // likelihood is a one-dimensional integral; maximize it directly.
    const double a = 1.0, y = 30.0;
    auto marginal = [&](double delta) {
        const double c = 2.0 * std::sqrt(delta * a / std::numbers::pi);
        return gauss_kronrod<double, 61>::integrate(
            [&](double b) {
                return b <= 0.0 ? 0.0 : c * std::exp(y * std::log(b) - b - std::lgamma(y + 1) - delta * a * b * b);
            },
            0.0, 200.0, 15, 1e-13);
    };
    const auto best = boost::math::tools::brent_find_minima(
        [&](double ld) { return -std::log(marginal(std::exp(ld))); }, std::log(1e-6), std::log(1.0), 40);
    const double delta_star = std::exp(best.first);

    McemConfig cfg;
    cfg.delta0 = 1e-2;
    cfg.T = 40;
    cfg.S_em = 4000;
    cfg.S_final = 1000;
    cfg.seed = 12;
    const McemResult r = mcem_fit(Vector::Constant(1, y), Matrix::Constant(1, 1, 1.0),
                                  explicit_penalty(Matrix::Constant(1, 1, a)), Vector::Constant(1, y), cfg);
    // Average the tail of the path to damp Monte Carlo noise.
    double tail = 0.0;
    for (int t = 31; t <= 40; ++t) tail += std::log(r.trace.delta_path[t]);
    CHECK(std::exp(tail / 10.0) == doctest::Approx(delta_star).epsilon(0.1));
}

TEST_CASE("MCEM path bookkeeping") {
    const Scenario sc = gmm_scenario(1000);
    const Setup setup = prepare(sc);
    const BinnedCounts y = simulate_counts(sc, 31);
    McemConfig cfg = sc.mcem;
    cfg.T = 5;
    cfg.S_em = 200;
    cfg.S_final = 300;
    cfg.seed = 4;
    const Vector init = initial_beta(setup, y);
    const McemResult r = mcem_fit(y.as_vector(), setup.K.K, setup.penalty, init, cfg);
    CHECK(r.trace.delta_path.size() == 6);
    CHECK(r.trace.delta_path.front() == cfg.delta0);
    CHECK(r.delta_hat == r.trace.delta_path.back());
    for (double d : r.trace.delta_path) CHECK(d > 0.0);
    CHECK(r.trace.iterations() == 5);
    CHECK(r.final_chain.size() == 300);
    CHECK((r.beta_hat - r.final_chain.mean()).norm() == 0.0);

    const McemResult again = mcem_fit(y.as_vector(), setup.K.K, setup.penalty, init, cfg);
    CHECK(again.trace.delta_path == r.trace.delta_path);
    CHECK(again.beta_hat == r.beta_hat);

    // Early stopping with a loose tolerance ends after three stable iterations.
    cfg.T = 50;
    cfg.rel_tol = 10.0;
    const McemResult early = mcem_fit(y.as_vector(), setup.K.K, setup.penalty, init, cfg);
    CHECK(early.trace.iterations() == 3);

    const auto path = std::filesystem::temp_directory_path() / "ebunfold_trace.csv";
    write_trace_csv(r.trace, path.string());
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "iteration,delta,mean_kappa,acceptance");
    int lines = 0;
    for (std::string line; std::getline(in, line);) ++lines;
    CHECK(lines == 6);
    std::filesystem::remove(path);
}

TEST_CASE("MCEM configuration checks") {
    McemConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.delta0 = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.T = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.S_em = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.rel_tol = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

}  // TEST_SUITE
