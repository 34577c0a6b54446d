#include "ebunfold/forward.hpp"

#include "ebunfold/csv.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace ebunfold {

namespace {

constexpr double kSqrt2 = std::numbers::sqrt2;

double std_normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

// P(a <= Z < b) for standard normal Z, evaluated on the side that keeps precision.
double std_normal_mass(double a, double b) {
    if (!(b > a)) return 0.0;
    if (a >= 0.0) return 0.5 * (std::erfc(a / kSqrt2) - std::erfc(b / kSqrt2));
    if (b <= 0.0) return 0.5 * (std::erfc(-b / kSqrt2) - std::erfc(-a / kSqrt2));
    return 1.0 - 0.5 * std::erfc(-a / kSqrt2) - 0.5 * std::erfc(b / kSqrt2);
}

void check_crystal_ball(double sigma, double alpha, double gamma) {
    if (!(sigma > 0.0)) throw ConfigError("Crystal Ball sigma must be positive");
    if (!(alpha > 0.0)) throw ConfigError("Crystal Ball alpha must be positive");
    if (!(gamma > 1.0)) throw ConfigError("Crystal Ball gamma must exceed 1 (non-normalizable tail)");
}

}  // namespace

// ---------------------------------------------------------------------------
// Crystal Ball

double crystal_ball_norm(double sigma, double alpha, double gamma) {
    check_crystal_ball(sigma, alpha, gamma);
    const double core = sigma * std::sqrt(std::numbers::pi / 2.0) * (1.0 + std::erf(alpha / kSqrt2));
    const double tail = sigma * gamma / (alpha * (gamma - 1.0)) * std::exp(-0.5 * alpha * alpha);
    return 1.0 / (core + tail);
}

double crystal_ball_pdf(double x, double delta_m, double sigma, double alpha, double gamma) {
    const double c = crystal_ball_norm(sigma, alpha, gamma);
    const double z = (x - delta_m) / sigma;
    if (z > -alpha) return c * std::exp(-0.5 * z * z);
    const double ratio = gamma / alpha;
    return c * std::pow(ratio, gamma) * std::exp(-0.5 * alpha * alpha) *
           std::pow(ratio - alpha - z, -gamma);
}

double crystal_ball_cdf(double x, double delta_m, double sigma, double alpha, double gamma) {
    const double c = crystal_ball_norm(sigma, alpha, gamma);
    const double z = (x - delta_m) / sigma;
    const double ratio = gamma / alpha;
    const double amp = std::pow(ratio, gamma) * std::exp(-0.5 * alpha * alpha);
    // ∫_{-∞}^{z} amp (ratio - alpha - u)^{-gamma} σ du
    auto tail_mass = [&](double upto) {
        return c * sigma * amp * std::pow(ratio - alpha - upto, 1.0 - gamma) / (gamma - 1.0);
    };
    if (z <= -alpha) return tail_mass(z);
    const double core = c * sigma * std::sqrt(std::numbers::pi / 2.0) *
                        (std::erf(z / kSqrt2) - std::erf(-alpha / kSqrt2));
    return tail_mass(-alpha) + core;
}

// ---------------------------------------------------------------------------
// Kernels

double TabulatedKernel::operator()(double t, double s) const {
    if (s_grid.size() < 2 || t_grid.size() < 2) return 0.0;
    if (s < s_grid.front() || s > s_grid.back() || t < t_grid.front() || t > t_grid.back()) return 0.0;
    auto cell = [](const std::vector<double>& g, double x) {
        auto it = std::upper_bound(g.begin(), g.end(), x);
        int i = static_cast<int>(it - g.begin()) - 1;
        return std::clamp(i, 0, static_cast<int>(g.size()) - 2);
    };
    const int i = cell(s_grid, s);
    const int j = cell(t_grid, t);
    const double u = (s - s_grid[i]) / (s_grid[i + 1] - s_grid[i]);
    const double v = (t - t_grid[j]) / (t_grid[j + 1] - t_grid[j]);
    return (1 - u) * (1 - v) * density(i, j) + u * (1 - v) * density(i + 1, j) +
           (1 - u) * v * density(i, j + 1) + u * v * density(i + 1, j + 1);
}

void validate_kernel(const SmearingKernel& kernel) {
    std::visit(
        [](const auto& k) {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, GaussianConvolution>) {
                if (!(k.sigma > 0.0)) throw ConfigError("Gaussian kernel sigma must be positive");
            } else if constexpr (std::is_same_v<K, CrystalBall>) {
                check_crystal_ball(k.sigma, k.alpha, k.gamma);
            } else {
                if (k.s_grid.size() < 2 || k.t_grid.size() < 2)
                    throw ConfigError("tabulated kernel needs at least a 2x2 grid");
                if (k.density.rows() != static_cast<Eigen::Index>(k.s_grid.size()) ||
                    k.density.cols() != static_cast<Eigen::Index>(k.t_grid.size()))
                    throw ConfigError("tabulated kernel density does not match its grid");
                if (!std::is_sorted(k.s_grid.begin(), k.s_grid.end()) ||
                    !std::is_sorted(k.t_grid.begin(), k.t_grid.end()))
                    throw ConfigError("tabulated kernel grids must be increasing");
                if ((k.density.array() < 0.0).any())
                    throw ConfigError("tabulated kernel density must be non-negative");
            }
        },
        kernel);
}

double response_density(const SmearingKernel& kernel, double t, double s) {
    return std::visit(
        [&](const auto& k) -> double {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, GaussianConvolution>) {
                return std_normal_pdf((t - s) / k.sigma) / k.sigma;
            } else if constexpr (std::is_same_v<K, CrystalBall>) {
                return crystal_ball_pdf(t - s, k.delta_m, k.sigma, k.alpha, k.gamma);
            } else {
                return k(t, s);
            }
        },
        kernel);
}

std::optional<double> response_probability(const SmearingKernel& kernel, double t_lo, double t_hi,
                                           double s) {
    return std::visit(
        [&](const auto& k) -> std::optional<double> {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, GaussianConvolution>) {
                return std_normal_mass((t_lo - s) / k.sigma, (t_hi - s) / k.sigma);
            } else if constexpr (std::is_same_v<K, CrystalBall>) {
                // Split into tail and core pieces; differencing the CDF loses
                // everything in the upper Gaussian tail.
                const double zl = (t_lo - s - k.delta_m) / k.sigma;
                const double zh = (t_hi - s - k.delta_m) / k.sigma;
                if (!(zh > zl)) return 0.0;
                double mass = 0.0;
                if (zl < -k.alpha) {
                    const double cut = k.delta_m + std::min(zh, -k.alpha) * k.sigma;
                    mass += crystal_ball_cdf(cut, k.delta_m, k.sigma, k.alpha, k.gamma) -
                            crystal_ball_cdf(t_lo - s, k.delta_m, k.sigma, k.alpha, k.gamma);
                }
                if (zh > -k.alpha) {
                    const double c = crystal_ball_norm(k.sigma, k.alpha, k.gamma);
                    mass += c * k.sigma * std::sqrt(2.0 * std::numbers::pi) *
                            std_normal_mass(std::max(zl, -k.alpha), zh);
                }
                return std::max(0.0, mass);
            } else {
                return std::nullopt;
            }
        },
        kernel);
}

Efficiency Efficiency::constant(double value) {
    if (!(value >= 0.0 && value <= 1.0)) throw ConfigError("efficiency must lie in [0, 1]");
    Efficiency e;
    e.value_ = value;
    return e;
}

Efficiency Efficiency::tabulated(std::vector<double> s_grid, std::vector<double> values) {
    if (s_grid.size() != values.size() || s_grid.empty())
        throw ConfigError("tabulated efficiency needs matching non-empty grid and values");
    if (!std::is_sorted(s_grid.begin(), s_grid.end()))
        throw ConfigError("tabulated efficiency grid must be increasing");
    for (double v : values)
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("efficiency must lie in [0, 1]");
    return function([grid = std::move(s_grid), vals = std::move(values)](double s) {
        if (s <= grid.front()) return vals.front();
        if (s >= grid.back()) return vals.back();
        const auto it = std::upper_bound(grid.begin(), grid.end(), s);
        const std::size_t j = static_cast<std::size_t>(it - grid.begin());
        const double u = (s - grid[j - 1]) / (grid[j] - grid[j - 1]);
        return (1 - u) * vals[j - 1] + u * vals[j];
    });
}

Efficiency Efficiency::function(std::function<double(double)> fn) {
    Efficiency e;
    e.fn_ = std::move(fn);
    return e;
}

double Efficiency::operator()(double s) const {
    if (!fn_) return value_;
    return std::clamp(fn_(s), 0.0, 1.0);
}

ForwardKernel full_kernel(SmearingKernel kernel, Efficiency eff) {
    validate_kernel(kernel);
    return ForwardKernel{std::move(kernel), std::move(eff)};
}

// ---------------------------------------------------------------------------
// Binning

BinningScheme::BinningScheme(std::vector<double> edges) : edges_(std::move(edges)) {
    if (edges_.size() < 2) throw ConfigError("binning needs at least one bin");
    for (std::size_t i = 1; i < edges_.size(); ++i)
        if (!(edges_[i] > edges_[i - 1])) throw ConfigError("bin edges must be strictly increasing");
}

BinningScheme BinningScheme::uniform(Interval range, int bins) {
    if (bins < 1) throw ConfigError("number of bins must be >= 1");
    if (!(range.hi > range.lo)) throw ConfigError("binning range must be nonempty");
    std::vector<double> edges(bins + 1);
    for (int i = 0; i <= bins; ++i) edges[i] = range.lo + range.width() * i / bins;
    edges.back() = range.hi;
    return BinningScheme(std::move(edges));
}

std::optional<int> BinningScheme::locate(double x) const {
    if (!(x >= edges_.front() && x <= edges_.back())) return std::nullopt;
    const auto it = std::upper_bound(edges_.begin(), edges_.end(), x);
    return std::min(static_cast<int>(it - edges_.begin()) - 1, size() - 1);
}

// ---------------------------------------------------------------------------
// Response matrix

double condition_number(const Matrix& K) {
    Eigen::JacobiSVD<Matrix> svd(K);
    const Vector& sv = svd.singularValues();
    if (sv.size() == 0) return 0.0;
    const double smallest = sv(sv.size() - 1);
    if (smallest <= 0.0) return std::numeric_limits<double>::infinity();
    return sv(0) / smallest;
}

namespace {

Matrix assemble_with_nodes(const SplineBasis& basis, const BinningScheme& binning,
                           const ForwardKernel& kernel, int nodes, bool closed_form) {
    const int n = binning.size();
    const int p = basis.size();
    const int m = basis.order();
    Matrix K = Matrix::Zero(n, p);
    const GaussLegendre rule(nodes);
    const auto& knots = basis.breakpoints();
    std::array<double, 16> local{};
    std::vector<double> s_nodes, s_weights;

    for (std::size_t span = 0; span + 1 < knots.size(); ++span) {
        const double half = 0.5 * (knots[span + 1] - knots[span]);
        const double mid = 0.5 * (knots[span + 1] + knots[span]);
        for (int a = 0; a < nodes; ++a) {
            const double s = mid + half * rule.nodes[a];
            const double ws = half * rule.weights[a] * kernel.efficiency(s);
            if (ws == 0.0) continue;
            const int first = basis.eval_local(s, 0, local);
            for (int i = 0; i < n; ++i) {
                double prob;
                if (closed_form) {
                    prob = *response_probability(kernel.response, binning.lower(i), binning.upper(i), s);
                } else {
                    prob = rule.integrate(
                        [&](double t) { return response_density(kernel.response, t, s); },
                        binning.lower(i), binning.upper(i));
                }
                if (prob == 0.0) continue;
                for (int r = 0; r < m; ++r) K(i, first + r) += ws * prob * local[r];
            }
        }
    }
    return K;
}

}  // namespace

ResponseMatrix assemble_response(const SplineBasis& basis, const BinningScheme& binning,
                                 const ForwardKernel& kernel, const AssemblyOptions& options) {
    validate_kernel(kernel.response);
    const bool closed =
        options.use_closed_form_bins &&
        response_probability(kernel.response, binning.lower(0), binning.upper(0), basis.domain().lo)
            .has_value();
    ResponseMatrix out;
    out.K = assemble_with_nodes(basis, binning, kernel, options.nodes, closed);
    if (options.check_refinement) {
        const Matrix fine = assemble_with_nodes(basis, binning, kernel, 2 * options.nodes, closed);
        const double scale = fine.cwiseAbs().maxCoeff();
        for (Eigen::Index i = 0; i < fine.rows(); ++i) {
            for (Eigen::Index j = 0; j < fine.cols(); ++j) {
                const double diff = std::abs(fine(i, j) - out.K(i, j));
                if (diff > options.refinement_tolerance * (std::abs(fine(i, j)) + 1e-12 * scale)) {
                    std::ostringstream msg;
                    msg << "response quadrature did not converge at entry (" << i << ", " << j
                        << "): " << out.K(i, j) << " vs " << fine(i, j) << " with doubled nodes";
                    throw NumericalError(msg.str());
                }
            }
        }
        out.K = fine;
    }
    out.true_domain = basis.domain();
    out.bin_edges = binning.edges();
    out.cond = condition_number(out.K);
    return out;
}

ResponseMatrix delta_kernel_response(const SplineBasis& basis, const BinningScheme& binning) {
    ResponseMatrix out;
    out.K = Matrix::Zero(binning.size(), basis.size());
    for (int i = 0; i < binning.size(); ++i)
        out.K.row(i) = basis.integrate(binning.lower(i), binning.upper(i)).transpose();
    out.true_domain = basis.domain();
    out.bin_edges = binning.edges();
    out.cond = condition_number(out.K);
    return out;
}

Vector smeared_means(const ResponseMatrix& K, const Vector& beta) {
    if (beta.size() != K.cols())
        throw std::invalid_argument("coefficient vector does not match response matrix columns");
    if ((beta.array() < 0.0).any()) throw std::invalid_argument("spline coefficients must be non-negative");
    return K.K * beta;
}

double kernel_mass_outside_true_space(const ForwardKernel& kernel, Interval true_space,
                                      Interval smeared_space) {
    // Fraction of F's expected events that would come from outside E under a
    // flat intensity extending one |E| beyond each side.
    const double w = true_space.width();
    const GaussLegendre rule(16);
    auto reach = [&](double s) {
        if (auto p = response_probability(kernel.response, smeared_space.lo, smeared_space.hi, s))
            return *p * kernel.efficiency(s);
        return rule.integrate([&](double t) { return kernel(t, s); }, smeared_space.lo,
                              smeared_space.hi);
    };
    auto integrate_range = [&](double a, double b) {
        const int pieces = 64;
        double total = 0.0;
        for (int k = 0; k < pieces; ++k)
            total += rule.integrate(reach, a + (b - a) * k / pieces, a + (b - a) * (k + 1) / pieces);
        return total;
    };
    const double outside = integrate_range(true_space.lo - w, true_space.lo) +
                            integrate_range(true_space.hi, true_space.hi + w);
    const double inside = integrate_range(true_space.lo, true_space.hi);
    if (inside + outside <= 0.0) return 0.0;
    return outside / (inside + outside);
}

void write_response(const ResponseMatrix& K, const std::string& csv_path, const std::string& json_path) {
    std::vector<std::vector<double>> rows(K.rows(), std::vector<double>(K.cols()));
    for (int i = 0; i < K.rows(); ++i)
        for (int j = 0; j < K.cols(); ++j) rows[i][j] = K.K(i, j);
    std::vector<std::string> header;
    for (int j = 0; j < K.cols(); ++j) header.push_back("B" + std::to_string(j + 1));
    write_csv(csv_path, header, rows);

    nlohmann::json meta;
    meta["rows"] = K.rows();
    meta["cols"] = K.cols();
    meta["true_domain"] = {K.true_domain.lo, K.true_domain.hi};
    meta["bin_edges"] = K.bin_edges;
    meta["condition_number"] = K.cond;
    write_json(json_path, meta);
}

ResponseMatrix read_response(const std::string& csv_path, const std::string& json_path) {
    const nlohmann::json meta = read_json(json_path);
    const CsvTable table = read_csv(csv_path);
    ResponseMatrix out;
    const int rows = meta.at("rows").get<int>();
    const int cols = meta.at("cols").get<int>();
    if (static_cast<int>(table.rows.size()) != rows || static_cast<int>(table.header.size()) != cols)
        throw ConfigError("response matrix CSV does not match its metadata dimensions");
    out.K.resize(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) out.K(i, j) = table.rows[i][j];
    out.true_domain = {meta.at("true_domain")[0].get<double>(), meta.at("true_domain")[1].get<double>()};
    out.bin_edges = meta.at("bin_edges").get<std::vector<double>>();
    out.cond = meta.at("condition_number").get<double>();
    return out;
}

}  // namespace ebunfold
