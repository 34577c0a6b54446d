#include "ebunfold/basis.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

namespace ebunfold {

GaussLegendre::GaussLegendre(int n) : nodes(n), weights(n) {
    if (n < 1) throw ConfigError("Gauss-Legendre rule needs at least one node");
    // Newton iteration on P_n from the Chebyshev-like initial guesses.
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0, p1 = x;
            if (n == 1) p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = pk;
            }
            // p1 = P_n(x), p0 = P_{n-1}(x)
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    if (n % 2 == 1) {
        // P_n'(0) for odd n, recomputed directly for the central node.
        double p0 = 1.0, p1 = 0.0;
        for (int k = 2; k <= n; ++k) {
            const double pk = (-(k - 1.0) * p0) / k;
            p0 = p1;
            p1 = pk;
        }
        const double dp = n * (-p0) / (-1.0);
        nodes[n / 2] = 0.0;
        weights[n / 2] = 2.0 / (dp * dp);
    }
}

SplineBasis::SplineBasis(Interval domain, std::vector<double> interior_knots, int order)
    : domain_(domain), order_(order) {
    if (order < 1) throw ConfigError("spline order must be >= 1");
    if (!(domain.hi > domain.lo) || !std::isfinite(domain.lo) || !std::isfinite(domain.hi))
        throw ConfigError("spline domain must be a nonempty finite interval");
    breakpoints_.reserve(interior_knots.size() + 2);
    breakpoints_.push_back(domain.lo);
    for (double s : interior_knots) breakpoints_.push_back(s);
    breakpoints_.push_back(domain.hi);
    for (std::size_t i = 1; i < breakpoints_.size(); ++i) {
        if (!(breakpoints_[i] > breakpoints_[i - 1]))
            throw ConfigError("knots must be strictly increasing inside the domain");
    }
    padded_.assign(order, domain.lo);
    padded_.insert(padded_.end(), interior_knots.begin(), interior_knots.end());
    padded_.insert(padded_.end(), order, domain.hi);
}

int SplineBasis::span_index(double x) const {
    if (!(x >= domain_.lo && x <= domain_.hi))
        throw std::out_of_range("spline evaluation point " + std::to_string(x) +
                                " lies outside the basis domain");
    const auto it = std::upper_bound(breakpoints_.begin(), breakpoints_.end(), x);
    const int last = static_cast<int>(breakpoints_.size()) - 2;
    return std::min(static_cast<int>(it - breakpoints_.begin()) - 1, last);
}

int SplineBasis::eval_local(double s, int deriv, std::span<double> out) const {
    if (deriv < 0 || deriv > 2) throw std::invalid_argument("derivative order must be 0, 1 or 2");
    const int m = order_;
    const int degree = m - 1;
    if (static_cast<int>(out.size()) < m) throw std::invalid_argument("output span too small");
    const int span = order_ - 1 + span_index(s);
    const auto& t = padded_;

    // Triangular table of lower-order basis values (de Boor / Piegl-Tiller).
    constexpr int kMaxOrder = 16;
    if (m > kMaxOrder) throw ConfigError("spline order above 16 is not supported");
    std::array<std::array<double, kMaxOrder>, kMaxOrder> ndu{};
    std::array<double, kMaxOrder> left{}, right{};
    ndu[0][0] = 1.0;
    for (int j = 1; j <= degree; ++j) {
        left[j] = s - t[span + 1 - j];
        right[j] = t[span + j] - s;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            ndu[j][r] = right[r + 1] + left[j - r];
            const double temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }

    if (deriv == 0 || deriv > degree) {
        for (int r = 0; r <= degree; ++r) out[r] = deriv == 0 ? ndu[r][degree] : 0.0;
        return span - degree;
    }

    std::array<std::array<double, kMaxOrder>, 2> a{};
    for (int r = 0; r <= degree; ++r) {
        int s1 = 0, s2 = 1;
        a[0][0] = 1.0;
        double d = 0.0;
        for (int k = 1; k <= deriv; ++k) {
            d = 0.0;
            const int rk = r - k;
            const int pk = degree - k;
            if (r >= k) {
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                d = a[s2][0] * ndu[rk][pk];
            }
            const int j1 = rk >= -1 ? 1 : -rk;
            const int j2 = (r - 1 <= pk) ? k - 1 : degree - r;
            for (int j = j1; j <= j2; ++j) {
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
                d += a[s2][j] * ndu[rk + j][pk];
            }
            if (r <= pk) {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            std::swap(s1, s2);
        }
        out[r] = d;
    }
    double factor = degree;
    for (int k = 2; k <= deriv; ++k) factor *= (degree - k + 1);
    for (int r = 0; r <= degree; ++r) out[r] *= factor;
    return span - degree;
}

Vector SplineBasis::eval(double s, int deriv) const {
    Vector values = Vector::Zero(size());
    std::array<double, 16> local{};
    const int first = eval_local(s, deriv, local);
    for (int r = 0; r < order_; ++r) values(first + r) = local[r];
    return values;
}

Vector SplineBasis::integrate(double a, double b) const {
    Vector result = Vector::Zero(size());
    a = std::max(a, domain_.lo);
    b = std::min(b, domain_.hi);
    if (!(b > a)) return result;
    const GaussLegendre rule((order_ + 2) / 2);
    std::array<double, 16> local{};
    for (std::size_t i = 0; i + 1 < breakpoints_.size(); ++i) {
        const double lo = std::max(a, breakpoints_[i]);
        const double hi = std::min(b, breakpoints_[i + 1]);
        if (!(hi > lo)) continue;
        const double half = 0.5 * (hi - lo), mid = 0.5 * (hi + lo);
        for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
            const int first = eval_local(mid + half * rule.nodes[k], 0, local);
            for (int r = 0; r < order_; ++r) result(first + r) += half * rule.weights[k] * local[r];
        }
    }
    return result;
}

SplineBasis make_uniform_basis(Interval domain, int interior_knots, int order) {
    if (interior_knots < 0) throw ConfigError("number of interior knots must be >= 0");
    if (!(domain.hi > domain.lo)) throw ConfigError("spline domain must be a nonempty interval");
    std::vector<double> knots(interior_knots);
    const double h = domain.width() / (interior_knots + 1);
    for (int i = 0; i < interior_knots; ++i) knots[i] = domain.lo + h * (i + 1);
    return SplineBasis(domain, std::move(knots), order);
}

Vector eval_basis(const SplineBasis& basis, double s, int deriv) { return basis.eval(s, deriv); }

Vector eval_intensity(const SplineBasis& basis, const Vector& beta, std::span<const double> grid) {
    if (beta.size() != basis.size())
        throw std::invalid_argument("coefficient vector length " + std::to_string(beta.size()) +
                                    " does not match basis size " + std::to_string(basis.size()));
    Vector f(static_cast<Eigen::Index>(grid.size()));
    std::array<double, 16> local{};
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const int first = basis.eval_local(grid[g], 0, local);
        double sum = 0.0;
        for (int r = 0; r < basis.order(); ++r) sum += beta(first + r) * local[r];
        f(static_cast<Eigen::Index>(g)) = sum;
    }
    return f;
}

PenaltyMatrix curvature_penalty(const SplineBasis& basis, double gamma_l, double gamma_r,
                                int extra_nodes) {
    const int m = basis.order();
    if (m < 3) throw ConfigError("penalty undefined for order < 3");
    if (!(gamma_l > 0.0) || !(gamma_r > 0.0))
        throw ConfigError("boundary hyperparameters gamma_l, gamma_r must be positive");
    const int p = basis.size();
    // B_i'' B_j'' has degree 2m-6 on each span.
    const int exact = std::max(1, (2 * m - 5 + 1) / 2 + 1);
    const GaussLegendre rule(exact + extra_nodes);
    const auto& knots = basis.breakpoints();

    PenaltyMatrix pen;
    pen.omega = Matrix::Zero(p, p);
    std::array<double, 16> local{};
    for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
        const double half = 0.5 * (knots[i + 1] - knots[i]);
        const double mid = 0.5 * (knots[i + 1] + knots[i]);
        for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
            const int first = basis.eval_local(mid + half * rule.nodes[k], 2, local);
            const double w = half * rule.weights[k];
            for (int a = 0; a < m; ++a)
                for (int b = 0; b < m; ++b) pen.omega(first + a, first + b) += w * local[a] * local[b];
        }
    }
    pen.omega = 0.5 * (pen.omega + pen.omega.transpose()).eval();
    pen.omega_a = pen.omega;
    pen.omega_a(0, 0) += gamma_l;
    pen.omega_a(p - 1, p - 1) += gamma_r;
    pen.gamma_l = gamma_l;
    pen.gamma_r = gamma_r;
    return pen;
}

}  // namespace ebunfold
