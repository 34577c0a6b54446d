#pragma once

#include "ebunfold/common.hpp"

#include <span>
#include <vector>

namespace ebunfold {

/// Clamped B-spline basis of order m (degree m-1) with L interior knots on a
/// closed interval. The padded knot vector repeats each boundary knot m times,
/// giving p = L + m basis functions B_1..B_p.
class SplineBasis {
public:
    SplineBasis(Interval domain, std::vector<double> interior_knots, int order);

    int order() const { return order_; }
    int size() const { return static_cast<int>(padded_.size()) - order_; }
    int num_interior_knots() const { return static_cast<int>(breakpoints_.size()) - 2; }
    const Interval& domain() const { return domain_; }

    /// s_0 < s_1 < ... < s_{L+1}.
    const std::vector<double>& breakpoints() const { return breakpoints_; }
    /// Knot vector of length p + m with clamped ends.
    const std::vector<double>& padded_knots() const { return padded_; }

    /// Index of the knot span [s_i, s_{i+1}) holding x; the last span is closed.
    int span_index(double x) const;

    /// All p basis values (or their first/second derivatives) at s.
    Vector eval(double s, int deriv = 0) const;

    /// Nonzero values only: the m entries B_{first..first+m-1}^{(deriv)}(s).
    /// Returns `first` (0-based).
    int eval_local(double s, int deriv, std::span<double> out) const;

    /// Column vector of integrals of each B_j over [a, b] ∩ domain.
    Vector integrate(double a, double b) const;

private:
    Interval domain_;
    int order_;
    std::vector<double> breakpoints_;
    std::vector<double> padded_;
};

/// Uniformly spaced interior knots on `domain`.
SplineBasis make_uniform_basis(Interval domain, int interior_knots, int order);

/// Convenience wrapper for SplineBasis::eval.
Vector eval_basis(const SplineBasis& basis, double s, int deriv = 0);

/// f(s) = Σ β_j B_j(s) evaluated at every grid point.
Vector eval_intensity(const SplineBasis& basis, const Vector& beta, std::span<const double> grid);

/// Curvature penalty Ω_{ij} = ∫ B_i'' B_j'' ds together with the boundary
/// augmented Ω_A (γ_L added at (1,1), γ_R at (p,p)).
struct PenaltyMatrix {
    Matrix omega;
    Matrix omega_a;
    double gamma_l = 0.0;
    double gamma_r = 0.0;

    int size() const { return static_cast<int>(omega.rows()); }
};

/// Exact penalty via per-span Gauss-Legendre. `extra_nodes` raises the node
/// count above the exact minimum (used to check quadrature invariance).
PenaltyMatrix curvature_penalty(const SplineBasis& basis, double gamma_l, double gamma_r,
                                int extra_nodes = 0);

/// Gauss-Legendre nodes and weights on [-1, 1].
struct GaussLegendre {
    std::vector<double> nodes;
    std::vector<double> weights;

    explicit GaussLegendre(int n);

    template <class F>
    double integrate(F&& f, double a, double b) const {
        const double half = 0.5 * (b - a);
        const double mid = 0.5 * (a + b);
        double sum = 0.0;
        for (std::size_t k = 0; k < nodes.size(); ++k) sum += weights[k] * f(mid + half * nodes[k]);
        return half * sum;
    }
};

}  // namespace ebunfold
