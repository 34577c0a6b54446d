#pragma once

#include "ebunfold/basis.hpp"
#include "ebunfold/common.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace ebunfold {

/// Additive Gaussian noise: k_resp(t|s) = N(t - s | 0, sigma^2).
struct GaussianConvolution {
    double sigma = 1.0;
};

/// Crystal Ball response: Gaussian core with a power-law low tail,
/// k_resp(t|s) = CB(t - s | delta_m, sigma^2, alpha, gamma).
struct CrystalBall {
    double delta_m = 0.0;
    double sigma = 1.0;
    double alpha = 1.0;
    double gamma = 2.0;
};

/// Density k_resp(t|s) tabulated on a rectangular (s, t) grid. Bilinear
/// interpolation inside the table, zero outside.
struct TabulatedKernel {
    std::vector<double> s_grid;
    std::vector<double> t_grid;
    Matrix density;  // rows follow s_grid, columns follow t_grid

    double operator()(double t, double s) const;
};

using SmearingKernel = std::variant<GaussianConvolution, CrystalBall, TabulatedKernel>;

void validate_kernel(const SmearingKernel& kernel);

/// k_resp(t|s).
double response_density(const SmearingKernel& kernel, double t, double s);

/// P(t_lo <= Y < t_hi | X = s) in closed form, when the kernel has one.
std::optional<double> response_probability(const SmearingKernel& kernel, double t_lo, double t_hi,
                                           double s);

/// Detection efficiency ε(s) ∈ [0, 1].
class Efficiency {
public:
    Efficiency() = default;  // ε ≡ 1
    static Efficiency constant(double value);
    static Efficiency tabulated(std::vector<double> s_grid, std::vector<double> values);
    static Efficiency function(std::function<double(double)> fn);

    double operator()(double s) const;
    bool is_constant() const { return !fn_; }
    double constant_value() const { return value_; }

private:
    double value_ = 1.0;
    std::function<double(double)> fn_;
};

/// Edges t_0 < ... < t_n of the smeared-space histogram.
class BinningScheme {
public:
    explicit BinningScheme(std::vector<double> edges);
    static BinningScheme uniform(Interval range, int bins);

    int size() const { return static_cast<int>(edges_.size()) - 1; }
    const std::vector<double>& edges() const { return edges_; }
    double lower(int i) const { return edges_[i]; }
    double upper(int i) const { return edges_[i + 1]; }
    Interval range() const { return {edges_.front(), edges_.back()}; }

    /// Half-open bins [t_{i-1}, t_i); the last bin is closed. nullopt if outside.
    std::optional<int> locate(double x) const;

private:
    std::vector<double> edges_;
};

/// Full kernel k(t, s) = k_resp(t|s) ε(s).
struct ForwardKernel {
    SmearingKernel response;
    Efficiency efficiency;

    double operator()(double t, double s) const {
        return response_density(response, t, s) * efficiency(s);
    }
};

ForwardKernel full_kernel(SmearingKernel kernel, Efficiency eff = {});

/// Crystal Ball density with closed-form normalization.
double crystal_ball_pdf(double x, double delta_m, double sigma, double alpha, double gamma);
double crystal_ball_cdf(double x, double delta_m, double sigma, double alpha, double gamma);
/// Normalization constant C of the Crystal Ball density.
double crystal_ball_norm(double sigma, double alpha, double gamma);

/// K_{ij} = ∫_{F_i} ∫_E k(t, s) B_j(s) ds dt plus metadata.
struct ResponseMatrix {
    Matrix K;
    Interval true_domain;
    std::vector<double> bin_edges;
    double cond = 0.0;

    int rows() const { return static_cast<int>(K.rows()); }
    int cols() const { return static_cast<int>(K.cols()); }
};

/// 2-norm condition number (largest / smallest singular value).
double condition_number(const Matrix& K);

struct AssemblyOptions {
    int nodes = 16;                       // Gauss-Legendre nodes per cell and dimension
    double refinement_tolerance = 1e-6;   // max relative change under node doubling
    bool check_refinement = true;
    bool use_closed_form_bins = true;     // integrate t analytically when the kernel allows
};

ResponseMatrix assemble_response(const SplineBasis& basis, const BinningScheme& binning,
                                 const ForwardKernel& kernel, const AssemblyOptions& options = {});

/// K̃_{ij} = ∫_{F_i ∩ E} B_j(t) dt: the design matrix of the unsmeared problem.
ResponseMatrix delta_kernel_response(const SplineBasis& basis, const BinningScheme& binning);

/// μ = Kβ; rejects negative coefficients.
Vector smeared_means(const ResponseMatrix& K, const Vector& beta);

/// Probability mass of the response, for true points in E, that lands in F.
/// Used to warn when E is too narrow.
double kernel_mass_outside_true_space(const ForwardKernel& kernel, Interval true_space,
                                      Interval smeared_space);

// Export / import as CSV (matrix rows) plus a JSON metadata sidecar.
void write_response(const ResponseMatrix& K, const std::string& csv_path,
                    const std::string& json_path);
ResponseMatrix read_response(const std::string& csv_path, const std::string& json_path);

}  // namespace ebunfold
