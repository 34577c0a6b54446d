#pragma once

#include "ebunfold/basis.hpp"
#include "ebunfold/common.hpp"
#include "ebunfold/mcem.hpp"
#include "ebunfold/scenario.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ebunfold {

enum class Scheme { Scheme1, Scheme2 };  // resample from Poisson(Kβ̂) or Poisson(y)
enum class BandKind { Percentile, Basic };

std::string to_string(Scheme s);
std::string to_string(BandKind k);
Scheme parse_scheme(const std::string& s);
BandKind parse_band_kind(const std::string& s);

struct BootstrapConfig {
    Scheme scheme = Scheme::Scheme1;
    int R = 200;
    double alpha = 0.025;
    std::vector<double> grid;
    std::uint64_t seed = 0;
    int workers = 1;
    BandKind band = BandKind::Percentile;
    bool bias_correction = false;
    bool clip_nonneg = false;
    bool keep_replicates = true;

    void validate() const;
};

struct UnfoldResult {
    Vector beta_hat;
    double delta_hat = 0.0;
    std::vector<double> grid;
    Vector f_hat;
    std::optional<Vector> f_bc;
    Vector lower;
    Vector upper;
    BandKind band_kind = BandKind::Percentile;
    Scheme scheme = Scheme::Scheme1;
    Matrix replicates;                   // R_effective × grid, if kept
    std::vector<double> replicate_deltas;
    int R_requested = 0;
    int R_effective = 0;
    std::vector<std::string> warnings;
};

/// Produces the starting point for a replicate chain from its histogram.
using ReplicateInit = std::function<Vector(const Vector& y_star)>;

/// Parametric bootstrap around a completed base fit. Each replicate histogram
/// is refit with the full MCEM, warm-started at the base δ̂. Replicate r is
/// determined by (bs.seed, r) alone.
UnfoldResult bootstrap_unfold(const Vector& y, const Matrix& K, const PenaltyMatrix& penalty,
                              const SplineBasis& basis, const McemResult& base, const McemConfig& mcem_cfg,
                              const BootstrapConfig& bs, const ReplicateInit& init = {});

/// Linear interpolation between order statistics: x_(⌊h⌋) + (h − ⌊h⌋)(x_(⌊h⌋+1) − x_(⌊h⌋)), h = (R−1)q.
double quantile(std::vector<double> values, double q);

/// Pointwise [q_α, q_{1−α}] over replicate rows.
std::pair<Vector, Vector> percentile_band(const Matrix& replicates, double alpha);

/// Pointwise [2f̂ − q_{1−α}, 2f̂ − q_α].
std::pair<Vector, Vector> basic_band(const Vector& f_hat, const Matrix& replicates, double alpha,
                                     bool clip_nonneg = false);

/// 2f̂ − mean(f̂*). Only meaningful for replicates drawn around β̂.
Vector bias_correct(const Vector& f_hat, const Matrix& replicates, Scheme scheme = Scheme::Scheme1);

/// ∫_E (f̂ − f)² by Gauss-Legendre on `panels` equal panels.
double ise(const std::function<double(double)>& f_hat, const std::function<double(double)>& f_true,
           Interval domain, int panels = 200);

struct MiseRow {
    double lambda = 0.0;
    double mise_over_lambda2 = 0.0;
    double std_error = 0.0;
    int reps = 0;
    int failures = 0;
};

/// For each λ, unfold `reps` independent simulated datasets and average the
/// ISE of the posterior-mean intensity, normalized by λ².
std::vector<MiseRow> mise_study(const std::function<Scenario(double)>& scenario,
                                const std::vector<double>& lambdas, int reps, std::uint64_t seed,
                                int workers = 1);

void write_mise_csv(const std::vector<MiseRow>& rows, const std::string& path);

/// Runs fn(0..count−1) on a pool of workers. Each index is processed exactly
/// once; the first exception is rethrown after all workers finish.
void parallel_for(int count, int workers, const std::function<void(int)>& fn);

}  // namespace ebunfold
