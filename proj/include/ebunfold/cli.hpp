#pragma once

#include "ebunfold/scenario.hpp"
#include "ebunfold/simulate.hpp"
#include "ebunfold/uq.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <exception>
#include <iosfwd>
#include <optional>
#include <string>

namespace ebunfold {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitConvergence = 4;

struct RunConfig {
    Scenario scenario;
    double lambda = 0.0;           // expected number of true events, for simulated data
    std::string input;             // histogram CSV; empty means simulate from the scenario truth
    std::string output = "run";
    std::uint64_t seed = 1;
    std::optional<double> fixed_delta;  // skip MCEM and sample at this δ
    bool bootstrap = true;
    BootstrapConfig bs;
    int grid_points = 200;
    bool save_chain = false;

    nlohmann::json to_json() const;
};

/// Builds a run configuration from a JSON document. Keys absent from the
/// document keep the defaults of the named scenario preset.
RunConfig run_config_from_json(const nlohmann::json& j);

SmearingKernel kernel_from_json(const nlohmann::json& j);
nlohmann::json kernel_to_json(const SmearingKernel& k);

/// HistogramFile: CSV with columns bin_lower, bin_upper, count.
BinnedCounts read_histogram(const std::string& path);
void write_histogram(const BinnedCounts& counts, const std::string& path);

/// Prints the error and returns its exit code: 2 configuration, 3 numerical,
/// 4 convergence, 1 anything else.
int report_exception(std::exception_ptr error, std::ostream& err);

/// Entry point of the command-line tool; returns the process exit code.
int run_cli(int argc, const char* const* argv);

}  // namespace ebunfold
