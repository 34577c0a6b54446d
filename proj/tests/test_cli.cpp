#include "ebunfold/cli.hpp"
#include "ebunfold/csv.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace ebunfold;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("ebunfold_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

int run(std::vector<std::string> args) {
    args.insert(args.begin(), "ebunfold");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

json read_json_file(const fs::path& p) {
    std::ifstream in(p);
    return json::parse(in);
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("histogram files") {
    const fs::path dir = scratch("hist");
    const BinnedCounts y{{3, 0, 12}, BinningScheme({-1.0, 0.1, 0.7, 2.0})};
    write_histogram(y, (dir / "h.csv").string());
    const BinnedCounts back = read_histogram((dir / "h.csv").string());
    CHECK(back.y == y.y);
    CHECK(back.binning.edges() == y.binning.edges());

    write_text(dir / "gap.csv", "bin_lower,bin_upper,count\n0,1,3\n1.5,2,4\n");
    CHECK_THROWS_AS(read_histogram((dir / "gap.csv").string()), ConfigError);
    write_text(dir / "frac.csv", "bin_lower,bin_upper,count\n0,1,3.5\n");
    CHECK_THROWS_AS(read_histogram((dir / "frac.csv").string()), ConfigError);
    write_text(dir / "neg.csv", "bin_lower,bin_upper,count\n0,1,-2\n");
    CHECK_THROWS_AS(read_histogram((dir / "neg.csv").string()), ConfigError);
}

TEST_CASE("configuration parsing") {
    const RunConfig gmm = run_config_from_json(json::object());
    CHECK(gmm.scenario.name == "gmm");
    CHECK(gmm.lambda == 20000.0);
    CHECK(gmm.scenario.binning().size() == 40);

    const RunConfig z = run_config_from_json({{"scenario", "z"}});
    CHECK(z.scenario.interior_knots == 34);
    CHECK(z.scenario.gamma_l == 70.0);
    CHECK(z.scenario.mcem.S_final == 5000);
    CHECK(std::holds_alternative<CrystalBall>(z.scenario.kernel));

    CHECK_THROWS_AS(run_config_from_json({{"lamda", 3}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json({{"mcem", {{"T", "many"}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json({{"scenario", "custom"}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json({{"fixed_delta", 1e-6}}), ConfigError);
    CHECK_NOTHROW(run_config_from_json({{"fixed_delta", 1e-6}, {"bootstrap", {{"enabled", false}}}}));
    CHECK_THROWS_AS(run_config_from_json({{"bootstrap", {{"scheme", 2}, {"bias_correction", true}}}}),
                    ConfigError);

    // The echoed configuration parses back to the same echo.
    const json echo = gmm.to_json();
    CHECK(run_config_from_json(echo).to_json() == echo);
    const json zecho = z.to_json();
    CHECK(run_config_from_json(zecho).to_json() == zecho);

    const SmearingKernel cb = CrystalBall{0.5, 1.0, 1.5, 3.0};
    const SmearingKernel back = kernel_from_json(kernel_to_json(cb));
    CHECK(std::get<CrystalBall>(back).gamma == 3.0);
    CHECK_THROWS_AS(kernel_from_json({{"type", "gaussian"}, {"sigma", -1.0}}), ConfigError);
}

TEST_CASE("simulate writes a histogram") {
    const fs::path dir = scratch("sim");
    CHECK(run({"simulate", "--lambda", "0", "-o", (dir / "zero").string()}) == kExitOk);
    const BinnedCounts zero = read_histogram((dir / "zero" / "histogram.csv").string());
    CHECK(zero.binning.size() == 40);
    CHECK(zero.total() == 0);

    CHECK(run({"simulate", "--seed", "3", "-o", (dir / "gmm").string()}) == kExitOk);
    const BinnedCounts y = read_histogram((dir / "gmm" / "histogram.csv").string());
    const json meta = read_json_file(dir / "gmm" / "simulation.json");
    const double expected = meta["expected_total"].get<double>();
    CHECK(std::abs(y.total() - expected) < 4.0 * std::sqrt(expected));
    CHECK(meta["expected_counts"].size() == 40);
    CHECK(fs::exists(dir / "gmm" / "truth.csv"));
}

TEST_CASE("unfold then diagnose") {
    const fs::path dir = scratch("unfold");
    CHECK(run({"simulate", "--lambda", "1000", "--seed", "5", "-o", (dir / "sim").string()}) == kExitOk);
    const std::string out = (dir / "run").string();
    CHECK(run({"unfold", "-i", (dir / "sim" / "histogram.csv").string(), "--lambda", "1000", "--T", "4",
               "--S-em", "100", "--S-final", "200", "--no-bootstrap", "--save-chain", "--grid-points", "50",
               "-o", out}) == kExitOk);
    for (const char* f : {"config.json", "histogram.csv", "response_matrix.csv", "response_matrix.json",
                          "beta_hat.csv", "curves.csv", "delta_trace.csv", "chain_diagnostics.json",
                          "manifest.json", "runtime.json", "chain.csv", "plots/trace.csv", "plots/acf.csv",
                          "plots/histogram.csv", "plots/cumulative_mean.csv"})
        CHECK_MESSAGE(fs::exists(fs::path(out) / f), f);
    CHECK_FALSE(fs::exists(fs::path(out) / "replicates.csv"));

    const CsvTable curves = read_csv((fs::path(out) / "curves.csv").string());
    CHECK(curves.rows.size() == 50);
    const CsvTable trace = read_csv((fs::path(out) / "delta_trace.csv").string());
    CHECK(trace.rows.size() == 5);
    const json manifest = read_json_file(fs::path(out) / "manifest.json");
    CHECK(manifest["estimate"]["delta_hat"].get<double>() == trace.rows.back()[trace.column("delta")]);
    CHECK(manifest["data"]["source"] == (dir / "sim" / "histogram.csv").string());
    CHECK(manifest["discretization"]["coefficients"] == 30);

    CHECK(run({"diagnose", out}) == kExitOk);
    const json diag = read_json_file(fs::path(out) / "diagnosis.json");
    CHECK(diag["delta_path"].size() == 5);
    CHECK(diag.contains("flags"));
    CHECK(diag["n_samples"] == 200);
}

TEST_CASE("small bootstrap run") {
    const fs::path dir = scratch("boot");
    const std::string out = (dir / "run").string();
    CHECK(run({"unfold", "--lambda", "1000", "--T", "3", "--S-em", "100", "--S-final", "200", "--R", "4",
               "--bias-correction", "--band", "basic", "--clip-nonneg", "--grid-points", "30", "-o", out}) ==
          kExitOk);
    const CsvTable curves = read_csv((fs::path(out) / "curves.csv").string());
    CHECK(curves.header == std::vector<std::string>{"s", "f_hat", "f_bc", "lower", "upper"});
    for (const auto& row : curves.rows) CHECK(row[3] >= 0.0);
    const CsvTable reps = read_csv((fs::path(out) / "replicates.csv").string());
    CHECK(reps.rows.size() == 4);
    CHECK(reps.header.size() == 32);
    const json manifest = read_json_file(fs::path(out) / "manifest.json");
    CHECK(manifest["bootstrap"]["R_effective"] == 4);
    CHECK(manifest["bootstrap"]["band"] == "basic");
}

TEST_CASE("Z preset on a simulated histogram") {
    // No real data ships with the project; the synthetic stand-in has the same size.
    const fs::path dir = scratch("z");
    CHECK(run({"simulate", "--scenario", "z", "--seed", "6", "-o", (dir / "sim").string()}) == kExitOk);
    CHECK(run({"unfold", "--scenario", "z", "-i", (dir / "sim" / "histogram.csv").string(), "--no-bootstrap",
               "-o", (dir / "run").string()}) == kExitOk);
    const json manifest = read_json_file(dir / "run" / "manifest.json");
    const double delta = manifest["estimate"]["delta_hat"].get<double>();
    CHECK(delta >= 7.4e-9);
    CHECK(delta <= 7.4e-7);
    CHECK(manifest["discretization"]["coefficients"] == 38);
    CHECK(manifest["data"]["bins"] == 30);
}

TEST_CASE("exit codes") {
    const fs::path dir = scratch("codes");
    write_text(dir / "bad.json", R"({"scenario": "gmm", "bogus": 1})");
    CHECK(run({"unfold", "--config", (dir / "bad.json").string(), "-o", (dir / "x").string()}) == kExitConfig);
    CHECK(run({"diagnose", dir.string()}) == kExitConfig);
    CHECK(run({"unfold", "--scheme", "7", "-o", (dir / "x").string()}) == kExitConfig);
    CHECK(run({"frobnicate"}) == kExitConfig);

    // A discontinuous tabulated kernel defeats the quadrature refinement check.
    write_text(dir / "h.csv", "bin_lower,bin_upper,count\n-1,0,5\n0,1,7\n");
    json cfg = {{"scenario", "custom"},
                {"true_space", {-1.0, 1.0}},
                {"smeared_space", {-1.0, 1.0}},
                {"basis", {{"interior_knots", 1}, {"order", 4}}},
                {"kernel",
                 {{"type", "tabulated"},
                  {"s_grid", {-10.0, 10.0}},
                  {"t_grid", {-10.0, 0.013, 0.0131, 10.0}},
                  {"density", {{0.05, 0.05, 0.0, 0.0}, {0.05, 0.05, 0.0, 0.0}}}}},
                {"bootstrap", {{"enabled", false}}}};
    write_text(dir / "jump.json", cfg.dump());
    CHECK(run({"unfold", "--config", (dir / "jump.json").string(), "-i", (dir / "h.csv").string(), "-o",
               (dir / "y").string()}) == kExitNumerical);

    std::ostringstream err;
    CHECK(report_exception(std::make_exception_ptr(ConvergenceError("stuck")), err) == kExitConvergence);
    CHECK(err.str().find("stuck") != std::string::npos);
    CHECK(report_exception(std::make_exception_ptr(NumericalError("nan")), err) == kExitNumerical);
    CHECK(report_exception(std::make_exception_ptr(ConfigError("bad")), err) == kExitConfig);
    CHECK(report_exception(std::make_exception_ptr(std::runtime_error("io")), err) == 1);
}

TEST_CASE("mise command") {
    const fs::path dir = scratch("mise");
    CHECK(run({"mise", "--lambdas", "500,1000", "--reps", "2", "--T", "2", "--S-em", "50", "--S-final", "100",
               "-j", "2", "-o", dir.string()}) == kExitOk);
    const CsvTable t = read_csv((dir / "mise.csv").string());
    CHECK(t.header == std::vector<std::string>{"lambda", "mise_over_lambda2", "std_error", "reps", "failures"});
    CHECK(t.rows.size() == 2);
    CHECK(t.rows[0][0] == 500.0);
}

}  // TEST_SUITE
