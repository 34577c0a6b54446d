#include "ebunfold/cli.hpp"

#include "ebunfold/csv.hpp"
#include "ebunfold/posterior.hpp"
#include "ebunfold/sampler.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <set>

namespace ebunfold {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "1.0.0";

Interval interval_from_json(const json& j, const char* what) {
    if (!j.is_array() || j.size() != 2) throw ConfigError(std::string(what) + " must be [lo, hi]");
    Interval iv{j[0].get<double>(), j[1].get<double>()};
    if (!(iv.hi > iv.lo)) throw ConfigError(std::string(what) + " must satisfy lo < hi");
    return iv;
}

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

Efficiency efficiency_from_json(const json& j) {
    if (j.is_number()) return Efficiency::constant(j.get<double>());
    if (j.is_object()) {
        reject_unknown(j, {"s_grid", "values"}, "efficiency");
        return Efficiency::tabulated(j.at("s_grid").get<std::vector<double>>(),
                                     j.at("values").get<std::vector<double>>());
    }
    throw ConfigError("efficiency must be a number or {s_grid, values}");
}

IntensityModel truth_from_json(const json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "gaussian_mixture") {
        reject_unknown(j, {"type", "lambda_tot", "components", "uniform_weight", "domain"}, "truth");
        GaussianMixtureIntensity m;
        m.lambda_tot = j.at("lambda_tot").get<double>();
        for (const auto& c : j.at("components"))
            m.components.push_back({c.at("weight").get<double>(), c.at("mean").get<double>(),
                                    c.at("variance").get<double>()});
        m.uniform_weight = j.value("uniform_weight", 0.0);
        m.domain = interval_from_json(j.at("domain"), "truth domain");
        return m;
    }
    if (type == "breit_wigner") {
        reject_unknown(j, {"type", "lambda_tot", "mode", "width", "domain"}, "truth");
        BreitWignerIntensity m;
        m.lambda_tot = j.at("lambda_tot").get<double>();
        m.mode = j.value("mode", m.mode);
        m.width = j.value("width", m.width);
        m.domain = interval_from_json(j.at("domain"), "truth domain");
        return m;
    }
    throw ConfigError("unknown truth type '" + type + "'");
}

json truth_to_json(const IntensityModel& model) {
    return std::visit(
        [](const auto& m) -> json {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, GaussianMixtureIntensity>) {
                json comps = json::array();
                for (const auto& c : m.components)
                    comps.push_back({{"weight", c.weight}, {"mean", c.mean}, {"variance", c.variance}});
                return {{"type", "gaussian_mixture"},
                        {"lambda_tot", m.lambda_tot},
                        {"components", comps},
                        {"uniform_weight", m.uniform_weight},
                        {"domain", {m.domain.lo, m.domain.hi}}};
            } else if constexpr (std::is_same_v<M, BreitWignerIntensity>) {
                return {{"type", "breit_wigner"},
                        {"lambda_tot", m.lambda_tot},
                        {"mode", m.mode},
                        {"width", m.width},
                        {"domain", {m.domain.lo, m.domain.hi}}};
            } else {
                return {{"type", "spline"}};
            }
        },
        model);
}

void set_lambda(IntensityModel& model, double lambda) {
    std::visit(
        [lambda](auto& m) {
            using M = std::decay_t<decltype(m)>;
            if constexpr (!std::is_same_v<M, SplineIntensity>) m.lambda_tot = lambda;
        },
        model);
}

std::vector<double> uniform_grid(Interval domain, int points) {
    if (points < 2) throw ConfigError("evaluation grid needs at least 2 points");
    std::vector<double> grid(points);
    for (int k = 0; k < points; ++k) grid[k] = domain.lo + domain.width() * k / (points - 1);
    grid.back() = domain.hi;
    return grid;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void ensure_directory(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir + "': " + ec.message());
}

std::string join(const std::string& dir, const std::string& file) { return (fs::path(dir) / file).string(); }

json build_info() {
    return {{"program", "ebunfold"},
            {"version", kVersion},
            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                          std::to_string(EIGEN_MINOR_VERSION)},
            {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
            {"compiler", __VERSION__},
            {"cxx_standard", __cplusplus}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

SmearingKernel kernel_from_json(const json& j) {
    const std::string type = j.at("type").get<std::string>();
    SmearingKernel k;
    if (type == "gaussian") {
        reject_unknown(j, {"type", "sigma"}, "kernel");
        k = GaussianConvolution{j.value("sigma", 1.0)};
    } else if (type == "crystal_ball") {
        reject_unknown(j, {"type", "delta_m", "sigma", "alpha", "gamma"}, "kernel");
        k = CrystalBall{j.at("delta_m").get<double>(), j.at("sigma").get<double>(), j.at("alpha").get<double>(),
                        j.at("gamma").get<double>()};
    } else if (type == "tabulated") {
        reject_unknown(j, {"type", "s_grid", "t_grid", "density"}, "kernel");
        TabulatedKernel t;
        t.s_grid = j.at("s_grid").get<std::vector<double>>();
        t.t_grid = j.at("t_grid").get<std::vector<double>>();
        const auto rows = j.at("density").get<std::vector<std::vector<double>>>();
        t.density.resize(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : rows[0].size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != static_cast<std::size_t>(t.density.cols()))
                throw ConfigError("tabulated kernel density rows have unequal length");
            for (std::size_t c = 0; c < rows[r].size(); ++c) t.density(r, c) = rows[r][c];
        }
        k = std::move(t);
    } else {
        throw ConfigError("unknown kernel type '" + type + "'");
    }
    validate_kernel(k);
    return k;
}

json kernel_to_json(const SmearingKernel& kernel) {
    return std::visit(
        [](const auto& k) -> json {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, GaussianConvolution>) {
                return {{"type", "gaussian"}, {"sigma", k.sigma}};
            } else if constexpr (std::is_same_v<K, CrystalBall>) {
                return {{"type", "crystal_ball"},
                        {"delta_m", k.delta_m},
                        {"sigma", k.sigma},
                        {"alpha", k.alpha},
                        {"gamma", k.gamma}};
            } else {
                std::vector<std::vector<double>> rows(k.density.rows(), std::vector<double>(k.density.cols()));
                for (Eigen::Index r = 0; r < k.density.rows(); ++r)
                    for (Eigen::Index c = 0; c < k.density.cols(); ++c) rows[r][c] = k.density(r, c);
                return {{"type", "tabulated"}, {"s_grid", k.s_grid}, {"t_grid", k.t_grid}, {"density", rows}};
            }
        },
        kernel);
}

RunConfig run_config_from_json(const json& j) {
    try {
        if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
        reject_unknown(j,
                       {"scenario", "lambda", "truth", "input", "output", "seed", "true_space", "smeared_space",
                        "bins", "edges", "basis", "gamma_l", "gamma_r", "kernel", "efficiency", "keep_fraction",
                        "mcem", "fixed_delta", "bootstrap", "grid_points", "save_chain"},
                       "configuration");
        RunConfig cfg;
        const std::string name = j.value("scenario", std::string("gmm"));
        if (name == "gmm") {
            cfg.lambda = j.value("lambda", 20000.0);
            cfg.scenario = gmm_scenario(cfg.lambda);
        } else if (name == "z") {
            cfg.lambda = j.value("lambda", 67778.0);
            cfg.scenario = z_scenario(cfg.lambda);
        } else if (name == "custom") {
            cfg.scenario.name = "custom";
            cfg.lambda = j.value("lambda", 0.0);
        } else {
            throw ConfigError("unknown scenario '" + name + "' (expected gmm, z or custom)");
        }
        Scenario& sc = cfg.scenario;
        if (j.contains("truth")) {
            sc.truth = truth_from_json(j["truth"]);
            if (j.contains("lambda")) set_lambda(*sc.truth, cfg.lambda);
        }
        if (name == "custom" && (!j.contains("true_space") || !j.contains("smeared_space")))
            throw ConfigError("custom scenario needs true_space and smeared_space");
        if (j.contains("true_space")) sc.true_space = interval_from_json(j["true_space"], "true_space");
        if (j.contains("smeared_space")) sc.smeared_space = interval_from_json(j["smeared_space"], "smeared_space");
        if (j.contains("bins")) sc.bins = j["bins"].get<int>();
        if (j.contains("edges")) {
            sc.edges = j["edges"].get<std::vector<double>>();
            sc.smeared_space = {sc.edges.front(), sc.edges.back()};
        }
        if (j.contains("basis")) {
            reject_unknown(j["basis"], {"interior_knots", "order"}, "basis");
            sc.interior_knots = j["basis"].value("interior_knots", sc.interior_knots);
            sc.order = j["basis"].value("order", sc.order);
        }
        sc.gamma_l = j.value("gamma_l", sc.gamma_l);
        sc.gamma_r = j.value("gamma_r", sc.gamma_r);
        if (j.contains("kernel")) sc.kernel = kernel_from_json(j["kernel"]);
        if (j.contains("efficiency")) sc.efficiency = efficiency_from_json(j["efficiency"]);
        sc.keep_fraction = j.value("keep_fraction", sc.keep_fraction);
        if (j.contains("mcem")) {
            const json& m = j["mcem"];
            reject_unknown(m, {"delta0", "T", "S_em", "S_final", "burn_in_initial", "burn_in_em", "rel_tol"},
                           "mcem");
            sc.mcem.delta0 = m.value("delta0", sc.mcem.delta0);
            sc.mcem.T = m.value("T", sc.mcem.T);
            sc.mcem.S_em = m.value("S_em", sc.mcem.S_em);
            sc.mcem.S_final = m.value("S_final", sc.mcem.S_final);
            sc.mcem.burn_in_initial = m.value("burn_in_initial", sc.mcem.burn_in_initial);
            sc.mcem.burn_in_em = m.value("burn_in_em", sc.mcem.burn_in_em);
            sc.mcem.rel_tol = m.value("rel_tol", sc.mcem.rel_tol);
        }

        cfg.input = j.value("input", std::string());
        cfg.output = j.value("output", cfg.output);
        cfg.seed = j.value("seed", cfg.seed);
        if (j.contains("fixed_delta") && !j["fixed_delta"].is_null()) {
            cfg.fixed_delta = j["fixed_delta"].get<double>();
            if (!(*cfg.fixed_delta > 0.0)) throw ConfigError("fixed_delta must be positive");
        }
        cfg.grid_points = j.value("grid_points", cfg.grid_points);
        cfg.save_chain = j.value("save_chain", cfg.save_chain);
        if (j.contains("bootstrap")) {
            const json& b = j["bootstrap"];
            reject_unknown(b,
                           {"enabled", "scheme", "R", "alpha", "band", "bias_correction", "clip_nonneg", "workers",
                            "keep_replicates"},
                           "bootstrap");
            cfg.bootstrap = b.value("enabled", cfg.bootstrap);
            if (b.contains("scheme"))
                cfg.bs.scheme = parse_scheme(b["scheme"].is_number() ? std::to_string(b["scheme"].get<int>())
                                                                      : b["scheme"].get<std::string>());
            cfg.bs.R = b.value("R", cfg.bs.R);
            cfg.bs.alpha = b.value("alpha", cfg.bs.alpha);
            if (b.contains("band")) cfg.bs.band = parse_band_kind(b["band"].get<std::string>());
            cfg.bs.bias_correction = b.value("bias_correction", cfg.bs.bias_correction);
            cfg.bs.clip_nonneg = b.value("clip_nonneg", cfg.bs.clip_nonneg);
            cfg.bs.workers = b.value("workers", cfg.bs.workers);
            cfg.bs.keep_replicates = b.value("keep_replicates", cfg.bs.keep_replicates);
        }
        if (cfg.fixed_delta && cfg.bootstrap)
            throw ConfigError("fixed_delta cannot be combined with the bootstrap (replicates refit δ)");
        sc.validate();
        if (cfg.bootstrap) {
            BootstrapConfig check = cfg.bs;
            check.grid = {0.0};
            check.validate();
        }
        return cfg;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("configuration: ") + e.what());
    }
}

json RunConfig::to_json() const {
    const Scenario& sc = scenario;
    json j;
    j["scenario"] = sc.name;
    j["lambda"] = lambda;
    if (sc.truth) j["truth"] = truth_to_json(*sc.truth);
    if (!input.empty()) j["input"] = input;
    j["seed"] = seed;
    j["true_space"] = {sc.true_space.lo, sc.true_space.hi};
    j["smeared_space"] = {sc.smeared_space.lo, sc.smeared_space.hi};
    j["edges"] = sc.binning().edges();
    j["basis"] = {{"interior_knots", sc.interior_knots}, {"order", sc.order}};
    j["gamma_l"] = sc.gamma_l;
    j["gamma_r"] = sc.gamma_r;
    j["kernel"] = kernel_to_json(sc.kernel);
    if (sc.efficiency.is_constant()) j["efficiency"] = sc.efficiency.constant_value();
    else j["efficiency"] = "tabulated";
    j["keep_fraction"] = sc.keep_fraction;
    j["mcem"] = {{"delta0", sc.mcem.delta0},
                 {"T", sc.mcem.T},
                 {"S_em", sc.mcem.S_em},
                 {"S_final", sc.mcem.S_final},
                 {"burn_in_initial", sc.mcem.burn_in_initial},
                 {"burn_in_em", sc.mcem.burn_in_em},
                 {"rel_tol", sc.mcem.rel_tol}};
    j["fixed_delta"] = fixed_delta ? json(*fixed_delta) : json(nullptr);
    j["bootstrap"] = {{"enabled", bootstrap},
                      {"scheme", bs.scheme == Scheme::Scheme1 ? 1 : 2},
                      {"R", bs.R},
                      {"alpha", bs.alpha},
                      {"band", to_string(bs.band)},
                      {"bias_correction", bs.bias_correction},
                      {"clip_nonneg", bs.clip_nonneg},
                      {"keep_replicates", bs.keep_replicates}};
    j["grid_points"] = grid_points;
    j["save_chain"] = save_chain;
    return j;
}

// ---------------------------------------------------------------------------
// Histogram files

BinnedCounts read_histogram(const std::string& path) {
    const CsvTable t = read_csv(path);
    const std::size_t lo = t.column("bin_lower"), hi = t.column("bin_upper"), cnt = t.column("count");
    if (t.rows.empty()) throw ConfigError("'" + path + "' has no bins");
    std::vector<double> edges;
    std::vector<std::int64_t> y;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        if (r == 0) edges.push_back(row[lo]);
        else if (row[lo] != edges.back())
            throw ConfigError("'" + path + "': bins are not contiguous at row " + std::to_string(r + 1));
        if (!(row[hi] > row[lo])) throw ConfigError("'" + path + "': bin edges must increase");
        edges.push_back(row[hi]);
        const double c = row[cnt];
        if (!(c >= 0.0) || c != std::floor(c) || c > 9.0e15)
            throw ConfigError("'" + path + "': counts must be non-negative integers");
        y.push_back(static_cast<std::int64_t>(c));
    }
    return BinnedCounts{std::move(y), BinningScheme(std::move(edges))};
}

void write_histogram(const BinnedCounts& counts, const std::string& path) {
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < counts.binning.size(); ++i)
        rows.push_back({counts.binning.lower(i), counts.binning.upper(i), static_cast<double>(counts.y[i])});
    write_csv(path, {"bin_lower", "bin_upper", "count"}, rows);
}

// ---------------------------------------------------------------------------
// Commands

namespace {

std::uint64_t simulation_seed(std::uint64_t master) { return stream_seed(master, 1); }
std::uint64_t mcem_seed(std::uint64_t master) { return stream_seed(master, 2); }
std::uint64_t bootstrap_seed(std::uint64_t master) { return stream_seed(master, 3); }

int cmd_simulate(const RunConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    const Scenario& sc = cfg.scenario;
    if (!sc.truth) throw ConfigError("simulate needs a scenario with a known truth");
    ensure_directory(cfg.output);
    const BinnedCounts counts = simulate_counts(sc, simulation_seed(cfg.seed));
    const Vector expected = expected_counts(sc);
    write_histogram(counts, join(cfg.output, "histogram.csv"));

    std::vector<std::vector<double>> truth_rows;
    for (double s : uniform_grid(sc.true_space, cfg.grid_points))
        truth_rows.push_back({s, intensity_at(*sc.truth, s)});
    write_csv(join(cfg.output, "truth.csv"), {"s", "intensity"}, truth_rows);

    json meta;
    meta["build"] = build_info();
    meta["command"] = "simulate";
    meta["config"] = cfg.to_json();
    meta["seeds"] = {{"master", cfg.seed}, {"simulation", simulation_seed(cfg.seed)}};
    meta["total_counts"] = counts.total();
    meta["expected_total"] = expected.sum();
    meta["expected_counts"] = std::vector<double>(expected.data(), expected.data() + expected.size());
    meta["total_intensity"] = total_intensity(*sc.truth);
    write_json(join(cfg.output, "simulation.json"), meta);
    write_json(join(cfg.output, "runtime.json"), {{"seconds", seconds_since(t0)}});

    std::cout << "simulated " << counts.total() << " events in " << counts.binning.size() << " bins (expected "
              << format_double(expected.sum()) << ") -> " << cfg.output << "\n";
    return kExitOk;
}

void write_plot_data(const ChainSample& chain, const std::string& dir) {
    ensure_directory(dir);
    const int p = chain.dim();
    std::vector<PlotSeries> series;
    for (int k = 0; k < p; ++k) series.push_back(plot_series(chain, k));
    std::vector<std::string> header{"sweep"};
    for (int k = 0; k < p; ++k) header.push_back("beta_" + std::to_string(k + 1));

    std::vector<std::vector<double>> trace, cummean;
    for (int s = 0; s < chain.size(); ++s) {
        std::vector<double> a{static_cast<double>(s + 1)}, b{static_cast<double>(s + 1)};
        for (int k = 0; k < p; ++k) {
            a.push_back(series[k].trace[s]);
            b.push_back(series[k].cumulative_mean[s]);
        }
        trace.push_back(std::move(a));
        cummean.push_back(std::move(b));
    }
    write_csv(join(dir, "trace.csv"), header, trace);
    write_csv(join(dir, "cumulative_mean.csv"), header, cummean);

    header[0] = "lag";
    std::vector<std::vector<double>> acf;
    for (std::size_t lag = 0; lag < series[0].acf.size(); ++lag) {
        std::vector<double> row{static_cast<double>(lag)};
        for (int k = 0; k < p; ++k) row.push_back(series[k].acf[lag]);
        acf.push_back(std::move(row));
    }
    write_csv(join(dir, "acf.csv"), header, acf);

    std::vector<std::vector<double>> hist;
    for (int k = 0; k < p; ++k)
        for (std::size_t b = 0; b < series[k].histogram_counts.size(); ++b)
            hist.push_back({static_cast<double>(k + 1), series[k].histogram_edges[b],
                            series[k].histogram_edges[b + 1], series[k].histogram_counts[b]});
    write_csv(join(dir, "histogram.csv"), {"coefficient", "bin_lower", "bin_upper", "count"}, hist);
}

int cmd_unfold(RunConfig cfg) {
    json timings;
    auto t0 = std::chrono::steady_clock::now();
    const auto t_start = t0;
    auto lap = [&](const char* name) {
        timings[name] = seconds_since(t0);
        t0 = std::chrono::steady_clock::now();
    };
    std::vector<std::string> warnings;

    BinnedCounts counts{{}, BinningScheme({0.0, 1.0})};
    if (!cfg.input.empty()) {
        counts = read_histogram(cfg.input);
        cfg.scenario.edges = counts.binning.edges();
        cfg.scenario.smeared_space = counts.binning.range();
    } else if (!cfg.scenario.truth) {
        throw ConfigError("no input histogram given and the scenario has no truth to simulate from");
    }
    ensure_directory(cfg.output);
    const Setup setup = prepare(cfg.scenario);
    if (cfg.input.empty()) counts = simulate_counts(cfg.scenario, simulation_seed(cfg.seed));
    lap("setup");
    if (setup.leakage > 0.01)
        warnings.push_back("about " + format_double(std::round(setup.leakage * 1000) / 10) +
                           "% of the events in F may originate outside E; consider widening E");

    const Vector y = counts.as_vector();
    const Vector beta0 = initial_beta(setup, counts);
    McemConfig mcfg = cfg.scenario.mcem;
    mcfg.seed = mcem_seed(cfg.seed);
    McemResult fit;
    if (cfg.fixed_delta) {
        const PosteriorModel model(y, setup.K.K, setup.penalty, *cfg.fixed_delta);
        SamplerConfig sc;
        sc.burn_in = mcfg.burn_in_initial;
        sc.n_samples = mcfg.S_final;
        sc.seed = mcfg.seed;
        sc.beta_init = beta0;
        fit.delta_hat = *cfg.fixed_delta;
        fit.trace.delta_path = {*cfg.fixed_delta};
        fit.final_chain = sample_posterior(model, sc);
        fit.beta_hat = fit.final_chain.mean();
    } else {
        fit = mcem_fit(y, setup.K.K, setup.penalty, beta0, mcfg);
    }
    lap("mcem");

    const std::vector<double> grid = uniform_grid(cfg.scenario.true_space, cfg.grid_points);
    UnfoldResult result;
    if (cfg.bootstrap) {
        BootstrapConfig bs = cfg.bs;
        bs.grid = grid;
        bs.seed = bootstrap_seed(cfg.seed);
        const BinningScheme& binning = setup.binning;
        auto init = [&](const Vector& y_star) {
            std::vector<std::int64_t> c(y_star.size());
            for (Eigen::Index i = 0; i < y_star.size(); ++i) c[i] = static_cast<std::int64_t>(y_star(i));
            return initial_beta(setup, BinnedCounts{std::move(c), binning});
        };
        result = bootstrap_unfold(y, setup.K.K, setup.penalty, setup.basis, fit, mcfg, bs, init);
        warnings.insert(warnings.end(), result.warnings.begin(), result.warnings.end());
    } else {
        result.beta_hat = fit.beta_hat;
        result.delta_hat = fit.delta_hat;
        result.grid = grid;
        result.f_hat = eval_intensity(setup.basis, fit.beta_hat, grid);
    }
    lap("bootstrap");

    const ChainDiagnostics diag = chain_diagnostics(fit.final_chain);
    warnings.insert(warnings.end(), diag.warnings.begin(), diag.warnings.end());

    // Outputs
    write_json(join(cfg.output, "config.json"), cfg.to_json());
    write_histogram(counts, join(cfg.output, "histogram.csv"));
    write_response(setup.K, join(cfg.output, "response_matrix.csv"), join(cfg.output, "response_matrix.json"));
    {
        std::vector<std::vector<double>> rows;
        for (Eigen::Index k = 0; k < fit.beta_hat.size(); ++k)
            rows.push_back({static_cast<double>(k + 1), fit.beta_hat(k), beta0(k)});
        write_csv(join(cfg.output, "beta_hat.csv"), {"index", "beta_hat", "beta_init"}, rows);
    }
    {
        std::vector<std::string> header{"s", "f_hat"};
        if (result.f_bc) header.push_back("f_bc");
        if (cfg.bootstrap) {
            header.push_back("lower");
            header.push_back("upper");
        }
        std::vector<std::vector<double>> rows;
        for (std::size_t g = 0; g < grid.size(); ++g) {
            std::vector<double> row{grid[g], result.f_hat(g)};
            if (result.f_bc) row.push_back((*result.f_bc)(g));
            if (cfg.bootstrap) {
                row.push_back(result.lower(g));
                row.push_back(result.upper(g));
            }
            rows.push_back(std::move(row));
        }
        write_csv(join(cfg.output, "curves.csv"), header, rows);
    }
    write_trace_csv(fit.trace, join(cfg.output, "delta_trace.csv"));
    write_json(join(cfg.output, "chain_diagnostics.json"), diag.to_json());
    write_plot_data(fit.final_chain, join(cfg.output, "plots"));
    if (cfg.save_chain) {
        std::vector<std::string> header;
        for (int k = 0; k < fit.final_chain.dim(); ++k) header.push_back("beta_" + std::to_string(k + 1));
        std::vector<std::vector<double>> rows;
        for (int s = 0; s < fit.final_chain.size(); ++s) {
            const Vector r = fit.final_chain.draws.row(s).transpose();
            rows.emplace_back(r.data(), r.data() + r.size());
        }
        write_csv(join(cfg.output, "chain.csv"), header, rows);
    }
    if (cfg.bootstrap && cfg.bs.keep_replicates) {
        std::vector<std::string> header{"replicate", "delta_hat"};
        for (std::size_t g = 0; g < grid.size(); ++g) header.push_back("f_" + std::to_string(g + 1));
        std::vector<std::vector<double>> rows;
        for (Eigen::Index r = 0; r < result.replicates.rows(); ++r) {
            std::vector<double> row{static_cast<double>(r + 1), result.replicate_deltas[r]};
            for (Eigen::Index g = 0; g < result.replicates.cols(); ++g) row.push_back(result.replicates(r, g));
            rows.push_back(std::move(row));
        }
        write_csv(join(cfg.output, "replicates.csv"), header, rows);
    }

    json manifest;
    manifest["build"] = build_info();
    manifest["command"] = "unfold";
    manifest["config"] = cfg.to_json();
    manifest["seeds"] = {{"master", cfg.seed},
                         {"simulation", cfg.input.empty() ? json(simulation_seed(cfg.seed)) : json(nullptr)},
                         {"mcem", mcfg.seed},
                         {"bootstrap", cfg.bootstrap ? json(bootstrap_seed(cfg.seed)) : json(nullptr)}};
    manifest["data"] = {{"source", cfg.input.empty() ? "simulated" : cfg.input},
                        {"bins", counts.binning.size()},
                        {"total_counts", counts.total()}};
    manifest["discretization"] = {{"coefficients", setup.basis.size()},
                                  {"cond_K", setup.K.cond},
                                  {"cond_K_tilde", setup.K_tilde.cond},
                                  {"leakage_into_F", setup.leakage}};
    manifest["estimate"] = {{"delta_hat", fit.delta_hat},
                            {"fixed_delta", cfg.fixed_delta.has_value()},
                            {"mcem_iterations", fit.trace.iterations()},
                            {"final_mean_acceptance", diag.mean_acceptance},
                            {"final_mean_kappa", diag.mean_kappa},
                            {"final_min_ess", diag.min_ess}};
    if (cfg.bootstrap) {
        std::vector<double> d = result.replicate_deltas;
        manifest["bootstrap"] = {{"scheme", to_string(result.scheme)},
                                 {"R", result.R_requested},
                                 {"R_effective", result.R_effective},
                                 {"alpha", cfg.bs.alpha},
                                 {"band", to_string(result.band_kind)},
                                 {"bias_correction", cfg.bs.bias_correction},
                                 {"replicate_chain_settings", "same as the base fit, delta0 = base delta_hat"},
                                 {"replicate_delta_hat",
                                  {{"min", quantile(d, 0.0)},
                                   {"q025", quantile(d, 0.025)},
                                   {"median", quantile(d, 0.5)},
                                   {"q975", quantile(d, 0.975)},
                                   {"max", quantile(d, 1.0)}}}};
    }
    manifest["warnings"] = warnings;
    write_json(join(cfg.output, "manifest.json"), manifest);
    timings["total"] = seconds_since(t_start);
    write_json(join(cfg.output, "runtime.json"), {{"seconds", timings}, {"workers", cfg.bs.workers}});

    std::cout << "delta_hat = " << format_double(fit.delta_hat) << "\n"
              << "cond(K) = " << format_double(setup.K.cond) << "\n"
              << "mean acceptance = " << format_double(diag.mean_acceptance)
              << ", mean autocorrelation time = " << format_double(diag.mean_kappa) << "\n";
    if (cfg.bootstrap)
        std::cout << "bootstrap: " << result.R_effective << "/" << result.R_requested << " replicates, "
                  << to_string(result.band_kind) << " band\n";
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    std::cout << "outputs written to " << cfg.output << "\n";
    return kExitOk;
}

int cmd_diagnose(const std::string& dir, double ess_threshold, double acceptance_threshold) {
    if (!fs::is_directory(dir)) throw ConfigError("'" + dir + "' is not a directory");
    const std::string diag_path = join(dir, "chain_diagnostics.json");
    if (!fs::exists(diag_path))
        throw ConfigError("'" + dir + "' does not contain run artifacts (chain_diagnostics.json missing)");
    const ChainDiagnostics diag = ChainDiagnostics::from_json(read_json(diag_path));

    std::vector<double> delta_path;
    if (fs::exists(join(dir, "delta_trace.csv"))) {
        const CsvTable t = read_csv(join(dir, "delta_trace.csv"));
        const std::size_t c = t.column("delta");
        for (const auto& row : t.rows) delta_path.push_back(row[c]);
    }

    json flags = json::array();
    for (const auto& c : diag.coordinates) {
        if (c.ess < ess_threshold)
            flags.push_back({{"coefficient", c.index}, {"issue", "low_ess"}, {"value", c.ess}});
        if (c.acceptance < acceptance_threshold)
            flags.push_back({{"coefficient", c.index}, {"issue", "low_acceptance"}, {"value", c.acceptance}});
    }

    std::cout << "chain: " << diag.n_samples << " draws of " << diag.coordinates.size() << " coefficients\n"
              << "mean acceptance rate: " << format_double(diag.mean_acceptance) << "\n"
              << "mean autocorrelation time: " << format_double(diag.mean_kappa) << "\n"
              << "minimum effective sample size: " << format_double(diag.min_ess) << "\n";
    if (!delta_path.empty()) {
        std::cout << "delta path:";
        for (double d : delta_path) std::cout << " " << format_double(d);
        std::cout << "\n";
    }
    if (flags.empty()) {
        std::cout << "no flags raised\n";
    } else {
        std::cout << flags.size() << " flag(s):\n";
        for (const auto& f : flags)
            std::cout << "  coefficient " << f["coefficient"].get<int>() << ": " << f["issue"].get<std::string>()
                      << " (" << format_double(f["value"].get<double>()) << ")\n";
    }
    for (const auto& w : diag.warnings) std::cout << "warning: " << w << "\n";

    json report;
    report["n_samples"] = diag.n_samples;
    report["mean_acceptance"] = diag.mean_acceptance;
    report["mean_kappa"] = diag.mean_kappa;
    report["min_ess"] = diag.min_ess;
    report["delta_path"] = delta_path;
    report["thresholds"] = {{"ess", ess_threshold}, {"acceptance", acceptance_threshold}};
    report["flags"] = flags;
    report["healthy"] = flags.empty();
    write_json(join(dir, "diagnosis.json"), report);
    return kExitOk;
}

int cmd_mise(const json& base, const std::vector<double>& lambdas, int reps, int workers) {
    const RunConfig cfg = run_config_from_json(base);
    if (!cfg.scenario.truth) throw ConfigError("the MISE study needs a scenario with a known truth");
    ensure_directory(cfg.output);
    const auto t0 = std::chrono::steady_clock::now();
    auto make = [&](double lambda) {
        json j = base;
        j["lambda"] = lambda;
        return run_config_from_json(j).scenario;
    };
    const std::vector<MiseRow> rows = mise_study(make, lambdas, reps, stream_seed(cfg.seed, 4), workers);
    write_mise_csv(rows, join(cfg.output, "mise.csv"));
    json manifest;
    manifest["build"] = build_info();
    manifest["command"] = "mise";
    manifest["config"] = cfg.to_json();
    manifest["lambdas"] = lambdas;
    manifest["reps"] = reps;
    manifest["seeds"] = {{"master", cfg.seed}, {"study", stream_seed(cfg.seed, 4)}};
    write_json(join(cfg.output, "manifest.json"), manifest);
    write_json(join(cfg.output, "runtime.json"), {{"seconds", seconds_since(t0)}, {"workers", workers}});
    std::cout << "lambda,mise_over_lambda2,std_error,reps,failures\n";
    for (const auto& r : rows)
        std::cout << format_double(r.lambda) << "," << format_double(r.mise_over_lambda2) << ","
                  << format_double(r.std_error) << "," << r.reps << "," << r.failures << "\n";
    return kExitOk;
}

json load_config(const std::string& path) { return path.empty() ? json::object() : read_json(path); }

}  // namespace

int report_exception(std::exception_ptr error, std::ostream& err) {
    try {
        std::rethrow_exception(error);
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const ConvergenceError& e) {
        err << "convergence failure: " << e.what() << "\n";
        return kExitConvergence;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
    } catch (...) {
        err << "error: unknown exception\n";
    }
    return 1;
}

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Empirical Bayes unfolding of Poisson histograms"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    struct Common {
        std::string config, scenario, output;
        double lambda = 0.0;
        std::uint64_t seed = 0;
    };
    auto add_common = [](CLI::App* sub, Common& c) {
        sub->add_option("-c,--config", c.config, "JSON configuration file");
        sub->add_option("--scenario", c.scenario, "preset: gmm, z or custom");
        sub->add_option("--lambda", c.lambda, "expected number of true events");
        sub->add_option("--seed", c.seed, "master seed");
        sub->add_option("-o,--output", c.output, "output directory");
    };
    auto apply_common = [](const CLI::App* sub, const Common& c, json& j) {
        if (sub->count("--scenario")) j["scenario"] = c.scenario;
        if (sub->count("--lambda")) j["lambda"] = c.lambda;
        if (sub->count("--seed")) j["seed"] = c.seed;
        if (sub->count("--output")) j["output"] = c.output;
    };

    Common sim;
    CLI::App* simulate = app.add_subcommand("simulate", "generate a synthetic histogram from a scenario");
    add_common(simulate, sim);

    Common unf;
    std::string input, scheme, band;
    int workers = 1, R = 0, T = 0, S_em = 0, S_final = 0, grid_points = 0;
    double alpha = 0.0, fixed_delta = 0.0, delta0 = 0.0;
    CLI::App* unfold = app.add_subcommand("unfold", "unfold a histogram and quantify its uncertainty");
    add_common(unfold, unf);
    unfold->add_option("-i,--input", input, "histogram CSV (bin_lower, bin_upper, count)");
    unfold->add_option("-j,--workers", workers, "bootstrap worker threads")->check(CLI::PositiveNumber);
    unfold->add_flag("--no-bootstrap", "point estimate only");
    unfold->add_option("--R", R, "bootstrap replicates");
    unfold->add_option("--scheme", scheme, "bootstrap resampling scheme (1 or 2)");
    unfold->add_option("--alpha", alpha, "band tail probability");
    unfold->add_option("--band", band, "percentile or basic");
    unfold->add_flag("--bias-correction", "bias-corrected estimate (scheme 1)");
    unfold->add_flag("--clip-nonneg", "clip negative basic-band limits at zero");
    unfold->add_option("--fixed-delta", fixed_delta, "skip MCEM and sample at this delta");
    unfold->add_flag("--save-chain", "write the final MCMC chain");
    unfold->add_option("--T", T, "MCEM iterations");
    unfold->add_option("--S-em", S_em, "MCMC draws per E-step");
    unfold->add_option("--S-final", S_final, "MCMC draws at delta_hat");
    unfold->add_option("--delta0", delta0, "initial delta");
    unfold->add_option("--grid-points", grid_points, "evaluation grid size");

    std::string run_dir;
    double ess_threshold = 50.0, acceptance_threshold = 0.5;
    CLI::App* diagnose = app.add_subcommand("diagnose", "summarize sampler diagnostics of a run directory");
    diagnose->add_option("run_dir", run_dir, "output directory of an unfold run")->required();
    diagnose->add_option("--ess-threshold", ess_threshold, "flag coefficients with ESS below this");
    diagnose->add_option("--acceptance-threshold", acceptance_threshold, "flag acceptance below this");

    Common ms;
    std::vector<double> lambdas{1000.0, 4000.0, 16000.0};
    int reps = 20, mise_workers = 1;
    CLI::App* mise = app.add_subcommand("mise", "mean integrated squared error study");
    add_common(mise, ms);
    mise->add_option("--lambdas", lambdas, "expected event counts")->delimiter(',');
    mise->add_option("--reps", reps, "repetitions per lambda");
    mise->add_option("-j,--workers", mise_workers, "worker threads")->check(CLI::PositiveNumber);
    mise->add_option("--T", T, "MCEM iterations");
    mise->add_option("--S-em", S_em, "MCMC draws per E-step");
    mise->add_option("--S-final", S_final, "MCMC draws at delta_hat");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        auto apply_mcem = [&](const CLI::App* sub, json& j) {
            auto set = [&](const char* flag, const char* key, auto value) {
                const CLI::Option* opt = sub->get_option_no_throw(flag);
                if (opt && opt->count()) j["mcem"][key] = value;
            };
            set("--T", "T", T);
            set("--S-em", "S_em", S_em);
            set("--S-final", "S_final", S_final);
            set("--delta0", "delta0", delta0);
        };
        if (*simulate) {
            json j = load_config(sim.config);
            apply_common(simulate, sim, j);
            j["bootstrap"]["enabled"] = false;
            return cmd_simulate(run_config_from_json(j));
        }
        if (*unfold) {
            json j = load_config(unf.config);
            apply_common(unfold, unf, j);
            apply_mcem(unfold, j);
            if (unfold->count("--input")) j["input"] = input;
            if (unfold->count("--no-bootstrap")) j["bootstrap"]["enabled"] = false;
            if (unfold->count("--R")) j["bootstrap"]["R"] = R;
            if (unfold->count("--scheme")) j["bootstrap"]["scheme"] = scheme;
            if (unfold->count("--alpha")) j["bootstrap"]["alpha"] = alpha;
            if (unfold->count("--band")) j["bootstrap"]["band"] = band;
            if (unfold->count("--bias-correction")) j["bootstrap"]["bias_correction"] = true;
            if (unfold->count("--clip-nonneg")) j["bootstrap"]["clip_nonneg"] = true;
            if (unfold->count("--fixed-delta")) {
                j["fixed_delta"] = fixed_delta;
                j["bootstrap"]["enabled"] = false;
            }
            if (unfold->count("--save-chain")) j["save_chain"] = true;
            if (unfold->count("--grid-points")) j["grid_points"] = grid_points;
            RunConfig cfg = run_config_from_json(j);
            // Worker count only affects scheduling, never results, so it stays out of the config echo.
            if (unfold->count("--workers")) cfg.bs.workers = workers;
            return cmd_unfold(std::move(cfg));
        }
        if (*diagnose) return cmd_diagnose(run_dir, ess_threshold, acceptance_threshold);
        if (*mise) {
            json j = load_config(ms.config);
            apply_common(mise, ms, j);
            apply_mcem(mise, j);
            j["bootstrap"]["enabled"] = false;
            return cmd_mise(j, lambdas, reps, mise_workers);
        }
    } catch (...) {
        return report_exception(std::current_exception(), std::cerr);
    }
    return kExitOk;
}

}  // namespace ebunfold
