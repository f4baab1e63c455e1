#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>

#include "CLI11.hpp"

#include "tmlecom/config.hpp"
#include "tmlecom/error.hpp"
#include "tmlecom/exposure_density.hpp"
#include "tmlecom/hierarchy.hpp"
#include "tmlecom/parallel.hpp"
#include "tmlecom/serialize.hpp"
#include "tmlecom/sim.hpp"

namespace fs = std::filesystem;
using namespace tmlecom;

namespace {

struct Common {
    std::string config;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
    int threads = 0;
    bool verbose = false;
};

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + p.string());
    f << s;
}

RunConfig load_config(const Common& c) {
    if (c.config.empty()) throw ConfigError("--config is required");
    const fs::path path(c.config);
    Json j = read_json_file(path);
    if (c.seed) j["seed"] = *c.seed;
    if (c.threads > 0) j["threads"] = c.threads;
    if (c.verbose) j["verbose"] = true;
    return parse_run_config(j, path.parent_path());
}

void print_result(const InterventionResult& r, const char* title) {
    std::printf("%s (%s)\n", title, r.name.c_str());
    std::printf("  %-6s %12s %12s %12s %12s\n", "", "estimate", "variance", "ci_lo", "ci_hi");
    auto line = [](const char* n, double e, double v, const Interval& ci) {
        std::printf("  %-6s %12.6f %12.6g %12.6f %12.6f\n", n, e, v, ci.lo, ci.hi);
    };
    line("tmle", r.estimate.tmle, r.variance.tmle, r.ci_tmle);
    line("iptw", r.estimate.iptw, r.variance.iptw, r.ci_iptw);
    line("gcomp", r.estimate.gcomp, r.variance.gcomp, r.ci_gcomp);
}

int cmd_estimate(const Common& c) {
    RunConfig rc = load_config(c);
    parallel::set_threads(rc.threads);
    const HierDataset ds = load_run_data(rc);
    const EstimationReport rep = run(ds, rc.est);
    fs::create_directories(c.out);
    write_json_file(report_to_json(rep), fs::path(c.out) / "report.json");
    write_json_file(resolved_config(rc), fs::path(c.out) / "config.resolved.json");
    std::printf("strategy %s, %zu rows, %zu units\n", to_string(rep.strategy).c_str(), rep.n_obs, rep.n_units);
    print_result(rep.gstar1, "gstar1");
    if (rep.gstar2) print_result(*rep.gstar2, "gstar2");
    if (rep.ate) print_result(*rep.ate, "ate");
    if (rc.verbose) {
        for (const auto& w : rep.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    } else if (!rep.warnings.empty()) {
        std::fprintf(stderr, "%zu warning(s); see report.json\n", rep.warnings.size());
    }
    return 0;
}

int cmd_density_fit(const Common& c) {
    RunConfig rc = load_config(c);
    parallel::set_threads(rc.threads);
    const HierDataset ds = load_run_data(rc);
    const FittedDensity fd = fit_exposure_density(ds, rc.est);
    fs::create_directories(c.out);
    const fs::path p = fs::path(c.out) / "density.json";
    save_density(fd, p);
    write_json_file(resolved_config(rc), fs::path(c.out) / "config.resolved.json");
    for (const auto& v : fd.vars) {
        std::printf("%s: %s, %zu model(s)\n", v.name.c_str(), to_string(v.kind).c_str(), v.n_models());
    }
    std::printf("-> %s\n", p.string().c_str());
    return 0;
}

int cmd_simulate(const Common& c, const std::string& study_flag, std::optional<std::size_t> reps_flag) {
    Json j = Json::object();
    if (!c.config.empty()) j = read_json_file(c.config);
    if (!study_flag.empty()) j["study"] = study_flag;
    if (!j.contains("study")) throw ConfigError("simulate needs a study (config key 'study' or --study)");
    const std::set<std::string> allowed{"study", "J", "n_mean", "n_sd", "working_model", "shift", "trunc_bound",
                                        "reps", "seed", "truth", "truth_draws", "scale", "threads"};
    for (const auto& [k, v] : j.items()) {
        if (!allowed.count(k)) throw ConfigError("unknown simulate key '" + k + "'");
    }
    sim::DgpSpec d = sim::DgpSpec::defaults(sim::study_from_string(j.at("study").get<std::string>()));
    try {
        d.J = j.value("J", d.J);
        d.n_mean = j.value("n_mean", d.n_mean);
        d.n_sd = j.value("n_sd", d.n_sd);
        d.working_model = j.value("working_model", d.working_model);
        d.shift = j.value("shift", d.shift);
        d.trunc_bound = j.value("trunc_bound", d.trunc_bound);
        d.seed = j.value("seed", d.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("simulate config: ") + e.what());
    }
    if (c.seed) d.seed = *c.seed;
    std::size_t R = j.value("reps", std::size_t{20});
    if (reps_flag) R = *reps_flag;
    if (R == 0) throw ConfigError("reps must be positive");
    const int threads = c.threads > 0 ? c.threads : j.value("threads", 0);
    parallel::set_threads(threads);

    double truth = sim::analytic_truth(d);
    double truth_se = 0.0;
    const std::size_t draws = j.value("truth_draws", std::size_t{200000});
    if (j.contains("truth") && j["truth"].is_number()) {
        truth = j["truth"].get<double>();
    } else if (std::isnan(truth) || j.value("truth", std::string("auto")) == "calibrate") {
        const sim::Truth t = sim::calibrate_truth(d, draws);
        truth = t.value;
        truth_se = t.se;
    }
    const double scale = j.value("scale", (d.study == sim::Study::sim1 || d.study == sim::Study::sim2) ? 100.0 : 1.0);

    const auto battery = sim::default_battery(d);
    const sim::StudyResult res = sim::run_study(d, battery, R, truth);

    fs::create_directories(c.out);
    const fs::path out(c.out);
    Json mj = res.table.json();
    mj["truth_se"] = truth_se;
    mj["failures"] = res.failures;
    write_json_file(mj, out / "metrics.json");
    write_text(out / "metrics.txt", res.table.text(scale));
    write_text(out / "reps.csv", res.reps_csv());
    Json echo = j;
    echo["study"] = sim::to_string(d.study);
    echo["J"] = d.J;
    echo["n_mean"] = d.n_mean;
    echo["n_sd"] = d.n_sd;
    echo["working_model"] = d.working_model;
    echo["shift"] = d.shift;
    echo["trunc_bound"] = d.trunc_bound;
    echo["reps"] = R;
    echo["seed"] = d.seed;
    echo["truth"] = truth;
    echo["truth_draws"] = draws;
    echo["scale"] = scale;
    write_json_file(echo, out / "config.resolved.json");
    std::cout << res.table.text(scale);
    if (!res.failures.empty()) {
        std::fprintf(stderr, "%zu failed analyses\n", res.failures.size());
        if (c.verbose) {
            for (const auto& f : res.failures) std::fprintf(stderr, "  %s\n", f.c_str());
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Targeted estimation of intervention effects on hierarchical data"};
    app.require_subcommand(1);
    Common c;
    auto add_common = [&](CLI::App* s) {
        s->add_option("--config", c.config, "run configuration (JSON)");
        s->add_option("--seed", c.seed, "master seed");
        s->add_option("--threads", c.threads, "OpenMP threads (0 = runtime default)");
        s->add_option("--out", c.out, "output directory");
        s->add_flag("--verbose", c.verbose);
    };
    auto* est = app.add_subcommand("estimate", "run the estimator on a dataset");
    add_common(est);
    auto* dens = app.add_subcommand("density-fit", "fit and save the exposure density");
    add_common(dens);
    auto* simc = app.add_subcommand("simulate", "run a simulation study");
    add_common(simc);
    std::string study;
    std::optional<std::size_t> reps;
    simc->add_option("--study", study, "sim1 | sim2 | sim3 | ate_example | shift_example");
    simc->add_option("--reps", reps, "replications");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    try {
        if (*est) return cmd_estimate(c);
        if (*dens) return cmd_density_fit(c);
        return cmd_simulate(c, study, reps);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 4;
    } catch (const nlohmann::json::exception& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
