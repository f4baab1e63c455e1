// Acceptance checks, one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>

#include "helpers.hpp"
#include "tmlecom/hierarchy.hpp"
#include "tmlecom/parallel.hpp"
#include "tmlecom/serialize.hpp"
#include "tmlecom/sim.hpp"

using namespace tmlecom;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(int id, bool ok, const std::string& detail) {
    std::printf("criterion %d: %s  %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    failures += ok ? 0 : 1;
}

std::string fmt(const char* f, auto... v) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, v...);
    return buf;
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream(path, std::ios::binary) << text;
}

void criterion1() {
    const auto t0 = Clock::now();
    const auto ds = sim::generate(sim::DgpSpec::defaults(sim::Study::shift_example), 0);
    EstimationConfig cfg;
    cfg.hform_g0 = "A ~ W1 + W3*W4";
    cfg.binning.max_n_per_bin = 250;
    cfg.binning.method = BinMethod::equal_mass;
    const auto mass = fit_exposure_density(ds, cfg).vars[0].n_models();
    cfg.binning.method = BinMethod::equal_len;
    const auto len = fit_exposure_density(ds, cfg).vars[0].n_models();
    const double t = seconds_since(t0);
    report(1, ds.n_obs() == 5000 && mass == 22 && len == 7 && t < 10.0,
           fmt("n=%zu equal_mass=%zu equal_len=%zu (%.2fs)", ds.n_obs(), mass, len, t));
}

void criterion2() {
    const auto t0 = Clock::now();
    const auto d = sim::DgpSpec::defaults(sim::Study::ate_example);
    const auto res = sim::run_study(d, sim::default_battery(d), 20, 2.80);
    const auto& tab = res.table;
    const double gc = tab.row("GCOMP-correctQ").mean, tm = tab.row("TMLE-correctQ").mean;
    const double gm = std::fabs(tab.row("GCOMP-misspecifiedQ").bias), tmm = std::fabs(tab.row("TMLE-misspecifiedQ").bias);
    const double t = seconds_since(t0);
    const bool ok = std::fabs(gc - 2.8) <= 0.15 && std::fabs(tm - 2.8) <= 0.15 && gm > 0.4 && tmm < 0.15 &&
                    res.failures.empty() && t < 120.0;
    report(2, ok,
           fmt("correct Q: GCOMP %.4f TMLE %.4f; misspecified Q: |bias| GCOMP %.4f TMLE %.4f (%.1fs)", gc, tm, gm,
               tmm, t));
}

void criterion3() {
    const auto t0 = Clock::now();
    const auto d = sim::DgpSpec::defaults(sim::Study::shift_example);
    const double truth = 3.46601;
    const auto res = sim::run_study(d, sim::default_battery(d), 20, truth);
    const double m = res.table.row("IPTW").mean;
    const double t = seconds_since(t0);
    report(3, std::fabs(m - truth) <= 0.1 && res.failures.empty(),
           fmt("IPTW mean %.4f vs %.5f (diff %+.4f; calibrated truth %.5f) (%.1fs)", m, truth, m - truth,
               sim::analytic_truth(d), t));
}

void criterion4() {
    const auto t0 = Clock::now();
    auto d = sim::DgpSpec::defaults(sim::Study::sim2);
    d.J = 100;
    d.working_model = true;
    const auto truth = sim::calibrate_truth(d, 200000);
    const auto res = sim::run_study(d, sim::default_battery(d), 50, truth.value);
    const auto& tm = res.table.row("TMLE-Ia");
    const auto& ip = res.table.row("IPTW-I");
    const double t = seconds_since(t0);
    const bool ok = std::fabs(tm.bias) * 100 < 0.5 && tm.coverage >= 0.86 && tm.coverage <= 1.0 &&
                    ip.mean_se >= 2 * tm.mean_se && t < 600.0;
    report(4, ok,
           fmt("TMLE-Ia |bias|x100 %.3f coverage %.2f; sigma-hat x100 IPTW-I %.2f TMLE-Ia %.2f; truth %.5f (%.1fs)",
               std::fabs(tm.bias) * 100, tm.coverage, ip.mean_se * 100, tm.mean_se * 100, truth.value, t));
}

void criterion5() {
    const auto t0 = Clock::now();
    auto d = sim::DgpSpec::defaults(sim::Study::sim1);
    d.J = 200;
    d.working_model = false;
    const auto truth = sim::calibrate_truth(d, 200000);
    const auto res = sim::run_study(d, sim::default_battery(d), 30, truth.value);
    const auto& ia = res.table.row("TMLE-Ia");
    const auto& ii = res.table.row("TMLE-II");
    const double t = seconds_since(t0);
    write_file("sim1_reps.csv", res.reps_csv());
    report(5, std::fabs(ii.bias) > std::fabs(ia.bias) && res.failures.empty(),
           fmt("|bias|x100 TMLE-II %.3f vs TMLE-Ia %.3f (sd x100 %.2f / %.2f, R=30, truth %.5f) (%.1fs)",
               std::fabs(ii.bias) * 100, std::fabs(ia.bias) * 100, ii.sd * 100, ia.sd * 100, truth.value, t));
}

// Property suite.

double stratum_plugin(const Frame& f, const std::vector<std::string>& ws, double a) {
    std::map<std::vector<double>, std::pair<double, double>> cell;
    const auto A = f.col("A"), Y = f.col("Y");
    auto key = [&](std::size_t i) {
        std::vector<double> k;
        for (const auto& w : ws) k.push_back(f.col(w)[i]);
        return k;
    };
    for (std::size_t i = 0; i < A.size(); ++i) {
        if (A[i] != a) continue;
        auto& c = cell[key(i)];
        c.first += Y[i];
        c.second += 1;
    }
    double s = 0;
    for (std::size_t i = 0; i < A.size(); ++i) {
        const auto it = cell.find(key(i));
        if (it == cell.end()) return std::nan("");
        s += it->second.first / it->second.second;
    }
    return s / static_cast<double>(A.size());
}

HierDataset binary_covariates(std::size_t n, std::size_t p, std::uint64_t seed, bool continuous_y) {
    Rng rng(seed, 61);
    Frame f;
    std::vector<std::vector<double>> w(p, std::vector<double>(n));
    std::vector<double> a(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double lp = -0.2, ly = -0.3;
        for (std::size_t k = 0; k < p; ++k) {
            w[k][i] = rng.bernoulli(0.3 + 0.1 * static_cast<double>(k));
            lp += (k % 2 ? -0.4 : 0.5) * w[k][i];
            ly += 0.3 * static_cast<double>(k + 1) * w[k][i];
        }
        a[i] = rng.bernoulli(expit(lp));
        ly += 0.8 * a[i] + (p > 1 ? 0.6 * a[i] * w[0][i] * w[1][i] : 0.0);
        y[i] = continuous_y ? ly + rng.normal() : rng.bernoulli(expit(ly));
    }
    NodeRoles r;
    r.ynode = "Y";
    r.anodes = {"A"};
    for (std::size_t k = 0; k < p; ++k) {
        const auto name = "W" + std::to_string(k + 1);
        f.set(name, w[k]);
        r.wenodes.push_back(name);
    }
    f.set("A", a);
    f.set("Y", y);
    return HierDataset(std::move(f), r);
}

HierDataset with_y(const HierDataset& ds, double scale, double shift) {
    Frame f = ds.frame();
    std::vector<double> y;
    for (double v : ds.frame().col(*ds.roles().ynode)) y.push_back(scale * v + shift);
    f.set(*ds.roles().ynode, y);
    return HierDataset(f, ds.roles(), ds.row_keys());
}

struct Case {
    HierDataset ds;
    EstimationConfig cfg;
};

Case random_case(std::size_t k) {
    Rng rng(2024, k);
    const std::size_t n = 40 + static_cast<std::size_t>(rng.uniform() * 160);
    EstimationConfig cfg;
    cfg.method = k % 2 ? TargetMethod::tmle_covariate : TargetMethod::tmle_intercept;
    cfg.mc.seed = 100 + k;
    cfg.mc.n_mc_sims = 2;
    switch (k % 4) {
        case 0:
            cfg.f_gstar1 = constant_intervention({1});
            cfg.f_gstar2 = constant_intervention({0});
            return {testutil::binary_dataset(n, k, k % 3 == 0), cfg};
        case 1:
            cfg.f_gstar1 = builtin_shift_truncate(0.5 + rng.uniform(), 4.0, LinearPredictor{});
            cfg.binning.nbins = 3 + static_cast<int>(k % 5);
            return {testutil::continuous_dataset(n, k), cfg};
        case 2:
            cfg.f_gstar1 = constant_intervention({1});
            cfg.step = Strategy::individual_level;
            return {testutil::community_dataset(10 + n / 10, k), cfg};
        default:
            cfg.f_gstar1 = constant_intervention({1});
            cfg.f_gstar2 = constant_intervention({0});
            cfg.step = Strategy::community_level;
            cfg.obs_policy = ObsWeightPolicy::equal_within_community;
            return {testutil::community_dataset(15 + n / 8, k), cfg};
    }
}

void criterion6() {
    const auto t0 = Clock::now();
    bool a_ok = true, b_ok = true, c_ok = true, d_ok = true, e_ok = true, f_ok = true;
    double worst_score = 0, worst_ic = 0, worst_affine = 0, worst_pou = 0, worst_gcomp = 0;

    // (a) targeting solves its score equation; the TMLE influence curve has mean zero
    for (std::size_t k = 0; k < 100; ++k) {
        Rng rng(77, k);
        const std::size_t n = 20 + static_cast<std::size_t>(rng.uniform() * 180);
        std::vector<double> q(n), h(n), y(n), w(n);
        for (std::size_t i = 0; i < n; ++i) {
            q[i] = 0.05 + 0.9 * rng.uniform();
            h[i] = rng.uniform() < 0.3 ? 0.0 : 0.2 + 3 * rng.uniform();
            y[i] = k % 2 ? rng.uniform() : (rng.uniform() < q[i] ? 1.0 : 0.0);
            w[i] = 0.5 + rng.uniform();
        }
        for (auto m : {TargetMethod::tmle_intercept, TargetMethod::tmle_covariate}) {
            const auto r = target(q, h, y, w, m);
            double s = 0;
            for (std::size_t i = 0; i < n; ++i) s += w[i] * h[i] * (y[i] - r.qstar[i]);
            worst_score = std::max(worst_score, std::fabs(s));
        }
        const auto c = random_case(k);
        const auto rep = run(c.ds, c.cfg);
        double m = 0;
        for (double v : rep.gstar1.ic_tmle) m += v / static_cast<double>(rep.gstar1.ic_tmle.size());
        worst_ic = std::max(worst_ic, std::fabs(m));

        // (c) estimates inside the outcome bounds
        for (const auto* r : {&rep.gstar1, rep.gstar2 ? &*rep.gstar2 : nullptr}) {
            if (!r) continue;
            for (double e : {r->estimate.tmle, r->estimate.gcomp}) c_ok = c_ok && e >= rep.scale.a && e <= rep.scale.b;
        }

        // (b) affine equivariance, every few cases
        if (k % 5 == 0) {
            const double sc = k % 10 ? -2.5 : 4.0, sh = 10.0;
            const auto rep2 = run(with_y(c.ds, sc, sh), c.cfg);
            auto chk = [&](double x, double y2) {
                const double d = std::fabs(sc * x + sh - y2);
                worst_affine = std::max(worst_affine, d);
            };
            chk(rep.gstar1.estimate.tmle, rep2.gstar1.estimate.tmle);
            chk(rep.gstar1.estimate.iptw, rep2.gstar1.estimate.iptw);
            chk(rep.gstar1.estimate.gcomp, rep2.gstar1.estimate.gcomp);
        }
    }
    a_ok = worst_score <= 1e-8 && worst_ic <= 1e-8;
    b_ok = worst_affine <= 1e-8;

    // (d) partition of unity of bin probabilities
    for (std::size_t k = 0; k < 20; ++k) {
        const auto ds = testutil::continuous_dataset(300 + 50 * k, 500 + k);
        EstimationConfig cfg;
        cfg.binning.method = static_cast<BinMethod>(k % 3);
        cfg.binning.nbins = 2 + static_cast<int>(k % 9);
        cfg.binning.pool_contin_var = k % 2;
        const auto fd = fit_exposure_density(ds, cfg);
        for (const auto& row : bin_probabilities(fd.vars[0], ds.frame())) {
            double s = 0;
            for (double p : row) s += p;
            worst_pou = std::max(worst_pou, std::fabs(s - 1.0));
        }
    }
    d_ok = worst_pou <= 1e-8;

    // (e) saturated GCOMP against stratum enumeration
    std::size_t n_oracle = 0;
    for (std::size_t p = 1; p <= 4; ++p) {
        for (std::size_t rep = 0; rep < 3; ++rep) {
            const auto ds = binary_covariates(1500, p, 10 * p + rep, rep == 2);
            std::vector<std::string> ws = ds.roles().wenodes;
            std::string q = "Y ~ A";
            for (const auto& w : ws) q += "*" + w;
            EstimationConfig cfg;
            cfg.qform = q;
            cfg.f_gstar1 = constant_intervention({1});
            cfg.f_gstar2 = constant_intervention({0});
            const auto r = run(ds, cfg);
            const double o1 = stratum_plugin(ds.frame(), ws, 1), o0 = stratum_plugin(ds.frame(), ws, 0);
            if (std::isnan(o1) || std::isnan(o0)) continue;
            ++n_oracle;
            worst_gcomp = std::max({worst_gcomp, std::fabs(r.gstar1.estimate.gcomp - o1),
                                    std::fabs(r.gstar2->estimate.gcomp - o0)});
        }
    }
    e_ok = n_oracle == 12 && worst_gcomp <= 1e-10;

    // (f) determinism, including a different thread count
    {
        auto d = sim::DgpSpec::defaults(sim::Study::sim1);
        d.J = 60;
        const auto ds = sim::generate(d, 0);
        auto cfg = sim::default_battery(d)[0].cfg;
        cfg.mc.n_mc_sims = 3;
        const auto j1 = report_to_json(run(ds, cfg)).dump();
        const auto j2 = report_to_json(run(ds, cfg)).dump();
        const int before = parallel::max_threads();
        parallel::set_threads(before > 1 ? 1 : 2);
        const auto j3 = report_to_json(run(ds, cfg)).dump();
        parallel::set_threads(before);
        f_ok = j1 == j2 && j1 == j3;
    }
    const double t = seconds_since(t0);
    report(6, a_ok && b_ok && c_ok && d_ok && e_ok && f_ok,
           fmt("(a) max|score| %.2e max|mean IC| %.2e %s; (b) %.2e %s; (c) %s; (d) %.2e %s; (e) %zu oracles max %.2e %s; "
               "(f) %s (%.1fs)",
               worst_score, worst_ic, a_ok ? "ok" : "FAIL", worst_affine, b_ok ? "ok" : "FAIL", c_ok ? "ok" : "FAIL",
               worst_pou, d_ok ? "ok" : "FAIL", n_oracle, worst_gcomp, e_ok ? "ok" : "FAIL", f_ok ? "ok" : "FAIL", t));
}

void criterion7() {
    const auto t0 = Clock::now();
    bool ok = true;
    std::string detail;
    for (std::size_t n : {1000, 5000}) {
        auto d = sim::DgpSpec::defaults(sim::Study::sim3);
        d.J = n;
        const double truth = 3.505;
        const auto res = sim::run_study(d, sim::default_battery(d), 20, truth);
        write_file("sim3_reps_n" + std::to_string(n) + ".csv", res.reps_csv());
        const auto& tab = res.table;
        const double tcc = tab.row("TMLE-CC").mean, tcm = tab.row("TMLE-CM").mean, tmc = tab.row("TMLE-MC").mean;
        const double icm = tab.row("IPTW-CM").bias, gmc = tab.row("GCOMP-MC").bias;
        ok = ok && std::fabs(tcc - truth) <= 0.1 && std::fabs(tcm - truth) <= 0.1 && std::fabs(tmc - truth) <= 0.1 &&
             std::fabs(icm) > 0.2 && std::fabs(gmc) > 0.1 && res.failures.empty();
        detail += fmt("n=%zu TMLE CC/CM/MC %.3f/%.3f/%.3f, IPTW-CM bias %+.3f, GCOMP-MC bias %+.3f; ", n, tcc, tcm,
                      tmc, icm, gmc);
    }
    const double t = seconds_since(t0);
    ok = ok && t < 900.0;
    report(7, ok, detail + fmt("(%.1fs)", t));
}

}  // namespace

int main() {
    criterion1();
    criterion2();
    criterion3();
    criterion4();
    criterion5();
    criterion6();
    criterion7();
    std::printf("%d of 7 criteria failed\n", failures);
    return failures;
}
