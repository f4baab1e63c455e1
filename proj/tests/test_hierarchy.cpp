#include "doctest.h"

#include <cmath>
#include <map>

#include "helpers.hpp"
#include "tmlecom/error.hpp"
#include "tmlecom/hierarchy.hpp"

using namespace tmlecom;

namespace {

// Plug-in by enumeration: average over rows of the empirical mean of Y in the
// stratum (A = a, W1, W2).
double stratum_plugin(const Frame& f, double a) {
    std::map<std::pair<double, double>, std::pair<double, double>> cell;
    const auto A = f.col("A"), W1 = f.col("W1"), W2 = f.col("W2"), Y = f.col("Y");
    for (std::size_t i = 0; i < A.size(); ++i) {
        if (A[i] != a) continue;
        auto& c = cell[{W1[i], W2[i]}];
        c.first += Y[i];
        c.second += 1;
    }
    double s = 0;
    for (std::size_t i = 0; i < A.size(); ++i) {
        const auto& c = cell.at({W1[i], W2[i]});
        s += c.first / c.second;
    }
    return s / static_cast<double>(A.size());
}

EstimationConfig ate_config() {
    EstimationConfig c;
    c.f_gstar1 = constant_intervention({1}, "A=1");
    c.f_gstar2 = constant_intervention({0}, "A=0");
    return c;
}

HierDataset with_y(const HierDataset& ds, std::vector<double> y) {
    Frame f = ds.frame();
    f.set("Y", std::move(y));
    return HierDataset(f, ds.roles(), ds.row_keys());
}

}  // namespace

TEST_CASE("GCOMP with a saturated Q equals stratum enumeration") {
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto ds = testutil::binary_dataset(400, seed);
        auto cfg = ate_config();
        cfg.qform = "Y ~ A*W1*W2";
        cfg.hform_g0 = "A ~ W1*W2";
        const auto rep = run(ds, cfg);
        const double p1 = stratum_plugin(ds.frame(), 1), p0 = stratum_plugin(ds.frame(), 0);
        CHECK(std::fabs(rep.gstar1.estimate.gcomp - p1) < 1e-10);
        CHECK(std::fabs(rep.gstar2->estimate.gcomp - p0) < 1e-10);
        CHECK(std::fabs(rep.ate->estimate.gcomp - (p1 - p0)) < 1e-10);
        // saturated Q already solves the score, so targeting leaves it alone
        CHECK(std::fabs(rep.gstar1.estimate.tmle - p1) < 1e-8);

        // IPTW with the saturated propensity, written out by hand
        const auto A = ds.frame().col("A"), W1 = ds.frame().col("W1"), W2 = ds.frame().col("W2"),
                   Y = ds.frame().col("Y");
        std::map<std::pair<double, double>, std::pair<double, double>> g;
        for (std::size_t i = 0; i < A.size(); ++i) {
            auto& c = g[{W1[i], W2[i]}];
            c.first += A[i];
            c.second += 1;
        }
        double ipw = 0;
        for (std::size_t i = 0; i < A.size(); ++i) {
            const auto& c = g.at({W1[i], W2[i]});
            ipw += A[i] * Y[i] / (c.first / c.second);
        }
        CHECK(rep.gstar1.estimate.iptw == doctest::Approx(ipw / A.size()).epsilon(1e-9));
    }
}

TEST_CASE("identical interventions give a zero contrast") {
    const auto ds = testutil::binary_dataset(300, 4);
    EstimationConfig cfg;
    cfg.f_gstar1 = constant_intervention({1});
    cfg.f_gstar2 = constant_intervention({1});
    const auto rep = run(ds, cfg);
    CHECK(rep.ate->estimate.tmle == 0.0);
    CHECK(rep.ate->estimate.iptw == 0.0);
    CHECK(rep.ate->estimate.gcomp == 0.0);
    CHECK(rep.ate->variance.tmle == 0.0);
}

TEST_CASE("constant outcome is estimated exactly") {
    const auto base = testutil::binary_dataset(200, 5);
    const auto ds = with_y(base, std::vector<double>(200, 1.0));
    for (auto m : {TargetMethod::tmle_intercept, TargetMethod::tmle_covariate}) {
        auto cfg = ate_config();
        cfg.method = m;
        const auto rep = run(ds, cfg);
        CHECK(rep.gstar1.estimate.tmle == doctest::Approx(1.0).epsilon(1e-10));
        CHECK(rep.gstar1.estimate.gcomp == doctest::Approx(1.0).epsilon(1e-10));
        CHECK(rep.ate->estimate.tmle == doctest::Approx(0.0).epsilon(1e-10));
    }
}

TEST_CASE("affine transform of Y carries through every estimator") {
    const auto ds = testutil::binary_dataset(300, 6, true);
    std::vector<double> y2;
    for (double v : ds.frame().col("Y")) y2.push_back(3.0 * v - 7.0);
    const auto ds2 = with_y(ds, y2);
    auto cfg = ate_config();
    const auto r1 = run(ds, cfg), r2 = run(ds2, cfg);
    CHECK(r2.gstar1.estimate.tmle == doctest::Approx(3.0 * r1.gstar1.estimate.tmle - 7.0).epsilon(1e-10));
    CHECK(r2.gstar1.estimate.iptw == doctest::Approx(3.0 * r1.gstar1.estimate.iptw - 7.0).epsilon(1e-10));
    CHECK(r2.gstar1.estimate.gcomp == doctest::Approx(3.0 * r1.gstar1.estimate.gcomp - 7.0).epsilon(1e-10));
    CHECK(r2.ate->variance.tmle == doctest::Approx(9.0 * r1.ate->variance.tmle).epsilon(1e-9));
}

TEST_CASE("estimates stay inside the outcome bounds") {
    const auto ds = testutil::continuous_dataset(400, 7);
    EstimationConfig cfg;
    cfg.f_gstar1 = builtin_shift_truncate(1.0, 5.0, LinearPredictor{});
    cfg.method = TargetMethod::tmle_covariate;
    cfg.mc.n_mc_sims = 3;
    const auto rep = run(ds, cfg);
    CHECK(rep.gstar1.estimate.tmle > rep.scale.a);
    CHECK(rep.gstar1.estimate.tmle < rep.scale.b);
    CHECK(rep.gstar1.estimate.gcomp > rep.scale.a);
    CHECK(rep.gstar1.estimate.gcomp < rep.scale.b);
    CHECK(rep.gstar1_model.has_value());
}

TEST_CASE("every community strategy runs on hierarchical data") {
    const auto ds = testutil::community_dataset(60, 8);
    for (auto step : {Strategy::no_community, Strategy::community_level, Strategy::individual_level}) {
        for (bool pooled : {false, true}) {
            auto cfg = ate_config();
            cfg.step = step;
            cfg.pooled_q = pooled;
            const auto rep = run(ds, cfg);
            CHECK(rep.strategy == step);
            CHECK(std::isfinite(rep.ate->estimate.tmle));
            CHECK(rep.ate->variance.tmle > 0.0);
            if (step == Strategy::no_community) {
                CHECK(rep.n_units == ds.n_obs());
            } else {
                CHECK(rep.n_units == 60);
            }
        }
    }
    auto cfg = ate_config();
    cfg.step = Strategy::per_community;
    CHECK_THROWS_AS(run(ds, cfg), DataError);
}

TEST_CASE("per-community estimates on individually varying exposure") {
    auto ds = testutil::binary_dataset(240, 9);
    Frame f = ds.frame();
    std::vector<double> id(240);
    std::vector<std::string> keys(240);
    for (std::size_t i = 0; i < 240; ++i) {
        id[i] = static_cast<double>(i % 3);
        keys[i] = "k" + std::to_string(i % 3);
    }
    f.set("id", id);
    NodeRoles r = ds.roles();
    r.community_id = "id";
    const HierDataset h(f, r, keys);
    auto cfg = ate_config();
    cfg.step = Strategy::per_community;
    const auto rep = run(h, cfg);
    REQUIRE(rep.per_community.size() == 3);
    CHECK(rep.community_keys == std::vector<std::string>{"k0", "k1", "k2"});
    double mean = 0;
    for (const auto& p : rep.per_community) mean += p.gstar1.estimate.tmle / 3.0;
    CHECK(rep.gstar1.estimate.tmle == doctest::Approx(mean));
}

TEST_CASE("without a community id the community strategies fall back") {
    const auto ds = testutil::binary_dataset(100, 10);
    CHECK(resolve_strategy(ds, Strategy::community_level) == Strategy::no_community);
}

TEST_CASE("deterministic outcome rows keep their observed value") {
    const auto base = testutil::binary_dataset(300, 11);
    Frame f = base.frame();
    std::vector<double> det(300, 0.0), y(f.col("Y").begin(), f.col("Y").end());
    for (std::size_t i = 0; i < 300; i += 10) {
        det[i] = 1;
        y[i] = 1;
    }
    f.set("Y", y);
    f.set("D", det);
    NodeRoles r = base.roles();
    r.ynode_det = "D";
    const HierDataset ds(f, r);
    auto cfg = ate_config();
    const auto rep = run(ds, cfg);
    CHECK(rep.gstar1.ic_units.size() == 270);
    CHECK(rep.gstar1.diagnostics.n_units == 270);
    // same fit, det rows dropped from the plug-in average: their contribution is exactly Y = 1
    auto cfg_gc = cfg;
    cfg_gc.qform = "Y ~ A*W1*W2";
    const auto rep_gc = run(ds, cfg_gc);
    double s = 0;
    std::map<std::pair<double, double>, std::pair<double, double>> cell;
    const auto A = f.col("A"), W1 = f.col("W1"), W2 = f.col("W2");
    for (std::size_t i = 0; i < 300; ++i) {
        if (A[i] != 1) continue;
        auto& c = cell[{W1[i], W2[i]}];
        c.first += y[i];
        c.second += 1;
    }
    for (std::size_t i = 0; i < 300; ++i) {
        const auto& c = cell.at({W1[i], W2[i]});
        s += det[i] ? 1.0 : c.first / c.second;
    }
    CHECK(std::fabs(rep_gc.gstar1.estimate.gcomp - s / 300) < 1e-10);
}

TEST_CASE("reusing a fitted density reproduces the in-line fit") {
    const auto ds = testutil::continuous_dataset(500, 12);
    EstimationConfig cfg;
    cfg.f_gstar1 = builtin_shift_truncate(0.5, 4.0, LinearPredictor{});
    cfg.mc.n_mc_sims = 2;
    const auto inline_rep = run(ds, cfg);
    auto cfg2 = cfg;
    cfg2.g0_model = fit_exposure_density(ds, cfg);
    const auto reuse_rep = run(ds, cfg2);
    CHECK(reuse_rep.gstar1.estimate.tmle == inline_rep.gstar1.estimate.tmle);
    CHECK(reuse_rep.gstar1.estimate.iptw == inline_rep.gstar1.estimate.iptw);
    CHECK(reuse_rep.gstar1.variance.tmle == inline_rep.gstar1.variance.tmle);

    auto bad = cfg2;
    bad.g0_model->vars[0].name = "B";
    CHECK_THROWS_AS(run(ds, bad), DataError);
    auto missing = cfg;
    missing.hform_g0 = "A ~ W1 + W2";
    auto fd = fit_exposure_density(ds, missing);
    Frame f;
    for (const auto* c : {"W1", "A", "Y"}) f.set(c, std::vector<double>(ds.frame().col(c).begin(), ds.frame().col(c).end()));
    NodeRoles r = ds.roles();
    r.wenodes = {"W1"};
    auto cfg3 = cfg;
    cfg3.g0_model = fd;
    CHECK_THROWS_AS(run(HierDataset(f, r), cfg3), DataError);
}

TEST_CASE("configuration errors") {
    const auto ds = testutil::binary_dataset(100, 13);
    auto cfg = ate_config();
    cfg.hform_g0 = "A ~ W1 + A";
    CHECK_THROWS_AS(run(ds, cfg), ConfigError);
    cfg.hform_g0 = "W1 ~ W2";
    CHECK_THROWS_AS(run(ds, cfg), ConfigError);
    cfg.hform_g0.reset();
    cfg.qform = "W1 ~ A";
    CHECK_THROWS_AS(run(ds, cfg), ConfigError);
}

TEST_CASE("a user-supplied g0 sampler replaces the fitted propensity") {
    const auto ds = testutil::binary_dataset(400, 14);
    auto cfg = ate_config();
    LinearPredictor lp;
    lp.intercept = 0.0;
    cfg.f_g0 = builtin_bernoulli(lp);
    cfg.mc.n_mc_sims = 200;
    const auto rep = run(ds, cfg);
    // g0 fitted on draws from a fair coin: IPTW weights near 2 for treated units
    REQUIRE(rep.g0_model.has_value());
    Frame probe;
    probe.set("W1", {0.0, 1.0});
    probe.set("W2", {0.0, 1.0});
    const auto p = eval_density(*rep.g0_model, probe, Exposures{{1.0, 1.0}});
    CHECK(p[0] == doctest::Approx(0.5).epsilon(0.05));
    CHECK(p[1] == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("fixed seed gives identical reports") {
    const auto ds = testutil::continuous_dataset(300, 15);
    EstimationConfig cfg;
    cfg.f_gstar1 = builtin_shift_truncate(1.0, 5.0, LinearPredictor{});
    cfg.mc.n_mc_sims = 4;
    cfg.mc.seed = 77;
    const auto a = run(ds, cfg), b = run(ds, cfg);
    CHECK(a.gstar1.estimate.tmle == b.gstar1.estimate.tmle);
    CHECK(a.gstar1.ic_tmle == b.gstar1.ic_tmle);
    cfg.mc.seed = 78;
    CHECK(run(ds, cfg).gstar1.estimate.tmle != a.gstar1.estimate.tmle);
}
