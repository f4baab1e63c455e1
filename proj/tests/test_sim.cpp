#include "doctest.h"

#include <cmath>

#include "helpers.hpp"
#include "tmlecom/error.hpp"
#include "tmlecom/sim.hpp"

using namespace tmlecom;
using namespace tmlecom::sim;

namespace {

double col_mean(const HierDataset& ds, const char* c) {
    double s = 0;
    for (double v : ds.frame().col(c)) s += v;
    return s / static_cast<double>(ds.n_obs());
}

}  // namespace

TEST_CASE("sim2 covariate margins") {
    auto d = DgpSpec::defaults(Study::sim2);
    d.J = 400;
    const auto ds = generate(d, 0);
    const double n = static_cast<double>(ds.n_obs());
    CHECK(ds.n_communities() == 400);
    CHECK(std::fabs(col_mean(ds, "W1") - 0.6) < 3 * std::sqrt(0.24 / n));
    CHECK(std::fabs(col_mean(ds, "W2")) < 3 / std::sqrt(n));
    // community sizes around 50
    CHECK(std::fabs(n / 400 - 50) < 3 * 10 / std::sqrt(400.0));
    for (const auto& c : ds.communities()) {
        const double a = ds.frame().col("A")[c.rows.front()];
        for (auto r : c.rows) CHECK(ds.frame().col("A")[r] == a);
    }
}

TEST_CASE("unit-level design moments") {
    auto d = DgpSpec::defaults(Study::sim3);
    d.J = 20000;
    const auto ds = generate(d, 0);
    CHECK(ds.n_obs() == 20000);
    CHECK(!ds.has_community_id());
    const double se_bin = std::sqrt(0.25 / 20000);
    CHECK(std::fabs(col_mean(ds, "E1") - 0.5) < 4 * se_bin);
    CHECK(std::fabs(col_mean(ds, "E2") - 0.3) < 4 * std::sqrt(0.21 / 20000));
    const double mean_a = 0.86 * 0.5 + 0.41 * 0.3 + 0.93 * 0.5;
    CHECK(std::fabs(col_mean(ds, "A") - mean_a) < 4 * 1.2 / std::sqrt(20000.0));
}

TEST_CASE("analytic truth agrees with Monte-Carlo calibration") {
    for (auto s : {Study::sim3, Study::shift_example}) {
        const auto d = DgpSpec::defaults(s);
        const auto mc = calibrate_truth(d, 100000, 3);
        CHECK(std::fabs(mc.value - analytic_truth(d)) < 4 * mc.se);
    }
    CHECK(analytic_truth(DgpSpec::defaults(Study::ate_example)) == 2.8);
    CHECK(std::isnan(analytic_truth(DgpSpec::defaults(Study::sim1))));
}

TEST_CASE("generation is a pure function of seed and replicate") {
    auto d = DgpSpec::defaults(Study::sim1);
    d.J = 20;
    const auto a = generate(d, 3), b = generate(d, 3), c = generate(d, 4);
    CHECK(a.frame().col("Y").size() == b.frame().col("Y").size());
    CHECK(std::equal(a.frame().col("A").begin(), a.frame().col("A").end(), b.frame().col("A").begin()));
    CHECK(a.frame().col("A")[0] != c.frame().col("A")[0]);
}

TEST_CASE("metrics: rmse decomposes into bias and spread, coverage counts") {
    std::vector<Analysis> battery(1);
    battery[0].outputs = {{"X", Estimator::tmle}};
    std::vector<RepRecord> reps;
    const double est[] = {1.0, 1.5, -0.5, 2.0, 0.9};
    for (std::size_t r = 0; r < 5; ++r) {
        RepRecord rr;
        rr.rep = r;
        rr.label = "X";
        rr.ok = true;
        rr.estimate = est[r];
        rr.se = 0.5;
        rr.lo = est[r] - 1;
        rr.hi = est[r] + 1;
        rr.covered = rr.lo <= 1.0 && 1.0 <= rr.hi;
        reps.push_back(rr);
    }
    reps.push_back(RepRecord{5, "X", false});
    const auto t = summarize("t", 1.0, 6, battery, reps);
    const auto& row = t.row("X");
    CHECK(row.n_ok == 5);
    CHECK(row.n_failed == 1);
    double m = 0, ss = 0, sq = 0;
    for (double e : est) m += e / 5;
    for (double e : est) {
        ss += (e - m) * (e - m) / 5;
        sq += (e - 1.0) * (e - 1.0) / 5;
    }
    CHECK(row.mean == doctest::Approx(m));
    CHECK(row.bias == doctest::Approx(m - 1.0));
    CHECK(row.sd == doctest::Approx(std::sqrt(ss)));
    CHECK(row.rmse == doctest::Approx(std::sqrt(sq)));
    CHECK(std::fabs(row.rmse * row.rmse - (row.bias * row.bias + row.sd * row.sd)) < 1e-10);
    CHECK(row.coverage == doctest::Approx(4.0 / 5.0));
    CHECK(row.mean_se == 0.5);
    CHECK_THROWS(t.row("nope"));

    const auto one = summarize("t", 1.0, 1, battery, {reps[2]});
    CHECK(one.row("X").bias == doctest::Approx(-0.5 - 1.0));
    CHECK(one.row("X").sd == 0.0);
}

TEST_CASE("study runs are deterministic and independent of threading") {
    auto d = DgpSpec::defaults(Study::sim3);
    d.J = 300;
    const auto battery = default_battery(d);
    const double truth = analytic_truth(d);
    const auto a = run_study(d, battery, 3, truth, true);
    const auto b = run_study(d, battery, 3, truth, false);
    CHECK(a.reps_csv() == b.reps_csv());
    CHECK(a.table.json().dump() == b.table.json().dump());
    CHECK(a.reps.size() == 3 * 9);
    CHECK(a.failures.empty());
    d.seed = 2;
    CHECK(run_study(d, battery, 3, truth).reps_csv() != a.reps_csv());
}

TEST_CASE("default batteries name their estimators") {
    CHECK(default_battery(DgpSpec::defaults(Study::sim3)).size() == 3);
    std::size_t outputs = 0;
    for (const auto& an : default_battery(DgpSpec::defaults(Study::sim1))) outputs += an.outputs.size();
    CHECK(outputs == 7);
    CHECK(study_from_string("sim1_stoch") == Study::sim1);
    CHECK(study_from_string("sim3_n1") == Study::sim3);
    CHECK_THROWS_AS(study_from_string("sim9"), ConfigError);
}
