#include "tmlecom/sim.hpp"

#include <cmath>
#include <cstdio>
#include <exception>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/normal.hpp>

#include "tmlecom/error.hpp"
#include "tmlecom/glm.hpp"
#include "tmlecom/parallel.hpp"
#include "tmlecom/rng.hpp"

namespace tmlecom::sim {

namespace {

constexpr std::uint64_t kTagGenerate = 0x47454e;
constexpr std::uint64_t kTagTruth = 0x545255;

const double kSim1Holds[10] = {-1.7, 1.7, 0.5, -1.2, 0.0, 0.0, 0.0, 1.1, 1.3, -0.4};
const double kSim1Fails[10] = {-1.7, 1.2, -0.2, 1.1, 5.8, -3.1, -1.0, 0.4, 0.2, -0.4};

double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::size_t community_size(const DgpSpec& d, Rng& rng) {
    const double n = std::nearbyint(rng.normal(d.n_mean, d.n_sd));
    return n < 1.0 ? 1 : static_cast<std::size_t>(n);
}

struct Sim1Community {
    double E1, E2, A, mu;
    std::vector<double> W1, W2, W3;
    double W1c, W2c, W3c;

    double lp(const double* b, double a, std::size_t i) const {
        return b[0] + b[1] * a + b[2] * E1 + b[3] * E2 + b[4] * W1c + b[5] * W2c + b[6] * W3c + b[7] * W1[i] +
               b[8] * W2[i] + b[9] * W3[i];
    }
};

Sim1Community sim1_community(const DgpSpec& d, Rng& rng) {
    Sim1Community c;
    const std::size_t n = community_size(d, rng);
    c.E1 = rng.uniform();
    c.E2 = 0.2 * static_cast<double>(1 + static_cast<int>(rng.uniform() * 4.0));
    const double p1 = expit(-0.4 + 1.2 * c.E1 - 1.3 * c.E2);
    const double m2 = 1.0 - 0.8 * c.E1 - 0.4 * c.E2, m3 = 0.5 + 0.2 * c.E1;
    for (std::size_t i = 0; i < n; ++i) {
        c.W1.push_back(rng.bernoulli(p1) ? 1.0 : 0.0);
        const double z1 = rng.normal(), z2 = rng.normal();
        c.W2.push_back(m2 + z1);
        c.W3.push_back(m3 + 0.6 * z1 + 0.8 * z2);
    }
    c.W1c = mean_of(c.W1);
    c.W2c = mean_of(c.W2);
    c.W3c = mean_of(c.W3);
    c.mu = -1.2 + 0.8 * c.E1 + 0.21 * c.E2 + 3.0 * c.W1c - 0.7 * c.W2c + 0.3 * c.W3c;
    c.A = rng.normal(c.mu, 1.0);
    return c;
}

struct Sim2Community {
    std::vector<double> W1, W2;
    double W1c, W2c, A;

    double lp(bool holds, double a, std::size_t i) const {
        return holds ? 0.15 + 0.3 * a + 0.1 * W1c + 2.0 * W1[i] + 0.9 * W2[i]
                     : 0.15 + 0.3 * a + 3.0 * W1c - 0.9 * W2c - 0.3 * W1[i] + W2[i];
    }
};

Sim2Community sim2_community(const DgpSpec& d, Rng& rng) {
    Sim2Community c;
    const std::size_t n = community_size(d, rng);
    for (std::size_t i = 0; i < n; ++i) {
        c.W1.push_back(rng.bernoulli(0.6) ? 1.0 : 0.0);
        c.W2.push_back(rng.normal());
    }
    c.W1c = mean_of(c.W1);
    c.W2c = mean_of(c.W2);
    c.A = rng.bernoulli(expit(c.W1c + 0.56 * c.W2c)) ? 1.0 : 0.0;
    return c;
}

// Unit-level designs: W1..W4 (or E1..E4), A, and the outcome mean without noise.
struct Unit {
    double w[4];
    double A;
    double mu;  // E[A | W] for continuous A
};

Unit unit_draw(Study s, Rng& rng) {
    Unit u{};
    u.w[0] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    u.w[1] = rng.bernoulli(0.3) ? 1.0 : 0.0;
    if (s == Study::ate_example) {
        u.w[2] = rng.normal();
        u.w[3] = rng.uniform();
        u.A = rng.bernoulli(expit(-0.6 + 0.86 * u.w[0] + 0.41 * u.w[1] - 0.5 * u.w[2] + 0.93 * u.w[3])) ? 1.0 : 0.0;
        return u;
    }
    u.w[2] = rng.normal(0.0, 0.25);
    u.w[3] = rng.uniform();
    u.mu = s == Study::sim3 ? 0.86 * u.w[0] + 0.41 * u.w[1] - 0.34 * u.w[2] + 0.93 * u.w[3]
                            : 0.86 * u.w[0] + 0.93 * u.w[2] * u.w[3] + 0.41 * u.w[3];
    u.A = rng.normal(u.mu, 1.0);
    return u;
}

double unit_outcome_mean(Study s, const Unit& u, double a) {
    if (s == Study::ate_example) {
        return 3.63 + 2.8 * a - 0.52 * u.w[0] + 0.8 * u.w[1] - 1.0 * u.w[2] + 1.2 * u.w[3];
    }
    return 3.63 + 0.11 * a - 0.52 * u.w[0] - 0.36 * u.w[1] + 0.12 * u.w[2] - 0.13 * u.w[3];
}

// Shifted exposure under the truncation rule, applied to an observed draw.
double truncated_shift(double a, double mu, double shift, double bound, double rate, double center) {
    const double shifted = a + shift;
    return std::exp(rate * shift * (shifted - mu - center * shift)) > bound ? a : shifted;
}

NodeRoles roles_for(Study s) {
    NodeRoles r;
    r.ynode = "Y";
    r.anodes = {"A"};
    switch (s) {
        case Study::sim1:
            r.wenodes = {"E1", "E2", "W1", "W2", "W3"};
            r.community_id = "id";
            break;
        case Study::sim2:
            r.wenodes = {"W1", "W2"};
            r.community_id = "id";
            break;
        case Study::sim3: r.wenodes = {"E1", "E2", "E3", "E4"}; break;
        default: r.wenodes = {"W1", "W2", "W3", "W4"}; break;
    }
    return r;
}

LinearPredictor lp_of(double intercept, std::vector<std::pair<std::string, double>> terms) {
    LinearPredictor lp;
    lp.intercept = intercept;
    for (auto& [name, coef] : terms) {
        Term t;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= name.size(); ++i) {
            if (i == name.size() || name[i] == ':') {
                t.factors.push_back(name.substr(start, i - start));
                start = i + 1;
            }
        }
        lp.terms.push_back(t);
        lp.coefs.push_back(coef);
    }
    return lp;
}

}  // namespace

std::string to_string(Study s) {
    switch (s) {
        case Study::sim1: return "sim1";
        case Study::sim2: return "sim2";
        case Study::sim3: return "sim3";
        case Study::ate_example: return "ate_example";
        case Study::shift_example: return "shift_example";
    }
    return "?";
}

Study study_from_string(const std::string& s) {
    if (s == "sim1" || s == "sim1_stoch") return Study::sim1;
    if (s == "sim2" || s == "sim2_static") return Study::sim2;
    if (s == "sim3" || s == "sim3_n1") return Study::sim3;
    if (s == "ate_example") return Study::ate_example;
    if (s == "shift_example") return Study::shift_example;
    throw ConfigError("unknown study '" + s + "'");
}

DgpSpec DgpSpec::defaults(Study s) {
    DgpSpec d;
    d.study = s;
    switch (s) {
        case Study::sim1:
            d.J = 1000;
            d.shift = 1.0;
            d.trunc_bound = 5.0;
            break;
        case Study::sim2: d.J = 100; break;
        case Study::sim3: d.J = 1000; break;
        case Study::ate_example: d.J = 1000; break;
        case Study::shift_example: d.J = 5000; break;
    }
    return d;
}

HierDataset generate(const DgpSpec& d, std::size_t rep) {
    std::vector<std::string> keys;
    std::vector<std::vector<double>> cols;
    std::vector<std::string> names;
    auto push = [&](std::initializer_list<double> vals) {
        std::size_t k = 0;
        for (double v : vals) cols[k++].push_back(v);
    };
    if (d.study == Study::sim1) {
        names = {"id", "E1", "E2", "W1", "W2", "W3", "A", "Y"};
        cols.resize(names.size());
        const double* b = d.working_model ? kSim1Holds : kSim1Fails;
        for (std::size_t j = 0; j < d.J; ++j) {
            Rng rng(d.seed, rep, j, kTagGenerate);
            const auto c = sim1_community(d, rng);
            for (std::size_t i = 0; i < c.W1.size(); ++i) {
                const double y = rng.bernoulli(expit(c.lp(b, c.A, i))) ? 1.0 : 0.0;
                push({static_cast<double>(j + 1), c.E1, c.E2, c.W1[i], c.W2[i], c.W3[i], c.A, y});
                keys.push_back(std::to_string(j + 1));
            }
        }
    } else if (d.study == Study::sim2) {
        names = {"id", "W1", "W2", "A", "Y"};
        cols.resize(names.size());
        for (std::size_t j = 0; j < d.J; ++j) {
            Rng rng(d.seed, rep, j, kTagGenerate);
            const auto c = sim2_community(d, rng);
            for (std::size_t i = 0; i < c.W1.size(); ++i) {
                const double y = rng.bernoulli(expit(c.lp(d.working_model, c.A, i))) ? 1.0 : 0.0;
                push({static_cast<double>(j + 1), c.W1[i], c.W2[i], c.A, y});
                keys.push_back(std::to_string(j + 1));
            }
        }
    } else {
        const char* p = d.study == Study::sim3 ? "E" : "W";
        for (int k = 1; k <= 4; ++k) names.push_back(p + std::to_string(k));
        names.push_back("A");
        names.push_back("Y");
        cols.resize(names.size());
        for (std::size_t i = 0; i < d.J; ++i) {
            Rng rng(d.seed, rep, i, kTagGenerate);
            const auto u = unit_draw(d.study, rng);
            const double y = unit_outcome_mean(d.study, u, u.A) + rng.normal();
            push({u.w[0], u.w[1], u.w[2], u.w[3], u.A, y});
        }
    }
    Frame f;
    for (std::size_t k = 0; k < names.size(); ++k) f.set(names[k], std::move(cols[k]));
    return HierDataset(std::move(f), roles_for(d.study), std::move(keys));
}

InterventionSpec study_intervention(const DgpSpec& d) {
    switch (d.study) {
        case Study::sim1: {
            auto s = builtin_shift_truncate(
                d.shift, d.trunc_bound,
                lp_of(-1.2, {{"E1", 0.8}, {"E2", 0.21}, {"W1", 3.0}, {"W2", -0.7}, {"W3", 0.3}}), true);
            s.shift_truncate.rate = 1.5;
            s.shift_truncate.center = 0.25;
            return s;
        }
        case Study::sim2:
        case Study::ate_example: return constant_intervention({1.0}, "A=1");
        case Study::sim3:
            return builtin_shift_truncate(d.shift, d.trunc_bound,
                                          lp_of(0.0, {{"E1", 0.86}, {"E2", 0.41}, {"E3", -0.34}, {"E4", 0.93}}));
        case Study::shift_example:
            return builtin_shift_truncate(d.shift, d.trunc_bound,
                                          lp_of(0.0, {{"W1", 0.86}, {"W3:W4", 0.93}, {"W4", 0.41}}));
    }
    throw ConfigError("no intervention for study");
}

double analytic_truth(const DgpSpec& d) {
    if (d.study == Study::ate_example) return 2.8;
    if (d.study != Study::sim3 && d.study != Study::shift_example) return std::nan("");
    // u - mu ~ N(shift, 1); truncated when exp(0.5 shift (u - mu - shift/2)) > bound.
    const boost::math::normal_distribution<double> z01;
    const double cut = 0.5 * d.shift + std::log(d.trunc_bound) / (0.5 * d.shift);
    const double p_trunc = boost::math::cdf(boost::math::complement(z01, cut - d.shift));
    const double mean_mu = d.study == Study::sim3 ? 0.86 * 0.5 + 0.41 * 0.3 + 0.93 * 0.5 : 0.86 * 0.5 + 0.41 * 0.5;
    const double mean_astar = mean_mu + d.shift * (1.0 - p_trunc);
    return 3.63 + 0.11 * mean_astar - 0.52 * 0.5 - 0.36 * 0.3 - 0.13 * 0.5;
}

Truth calibrate_truth(const DgpSpec& d, std::size_t n_large, std::uint64_t seed) {
    std::vector<double> contrib(n_large);
    parallel::for_each_index(n_large, [&](std::size_t j) {
        Rng rng(seed, d.seed, j, kTagTruth);
        if (d.study == Study::sim1) {
            const auto c = sim1_community(d, rng);
            const double* b = d.working_model ? kSim1Holds : kSim1Fails;
            const double astar = truncated_shift(c.A, c.mu, d.shift, d.trunc_bound, 1.5, 0.25);
            double s = 0.0;
            for (std::size_t i = 0; i < c.W1.size(); ++i) s += expit(c.lp(b, astar, i));
            contrib[j] = s / static_cast<double>(c.W1.size());
        } else if (d.study == Study::sim2) {
            const auto c = sim2_community(d, rng);
            double s = 0.0;
            for (std::size_t i = 0; i < c.W1.size(); ++i) {
                s += expit(c.lp(d.working_model, 1.0, i)) - expit(c.lp(d.working_model, 0.0, i));
            }
            contrib[j] = s / static_cast<double>(c.W1.size());
        } else if (d.study == Study::ate_example) {
            const auto u = unit_draw(d.study, rng);
            contrib[j] = unit_outcome_mean(d.study, u, 1.0) - unit_outcome_mean(d.study, u, 0.0);
        } else {
            const auto u = unit_draw(d.study, rng);
            contrib[j] = unit_outcome_mean(d.study, u, truncated_shift(u.A, u.mu, d.shift, d.trunc_bound, 0.5, 0.5));
        }
    });
    Truth t;
    t.draws = n_large;
    t.value = mean_of(contrib);
    double ss = 0.0;
    for (double v : contrib) ss += (v - t.value) * (v - t.value);
    t.se = n_large > 1 ? std::sqrt(ss / static_cast<double>(n_large - 1) / static_cast<double>(n_large)) : 0.0;
    return t;
}

std::vector<Analysis> default_battery(const DgpSpec& d) {
    std::vector<Analysis> out;
    EstimationConfig base;
    base.f_gstar1 = study_intervention(d);
    if (d.study == Study::sim2 || d.study == Study::ate_example) base.f_gstar2 = constant_intervention({0.0}, "A=0");
    const bool ate = base.f_gstar2.has_value();

    if (d.study == Study::sim1 || d.study == Study::sim2) {
        base.binning.method = BinMethod::equal_mass;
        base.binning.nbins = 5;
        Analysis ia{"community", base, {{"TMLE-Ia", Estimator::tmle}, {"IPTW-I", Estimator::iptw}, {"Gcomp-I", Estimator::gcomp}}, ate, true};
        ia.cfg.step = Strategy::community_level;
        ia.cfg.obs_policy = ObsWeightPolicy::equal_within_community;
        Analysis ib = ia;
        ib.name = "community_pooledQ";
        ib.cfg.pooled_q = true;
        ib.outputs = {{"TMLE-Ib", Estimator::tmle}};
        Analysis ii{"individual", base, {{"TMLE-II", Estimator::tmle}, {"IPTW-II", Estimator::iptw}, {"Gcomp-II", Estimator::gcomp}}, ate, true};
        ii.cfg.step = Strategy::individual_level;
        out = {ia, ib, ii};
    } else if (d.study == Study::sim3) {
        const char* q_ok = "Y ~ A + E1 + E2 + E3 + E4";
        const char* q_bad = "Y ~ A + E3";
        const char* g_ok = "A ~ E1 + E2 + E3 + E4";
        const char* g_bad = "A ~ E3";
        const std::pair<const char*, std::pair<const char*, const char*>> cells[] = {
            {"CC", {q_ok, g_ok}}, {"CM", {q_ok, g_bad}}, {"MC", {q_bad, g_ok}}};
        for (const auto& [cell, forms] : cells) {
            Analysis a{cell, base, {}, false, false};
            a.cfg.qform = forms.first;
            a.cfg.hform_g0 = forms.second;
            a.cfg.hform_gstar = g_ok;  // only g0 is ever misspecified
            const std::string c(cell);
            a.outputs = {{"TMLE-" + c, Estimator::tmle}, {"IPTW-" + c, Estimator::iptw}, {"GCOMP-" + c, Estimator::gcomp}};
            out.push_back(a);
        }
    } else if (d.study == Study::ate_example) {
        Analysis good{"correctQ", base, {{"TMLE-correctQ", Estimator::tmle}, {"IPTW-correctQ", Estimator::iptw}, {"GCOMP-correctQ", Estimator::gcomp}}, true, false};
        good.cfg.qform = "Y ~ W1 + W2 + W3 + W4 + A";
        Analysis bad{"misspecifiedQ", base, {{"TMLE-misspecifiedQ", Estimator::tmle}, {"IPTW-misspecifiedQ", Estimator::iptw}, {"GCOMP-misspecifiedQ", Estimator::gcomp}}, true, false};
        bad.cfg.qform = "Y ~ W1 + A";
        out = {good, bad};
    } else {
        Analysis a{"shift", base, {{"TMLE", Estimator::tmle}, {"IPTW", Estimator::iptw}, {"GCOMP", Estimator::gcomp}}, false, true};
        a.cfg.hform_g0 = "A ~ W1 + W3*W4";
        a.cfg.binning.method = BinMethod::equal_mass;
        a.cfg.binning.nbins = 5;
        out = {a};
    }
    return out;
}

const MetricsRow& MetricsTable::row(const std::string& label) const {
    for (const auto& r : rows) {
        if (r.label == label) return r;
    }
    throw ConfigError("no estimator '" + label + "' in metrics table");
}

std::string MetricsTable::text(double scale) const {
    std::ostringstream os;
    char buf[256];
    std::snprintf(buf, sizeof buf, "study %s  truth %.6g  reps %zu  (scale x%g)\n", study.c_str(), truth, reps, scale);
    os << buf;
    std::snprintf(buf, sizeof buf, "%-22s %10s %10s %10s %10s %8s %6s\n", "estimator", "psi", "bias", "se", "rmse",
                  "cover", "ok");
    os << buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-22s %10.4f %10.4f %10.4f %10.4f %8.1f %6zu\n", r.label.c_str(),
                      r.mean * scale, r.bias * scale, r.mean_se * scale, r.rmse * scale,
                      100.0 * r.coverage, r.n_ok);
        os << buf;
    }
    return os.str();
}

Json MetricsTable::json() const {
    Json j;
    j["study"] = study;
    j["truth"] = truth;
    j["reps"] = reps;
    Json rs = Json::array();
    for (const auto& r : rows) {
        Json x;
        x["estimator"] = r.label;
        x["n_ok"] = r.n_ok;
        x["n_failed"] = r.n_failed;
        x["mean"] = r.mean;
        x["bias"] = r.bias;
        x["sd"] = r.sd;
        x["mean_se"] = r.mean_se;
        x["rmse"] = r.rmse;
        x["coverage"] = r.coverage;
        rs.push_back(x);
    }
    j["rows"] = rs;
    return j;
}

std::string StudyResult::reps_csv() const {
    std::ostringstream os;
    os << "rep,estimator,ok,estimate,se,ci_lo,ci_hi,covered\n";
    char buf[256];
    for (const auto& r : reps) {
        std::snprintf(buf, sizeof buf, "%zu,%s,%d,%.17g,%.17g,%.17g,%.17g,%d\n", r.rep, r.label.c_str(), r.ok ? 1 : 0,
                      r.estimate, r.se, r.lo, r.hi, r.covered ? 1 : 0);
        os << buf;
    }
    return os.str();
}

MetricsTable summarize(const std::string& study, double truth, std::size_t R, const std::vector<Analysis>& battery,
                       const std::vector<RepRecord>& reps) {
    MetricsTable t;
    t.study = study;
    t.truth = truth;
    t.reps = R;
    for (const auto& a : battery) {
        for (const auto& o : a.outputs) {
            MetricsRow row;
            row.label = o.label;
            std::vector<double> est, se;
            std::size_t covered = 0;
            for (const auto& r : reps) {
                if (r.label != o.label) continue;
                if (!r.ok) {
                    ++row.n_failed;
                    continue;
                }
                est.push_back(r.estimate);
                se.push_back(r.se);
                covered += r.covered ? 1 : 0;
            }
            row.n_ok = est.size();
            if (!est.empty()) {
                const double n = static_cast<double>(est.size());
                row.mean = mean_of(est);
                row.bias = row.mean - truth;
                double ss = 0.0, sq = 0.0;
                for (double e : est) {
                    ss += (e - row.mean) * (e - row.mean);
                    sq += (e - truth) * (e - truth);
                }
                row.sd = std::sqrt(ss / n);
                row.rmse = std::sqrt(sq / n);
                row.mean_se = mean_of(se);
                row.coverage = static_cast<double>(covered) / n;
            } else {
                row.mean = row.bias = row.sd = row.rmse = row.mean_se = row.coverage = std::nan("");
            }
            t.rows.push_back(row);
        }
    }
    return t;
}

StudyResult run_study(const DgpSpec& dgp, const std::vector<Analysis>& battery, std::size_t R, double truth,
                      bool parallel) {
    if (battery.empty()) throw ConfigError("estimator battery is empty");
    std::vector<std::vector<RepRecord>> per_rep(R);
    std::vector<std::vector<std::string>> errors(R);
    auto body = [&](std::size_t rep) {
        const HierDataset ds = generate(dgp, rep);
        std::uint64_t s = dgp.seed ^ (0xA5A5A5A5ULL + rep);
        const std::uint64_t rep_seed = splitmix64(s);
        for (const auto& a : battery) {
            EstimationConfig cfg = a.cfg;
            cfg.mc.seed = rep_seed;
            if (a.max_n_per_bin_is_n) cfg.binning.max_n_per_bin = static_cast<int>(ds.n_obs());
            std::optional<EstimationReport> rep_out;
            try {
                rep_out = run(ds, cfg);
            } catch (const std::exception& e) {
                errors[rep].push_back("rep " + std::to_string(rep) + " " + a.name + ": " + e.what());
            }
            for (const auto& o : a.outputs) {
                RepRecord r;
                r.rep = rep;
                r.label = o.label;
                if (rep_out) {
                    const InterventionResult& res = a.use_ate ? *rep_out->ate : rep_out->gstar1;
                    const double est = o.estimator == Estimator::tmle ? res.estimate.tmle
                                       : o.estimator == Estimator::iptw ? res.estimate.iptw
                                                                        : res.estimate.gcomp;
                    const double var = o.estimator == Estimator::tmle ? res.variance.tmle
                                       : o.estimator == Estimator::iptw ? res.variance.iptw
                                                                        : res.variance.gcomp;
                    const Interval ci = o.estimator == Estimator::tmle ? res.ci_tmle
                                        : o.estimator == Estimator::iptw ? res.ci_iptw
                                                                         : res.ci_gcomp;
                    r.ok = std::isfinite(est) && std::isfinite(var);
                    r.estimate = est;
                    r.se = std::sqrt(var);
                    r.lo = ci.lo;
                    r.hi = ci.hi;
                    r.covered = ci.lo <= truth && truth <= ci.hi;
                }
                per_rep[rep].push_back(r);
            }
        }
    };
    if (parallel) {
        parallel::for_each_index(R, body);
    } else {
        for (std::size_t rep = 0; rep < R; ++rep) body(rep);
    }
    StudyResult out;
    for (auto& v : per_rep) out.reps.insert(out.reps.end(), v.begin(), v.end());
    for (auto& v : errors) out.failures.insert(out.failures.end(), v.begin(), v.end());
    out.table = summarize(to_string(dgp.study), truth, R, battery, out.reps);
    return out;
}

}  // namespace tmlecom::sim
