#include "tmlecom/hierarchy.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <memory>
#include <set>

#include "tmlecom/error.hpp"
#include "tmlecom/parallel.hpp"

namespace tmlecom {

std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::no_community: return "no_community";
        case Strategy::community_level: return "community_level";
        case Strategy::individual_level: return "individual_level";
        case Strategy::per_community: return "per_community";
    }
    return "?";
}

Strategy strategy_from_string(const std::string& s) {
    if (s == "no_community" || s == "NoCommunity") return Strategy::no_community;
    if (s == "community_level") return Strategy::community_level;
    if (s == "individual_level") return Strategy::individual_level;
    if (s == "per_community" || s == "perCommunity" || s == "PerCommunity") return Strategy::per_community;
    throw ConfigError("unknown community_step '" + s + "'");
}

Strategy resolve_strategy(const HierDataset& ds, Strategy requested) {
    return ds.has_community_id() ? requested : Strategy::no_community;
}

namespace {

constexpr std::uint64_t kG0SeedSalt = 0x6730617567ULL;

// Analysis rows of one strategy.
struct Layout {
    Frame rows;
    std::vector<std::size_t> unit_of_row;
    std::vector<double> alpha;
    std::vector<double> unit_weights;
    std::vector<double> reg_weights;
    std::vector<char> det;
    std::vector<double> ystar;
    std::optional<CommunityAggregate> agg;
};

std::vector<double> to_star(std::span<const double> y, const OutcomeScale& s, std::vector<std::string>& warnings) {
    std::vector<double> out(y.size());
    bool clipped = false;
    for (std::size_t i = 0; i < y.size(); ++i) {
        double v = s.to_star(y[i]);
        if (v < 0.0 || v > 1.0) {
            clipped = true;
            v = std::clamp(v, 0.0, 1.0);
        }
        out[i] = v;
    }
    if (clipped) warnings.push_back("outcome values outside qbounds were clipped");
    return out;
}

std::vector<char> det_mask(const Frame& f, const NodeRoles& roles) {
    std::vector<char> det(f.n_rows(), 0);
    if (roles.ynode_det) {
        const auto c = f.col(*roles.ynode_det);
        for (std::size_t i = 0; i < det.size(); ++i) det[i] = c[i] != 0.0;
    }
    return det;
}

Layout build_layout(const HierDataset& ds, Strategy step, const WeightScheme& ws, const std::string& ynode,
                    const OutcomeScale& scale, std::vector<std::string>& warnings) {
    Layout L;
    const std::size_t n = ds.n_obs();
    if (step == Strategy::community_level) {
        L.agg = aggregate_to_community(ds, ws);
        L.rows = L.agg->frame;
        const std::size_t J = L.rows.n_rows();
        L.unit_of_row.resize(J);
        for (std::size_t j = 0; j < J; ++j) L.unit_of_row[j] = j;
        L.alpha.assign(J, 1.0);
        L.unit_weights = L.agg->weights;
        L.reg_weights = L.agg->weights;
    } else if (step == Strategy::individual_level) {
        L.rows = ds.frame();
        L.unit_of_row = ds.community_of_row();
        L.alpha = ws.alpha;
        L.unit_weights = ws.community;
        L.reg_weights.resize(n);
        for (std::size_t r = 0; r < n; ++r) L.reg_weights[r] = ws.community[L.unit_of_row[r]] * ws.alpha[r];
    } else {
        L.rows = ds.frame();
        L.unit_of_row.resize(n);
        for (std::size_t r = 0; r < n; ++r) L.unit_of_row[r] = r;
        L.alpha.assign(n, 1.0);
        L.unit_weights = ws.obs;
        L.reg_weights = ws.obs;
    }
    L.det = det_mask(L.rows, ds.roles());
    L.ystar = to_star(L.rows.col(ynode), scale, warnings);
    return L;
}

Exposures exposures_of(const Frame& f, const std::vector<std::string>& anodes) {
    Exposures a;
    for (const auto& k : anodes) {
        const auto c = f.col(k);
        a.emplace_back(c.begin(), c.end());
    }
    return a;
}

Frame with_exposures(Frame f, const std::vector<std::string>& anodes, const Exposures& a) {
    for (std::size_t k = 0; k < anodes.size(); ++k) f.set(anodes[k], a[k]);
    return f;
}

Frame concat(const Frame& top, const Frame& bottom) {
    Frame out;
    for (const auto& name : top.names()) {
        const auto a = top.col(name), b = bottom.col(name);
        std::vector<double> v(a.begin(), a.end());
        v.insert(v.end(), b.begin(), b.end());
        out.set(name, std::move(v));
    }
    return out;
}

std::vector<Term> density_rhs(const std::optional<std::string>& form, const std::vector<std::string>& anodes,
                              const std::vector<std::string>& wenodes) {
    if (!form) return Formula::main_terms(anodes.front(), wenodes).terms;
    const auto f = Formula::parse(*form);
    if (std::find(anodes.begin(), anodes.end(), f.outcome) == anodes.end()) {
        throw ConfigError("density formula '" + *form + "' must have an exposure on the left");
    }
    for (const auto& c : f.columns()) {
        if (std::find(anodes.begin(), anodes.end(), c) != anodes.end()) {
            throw ConfigError("density formula '" + *form + "' uses an exposure as predictor");
        }
    }
    return f.terms;
}

Formula q_formula(const EstimationConfig& cfg, const std::string& ynode, const NodeRoles& roles) {
    if (!cfg.qform) {
        std::vector<std::string> preds = roles.anodes;
        preds.insert(preds.end(), roles.wenodes.begin(), roles.wenodes.end());
        return Formula::main_terms(ynode, preds);
    }
    auto f = Formula::parse(*cfg.qform);
    if (f.outcome != ynode) throw ConfigError("qform outcome '" + f.outcome + "' differs from ynode '" + ynode + "'");
    return f;
}

std::string resolve_ynode(const HierDataset& ds, const EstimationConfig& cfg) {
    if (ds.roles().ynode) return *ds.roles().ynode;
    if (cfg.qform) {
        const auto f = Formula::parse(*cfg.qform);
        if (!ds.frame().has(f.outcome)) throw DataError("outcome column '" + f.outcome + "' not found");
        return f.outcome;
    }
    throw ConfigError("estimation needs ynode or a qform");
}

void check_reuse(const FittedDensity& fd, const std::vector<std::string>& anodes, const Frame& rows) {
    if (fd.anodes() != anodes) throw DataError("reused density exposures do not match anodes");
    for (const auto& c : fd.required_columns()) {
        if (!rows.has(c)) throw DataError("reused density needs column '" + c + "' missing from the data");
    }
}

WeightScheme weights_for(const HierDataset& ds, const EstimationConfig& cfg) {
    const auto obs = cfg.user_obs_weights ? ObsWeightPolicy::user : cfg.obs_policy;
    const auto comm = cfg.user_community_weights ? CommunityWeightPolicy::user : cfg.community_policy;
    return build_weights(ds, obs, comm, cfg.user_obs_weights, cfg.user_community_weights);
}

std::vector<double> clamp_all(std::vector<double> p, const OutcomeScale& s) {
    for (auto& v : p) v = s.clamp(v);
    return p;
}

EstimationReport run_per_community(const HierDataset& ds, const EstimationConfig& cfg);

EstimationReport run_pooled(const HierDataset& ds, const EstimationConfig& cfg, Strategy step) {
    const auto& roles = ds.roles();
    const auto& anodes = roles.anodes;
    EstimationReport rep;
    rep.strategy = step;
    rep.pooled_q = step == Strategy::community_level && cfg.pooled_q;
    rep.n_obs = ds.n_obs();

    const std::string ynode = resolve_ynode(ds, cfg);
    rep.scale = OutcomeScale::from_data(ds.frame().col(ynode), cfg.qbounds, cfg.alpha);
    const WeightScheme ws = weights_for(ds, cfg);
    Layout L = build_layout(ds, step, ws, ynode, rep.scale, rep.warnings);
    rep.n_units = L.unit_weights.size();
    const Learner& learner = cfg.learner ? *cfg.learner : default_learner();

    // Initial Q.
    const Formula qf = q_formula(cfg, ynode, roles);
    const auto scale = rep.scale;
    std::function<std::vector<double>(const Exposures&)> qbar;
    if (rep.pooled_q) {
        const Frame& ind = ds.frame();
        std::vector<double> w(ind.n_rows());
        for (std::size_t r = 0; r < w.size(); ++r) w[r] = ws.community[ds.community_of_row()[r]] * ws.alpha[r];
        const auto ys = to_star(ind.col(ynode), scale, rep.warnings);
        auto fit = std::make_shared<GlmFit>(
            learner.fit(Family::binomial_logit, design_matrix(qf, ind), ys, w, {}, design_names(qf)));
        fit->formula = qf;
        rep.q_model = *fit;
        const auto unit_of_row = ds.community_of_row();
        const auto alpha = ws.alpha;
        const std::size_t J = L.rows.n_rows();
        qbar = [fit, ind, unit_of_row, alpha, anodes, scale, J](const Exposures& a_units) {
            Exposures a_ind(a_units.size(), std::vector<double>(ind.n_rows()));
            for (std::size_t k = 0; k < a_units.size(); ++k) {
                for (std::size_t r = 0; r < ind.n_rows(); ++r) a_ind[k][r] = a_units[k][unit_of_row[r]];
            }
            const auto p = predict_design(*fit, design_matrix(fit->formula, with_exposures(ind, anodes, a_ind)),
                                          PredictType::response);
            std::vector<double> out(J, 0.0);
            for (std::size_t r = 0; r < p.size(); ++r) out[unit_of_row[r]] += alpha[r] * p[r];
            return clamp_all(std::move(out), scale);
        };
    } else {
        auto fit = std::make_shared<GlmFit>(learner.fit(Family::binomial_logit, design_matrix(qf, L.rows), L.ystar,
                                                        L.reg_weights, {}, design_names(qf)));
        fit->formula = qf;
        rep.q_model = *fit;
        const Frame rows = L.rows;
        qbar = [fit, rows, anodes, scale](const Exposures& a) {
            const auto p = predict_design(*fit, design_matrix(fit->formula, with_exposures(rows, anodes, a)),
                                          PredictType::response);
            return clamp_all(p, scale);
        };
    }
    for (const auto& w : rep.q_model->warnings) rep.warnings.push_back("Q: " + w);

    EngineInput in;
    in.ystar = L.ystar;
    in.det = L.det;
    in.reg_weights = L.reg_weights;
    in.unit_of_row = L.unit_of_row;
    in.alpha = L.alpha;
    in.unit_weights = L.unit_weights;
    in.scale = scale;
    in.method = cfg.method;
    in.ci_alpha = cfg.ci_alpha;
    in.qbar = qbar;

    const Exposures observed = exposures_of(L.rows, anodes);

    // Draws on the analysis rows; community-level samplers draw on the
    // aggregate and broadcast to members.
    auto draw = [&](const InterventionSpec& spec, const McConfig& mc) {
        if (spec.community_level && ds.has_community_id() && step != Strategy::community_level) {
            if (!L.agg) L.agg = aggregate_to_community(ds, ws);
            return broadcast(sample_gstar(spec, L.agg->frame, anodes, mc), ds.community_of_row());
        }
        return sample_gstar(spec, L.rows, anodes, mc);
    };

    const bool shortcut = savetime_shortcut(cfg.f_gstar1.has_value(), cfg.method, cfg.savetime_fit_hbars);
    const InterventionSpec spec1 = cfg.f_gstar1 ? *cfg.f_gstar1 : observed_intervention();

    std::optional<FittedDensity> g0;
    std::vector<Term> g0_rhs, gstar_rhs;
    DensityFitOptions opt;
    opt.config = cfg.binning;
    opt.lbound = cfg.lbound;
    opt.learner = &learner;
    if (!shortcut) {
        g0_rhs = density_rhs(cfg.hform_g0, anodes, roles.wenodes);
        gstar_rhs = cfg.hform_gstar ? density_rhs(cfg.hform_gstar, anodes, roles.wenodes) : g0_rhs;
        if (cfg.g0_model) {
            check_reuse(*cfg.g0_model, anodes, L.rows);
            g0 = *cfg.g0_model;
        } else if (cfg.f_g0) {
            McConfig mc = cfg.mc;
            mc.seed ^= kG0SeedSalt;
            const auto extra = draw(*cfg.f_g0, mc);
            Frame data = L.rows;
            std::vector<double> w = L.reg_weights;
            for (const auto& d : extra) {
                data = concat(data, with_exposures(L.rows, anodes, d));
                w.insert(w.end(), L.reg_weights.begin(), L.reg_weights.end());
            }
            opt.weights = w;
            g0 = fit_density(data, anodes, g0_rhs, opt);
            opt.weights = {};
        } else {
            opt.weights = L.reg_weights;
            g0 = fit_density(L.rows, anodes, g0_rhs, opt);
        }
        rep.g0_model = g0;
        for (const auto& w : g0->warnings) rep.warnings.push_back("g0: " + w);
    }
    opt.weights = L.reg_weights;

    std::vector<std::size_t> bins_used;
    if (g0) {
        for (const auto& v : g0->vars) bins_used.push_back(v.n_models());
    }

    auto one = [&](const InterventionSpec& spec, bool first, std::optional<FittedDensity>& model_slot) {
        const auto draws = draw(spec, cfg.mc);
        CleverCovariate h;
        if (shortcut) {
            h.observed.assign(L.rows.n_rows(), 1.0);
        } else {
            GstarModel gm;
            if (first && cfg.gstar_model) {
                check_reuse(*cfg.gstar_model, anodes, L.rows);
                gm.kind = GstarModel::Kind::fitted;
                gm.fit = *cfg.gstar_model;
            } else {
                gm = fit_gstar(spec, *g0, L.rows, draws, gstar_rhs, opt);
            }
            if (gm.fit) {
                model_slot = gm.fit;
                for (const auto& w : gm.fit->warnings) rep.warnings.push_back("gstar: " + w);
            }
            h = clever_covariate(gm, *g0, L.rows, observed, draws, cfg.method == TargetMethod::tmle_covariate);
        }
        auto res = estimate_intervention(in, observed, draws, h, spec.name);
        res.diagnostics.bins_used = bins_used;
        if (!res.epsilon_converged) rep.warnings.push_back(spec.name + ": fluctuation did not converge");
        return res;
    };

    rep.gstar1 = one(spec1, true, rep.gstar1_model);
    if (cfg.f_gstar2) {
        rep.gstar2 = one(*cfg.f_gstar2, false, rep.gstar2_model);
        rep.ate = contrast(rep.gstar1, *rep.gstar2, cfg.ci_alpha);
    }
    return rep;
}

InterventionResult summarize(const std::vector<const InterventionResult*>& parts, const std::vector<double>& w,
                             double ci_alpha, std::string name) {
    InterventionResult out;
    out.name = std::move(name);
    double W = 0.0;
    for (double v : w) W += v;
    for (std::size_t j = 0; j < parts.size(); ++j) {
        const double f = w[j] / W;
        const auto& p = *parts[j];
        out.estimate.tmle += f * p.estimate.tmle;
        out.estimate.iptw += f * p.estimate.iptw;
        out.estimate.gcomp += f * p.estimate.gcomp;
        out.variance.tmle += f * f * p.variance.tmle;
        out.variance.iptw += f * f * p.variance.iptw;
        out.variance.gcomp += f * f * p.variance.gcomp;
        out.diagnostics.n_units += p.diagnostics.n_units;
        out.epsilon_converged = out.epsilon_converged && p.epsilon_converged;
    }
    out.epsilon = std::nan("");
    out.ci_tmle = normal_ci(out.estimate.tmle, out.variance.tmle, ci_alpha);
    out.ci_iptw = normal_ci(out.estimate.iptw, out.variance.iptw, ci_alpha);
    out.ci_gcomp = normal_ci(out.estimate.gcomp, out.variance.gcomp, ci_alpha);
    return out;
}

EstimationReport run_per_community(const HierDataset& ds, const EstimationConfig& cfg) {
    const WeightScheme ws = weights_for(ds, cfg);
    const std::size_t J = ds.n_communities();
    for (std::size_t j = 0; j < J; ++j) {
        const auto& c = ds.communities()[j];
        for (const auto& a : ds.roles().anodes) {
            const auto col = ds.frame().col(a);
            std::set<double> levels;
            for (auto r : c.rows) levels.insert(col[r]);
            if (levels.size() < 2) {
                throw DataError("per_community: exposure '" + a + "' is constant within community '" + c.key + "'");
            }
        }
    }
    std::vector<EstimationReport> parts(J);
    std::vector<std::exception_ptr> errors(J);
    parallel::for_each_index(J, [&](std::size_t j) {
        try {
            const auto sub = ds.community_subset(j);
            EstimationConfig sc = cfg;
            sc.step = Strategy::no_community;
            sc.user_community_weights.reset();
            if (cfg.user_obs_weights) {
                std::vector<double> w;
                for (auto r : ds.communities()[j].rows) w.push_back((*cfg.user_obs_weights)[r]);
                sc.user_obs_weights = w;
            }
            parts[j] = run_pooled(sub, sc, Strategy::no_community);
        } catch (...) {
            errors[j] = std::current_exception();
        }
    });
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    EstimationReport rep;
    rep.strategy = Strategy::per_community;
    rep.n_obs = ds.n_obs();
    rep.n_units = J;
    rep.scale = parts.front().scale;
    std::vector<const InterventionResult*> g1, g2, ate;
    for (std::size_t j = 0; j < J; ++j) {
        rep.community_keys.push_back(ds.communities()[j].key);
        g1.push_back(&parts[j].gstar1);
        if (parts[j].gstar2) g2.push_back(&*parts[j].gstar2);
        if (parts[j].ate) ate.push_back(&*parts[j].ate);
        for (const auto& w : parts[j].warnings) rep.warnings.push_back("community " + ds.communities()[j].key + ": " + w);
    }
    rep.gstar1 = summarize(g1, ws.community, cfg.ci_alpha, parts.front().gstar1.name);
    if (g2.size() == J) rep.gstar2 = summarize(g2, ws.community, cfg.ci_alpha, parts.front().gstar2->name);
    if (ate.size() == J) rep.ate = summarize(ate, ws.community, cfg.ci_alpha, parts.front().ate->name);
    rep.per_community = std::move(parts);
    return rep;
}

}  // namespace

EstimationReport run(const HierDataset& ds, const EstimationConfig& cfg) {
    cfg.binning.validate();
    if (!(cfg.lbound > 0.0 && cfg.lbound < 1.0)) throw ConfigError("lbound must lie in (0,1)");
    if (!(cfg.ci_alpha > 0.0 && cfg.ci_alpha < 1.0)) throw ConfigError("ci_alpha must lie in (0,1)");
    const Strategy step = resolve_strategy(ds, cfg.step);
    if (step == Strategy::per_community) return run_per_community(ds, cfg);
    return run_pooled(ds, cfg, step);
}

FittedDensity fit_exposure_density(const HierDataset& ds, const EstimationConfig& cfg) {
    const Strategy step = resolve_strategy(ds, cfg.step);
    if (step == Strategy::per_community) throw ConfigError("density-fit does not support per_community");
    const auto& roles = ds.roles();
    const WeightScheme ws = weights_for(ds, cfg);
    DensityFitOptions opt;
    opt.config = cfg.binning;
    opt.lbound = cfg.lbound;
    opt.learner = cfg.learner;
    const auto rhs = density_rhs(cfg.hform_g0, roles.anodes, roles.wenodes);
    if (step == Strategy::community_level) {
        const auto agg = aggregate_to_community(ds, ws);
        opt.weights = agg.weights;
        return fit_density(agg.frame, roles.anodes, rhs, opt);
    }
    std::vector<double> w(ds.n_obs());
    for (std::size_t r = 0; r < w.size(); ++r) {
        w[r] = step == Strategy::individual_level ? ws.community[ds.community_of_row()[r]] * ws.alpha[r] : ws.obs[r];
    }
    opt.weights = w;
    if (step == Strategy::individual_level) return marginalize_individual_g(ds.frame(), roles.anodes, rhs, opt);
    return fit_density(ds.frame(), roles.anodes, rhs, opt);
}

}  // namespace tmlecom
