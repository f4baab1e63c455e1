#include "tmlecom/tmle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "tmlecom/error.hpp"

namespace tmlecom {

std::string to_string(TargetMethod m) {
    return m == TargetMethod::tmle_intercept ? "tmle_intercept" : "tmle_covariate";
}

TargetMethod target_method_from_string(const std::string& s) {
    if (s == "tmle_intercept" || s == "tmle.intercept") return TargetMethod::tmle_intercept;
    if (s == "tmle_covariate" || s == "tmle.covariate") return TargetMethod::tmle_covariate;
    throw ConfigError("unknown target_step '" + s + "'");
}

OutcomeScale OutcomeScale::from_data(std::span<const double> y, std::optional<std::pair<double, double>> qbounds,
                                     double alpha) {
    if (!(alpha > 0.5 && alpha < 1.0)) throw ConfigError("alpha must lie in (0.5, 1)");
    OutcomeScale s;
    s.alpha = alpha;
    if (qbounds) {
        s.a = qbounds->first;
        s.b = qbounds->second;
    } else {
        if (y.empty()) throw DataError("no outcome values");
        const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
        const double range = *hi - *lo;
        s.a = *lo - 0.1 * range;
        s.b = *hi + 0.1 * range;
        if (range == 0.0) {
            // constant outcome; any nondegenerate interval containing it works
            s.a = *lo - 0.5;
            s.b = *hi + 0.5;
        }
    }
    if (!(s.a < s.b)) throw ConfigError("qbounds must satisfy lower < upper");
    return s;
}

double OutcomeScale::clamp(double p) const { return std::clamp(p, 1.0 - alpha, alpha); }

std::vector<double> compute_h(std::span<const double> gstar, std::span<const double> g, double lbound,
                              std::size_t* truncated) {
    if (gstar.size() != g.size()) throw DataError("g and g* lengths differ");
    std::vector<double> h(g.size());
    std::size_t count = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (g[i] < lbound) ++count;
        h[i] = gstar[i] / std::max(g[i], lbound);
    }
    if (truncated) *truncated = count;
    return h;
}

double fluctuate(double q, double h, double epsilon, TargetMethod method) {
    const double shift = method == TargetMethod::tmle_covariate ? epsilon * h : epsilon;
    return expit(logit(q) + shift);
}

TargetResult target(std::span<const double> qbar, std::span<const double> h, std::span<const double> ystar,
                    std::span<const double> weights, TargetMethod method, std::span<const char> det) {
    const std::size_t n = qbar.size();
    if (h.size() != n || ystar.size() != n || (!weights.empty() && weights.size() != n) ||
        (!det.empty() && det.size() != n)) {
        throw DataError("targeting inputs have different lengths");
    }
    std::vector<double> y, w, off, x;
    for (std::size_t i = 0; i < n; ++i) {
        if (!det.empty() && det[i]) continue;
        const double wi = weights.empty() ? 1.0 : weights[i];
        y.push_back(ystar[i]);
        off.push_back(logit(qbar[i]));
        if (method == TargetMethod::tmle_intercept) {
            w.push_back(wi * h[i]);
            x.push_back(1.0);
        } else {
            w.push_back(wi);
            x.push_back(h[i]);
        }
    }
    TargetResult out;
    const bool informative = std::any_of(w.begin(), w.end(), [](double v) { return v > 0.0; }) &&
                             std::any_of(x.begin(), x.end(), [](double v) { return v != 0.0; });
    if (informative) {
        const Eigen::Map<const Eigen::MatrixXd> X(x.data(), static_cast<Eigen::Index>(x.size()), 1);
        const auto fit = fit_design(Family::binomial_logit, X, y, w, off, {"epsilon"});
        if (fit.converged && std::isfinite(fit.coefficients[0])) {
            out.epsilon = fit.coefficients[0];
        } else {
            out.converged = false;
            out.warnings.push_back("fluctuation did not converge; epsilon set to 0");
        }
    }
    out.qstar.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.qstar[i] = (!det.empty() && det[i]) ? qbar[i] : fluctuate(qbar[i], h[i], out.epsilon, method);
    }
    return out;
}

double ic_variance(std::span<const double> ic) {
    if (ic.empty()) return std::numeric_limits<double>::quiet_NaN();
    const double n = static_cast<double>(ic.size());
    const double mean = std::accumulate(ic.begin(), ic.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : ic) ss += (v - mean) * (v - mean);
    return ss / (n * n);
}

Interval normal_ci(double estimate, double variance, double ci_alpha) {
    if (!(ci_alpha > 0.0 && ci_alpha < 1.0)) throw ConfigError("ci_alpha must lie in (0,1)");
    const boost::math::normal_distribution<double> z01;
    const double z = boost::math::quantile(z01, 1.0 - ci_alpha / 2.0);
    const double half = z * std::sqrt(variance);
    return {estimate - half, estimate + half};
}

bool savetime_shortcut(bool has_gstar1, TargetMethod method, bool savetime) {
    return !has_gstar1 && method == TargetMethod::tmle_intercept && savetime;
}

InterventionResult estimate_intervention(const EngineInput& in, const Exposures& observed,
                                         const std::vector<Exposures>& draws, const CleverCovariate& h,
                                         std::string name) {
    const std::size_t n = in.ystar.size();
    const std::size_t J = in.unit_weights.size();
    if (in.unit_of_row.size() != n || in.alpha.size() != n || h.observed.size() != n) {
        throw DataError("engine inputs have inconsistent row counts");
    }
    if (draws.empty()) throw DataError("no intervention draws");
    const bool covariate = in.method == TargetMethod::tmle_covariate;
    if (covariate && h.at_draws.size() != draws.size()) throw DataError("covariate targeting needs h at every draw");
    auto is_det = [&](std::size_t r) { return !in.det.empty() && in.det[r] != 0; };

    const auto q_obs = in.qbar(observed);
    const auto tr = target(q_obs, h.observed, in.ystar, in.reg_weights, in.method, in.det);

    std::vector<double> q_g(n, 0.0), qs_g(n, 0.0);
    for (std::size_t s = 0; s < draws.size(); ++s) {
        const auto q = in.qbar(draws[s]);
        for (std::size_t r = 0; r < n; ++r) {
            q_g[r] += q[r];
            qs_g[r] += fluctuate(q[r], covariate ? h.at_draws[s][r] : 1.0, tr.epsilon, in.method);
        }
    }
    const double S = static_cast<double>(draws.size());
    for (std::size_t r = 0; r < n; ++r) {
        q_g[r] = is_det(r) ? in.ystar[r] : q_g[r] / S;
        qs_g[r] = is_det(r) ? in.ystar[r] : qs_g[r] / S;
    }

    std::vector<double> u_qs(J, 0.0), u_q(J, 0.0), u_ipw(J, 0.0), u_res_t(J, 0.0), u_res_g(J, 0.0);
    std::vector<char> u_live(J, 0);
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t u = in.unit_of_row[r];
        const double a = in.alpha[r];
        u_qs[u] += a * qs_g[r];
        u_q[u] += a * q_g[r];
        // centred at the middle of the bounds so a reflection of Y reflects the estimate
        u_ipw[u] += a * h.observed[r] * (in.ystar[r] - 0.5);
        if (!is_det(r)) {
            u_live[u] = 1;
            u_res_t[u] += a * h.observed[r] * (in.ystar[r] - tr.qstar[r]);
            u_res_g[u] += a * h.observed[r] * (in.ystar[r] - q_obs[r]);
        }
    }
    double wsum = 0.0, psi_t = 0.0, psi_g = 0.0, psi_i = 0.0;
    for (std::size_t u = 0; u < J; ++u) {
        const double w = in.unit_weights[u];
        wsum += w;
        psi_t += w * u_qs[u];
        psi_g += w * u_q[u];
        psi_i += w * u_ipw[u];
    }
    if (!(wsum > 0.0)) throw NumericError("all unit weights are zero");
    psi_t /= wsum;
    psi_g /= wsum;
    psi_i /= wsum;

    InterventionResult res;
    res.name = std::move(name);
    double live_w = 0.0;
    std::size_t n_live = 0;
    for (std::size_t u = 0; u < J; ++u) {
        if (u_live[u]) {
            live_w += in.unit_weights[u];
            ++n_live;
        }
    }
    const double mean_w = n_live ? live_w / static_cast<double>(n_live) : 1.0;
    const double width = in.scale.width();
    for (std::size_t u = 0; u < J; ++u) {
        if (!u_live[u]) continue;
        const double omega = mean_w > 0.0 ? in.unit_weights[u] / mean_w : 0.0;
        res.ic_units.push_back(u);
        res.ic_tmle.push_back(omega * (u_res_t[u] + u_qs[u] - psi_t) * width);
        res.ic_gcomp.push_back(omega * (u_res_g[u] + u_q[u] - psi_g) * width);
        res.ic_iptw.push_back(omega * (u_ipw[u] - psi_i) * width);
    }

    res.estimate = {in.scale.from_star(psi_t), in.scale.from_star(0.5 + psi_i), in.scale.from_star(psi_g)};
    res.variance = {ic_variance(res.ic_tmle), ic_variance(res.ic_iptw), ic_variance(res.ic_gcomp)};
    res.ci_tmle = normal_ci(res.estimate.tmle, res.variance.tmle, in.ci_alpha);
    res.ci_iptw = normal_ci(res.estimate.iptw, res.variance.iptw, in.ci_alpha);
    res.ci_gcomp = normal_ci(res.estimate.gcomp, res.variance.gcomp, in.ci_alpha);
    res.epsilon = tr.epsilon;
    res.epsilon_converged = tr.converged;

    auto& d = res.diagnostics;
    d.n_units = n_live;
    if (n) {
        const auto [lo, hi] = std::minmax_element(h.observed.begin(), h.observed.end());
        d.h_min = *lo;
        d.h_max = *hi;
        d.h_mean = std::accumulate(h.observed.begin(), h.observed.end(), 0.0) / static_cast<double>(n);
        d.truncated_fraction = static_cast<double>(h.truncated) / static_cast<double>(n);
    }
    return res;
}

InterventionResult contrast(const InterventionResult& r1, const InterventionResult& r2, double ci_alpha) {
    if (r1.ic_units != r2.ic_units) throw DataError("contrast needs both interventions on the same units");
    InterventionResult out;
    out.name = r1.name + " - " + r2.name;
    out.ic_units = r1.ic_units;
    out.estimate = {r1.estimate.tmle - r2.estimate.tmle, r1.estimate.iptw - r2.estimate.iptw,
                    r1.estimate.gcomp - r2.estimate.gcomp};
    auto diff = [](const std::vector<double>& a, const std::vector<double>& b) {
        std::vector<double> d(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
        return d;
    };
    out.ic_tmle = diff(r1.ic_tmle, r2.ic_tmle);
    out.ic_iptw = diff(r1.ic_iptw, r2.ic_iptw);
    out.ic_gcomp = diff(r1.ic_gcomp, r2.ic_gcomp);
    out.variance = {ic_variance(out.ic_tmle), ic_variance(out.ic_iptw), ic_variance(out.ic_gcomp)};
    out.ci_tmle = normal_ci(out.estimate.tmle, out.variance.tmle, ci_alpha);
    out.ci_iptw = normal_ci(out.estimate.iptw, out.variance.iptw, ci_alpha);
    out.ci_gcomp = normal_ci(out.estimate.gcomp, out.variance.gcomp, ci_alpha);
    out.epsilon = std::numeric_limits<double>::quiet_NaN();
    out.epsilon_converged = r1.epsilon_converged && r2.epsilon_converged;
    out.diagnostics.n_units = r1.diagnostics.n_units;
    return out;
}

GstarModel fit_gstar(const InterventionSpec& spec, const FittedDensity& g0, const Frame& rows,
                     const std::vector<Exposures>& draws, const std::vector<Term>& rhs,
                     const DensityFitOptions& options) {
    GstarModel m;
    if (spec.kind == InterventionKind::observed) {
        m.kind = GstarModel::Kind::same_as_g0;
        return m;
    }
    const bool all_discrete = std::all_of(g0.vars.begin(), g0.vars.end(),
                                          [](const VariableDensity& v) { return v.kind != VarKind::continuous; });
    if (spec.deterministic() && all_discrete) {
        m.kind = GstarModel::Kind::indicator;
        return m;
    }
    const std::size_t S = draws.size(), n = rows.n_rows();
    Frame stacked = rows.repeat(S);
    const auto anodes = g0.anodes();
    for (std::size_t k = 0; k < anodes.size(); ++k) {
        std::vector<double> col;
        col.reserve(S * n);
        for (const auto& d : draws) col.insert(col.end(), d[k].begin(), d[k].end());
        stacked.set(anodes[k], std::move(col));
    }
    std::vector<BinLayout> layouts;
    for (const auto& v : g0.vars) {
        if (v.kind == VarKind::continuous) layouts.push_back(v.layout);
    }
    std::vector<double> weights;
    if (!options.weights.empty()) {
        for (std::size_t s = 0; s < S; ++s) weights.insert(weights.end(), options.weights.begin(), options.weights.end());
    }
    DensityFitOptions opt = options;
    opt.layouts = &layouts;
    opt.weights = weights;
    m.kind = GstarModel::Kind::fitted;
    m.fit = fit_density(stacked, anodes, rhs, opt);
    return m;
}

std::vector<double> eval_gstar(const GstarModel& m, const FittedDensity& g0, const Frame& rows, const Exposures& a,
                               const std::vector<Exposures>& draws) {
    switch (m.kind) {
        case GstarModel::Kind::same_as_g0: return eval_density(g0, rows, a, true);
        case GstarModel::Kind::fitted: return eval_density(*m.fit, rows, a, false);
        case GstarModel::Kind::indicator: {
            const std::size_t n = rows.n_rows();
            std::vector<double> out(n, 1.0);
            for (std::size_t k = 0; k < a.size(); ++k) {
                for (std::size_t i = 0; i < n; ++i) {
                    if (a[k][i] != draws.front()[k][i]) out[i] = 0.0;
                }
            }
            return out;
        }
    }
    return {};
}

CleverCovariate clever_covariate(const GstarModel& m, const FittedDensity& g0, const Frame& rows,
                                 const Exposures& observed, const std::vector<Exposures>& draws, bool need_draws) {
    CleverCovariate h;
    const auto g = eval_density(g0, rows, observed, false);
    const auto gs = eval_gstar(m, g0, rows, observed, draws);
    h.observed = compute_h(gs, g, g0.lbound, &h.truncated);
    if (need_draws) {
        for (const auto& d : draws) {
            const auto gd = eval_density(g0, rows, d, false);
            const auto gsd = eval_gstar(m, g0, rows, d, draws);
            h.at_draws.push_back(compute_h(gsd, gd, g0.lbound));
        }
    }
    return h;
}

}  // namespace tmlecom
