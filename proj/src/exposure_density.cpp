#include "tmlecom/exposure_density.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "tmlecom/error.hpp"
#include "tmlecom/parallel.hpp"

namespace tmlecom {

namespace {

constexpr int kDefaultBins = 5;
const char* const kBinIndexTerm = "bin_index";

double quantile7(const std::vector<double>& sorted, double p) {
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

std::vector<double> dedupe(std::vector<double> cuts, std::vector<std::string>* warnings, const char* what) {
    const std::size_t before = cuts.size();
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    if (cuts.size() < before && warnings) {
        warnings->push_back(std::string(what) + ": tied cutoffs collapsed, " + std::to_string(before - 1) +
                            " bins reduced to " + std::to_string(cuts.size() - 1));
    }
    return cuts;
}

// Inverse of G(x) = x + a * F(x) at level t, with F the empirical cdf.
double dhist_inverse(const std::vector<double>& distinct, const std::vector<double>& cdf_hi, double a, double t) {
    double f_lo = 0.0;
    for (std::size_t i = 0; i < distinct.size(); ++i) {
        const double v = distinct[i];
        const double lo = v + a * f_lo, hi = v + a * cdf_hi[i];
        if (t <= lo) return t - a * f_lo;  // on the sloped piece left of v
        if (t <= hi) return v;             // on the jump at v
        f_lo = cdf_hi[i];
    }
    return distinct.back();
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, const std::vector<std::size_t>& rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

std::vector<Term> factor_terms(const std::vector<Term>& rhs, const std::vector<std::string>& earlier) {
    std::vector<Term> terms = rhs;
    for (const auto& a : earlier) {
        Term t{{a}};
        if (std::find(terms.begin(), terms.end(), t) == terms.end()) terms.push_back(t);
    }
    return terms;
}

// Fits P(event) on the given rows. Degenerate risk sets become constants.
HazardModel fit_hazard(const Learner& learner, const Eigen::MatrixXd& x, const std::vector<std::size_t>& risk,
                       const std::vector<double>& event, std::span<const double> weights,
                       const std::vector<std::string>& names, std::vector<std::string>& warnings,
                       const std::string& label) {
    HazardModel h;
    double w_total = 0.0, w_event = 0.0;
    for (auto r : risk) {
        const double w = weights.empty() ? 1.0 : weights[r];
        w_total += w;
        w_event += w * event[r];
    }
    if (!(w_total > 0.0) || w_event <= 0.0) {
        h.constant = 0.0;
        if (!(w_total > 0.0)) warnings.push_back(label + ": empty risk set, hazard fixed at 0");
        return h;
    }
    if (w_event >= w_total) {
        h.constant = 1.0;
        return h;
    }
    const Eigen::MatrixXd xs = take_rows(x, risk);
    std::vector<double> ys(risk.size()), ws(risk.size());
    for (std::size_t i = 0; i < risk.size(); ++i) {
        ys[i] = event[risk[i]];
        ws[i] = weights.empty() ? 1.0 : weights[risk[i]];
    }
    h.fit = learner.fit(Family::binomial_logit, xs, ys, ws, {}, names);
    for (const auto& w : h.fit->warnings) warnings.push_back(label + ": " + w);
    return h;
}

std::vector<double> hazard_predict(const HazardModel& h, const Eigen::MatrixXd& x) {
    if (!h.fit) return std::vector<double>(static_cast<std::size_t>(x.rows()), h.constant);
    return predict_design(*h.fit, x, PredictType::response);
}

VariableDensity fit_discrete(const Learner& learner, const std::string& name, VarKind kind,
                             std::span<const double> a, const Eigen::MatrixXd& x,
                             const std::vector<std::string>& names, std::span<const double> weights,
                             std::vector<std::string>& warnings) {
    VariableDensity v;
    v.name = name;
    v.kind = kind;
    std::set<double> lv(a.begin(), a.end());
    v.levels.assign(lv.begin(), lv.end());
    const std::size_t n = a.size();
    std::vector<std::size_t> risk(n);
    for (std::size_t i = 0; i < n; ++i) risk[i] = i;
    // hazard for each non-terminal level
    for (std::size_t l = 0; l + 1 < v.levels.size(); ++l) {
        std::vector<double> event(n, 0.0);
        for (auto r : risk) event[r] = a[r] == v.levels[l] ? 1.0 : 0.0;
        v.hazards.push_back(fit_hazard(learner, x, risk, event, weights, names, warnings,
                                       name + " level " + std::to_string(l)));
        std::vector<std::size_t> next;
        for (auto r : risk) {
            if (a[r] != v.levels[l]) next.push_back(r);
        }
        risk = std::move(next);
    }
    return v;
}

VariableDensity fit_continuous(const Learner& learner, const std::string& name, std::span<const double> a,
                               const Eigen::MatrixXd& x, const std::vector<std::string>& names,
                               const DensityFitOptions& opt, const BinLayout& layout,
                               std::vector<std::string>& warnings) {
    VariableDensity v;
    v.name = name;
    v.kind = VarKind::continuous;
    v.layout = layout;
    const std::size_t n = a.size(), K = layout.n_total();
    std::vector<std::size_t> bin(n);
    for (std::size_t i = 0; i < n; ++i) bin[i] = layout.bin_of(a[i]);

    std::vector<std::vector<std::size_t>> risk(K);
    std::vector<double> events(K, 0.0);
    for (std::size_t b = 0; b < K; ++b) {
        for (std::size_t i = 0; i < n; ++i) {
            if (bin[i] >= b) risk[b].push_back(i);
            if (bin[i] == b) events[b] += opt.weights.empty() ? 1.0 : opt.weights[i];
        }
    }

    v.hazards.resize(K);
    v.hazards[K - 1].constant = 1.0;

    if (!opt.config.pool_contin_var) {
        std::vector<std::vector<std::string>> bin_warnings(K);
        parallel::for_each_index(K - 1, [&](std::size_t b) {
            std::vector<double> event(n, 0.0);
            for (std::size_t i = 0; i < n; ++i) event[i] = bin[i] == b ? 1.0 : 0.0;
            v.hazards[b] = fit_hazard(learner, x, risk[b], event, opt.weights, names, bin_warnings[b],
                                      name + " bin " + std::to_string(b));
        });
        for (auto& bw : bin_warnings) warnings.insert(warnings.end(), bw.begin(), bw.end());
        return v;
    }

    // Pooled: one logit over stacked (row, bin) risk records with the bin
    // index as an extra covariate. Bins without events stay fixed at 0.
    v.pooled_bin.assign(K, false);
    std::vector<std::size_t> stacked_row;
    std::vector<double> stacked_bin, stacked_y, stacked_w;
    for (std::size_t b = 0; b + 1 < K; ++b) {
        if (events[b] <= 0.0) continue;
        v.pooled_bin[b] = true;
        for (auto i : risk[b]) {
            stacked_row.push_back(i);
            stacked_bin.push_back(static_cast<double>(b));
            stacked_y.push_back(bin[i] == b ? 1.0 : 0.0);
            stacked_w.push_back(opt.weights.empty() ? 1.0 : opt.weights[i]);
        }
    }
    if (stacked_row.empty()) return v;
    Eigen::MatrixXd xs(static_cast<Eigen::Index>(stacked_row.size()), x.cols() + 1);
    for (std::size_t r = 0; r < stacked_row.size(); ++r) {
        const auto rr = static_cast<Eigen::Index>(r);
        xs.row(rr).head(x.cols()) = x.row(static_cast<Eigen::Index>(stacked_row[r]));
        xs(rr, x.cols()) = stacked_bin[r];
    }
    auto pooled_names = names;
    pooled_names.emplace_back(kBinIndexTerm);
    v.pooled = learner.fit(Family::binomial_logit, xs, stacked_y, stacked_w, {}, pooled_names);
    for (const auto& w : v.pooled->warnings) warnings.push_back(name + " pooled: " + w);
    return v;
}

Eigen::MatrixXd variable_design(const VariableDensity& v, const Frame& rows) {
    return design_matrix(v.predictors, rows);
}

// P(observed level) for a discrete factor.
std::vector<double> factor_probability(const VariableDensity& v, const Eigen::MatrixXd& x,
                                       std::span<const double> a) {
    const std::size_t n = a.size();
    std::vector<double> out(n, 0.0);
    std::vector<std::vector<double>> hz;
    for (const auto& h : v.hazards) hz.push_back(hazard_predict(h, x));
    for (std::size_t i = 0; i < n; ++i) {
        auto it = std::find(v.levels.begin(), v.levels.end(), a[i]);
        if (it == v.levels.end()) continue;
        const auto l = static_cast<std::size_t>(it - v.levels.begin());
        double survive = 1.0;
        for (std::size_t k = 0; k < l; ++k) survive *= 1.0 - hz[k][i];
        out[i] = l < hz.size() ? survive * hz[l][i] : survive;
    }
    return out;
}

}  // namespace

std::string to_string(VarKind k) {
    switch (k) {
        case VarKind::binary: return "binary";
        case VarKind::categorical: return "categorical";
        case VarKind::continuous: return "continuous";
    }
    return "?";
}

std::string to_string(BinMethod m) {
    switch (m) {
        case BinMethod::equal_mass: return "equal_mass";
        case BinMethod::equal_len: return "equal_len";
        case BinMethod::dhist: return "dhist";
    }
    return "?";
}

VarKind var_kind_from_string(const std::string& s) {
    if (s == "binary") return VarKind::binary;
    if (s == "categorical") return VarKind::categorical;
    if (s == "continuous") return VarKind::continuous;
    throw ConfigError("unknown variable kind '" + s + "'");
}

BinMethod bin_method_from_string(const std::string& s) {
    if (s == "equal_mass" || s == "equal.mass") return BinMethod::equal_mass;
    if (s == "equal_len" || s == "equal.len") return BinMethod::equal_len;
    if (s == "dhist") return BinMethod::dhist;
    throw ConfigError("unknown bin method '" + s + "'");
}

void BinningConfig::validate() const {
    if (nbins && *nbins < 1) throw ConfigError("nbins must be >= 1");
    if (max_n_per_bin < 1) throw ConfigError("max_n_per_bin must be >= 1");
    if (maxncats < 2) throw ConfigError("maxncats must be >= 2");
}

VarKind classify_variable(std::span<const double> values, int maxncats) {
    std::set<double> distinct;
    for (double v : values) {
        distinct.insert(v);
        if (distinct.size() > static_cast<std::size_t>(maxncats)) return VarKind::continuous;
    }
    if (distinct.size() <= 2) return VarKind::binary;
    return VarKind::categorical;
}

std::size_t BinLayout::bin_of(double a) const {
    if (cutoffs.empty() || std::isnan(a)) return 0;
    if (a < cutoffs.front()) return 0;
    if (a > cutoffs.back()) return n_total() - 1;
    if (a == cutoffs.back()) return n_interior();
    const auto it = std::upper_bound(cutoffs.begin(), cutoffs.end(), a);
    return static_cast<std::size_t>(it - cutoffs.begin());
}

double BinLayout::width(std::size_t bin) const {
    const std::size_t k = n_interior();
    if (k == 0) return 1.0;
    const std::size_t interior = std::clamp<std::size_t>(bin, 1, k);
    const double w = cutoffs[interior] - cutoffs[interior - 1];
    return w > 0.0 ? w : 1.0;
}

BinLayout choose_bins(std::span<const double> values, const BinningConfig& cfg, std::size_t n_obs,
                      std::vector<std::string>* warnings) {
    cfg.validate();
    if (values.empty()) throw DataError("cannot choose bins for an empty variable");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> distinct = sorted;
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    std::size_t k = static_cast<std::size_t>(cfg.nbins.value_or(kDefaultBins));
    if (cfg.method == BinMethod::equal_mass) {
        const double rule = std::nearbyint(static_cast<double>(n_obs) / cfg.max_n_per_bin);
        k = std::max(k, static_cast<std::size_t>(rule));
    }
    if (k > distinct.size()) {
        if (warnings) {
            warnings->push_back("requested " + std::to_string(k) + " bins but only " +
                                std::to_string(distinct.size()) + " distinct values; reduced");
        }
        k = distinct.size();
    }
    k = std::max<std::size_t>(k, 1);

    std::vector<double> cuts(k + 1);
    const double lo = sorted.front(), hi = sorted.back();
    switch (cfg.method) {
        case BinMethod::equal_mass:
            for (std::size_t i = 0; i <= k; ++i) cuts[i] = quantile7(sorted, static_cast<double>(i) / static_cast<double>(k));
            break;
        case BinMethod::equal_len:
            for (std::size_t i = 0; i <= k; ++i) cuts[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(k);
            break;
        case BinMethod::dhist: {
            double a = 5.0 * (quantile7(sorted, 0.75) - quantile7(sorted, 0.25));
            if (!(a > 0.0)) a = (hi - lo) / 1e8;
            std::vector<double> cdf_hi(distinct.size());
            std::size_t pos = 0;
            for (std::size_t i = 0; i < distinct.size(); ++i) {
                while (pos < sorted.size() && sorted[pos] <= distinct[i]) ++pos;
                cdf_hi[i] = static_cast<double>(pos) / static_cast<double>(sorted.size());
            }
            const double step = (hi + a - lo) / static_cast<double>(k);
            for (std::size_t i = 0; i <= k; ++i) {
                cuts[i] = dhist_inverse(distinct, cdf_hi, a, lo + step * static_cast<double>(i));
            }
            cuts.front() = lo;
            cuts.back() = hi;
            break;
        }
    }
    BinLayout layout;
    layout.cutoffs = dedupe(std::move(cuts), warnings, to_string(cfg.method).c_str());
    if (layout.cutoffs.size() < 2) layout.cutoffs = {lo, hi == lo ? lo + 1.0 : hi};
    return layout;
}

std::size_t VariableDensity::n_models() const {
    if (kind == VarKind::continuous) return layout.n_total();
    return hazards.size();
}

std::vector<std::string> FittedDensity::anodes() const {
    std::vector<std::string> out;
    for (const auto& v : vars) out.push_back(v.name);
    return out;
}

std::vector<std::string> FittedDensity::required_columns() const {
    const auto a = anodes();
    std::vector<std::string> out;
    for (const auto& v : vars) {
        for (const auto& c : v.predictors.columns()) {
            if (std::find(a.begin(), a.end(), c) == a.end() && std::find(out.begin(), out.end(), c) == out.end()) {
                out.push_back(c);
            }
        }
    }
    return out;
}

FittedDensity fit_density(const Frame& data, const std::vector<std::string>& anodes,
                          const std::vector<Term>& rhs, const DensityFitOptions& options) {
    options.config.validate();
    if (!(options.lbound > 0.0 && options.lbound < 1.0)) throw ConfigError("lbound must lie in (0,1)");
    if (anodes.empty()) throw ConfigError("density needs at least one exposure");
    const Learner& learner = options.learner ? *options.learner : default_learner();

    FittedDensity fd;
    fd.lbound = options.lbound;
    fd.config = options.config;
    std::vector<std::string> earlier;
    std::size_t continuous_index = 0;
    for (const auto& name : anodes) {
        const auto a = data.col(name);
        Formula f;
        f.outcome = name;
        f.terms = factor_terms(rhs, earlier);
        const Eigen::MatrixXd x = design_matrix(f, data);
        const auto names = design_names(f);

        VariableDensity v;
        const VarKind kind = classify_variable(a, options.config.maxncats);
        if (kind == VarKind::continuous) {
            BinLayout layout;
            if (options.layouts && continuous_index < options.layouts->size()) {
                layout = (*options.layouts)[continuous_index];
            } else {
                layout = choose_bins(a, options.config, data.n_rows(), &fd.warnings);
            }
            ++continuous_index;
            v = fit_continuous(learner, name, a, x, names, options, layout, fd.warnings);
        } else {
            v = fit_discrete(learner, name, kind, a, x, names, options.weights, fd.warnings);
        }
        v.predictors = f;
        fd.vars.push_back(std::move(v));
        earlier.push_back(name);
    }
    return fd;
}

std::vector<std::vector<double>> bin_probabilities(const VariableDensity& v, const Frame& rows) {
    if (v.kind != VarKind::continuous) throw DataError("bin probabilities need a continuous variable");
    const Eigen::MatrixXd x = variable_design(v, rows);
    const std::size_t n = static_cast<std::size_t>(x.rows()), K = v.layout.n_total();
    std::vector<std::vector<double>> hz(K);
    for (std::size_t b = 0; b < K; ++b) {
        if (v.pooled && b < v.pooled_bin.size() && v.pooled_bin[b]) {
            Eigen::MatrixXd xb(x.rows(), x.cols() + 1);
            xb.leftCols(x.cols()) = x;
            xb.col(x.cols()).setConstant(static_cast<double>(b));
            hz[b] = predict_design(*v.pooled, xb, PredictType::response);
        } else {
            hz[b] = hazard_predict(v.hazards[b], x);
        }
    }
    std::vector<std::vector<double>> probs(n, std::vector<double>(K, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        double survive = 1.0;
        for (std::size_t b = 0; b < K; ++b) {
            const double h = b + 1 == K ? 1.0 : hz[b][i];
            probs[i][b] = survive * h;
            survive *= 1.0 - h;
        }
    }
    return probs;
}

std::vector<double> eval_density(const FittedDensity& fd, const Frame& rows, const Exposures& a, bool truncate) {
    if (a.size() != fd.vars.size()) {
        throw DataError("exposure dimension " + std::to_string(a.size()) + " does not match density dimension " +
                        std::to_string(fd.vars.size()));
    }
    const std::size_t n = rows.n_rows();
    // Later factors condition on earlier exposures, evaluated at `a`.
    Frame work = rows;
    for (std::size_t k = 0; k < fd.vars.size(); ++k) {
        if (a[k].size() != n) throw DataError("exposure column length does not match rows");
        work.set(fd.vars[k].name, a[k]);
    }
    std::vector<double> out(n, 1.0);
    for (std::size_t k = 0; k < fd.vars.size(); ++k) {
        const auto& v = fd.vars[k];
        if (v.kind == VarKind::continuous) {
            const auto probs = bin_probabilities(v, work);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t b = v.layout.bin_of(a[k][i]);
                out[i] *= probs[i][b] / v.layout.width(b);
            }
        } else {
            const auto p = factor_probability(v, variable_design(v, work), a[k]);
            for (std::size_t i = 0; i < n; ++i) out[i] *= p[i];
        }
    }
    if (truncate) {
        for (auto& d : out) d = std::max(d, fd.lbound);
    }
    return out;
}

FittedDensity marginalize_individual_g(const Frame& individual_rows, const std::vector<std::string>& anodes,
                                       const std::vector<Term>& rhs, const DensityFitOptions& options) {
    return fit_density(individual_rows, anodes, rhs, options);
}

}  // namespace tmlecom
