#include "tmlecom/interventions.hpp"

#include <cmath>

#include "tmlecom/error.hpp"
#include "tmlecom/glm.hpp"

namespace tmlecom {

double LinearPredictor::eval(const Frame& rows, std::size_t i) const {
    double lp = intercept;
    for (std::size_t k = 0; k < terms.size(); ++k) {
        double v = coefs[k];
        for (const auto& f : terms[k].factors) v *= rows.col(f)[i];
        lp += v;
    }
    return lp;
}

std::vector<std::string> LinearPredictor::columns() const {
    Formula f;
    f.terms = terms;
    return f.columns();
}

bool InterventionSpec::deterministic() const {
    switch (kind) {
        case InterventionKind::constant:
        case InterventionKind::table:
        case InterventionKind::observed: return true;
        case InterventionKind::sampler: return sampler == "observed_shift";
    }
    return false;
}

InterventionSpec constant_intervention(std::vector<double> values, std::string name) {
    InterventionSpec s;
    s.kind = InterventionKind::constant;
    s.constant = std::move(values);
    s.name = name.empty() ? "constant" : std::move(name);
    return s;
}

InterventionSpec table_intervention(std::vector<std::vector<double>> table, std::string name) {
    InterventionSpec s;
    s.kind = InterventionKind::table;
    s.table = std::move(table);
    s.name = name.empty() ? "table" : std::move(name);
    return s;
}

InterventionSpec observed_intervention() {
    InterventionSpec s;
    s.kind = InterventionKind::observed;
    s.name = "observed";
    return s;
}

InterventionSpec builtin_shift_truncate(double shift, double trunc_bound, LinearPredictor mean, bool community_level) {
    if (!(trunc_bound > 0.0)) throw ConfigError("trunc_bound must be positive");
    InterventionSpec s;
    s.kind = InterventionKind::sampler;
    s.sampler = "shift_truncate";
    s.name = "shift_truncate";
    s.shift_truncate.shift = shift;
    s.shift_truncate.trunc_bound = trunc_bound;
    s.shift_truncate.mean = std::move(mean);
    s.community_level = community_level;
    return s;
}

InterventionSpec builtin_bernoulli(LinearPredictor logit, bool community_level) {
    InterventionSpec s;
    s.kind = InterventionKind::sampler;
    s.sampler = "bernoulli";
    s.name = "bernoulli";
    s.bernoulli.logit = std::move(logit);
    s.community_level = community_level;
    return s;
}

InterventionSpec callback_intervention(SamplerCallback fn, std::string name, bool community_level) {
    InterventionSpec s;
    s.kind = InterventionKind::sampler;
    s.sampler = "callback";
    s.callback = std::move(fn);
    s.name = std::move(name);
    s.community_level = community_level;
    return s;
}

namespace {

double draw_shift_truncate(const ShiftTruncate& st, double mu, Rng& rng) {
    const double u = rng.normal(mu + st.shift, st.sd);
    const double ratio = std::exp(st.rate * st.shift * (u - mu - st.center * st.shift));
    return ratio > st.trunc_bound ? u - st.shift : u;
}

Exposures fixed_exposures(const InterventionSpec& spec, const Frame& rows, const std::vector<std::string>& anodes) {
    const std::size_t n = rows.n_rows(), p = anodes.size();
    Exposures out(p, std::vector<double>(n));
    switch (spec.kind) {
        case InterventionKind::constant:
            if (spec.constant.size() != p) {
                throw ConfigError("constant intervention has " + std::to_string(spec.constant.size()) +
                                  " values for " + std::to_string(p) + " exposures");
            }
            for (std::size_t k = 0; k < p; ++k) out[k].assign(n, spec.constant[k]);
            break;
        case InterventionKind::table: {
            if (spec.table.size() != 1 && spec.table.size() != n) {
                throw DataError("intervention table has " + std::to_string(spec.table.size()) +
                                " rows, expected 1 or " + std::to_string(n));
            }
            for (std::size_t i = 0; i < n; ++i) {
                const auto& row = spec.table.size() == 1 ? spec.table[0] : spec.table[i];
                if (row.size() != p) throw DataError("intervention table row width does not match exposures");
                for (std::size_t k = 0; k < p; ++k) out[k][i] = row[k];
            }
            break;
        }
        case InterventionKind::observed:
            for (std::size_t k = 0; k < p; ++k) {
                const auto c = rows.col(anodes[k]);
                out[k].assign(c.begin(), c.end());
            }
            break;
        case InterventionKind::sampler: {
            if (spec.sampler != "observed_shift") throw ConfigError("not a fixed intervention");
            for (std::size_t k = 0; k < p; ++k) {
                const auto c = rows.col(anodes[k]);
                for (std::size_t i = 0; i < n; ++i) out[k][i] = c[i] + spec.observed_shift.shift;
            }
            break;
        }
    }
    return out;
}

}  // namespace

std::vector<Exposures> sample_gstar(const InterventionSpec& spec, const Frame& rows,
                                    const std::vector<std::string>& anodes, const McConfig& mc) {
    if (mc.n_mc_sims < 1) throw ConfigError("n_mc_sims must be >= 1");
    const auto sims = static_cast<std::size_t>(mc.n_mc_sims);
    if (spec.deterministic()) return std::vector<Exposures>(sims, fixed_exposures(spec, rows, anodes));

    const std::size_t n = rows.n_rows(), p = anodes.size();
    if ((spec.sampler == "shift_truncate" || spec.sampler == "bernoulli") && p != 1) {
        throw ConfigError("sampler '" + spec.sampler + "' handles a single exposure");
    }
    if (spec.sampler == "callback" && !spec.callback) throw ConfigError("callback intervention without a callback");
    if (spec.sampler != "shift_truncate" && spec.sampler != "bernoulli" && spec.sampler != "callback") {
        throw ConfigError("unknown sampler '" + spec.sampler + "'");
    }
    std::vector<Exposures> out(sims, Exposures(p, std::vector<double>(n)));
    for (std::size_t s = 0; s < sims; ++s) {
        for (std::size_t i = 0; i < n; ++i) {
            Rng rng(mc.seed, s, i, 0x67737461ULL);
            if (spec.sampler == "shift_truncate") {
                const double mu = spec.shift_truncate.mean.eval(rows, i);
                out[s][0][i] = draw_shift_truncate(spec.shift_truncate, mu, rng);
            } else if (spec.sampler == "bernoulli") {
                out[s][0][i] = rng.bernoulli(expit(spec.bernoulli.logit.eval(rows, i))) ? 1.0 : 0.0;
            } else {
                const auto v = spec.callback(rows, i, rng);
                if (v.size() != p) throw DataError("sampler callback returned wrong exposure count");
                for (std::size_t k = 0; k < p; ++k) out[s][k][i] = v[k];
            }
        }
    }
    return out;
}

std::vector<Exposures> broadcast(const std::vector<Exposures>& unit_samples, const std::vector<std::size_t>& unit_of_row) {
    std::vector<Exposures> out;
    out.reserve(unit_samples.size());
    for (const auto& sim : unit_samples) {
        Exposures e(sim.size(), std::vector<double>(unit_of_row.size()));
        for (std::size_t k = 0; k < sim.size(); ++k) {
            for (std::size_t r = 0; r < unit_of_row.size(); ++r) e[k][r] = sim[k][unit_of_row[r]];
        }
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace tmlecom
