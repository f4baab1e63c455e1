#include "tmlecom/serialize.hpp"

#include <cmath>
#include <fstream>

#include "tmlecom/error.hpp"

namespace tmlecom {

namespace {

const char* const kDensityFormat = "tmlecom.fitted_density";

Json finite_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double number_or_nan(const Json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

Json binning_to_json(const BinningConfig& c) {
    Json j;
    j["bin_method"] = to_string(c.method);
    j["nbins"] = c.nbins ? Json(*c.nbins) : Json(nullptr);
    j["maxncats"] = c.maxncats;
    j["max_n_per_bin"] = c.max_n_per_bin;
    j["pool_contin_var"] = c.pool_contin_var;
    return j;
}

BinningConfig binning_from_json(const Json& j) {
    BinningConfig c;
    c.method = bin_method_from_string(j.at("bin_method").get<std::string>());
    if (!j.at("nbins").is_null()) c.nbins = j.at("nbins").get<int>();
    c.maxncats = j.at("maxncats").get<int>();
    c.max_n_per_bin = j.at("max_n_per_bin").get<int>();
    c.pool_contin_var = j.at("pool_contin_var").get<bool>();
    return c;
}

Json interval_json(const Interval& i) { return Json::array({finite_or_null(i.lo), finite_or_null(i.hi)}); }

Json triple_json(const EstimatorTriple& t) {
    Json j;
    j["tmle"] = finite_or_null(t.tmle);
    j["iptw"] = finite_or_null(t.iptw);
    j["gcomp"] = finite_or_null(t.gcomp);
    return j;
}

}  // namespace

Json glm_to_json(const GlmFit& fit) {
    Json j;
    j["family"] = to_string(fit.family);
    j["formula"] = fit.formula.outcome.empty() ? Json(nullptr) : Json(fit.formula.str());
    j["names"] = fit.names;
    j["coefficients"] = fit.coefficients;
    std::vector<bool> aliased = fit.aliased;
    j["aliased"] = aliased;
    j["converged"] = fit.converged;
    j["separation"] = fit.separation;
    j["iterations"] = fit.iterations;
    j["dispersion"] = finite_or_null(fit.dispersion);
    j["deviance"] = finite_or_null(fit.deviance);
    return j;
}

GlmFit glm_from_json(const Json& j) {
    GlmFit fit;
    fit.family = family_from_string(j.at("family").get<std::string>());
    if (!j.at("formula").is_null()) fit.formula = Formula::parse(j.at("formula").get<std::string>());
    fit.names = j.at("names").get<std::vector<std::string>>();
    fit.coefficients = j.at("coefficients").get<std::vector<double>>();
    fit.aliased = j.at("aliased").get<std::vector<bool>>();
    fit.converged = j.at("converged").get<bool>();
    fit.separation = j.at("separation").get<bool>();
    fit.iterations = j.at("iterations").get<int>();
    fit.dispersion = number_or_nan(j.at("dispersion"));
    fit.deviance = number_or_nan(j.at("deviance"));
    if (fit.names.size() != fit.coefficients.size() || fit.aliased.size() != fit.coefficients.size()) {
        throw DataError("GLM record has inconsistent lengths");
    }
    return fit;
}

Json density_to_json(const FittedDensity& fd) {
    Json j;
    j["format"] = kDensityFormat;
    j["version"] = kDensityFormatVersion;
    j["lbound"] = fd.lbound;
    j["config"] = binning_to_json(fd.config);
    Json vars = Json::array();
    for (const auto& v : fd.vars) {
        Json jv;
        jv["name"] = v.name;
        jv["kind"] = to_string(v.kind);
        jv["predictors"] = v.predictors.str();
        jv["levels"] = v.levels;
        jv["cutoffs"] = v.layout.cutoffs;
        jv["n_models"] = v.n_models();
        Json hz = Json::array();
        for (const auto& h : v.hazards) {
            Json jh;
            if (h.fit) {
                jh["glm"] = glm_to_json(*h.fit);
            } else {
                jh["constant"] = h.constant;
            }
            hz.push_back(jh);
        }
        jv["hazards"] = hz;
        jv["pooled"] = v.pooled ? glm_to_json(*v.pooled) : Json(nullptr);
        std::vector<bool> pb = v.pooled_bin;
        jv["pooled_bins"] = pb;
        vars.push_back(jv);
    }
    j["variables"] = vars;
    j["warnings"] = fd.warnings;
    return j;
}

FittedDensity density_from_json(const Json& j) {
    if (!j.is_object() || j.value("format", "") != kDensityFormat) throw DataError("not a fitted density document");
    if (j.at("version").get<int>() != kDensityFormatVersion) {
        throw DataError("unsupported fitted density version " + j.at("version").dump());
    }
    FittedDensity fd;
    fd.lbound = j.at("lbound").get<double>();
    fd.config = binning_from_json(j.at("config"));
    for (const auto& jv : j.at("variables")) {
        VariableDensity v;
        v.name = jv.at("name").get<std::string>();
        v.kind = var_kind_from_string(jv.at("kind").get<std::string>());
        v.predictors = Formula::parse(jv.at("predictors").get<std::string>());
        v.levels = jv.at("levels").get<std::vector<double>>();
        v.layout.cutoffs = jv.at("cutoffs").get<std::vector<double>>();
        for (const auto& jh : jv.at("hazards")) {
            HazardModel h;
            if (jh.contains("glm")) {
                h.fit = glm_from_json(jh.at("glm"));
            } else {
                h.constant = jh.at("constant").get<double>();
            }
            v.hazards.push_back(std::move(h));
        }
        if (!jv.at("pooled").is_null()) v.pooled = glm_from_json(jv.at("pooled"));
        v.pooled_bin = jv.at("pooled_bins").get<std::vector<bool>>();
        if (v.kind == VarKind::continuous && v.hazards.size() != v.layout.n_total()) {
            throw DataError("fitted density '" + v.name + "' has a hazard count that does not match its cutoffs");
        }
        fd.vars.push_back(std::move(v));
    }
    fd.warnings = j.at("warnings").get<std::vector<std::string>>();
    return fd;
}

Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path.string() + "'");
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("invalid JSON in '" + path.string() + "': " + e.what());
    }
}

void write_json_file(const Json& j, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

void save_density(const FittedDensity& fd, const std::filesystem::path& path) {
    write_json_file(density_to_json(fd), path);
}

FittedDensity load_density(const std::filesystem::path& path) {
    try {
        return density_from_json(read_json_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed fitted density '" + path.string() + "': " + e.what());
    }
}

Json result_to_json(const InterventionResult& r, bool include_ic) {
    Json j;
    j["name"] = r.name;
    j["estimates"] = triple_json(r.estimate);
    j["vars"] = triple_json(r.variance);
    Json ci;
    ci["tmle"] = interval_json(r.ci_tmle);
    ci["iptw"] = interval_json(r.ci_iptw);
    ci["gcomp"] = interval_json(r.ci_gcomp);
    j["cis"] = ci;
    j["epsilon"] = finite_or_null(r.epsilon);
    j["epsilon_converged"] = r.epsilon_converged;
    Json d;
    d["h_min"] = r.diagnostics.h_min;
    d["h_max"] = r.diagnostics.h_max;
    d["h_mean"] = r.diagnostics.h_mean;
    d["truncated_fraction"] = r.diagnostics.truncated_fraction;
    d["bins_used"] = r.diagnostics.bins_used;
    d["n_units"] = r.diagnostics.n_units;
    j["diagnostics"] = d;
    if (include_ic && !r.ic_units.empty()) {
        Json ic;
        ic["units"] = r.ic_units;
        ic["tmle"] = r.ic_tmle;
        ic["iptw"] = r.ic_iptw;
        ic["gcomp"] = r.ic_gcomp;
        j["ic"] = ic;
    }
    return j;
}

Json report_to_json(const EstimationReport& rep, bool include_ic) {
    Json j;
    j["version"] = kReportFormatVersion;
    j["strategy"] = to_string(rep.strategy);
    j["pooled_q"] = rep.pooled_q;
    j["n_obs"] = rep.n_obs;
    j["n_units"] = rep.n_units;
    j["qbounds"] = Json::array({rep.scale.a, rep.scale.b});
    j["gstar1"] = result_to_json(rep.gstar1, include_ic);
    j["gstar2"] = rep.gstar2 ? result_to_json(*rep.gstar2, include_ic) : Json(nullptr);
    j["ate"] = rep.ate ? result_to_json(*rep.ate, include_ic) : Json(nullptr);
    Json models;
    models["q"] = rep.q_model ? glm_to_json(*rep.q_model) : Json(nullptr);
    models["h_g0_model"] = rep.g0_model ? density_to_json(*rep.g0_model) : Json(nullptr);
    models["h_gstar1_model"] = rep.gstar1_model ? density_to_json(*rep.gstar1_model) : Json(nullptr);
    models["h_gstar2_model"] = rep.gstar2_model ? density_to_json(*rep.gstar2_model) : Json(nullptr);
    j["models"] = models;
    j["warnings"] = rep.warnings;
    if (rep.strategy == Strategy::per_community) {
        Json parts = Json::array();
        for (std::size_t k = 0; k < rep.per_community.size(); ++k) {
            Json p = report_to_json(rep.per_community[k], include_ic);
            p["community"] = rep.community_keys[k];
            parts.push_back(p);
        }
        j["per_community"] = parts;
    }
    return j;
}

}  // namespace tmlecom
