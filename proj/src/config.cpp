#include "tmlecom/config.hpp"

#include <set>

#include "tmlecom/error.hpp"

namespace tmlecom {

namespace {

const std::set<std::string> kRunKeys = {
    "data",        "ynode",          "anodes",        "wenodes",      "community_id", "ynode_det",
    "community_step", "pooled_q",    "obs_wts",       "community_wts", "f_gstar1",    "f_gstar2",
    "f_g0",        "qform",          "hform_g0",      "hform_gstar",  "qbounds",      "alpha",
    "bin_method",  "nbins",          "maxncats",      "max_n_per_bin", "pool_contin_var",
    "savetime_fit_hbars", "lbound",  "target_step",   "n_mc_sims",    "ci_alpha",     "seed",
    "verbose",     "h_g0_model",     "h_gstar_model", "threads"};

void reject_unknown(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [k, v] : j.items()) {
        if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
    }
}

std::vector<std::string> names_of(const Json& j, const char* key) {
    if (j.is_string()) return {j.get<std::string>()};
    if (j.is_array()) return j.get<std::vector<std::string>>();
    throw ConfigError(std::string(key) + " must be a string or an array of strings");
}

Json names_json(const std::vector<std::string>& v) { return v.size() == 1 ? Json(v.front()) : Json(v); }

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    if (path.is_relative() && !base.empty()) path = base / path;
    return path.lexically_normal();
}

template <typename T>
T get(const Json& j, const char* key) {
    try {
        return j.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("bad value for '") + key + "': " + j.dump());
    }
}

}  // namespace

LinearPredictor linear_predictor_from_json(const Json& j) {
    LinearPredictor lp;
    if (j.is_number()) {
        lp.intercept = j.get<double>();
        return lp;
    }
    reject_unknown(j, {"intercept", "terms"}, "linear predictor");
    lp.intercept = j.value("intercept", 0.0);
    if (j.contains("terms")) {
        for (const auto& [name, coef] : j.at("terms").items()) {
            Term t;
            std::size_t start = 0;
            for (std::size_t i = 0; i <= name.size(); ++i) {
                if (i == name.size() || name[i] == ':' || name[i] == '*') {
                    t.factors.push_back(name.substr(start, i - start));
                    start = i + 1;
                }
            }
            lp.terms.push_back(t);
            lp.coefs.push_back(get<double>(coef, "terms"));
        }
    }
    return lp;
}

Json linear_predictor_to_json(const LinearPredictor& lp) {
    Json j;
    j["intercept"] = lp.intercept;
    Json terms = Json::object();
    for (std::size_t k = 0; k < lp.terms.size(); ++k) terms[lp.terms[k].name()] = lp.coefs[k];
    j["terms"] = terms;
    return j;
}

InterventionSpec intervention_from_json(const Json& j, const HierDataset* ds) {
    if (j.is_number()) return constant_intervention({j.get<double>()});
    if (j.is_array()) return constant_intervention(get<std::vector<double>>(j, "intervention"));
    if (!j.is_object()) throw ConfigError("intervention must be a number, array or object");
    const std::string type = get<std::string>(j.at("type"), "type");
    InterventionSpec s;
    if (type == "constant") {
        reject_unknown(j, {"type", "name", "value"}, "constant intervention");
        const auto& v = j.at("value");
        s = constant_intervention(v.is_array() ? get<std::vector<double>>(v, "value")
                                               : std::vector<double>{get<double>(v, "value")});
    } else if (type == "table") {
        reject_unknown(j, {"type", "name", "rows", "columns"}, "table intervention");
        std::vector<std::vector<double>> rows;
        if (j.contains("rows")) {
            rows = get<std::vector<std::vector<double>>>(j.at("rows"), "rows");
        } else if (j.contains("columns")) {
            if (!ds) throw ConfigError("table intervention with columns needs data");
            const auto cols = names_of(j.at("columns"), "columns");
            rows.assign(ds->n_obs(), std::vector<double>(cols.size()));
            for (std::size_t k = 0; k < cols.size(); ++k) {
                const auto c = ds->frame().col(cols[k]);
                for (std::size_t i = 0; i < c.size(); ++i) rows[i][k] = c[i];
            }
        } else {
            throw ConfigError("table intervention needs rows or columns");
        }
        s = table_intervention(std::move(rows));
    } else if (type == "shift_truncate") {
        reject_unknown(j, {"type", "name", "shift", "trunc_bound", "mean", "sd", "rate", "center", "community_level"},
                       "shift_truncate intervention");
        s = builtin_shift_truncate(get<double>(j.at("shift"), "shift"),
                                   j.contains("trunc_bound") ? get<double>(j.at("trunc_bound"), "trunc_bound") : 1e300,
                                   linear_predictor_from_json(j.at("mean")), j.value("community_level", false));
        s.shift_truncate.sd = j.value("sd", 1.0);
        s.shift_truncate.rate = j.value("rate", 0.5);
        s.shift_truncate.center = j.value("center", 0.5);
        if (!(s.shift_truncate.sd > 0.0)) throw ConfigError("shift_truncate sd must be positive");
    } else if (type == "bernoulli") {
        reject_unknown(j, {"type", "name", "logit", "community_level"}, "bernoulli intervention");
        s = builtin_bernoulli(linear_predictor_from_json(j.at("logit")), j.value("community_level", false));
    } else if (type == "observed_shift") {
        reject_unknown(j, {"type", "name", "shift"}, "observed_shift intervention");
        s.kind = InterventionKind::sampler;
        s.sampler = "observed_shift";
        s.name = "observed_shift";
        s.observed_shift.shift = get<double>(j.at("shift"), "shift");
    } else if (type == "observed") {
        reject_unknown(j, {"type", "name"}, "observed intervention");
        s = observed_intervention();
    } else {
        throw ConfigError("unknown intervention type '" + type + "'");
    }
    if (j.contains("name")) s.name = get<std::string>(j.at("name"), "name");
    return s;
}

Json intervention_to_json(const InterventionSpec& s) {
    Json j;
    switch (s.kind) {
        case InterventionKind::constant:
            j["type"] = "constant";
            j["name"] = s.name;
            j["value"] = s.constant;
            break;
        case InterventionKind::table:
            j["type"] = "table";
            j["name"] = s.name;
            j["rows"] = s.table;
            break;
        case InterventionKind::observed:
            j["type"] = "observed";
            j["name"] = s.name;
            break;
        case InterventionKind::sampler:
            j["type"] = s.sampler;
            j["name"] = s.name;
            if (s.sampler == "shift_truncate") {
                j["shift"] = s.shift_truncate.shift;
                j["trunc_bound"] = s.shift_truncate.trunc_bound;
                j["mean"] = linear_predictor_to_json(s.shift_truncate.mean);
                j["sd"] = s.shift_truncate.sd;
                j["rate"] = s.shift_truncate.rate;
                j["center"] = s.shift_truncate.center;
                j["community_level"] = s.community_level;
            } else if (s.sampler == "bernoulli") {
                j["logit"] = linear_predictor_to_json(s.bernoulli.logit);
                j["community_level"] = s.community_level;
            } else if (s.sampler == "observed_shift") {
                j["shift"] = s.observed_shift.shift;
            } else {
                throw ConfigError("callback interventions cannot be written to a config");
            }
            break;
    }
    return j;
}

RunConfig parse_run_config(const Json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    reject_unknown(j, kRunKeys, "config");
    RunConfig rc;
    if (j.contains("data")) rc.data = resolve(base_dir, get<std::string>(j.at("data"), "data"));
    auto& r = rc.roles;
    if (j.contains("ynode") && !j.at("ynode").is_null()) r.ynode = get<std::string>(j.at("ynode"), "ynode");
    if (!j.contains("anodes")) throw ConfigError("config needs anodes");
    if (!j.contains("wenodes")) throw ConfigError("config needs wenodes");
    r.anodes = names_of(j.at("anodes"), "anodes");
    r.wenodes = names_of(j.at("wenodes"), "wenodes");
    if (j.contains("community_id") && !j.at("community_id").is_null()) {
        r.community_id = get<std::string>(j.at("community_id"), "community_id");
    }
    if (j.contains("ynode_det") && !j.at("ynode_det").is_null()) {
        r.ynode_det = get<std::string>(j.at("ynode_det"), "ynode_det");
    }
    if (!r.ynode && j.contains("qform") && !j.at("qform").is_null()) {
        r.ynode = Formula::parse(get<std::string>(j.at("qform"), "qform")).outcome;
    }
    r.validate();

    auto& e = rc.est;
    if (j.contains("community_step")) e.step = strategy_from_string(get<std::string>(j.at("community_step"), "community_step"));
    e.pooled_q = j.value("pooled_q", false);
    if (j.contains("obs_wts")) {
        const auto& w = j.at("obs_wts");
        if (w.is_array()) {
            e.user_obs_weights = get<std::vector<double>>(w, "obs_wts");
            e.obs_policy = ObsWeightPolicy::user;
        } else {
            e.obs_policy = obs_policy_from_string(get<std::string>(w, "obs_wts"));
        }
    }
    if (j.contains("community_wts")) {
        const auto& w = j.at("community_wts");
        if (w.is_array()) {
            e.user_community_weights = get<std::vector<double>>(w, "community_wts");
            e.community_policy = CommunityWeightPolicy::user;
        } else {
            e.community_policy = community_policy_from_string(get<std::string>(w, "community_wts"));
        }
    }
    // f_gstar* with a `columns` table need the data; they are re-parsed in load_run_data.
    for (const char* key : {"f_gstar1", "f_gstar2", "f_g0"}) {
        if (!j.contains(key) || j.at(key).is_null()) continue;
        const auto& v = j.at(key);
        if (v.is_object() && v.contains("columns")) {
            rc.pending_interventions[key] = v;
            continue;
        }
        auto spec = intervention_from_json(v);
        if (std::string(key) == "f_gstar1") e.f_gstar1 = spec;
        else if (std::string(key) == "f_gstar2") e.f_gstar2 = spec;
        else e.f_g0 = spec;
    }
    for (const char* key : {"qform", "hform_g0", "hform_gstar"}) {
        if (!j.contains(key) || j.at(key).is_null()) continue;
        const auto text = get<std::string>(j.at(key), key);
        Formula::parse(text);
        if (std::string(key) == "qform") e.qform = text;
        else if (std::string(key) == "hform_g0") e.hform_g0 = text;
        else e.hform_gstar = text;
    }
    if (j.contains("qbounds") && !j.at("qbounds").is_null()) {
        const auto b = get<std::vector<double>>(j.at("qbounds"), "qbounds");
        if (b.size() != 2 || !(b[0] < b[1])) throw ConfigError("qbounds must be [lower, upper] with lower < upper");
        e.qbounds = std::make_pair(b[0], b[1]);
    }
    e.alpha = j.contains("alpha") ? get<double>(j.at("alpha"), "alpha") : 0.995;
    if (!(e.alpha > 0.5 && e.alpha < 1.0)) throw ConfigError("alpha must lie in (0.5, 1)");
    if (j.contains("bin_method")) e.binning.method = bin_method_from_string(get<std::string>(j.at("bin_method"), "bin_method"));
    if (j.contains("nbins") && !j.at("nbins").is_null()) e.binning.nbins = get<int>(j.at("nbins"), "nbins");
    if (j.contains("maxncats")) e.binning.maxncats = get<int>(j.at("maxncats"), "maxncats");
    if (j.contains("max_n_per_bin")) e.binning.max_n_per_bin = get<int>(j.at("max_n_per_bin"), "max_n_per_bin");
    e.binning.pool_contin_var = j.value("pool_contin_var", false);
    e.binning.validate();
    e.savetime_fit_hbars = j.value("savetime_fit_hbars", true);
    e.lbound = j.contains("lbound") ? get<double>(j.at("lbound"), "lbound") : 0.005;
    if (!(e.lbound > 0.0 && e.lbound < 1.0)) throw ConfigError("lbound must lie in (0,1)");
    if (j.contains("target_step")) e.method = target_method_from_string(get<std::string>(j.at("target_step"), "target_step"));
    e.mc.n_mc_sims = j.contains("n_mc_sims") ? get<int>(j.at("n_mc_sims"), "n_mc_sims") : 1;
    if (e.mc.n_mc_sims < 1) throw ConfigError("n_mc_sims must be >= 1");
    e.mc.seed = j.contains("seed") ? get<std::uint64_t>(j.at("seed"), "seed") : 1;
    e.ci_alpha = j.contains("ci_alpha") ? get<double>(j.at("ci_alpha"), "ci_alpha") : 0.05;
    if (!(e.ci_alpha > 0.0 && e.ci_alpha < 1.0)) throw ConfigError("ci_alpha must lie in (0,1)");
    rc.verbose = j.value("verbose", false);
    rc.threads = j.value("threads", 0);
    if (j.contains("h_g0_model") && !j.at("h_g0_model").is_null()) {
        rc.h_g0_model = resolve(base_dir, get<std::string>(j.at("h_g0_model"), "h_g0_model"));
    }
    if (j.contains("h_gstar_model") && !j.at("h_gstar_model").is_null()) {
        rc.h_gstar_model = resolve(base_dir, get<std::string>(j.at("h_gstar_model"), "h_gstar_model"));
    }
    return rc;
}

HierDataset load_run_data(RunConfig& rc) {
    if (rc.data.empty()) throw ConfigError("config needs a data path");
    HierDataset ds = load_csv(rc.data, rc.roles);
    for (const auto& [key, v] : rc.pending_interventions.items()) {
        auto spec = intervention_from_json(v, &ds);
        if (key == "f_gstar1") rc.est.f_gstar1 = spec;
        else if (key == "f_gstar2") rc.est.f_gstar2 = spec;
        else rc.est.f_g0 = spec;
    }
    rc.pending_interventions = Json::object();
    if (rc.h_g0_model) rc.est.g0_model = load_density(*rc.h_g0_model);
    if (rc.h_gstar_model) rc.est.gstar_model = load_density(*rc.h_gstar_model);
    return ds;
}

Json resolved_config(const RunConfig& rc) {
    const auto& e = rc.est;
    Json j;
    j["data"] = rc.data.string();
    j["ynode"] = rc.roles.ynode ? Json(*rc.roles.ynode) : Json(nullptr);
    j["anodes"] = names_json(rc.roles.anodes);
    j["wenodes"] = names_json(rc.roles.wenodes);
    j["community_id"] = rc.roles.community_id ? Json(*rc.roles.community_id) : Json(nullptr);
    j["ynode_det"] = rc.roles.ynode_det ? Json(*rc.roles.ynode_det) : Json(nullptr);
    j["community_step"] = to_string(e.step);
    j["pooled_q"] = e.pooled_q;
    j["obs_wts"] = e.user_obs_weights ? Json(*e.user_obs_weights) : Json(to_string(e.obs_policy));
    j["community_wts"] = e.user_community_weights ? Json(*e.user_community_weights) : Json(to_string(e.community_policy));
    j["f_gstar1"] = e.f_gstar1 ? intervention_to_json(*e.f_gstar1) : Json(nullptr);
    j["f_gstar2"] = e.f_gstar2 ? intervention_to_json(*e.f_gstar2) : Json(nullptr);
    j["f_g0"] = e.f_g0 ? intervention_to_json(*e.f_g0) : Json(nullptr);
    j["qform"] = e.qform ? Json(*e.qform) : Json(nullptr);
    j["hform_g0"] = e.hform_g0 ? Json(*e.hform_g0) : Json(nullptr);
    j["hform_gstar"] = e.hform_gstar ? Json(*e.hform_gstar) : Json(nullptr);
    j["qbounds"] = e.qbounds ? Json::array({e.qbounds->first, e.qbounds->second}) : Json(nullptr);
    j["alpha"] = e.alpha;
    j["bin_method"] = to_string(e.binning.method);
    j["nbins"] = e.binning.nbins ? Json(*e.binning.nbins) : Json(nullptr);
    j["maxncats"] = e.binning.maxncats;
    j["max_n_per_bin"] = e.binning.max_n_per_bin;
    j["pool_contin_var"] = e.binning.pool_contin_var;
    j["savetime_fit_hbars"] = e.savetime_fit_hbars;
    j["lbound"] = e.lbound;
    j["target_step"] = to_string(e.method);
    j["n_mc_sims"] = e.mc.n_mc_sims;
    j["ci_alpha"] = e.ci_alpha;
    j["seed"] = e.mc.seed;
    j["verbose"] = rc.verbose;
    j["h_g0_model"] = rc.h_g0_model ? Json(rc.h_g0_model->string()) : Json(nullptr);
    j["h_gstar_model"] = rc.h_gstar_model ? Json(rc.h_gstar_model->string()) : Json(nullptr);
    j["threads"] = rc.threads;
    return j;
}

}  // namespace tmlecom
