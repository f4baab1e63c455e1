#include "tmlecom/data_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "tmlecom/error.hpp"

namespace tmlecom {

namespace {

std::vector<std::string> bound_columns(const NodeRoles& r) {
    std::vector<std::string> out;
    if (r.ynode) out.push_back(*r.ynode);
    out.insert(out.end(), r.anodes.begin(), r.anodes.end());
    out.insert(out.end(), r.wenodes.begin(), r.wenodes.end());
    if (r.ynode_det) out.push_back(*r.ynode_det);
    return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    for (auto& s : out) {
        auto b = s.find_first_not_of(" \t");
        auto e = s.find_last_not_of(" \t");
        s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    }
    return out;
}

std::optional<double> parse_number(const std::string& s) {
    if (s.empty() || s == "NA" || s == "NaN" || s == "nan") return std::nan("");
    double v = 0.0;
    const char* first = s.data();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

std::string normalize_key(const std::string& raw) {
    auto v = parse_number(raw);
    if (v && std::isfinite(*v) && std::floor(*v) == *v && std::abs(*v) < 1e15) {
        return std::to_string(static_cast<long long>(*v));
    }
    return raw;
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void NodeRoles::validate() const {
    if (anodes.empty()) throw ConfigError("at least one exposure (anodes) must be bound");
    if (wenodes.empty()) throw ConfigError("at least one covariate (wenodes) must be bound");
    std::set<std::string> seen;
    auto add = [&](const std::string& c, const char* role) {
        if (!seen.insert(c).second) throw ConfigError("column '" + c + "' bound twice (" + role + ")");
    };
    if (ynode) add(*ynode, "ynode");
    for (const auto& a : anodes) add(a, "anodes");
    for (const auto& w : wenodes) add(w, "wenodes");
    if (community_id && seen.count(*community_id)) {
        throw ConfigError("community id column '" + *community_id + "' is also bound to another role");
    }
}

HierDataset::HierDataset(Frame frame, NodeRoles roles, std::vector<std::string> row_keys)
    : frame_(std::move(frame)), roles_(std::move(roles)), row_keys_(std::move(row_keys)) {
    roles_.validate();
    for (const auto& c : bound_columns(roles_)) {
        if (!frame_.has(c)) throw DataError("bound column '" + c + "' not found in data");
        const auto v = frame_.col(c);
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!std::isfinite(v[i])) {
                throw DataError("missing or non-finite value in column '" + c + "' at row " + std::to_string(i));
            }
        }
    }
    if (roles_.ynode_det) {
        for (double v : frame_.col(*roles_.ynode_det)) {
            if (v != 0.0 && v != 1.0) throw DataError("ynode_det column must contain only 0/1");
        }
    }
    const std::size_t n = frame_.n_rows();
    community_of_row_.resize(n);
    if (roles_.community_id) {
        if (row_keys_.size() != n) throw DataError("community keys do not cover every row");
        std::unordered_map<std::string, std::size_t> index;
        for (std::size_t i = 0; i < n; ++i) {
            auto [it, inserted] = index.emplace(row_keys_[i], communities_.size());
            if (inserted) communities_.push_back(Community{row_keys_[i], {}});
            communities_[it->second].rows.push_back(i);
            community_of_row_[i] = it->second;
        }
    } else {
        row_keys_.clear();
        communities_.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            communities_.push_back(Community{std::to_string(i + 1), {i}});
            community_of_row_[i] = i;
        }
    }
}

HierDataset HierDataset::community_subset(std::size_t j) const {
    const auto& rows = communities_.at(j).rows;
    NodeRoles r = roles_;
    r.community_id.reset();
    return HierDataset(frame_.take(rows), std::move(r));
}

HierDataset load_csv(const std::filesystem::path& path, const NodeRoles& roles) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open data file '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError("data file '" + path.string() + "' is empty");
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
    const auto header = split_csv_line(line);

    roles.validate();
    auto find_col = [&](const std::string& name) -> std::size_t {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw DataError("role column '" + name + "' missing from header");
        return static_cast<std::size_t>(it - header.begin());
    };
    std::set<std::size_t> bound;
    for (const auto& c : bound_columns(roles)) bound.insert(find_col(c));
    std::optional<std::size_t> id_col;
    if (roles.community_id) id_col = find_col(*roles.community_id);

    std::vector<std::vector<double>> cols(header.size());
    std::vector<bool> numeric(header.size(), true);
    std::vector<std::string> keys;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            throw DataError("row " + std::to_string(row + 1) + " has " + std::to_string(cells.size()) +
                            " fields, header has " + std::to_string(header.size()));
        }
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (id_col && c == *id_col) {
                keys.push_back(normalize_key(cells[c]));
                continue;
            }
            if (!numeric[c]) continue;
            auto v = parse_number(cells[c]);
            if (!v) {
                if (bound.count(c)) {
                    throw DataError("non-numeric value '" + cells[c] + "' in column '" + header[c] +
                                    "' at row " + std::to_string(row + 1));
                }
                numeric[c] = false;  // unbound text columns are dropped
                continue;
            }
            cols[c].push_back(*v);
        }
        ++row;
    }
    Frame frame(row);
    for (std::size_t c = 0; c < header.size(); ++c) {
        if ((id_col && c == *id_col) || !numeric[c]) continue;
        frame.set(header[c], std::move(cols[c]));
    }
    return HierDataset(std::move(frame), roles, std::move(keys));
}

void write_csv(const HierDataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    const auto& f = ds.frame();
    const auto& names = f.names();
    bool first = true;
    if (ds.roles().community_id) {
        out << *ds.roles().community_id;
        first = false;
    }
    for (const auto& n : names) {
        out << (first ? "" : ",") << n;
        first = false;
    }
    out << '\n';
    for (std::size_t i = 0; i < f.n_rows(); ++i) {
        first = true;
        if (ds.roles().community_id) {
            out << ds.row_keys()[i];
            first = false;
        }
        for (const auto& n : names) {
            out << (first ? "" : ",") << format_double(f.col(n)[i]);
            first = false;
        }
        out << '\n';
    }
}

std::string to_string(ObsWeightPolicy p) {
    switch (p) {
        case ObsWeightPolicy::equal_within_pop: return "equal_within_pop";
        case ObsWeightPolicy::equal_within_community: return "equal_within_community";
        case ObsWeightPolicy::user: return "user";
    }
    return "?";
}

std::string to_string(CommunityWeightPolicy p) {
    switch (p) {
        case CommunityWeightPolicy::size_community: return "size_community";
        case CommunityWeightPolicy::equal_community: return "equal_community";
        case CommunityWeightPolicy::user: return "user";
    }
    return "?";
}

ObsWeightPolicy obs_policy_from_string(const std::string& s) {
    if (s == "equal_within_pop" || s == "equal.within.pop") return ObsWeightPolicy::equal_within_pop;
    if (s == "equal_within_community" || s == "equal.within.community") return ObsWeightPolicy::equal_within_community;
    throw ConfigError("unknown obs weight policy '" + s + "'");
}

CommunityWeightPolicy community_policy_from_string(const std::string& s) {
    if (s == "size_community" || s == "size.community") return CommunityWeightPolicy::size_community;
    if (s == "equal_community" || s == "equal.community") return CommunityWeightPolicy::equal_community;
    throw ConfigError("unknown community weight policy '" + s + "'");
}

WeightScheme build_weights(const HierDataset& ds, ObsWeightPolicy obs_policy,
                           CommunityWeightPolicy community_policy,
                           const std::optional<std::vector<double>>& user_obs,
                           const std::optional<std::vector<double>>& user_comm) {
    const std::size_t n = ds.n_obs(), J = ds.n_communities();
    WeightScheme w;
    w.obs_policy = user_obs ? ObsWeightPolicy::user : obs_policy;
    w.community_policy = user_comm ? CommunityWeightPolicy::user : community_policy;

    if (user_obs) {
        if (user_obs->size() != n) throw ConfigError("user obs weights must have one entry per row");
        w.obs = *user_obs;
    } else if (w.obs_policy == ObsWeightPolicy::equal_within_community) {
        w.obs.resize(n);
        for (const auto& c : ds.communities()) {
            for (auto r : c.rows) w.obs[r] = 1.0 / static_cast<double>(c.rows.size());
        }
    } else if (w.obs_policy == ObsWeightPolicy::user) {
        throw ConfigError("obs weight policy 'user' requires a weight vector");
    } else {
        w.obs.assign(n, 1.0);
    }
    for (double v : w.obs) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("observation weights must be finite and nonnegative");
    }

    w.alpha.resize(n);
    for (const auto& c : ds.communities()) {
        double s = 0.0;
        for (auto r : c.rows) s += w.obs[r];
        if (!(s > 0.0)) throw ConfigError("community '" + c.key + "' has all-zero observation weights");
        for (auto r : c.rows) w.alpha[r] = w.obs[r] / s;
    }

    if (user_comm) {
        if (user_comm->size() != J) throw ConfigError("user community weights must have one entry per community");
        w.community = *user_comm;
    } else if (w.community_policy == CommunityWeightPolicy::equal_community) {
        w.community.assign(J, 1.0);
    } else if (w.community_policy == CommunityWeightPolicy::user) {
        throw ConfigError("community weight policy 'user' requires a weight vector");
    } else {
        std::vector<double> sizes(J);
        for (std::size_t j = 0; j < J; ++j) sizes[j] = static_cast<double>(ds.communities()[j].rows.size());
        double sd = 0.0;
        if (J > 1) {
            const double mean = std::accumulate(sizes.begin(), sizes.end(), 0.0) / static_cast<double>(J);
            double ss = 0.0;
            for (double s : sizes) ss += (s - mean) * (s - mean);
            sd = std::sqrt(ss / static_cast<double>(J - 1));
        }
        w.community = sizes;
        if (sd > 0.0) {
            for (auto& v : w.community) v /= sd;
        }
    }
    double total = 0.0;
    for (double v : w.community) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("community weights must be finite and nonnegative");
        total += v;
    }
    if (!(total > 0.0)) throw ConfigError("all community weights are zero");
    return w;
}

CommunityAggregate aggregate_to_community(const HierDataset& ds, const WeightScheme& w) {
    const auto& roles = ds.roles();
    const std::size_t J = ds.n_communities();
    CommunityAggregate agg;
    agg.frame = Frame(J);
    agg.weights = w.community;
    agg.keys.reserve(J);
    agg.sizes.reserve(J);
    for (const auto& c : ds.communities()) {
        agg.keys.push_back(c.key);
        agg.sizes.push_back(static_cast<double>(c.rows.size()));
    }

    for (const auto& a : roles.anodes) {
        const auto col = ds.frame().col(a);
        std::vector<double> v(J);
        for (std::size_t j = 0; j < J; ++j) {
            const auto& rows = ds.communities()[j].rows;
            v[j] = col[rows.front()];
            for (auto r : rows) {
                if (col[r] != v[j]) {
                    throw DataError("exposure '" + a + "' varies within community '" +
                                    ds.communities()[j].key + "'");
                }
            }
        }
        agg.frame.set(a, std::move(v));
    }
    auto weighted_mean = [&](const std::string& name) {
        const auto col = ds.frame().col(name);
        std::vector<double> v(J, 0.0);
        for (std::size_t j = 0; j < J; ++j) {
            for (auto r : ds.communities()[j].rows) v[j] += w.alpha[r] * col[r];
        }
        return v;
    };
    for (const auto& c : roles.wenodes) agg.frame.set(c, weighted_mean(c));
    if (roles.ynode) agg.frame.set(*roles.ynode, weighted_mean(*roles.ynode));
    if (roles.ynode_det) {
        const auto col = ds.frame().col(*roles.ynode_det);
        std::vector<double> v(J);
        for (std::size_t j = 0; j < J; ++j) {
            const auto& rows = ds.communities()[j].rows;
            v[j] = std::all_of(rows.begin(), rows.end(), [&](std::size_t r) { return col[r] == 1.0; }) ? 1.0 : 0.0;
        }
        agg.frame.set(*roles.ynode_det, std::move(v));
    }
    return agg;
}

}  // namespace tmlecom
