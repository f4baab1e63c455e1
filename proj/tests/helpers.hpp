#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tmlecom/data_model.hpp"
#include "tmlecom/glm.hpp"
#include "tmlecom/rng.hpp"

namespace testutil {

using namespace tmlecom;

inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("tmlecom_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

// Binary A, binary W1/W2, Y depends on all three.
inline HierDataset binary_dataset(std::size_t n, std::uint64_t seed, bool continuous_y = false) {
    Rng rng(seed, 11);
    std::vector<double> w1(n), w2(n), a(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
        w1[i] = rng.bernoulli(0.5);
        w2[i] = rng.bernoulli(0.4);
        a[i] = rng.bernoulli(expit(-0.3 + 0.8 * w1[i] - 0.5 * w2[i]));
        const double lp = -0.5 + 0.9 * a[i] + 0.7 * w1[i] - 0.4 * w2[i];
        y[i] = continuous_y ? 2.0 + lp + rng.normal() : rng.bernoulli(expit(lp));
    }
    Frame f;
    f.set("W1", w1);
    f.set("W2", w2);
    f.set("A", a);
    f.set("Y", y);
    NodeRoles r;
    r.ynode = "Y";
    r.anodes = {"A"};
    r.wenodes = {"W1", "W2"};
    return HierDataset(std::move(f), r);
}

// Continuous A ~ N(0.5 W1 + W2, 1), Y linear.
inline HierDataset continuous_dataset(std::size_t n, std::uint64_t seed) {
    Rng rng(seed, 12);
    std::vector<double> w1(n), w2(n), a(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
        w1[i] = rng.bernoulli(0.5);
        w2[i] = rng.uniform();
        a[i] = rng.normal(0.5 * w1[i] + w2[i], 1.0);
        y[i] = 1.0 + 0.3 * a[i] - 0.4 * w1[i] + 0.6 * w2[i] + rng.normal(0.0, 0.5);
    }
    Frame f;
    f.set("W1", w1);
    f.set("W2", w2);
    f.set("A", a);
    f.set("Y", y);
    NodeRoles r;
    r.ynode = "Y";
    r.anodes = {"A"};
    r.wenodes = {"W1", "W2"};
    return HierDataset(std::move(f), r);
}

// J communities of varying size; community-level binary A, individual W, Y.
inline HierDataset community_dataset(std::size_t J, std::uint64_t seed) {
    Rng rng(seed, 13);
    std::vector<double> id, e1, w1, a, y;
    std::vector<std::string> keys;
    for (std::size_t j = 0; j < J; ++j) {
        const std::size_t n = 3 + static_cast<std::size_t>(rng.uniform() * 6.0);
        const double e = rng.normal();
        std::vector<double> ws(n);
        double mean = 0.0;
        for (auto& w : ws) {
            w = rng.normal(0.3 * e, 1.0);
            mean += w / static_cast<double>(n);
        }
        const double aj = rng.bernoulli(expit(0.4 * e + 0.5 * mean));
        for (std::size_t i = 0; i < n; ++i) {
            id.push_back(static_cast<double>(j));
            e1.push_back(e);
            w1.push_back(ws[i]);
            a.push_back(aj);
            y.push_back(rng.bernoulli(expit(-0.2 + 0.8 * aj + 0.3 * e + 0.5 * ws[i])));
            keys.push_back("c" + std::to_string(j));
        }
    }
    Frame f;
    f.set("id", id);
    f.set("E1", e1);
    f.set("W1", w1);
    f.set("A", a);
    f.set("Y", y);
    NodeRoles r;
    r.ynode = "Y";
    r.anodes = {"A"};
    r.wenodes = {"E1", "W1"};
    r.community_id = "id";
    return HierDataset(std::move(f), r, keys);
}

// Root of f on [lo, hi] by bisection; f(lo) and f(hi) must differ in sign.
inline double bisect(const std::function<double(double)>& f, double lo, double hi, int iters = 200) {
    double flo = f(lo);
    for (int k = 0; k < iters; ++k) {
        const double mid = 0.5 * (lo + hi);
        const double fm = f(mid);
        if ((fm < 0) == (flo < 0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

}  // namespace testutil
