#include <benchmark/benchmark.h>

#include <vector>

#include "tmlecom/glm.hpp"
#include "tmlecom/rng.hpp"

using namespace tmlecom;

namespace {

struct Problem {
    Eigen::MatrixXd x;
    std::vector<double> w, z;
};

Problem make(std::size_t n, std::size_t p) {
    Rng rng(1, n, p);
    Problem pr;
    pr.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    pr.w.resize(n);
    pr.z.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        pr.x(static_cast<Eigen::Index>(i), 0) = 1.0;
        for (std::size_t k = 1; k < p; ++k) pr.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rng.normal();
        pr.w[i] = rng.uniform();
        pr.z[i] = rng.normal();
    }
    return pr;
}

void BM_crossprod_serial(benchmark::State& st) {
    const auto pr = make(static_cast<std::size_t>(st.range(0)), static_cast<std::size_t>(st.range(1)));
    Eigen::MatrixXd xtwx;
    Eigen::VectorXd xtwz;
    for (auto _ : st) {
        kernels::weighted_crossprod_serial(pr.x, pr.w, pr.z, xtwx, xtwz);
        benchmark::DoNotOptimize(xtwx.data());
    }
    st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_crossprod_parallel(benchmark::State& st) {
    const auto pr = make(static_cast<std::size_t>(st.range(0)), static_cast<std::size_t>(st.range(1)));
    Eigen::MatrixXd xtwx;
    Eigen::VectorXd xtwz;
    for (auto _ : st) {
        kernels::weighted_crossprod_parallel(pr.x, pr.w, pr.z, xtwx, xtwz);
        benchmark::DoNotOptimize(xtwx.data());
    }
    st.SetItemsProcessed(st.iterations() * st.range(0));
}

}  // namespace

BENCHMARK(BM_crossprod_serial)->ArgsProduct({{1000, 50000, 500000}, {4, 12}});
BENCHMARK(BM_crossprod_parallel)->ArgsProduct({{1000, 50000, 500000}, {4, 12}});

BENCHMARK_MAIN();
