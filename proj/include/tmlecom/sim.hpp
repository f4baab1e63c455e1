#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tmlecom/data_model.hpp"
#include "tmlecom/hierarchy.hpp"
#include "tmlecom/serialize.hpp"

namespace tmlecom::sim {

/// sim1: community-level continuous A under a truncated shift.
/// sim2: community-level binary A, static 1 vs 0.
/// sim3: one observation per unit, truncated shift.
/// ate_example: binary A, static ATE with truth 2.80.
/// shift_example: continuous A with an interaction in g, truncated shift.
enum class Study { sim1, sim2, sim3, ate_example, shift_example };

std::string to_string(Study s);
Study study_from_string(const std::string& s);

struct DgpSpec {
    Study study = Study::sim3;
    std::size_t J = 1000;  // communities, or rows for the N = 1 designs
    double n_mean = 50.0;
    double n_sd = 10.0;
    bool working_model = true;
    double shift = 2.0;
    double trunc_bound = 10.0;
    std::uint64_t seed = 1;

    /// Defaults for each study (shift / bound / sizes).
    static DgpSpec defaults(Study s);
};

HierDataset generate(const DgpSpec& dgp, std::size_t rep);

/// The g* the study targets, as an intervention on the analysis data.
InterventionSpec study_intervention(const DgpSpec& dgp);

struct Truth {
    double value = 0.0;
    double se = 0.0;
    std::size_t draws = 0;
};

/// Monte-Carlo truth from counterfactual expected outcomes over n_large
/// units (communities for the hierarchical designs).
Truth calibrate_truth(const DgpSpec& dgp, std::size_t n_large, std::uint64_t seed = 7);

/// Closed form for the designs with a linear outcome; NaN otherwise.
double analytic_truth(const DgpSpec& dgp);

enum class Estimator { tmle, iptw, gcomp };

struct Output {
    std::string label;
    Estimator estimator = Estimator::tmle;
};

/// One call to hierarchy::run; its outputs name the estimators to track.
struct Analysis {
    std::string name;
    EstimationConfig cfg;
    std::vector<Output> outputs;
    bool use_ate = false;
    bool max_n_per_bin_is_n = false;  // set max_n_per_bin to the row count of each replicate
};

std::vector<Analysis> default_battery(const DgpSpec& dgp);

struct RepRecord {
    std::size_t rep = 0;
    std::string label;
    bool ok = false;
    double estimate = 0.0;
    double se = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    bool covered = false;
};

struct MetricsRow {
    std::string label;
    std::size_t n_ok = 0;
    std::size_t n_failed = 0;
    double mean = 0.0;
    double bias = 0.0;
    double sd = 0.0;  // population sd of the estimates
    double mean_se = 0.0;
    double rmse = 0.0;
    double coverage = 0.0;
};

struct MetricsTable {
    std::string study;
    double truth = 0.0;
    std::size_t reps = 0;
    std::vector<MetricsRow> rows;

    const MetricsRow& row(const std::string& label) const;
    /// Aligned text; `scale` multiplies bias / se / rmse / estimates (100 for percentages).
    std::string text(double scale = 1.0) const;
    Json json() const;
};

struct StudyResult {
    MetricsTable table;
    std::vector<RepRecord> reps;
    std::vector<std::string> failures;

    std::string reps_csv() const;
};

MetricsTable summarize(const std::string& study, double truth, std::size_t R, const std::vector<Analysis>& battery,
                       const std::vector<RepRecord>& reps);

/// Replications run in parallel with per-replicate seeds derived from dgp.seed.
StudyResult run_study(const DgpSpec& dgp, const std::vector<Analysis>& battery, std::size_t R, double truth,
                      bool parallel = true);

}  // namespace tmlecom::sim
