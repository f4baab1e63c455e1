#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tmlecom/data_model.hpp"
#include "tmlecom/exposure_density.hpp"
#include "tmlecom/glm.hpp"
#include "tmlecom/interventions.hpp"
#include "tmlecom/tmle.hpp"

namespace tmlecom {

enum class Strategy { no_community, community_level, individual_level, per_community };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

struct EstimationConfig {
    Strategy step = Strategy::no_community;
    bool pooled_q = false;
    ObsWeightPolicy obs_policy = ObsWeightPolicy::equal_within_pop;
    CommunityWeightPolicy community_policy = CommunityWeightPolicy::size_community;
    std::optional<std::vector<double>> user_obs_weights;
    std::optional<std::vector<double>> user_community_weights;

    std::optional<InterventionSpec> f_gstar1;
    std::optional<InterventionSpec> f_gstar2;
    std::optional<InterventionSpec> f_g0;

    std::optional<std::string> qform;
    std::optional<std::string> hform_g0;
    std::optional<std::string> hform_gstar;
    std::optional<std::pair<double, double>> qbounds;
    double alpha = 0.995;

    BinningConfig binning;
    double lbound = 0.005;
    TargetMethod method = TargetMethod::tmle_intercept;
    McConfig mc;
    double ci_alpha = 0.05;
    bool savetime_fit_hbars = true;

    std::optional<FittedDensity> g0_model;     // reuse instead of fitting
    std::optional<FittedDensity> gstar_model;  // reuse for f_gstar1
    const Learner* learner = nullptr;
};

struct EstimationReport {
    Strategy strategy = Strategy::no_community;
    bool pooled_q = false;
    std::size_t n_obs = 0;
    std::size_t n_units = 0;
    OutcomeScale scale;
    InterventionResult gstar1;
    std::optional<InterventionResult> gstar2;
    std::optional<InterventionResult> ate;
    std::optional<GlmFit> q_model;
    std::optional<FittedDensity> g0_model;
    std::optional<FittedDensity> gstar1_model;
    std::optional<FittedDensity> gstar2_model;
    std::vector<std::string> warnings;
    // per_community only
    std::vector<std::string> community_keys;
    std::vector<EstimationReport> per_community;
};

/// Effective strategy: anything but no_community needs a community id.
Strategy resolve_strategy(const HierDataset& ds, Strategy requested);

EstimationReport run(const HierDataset& ds, const EstimationConfig& cfg);

/// Standalone exposure-density fit on the rows the strategy would use.
FittedDensity fit_exposure_density(const HierDataset& ds, const EstimationConfig& cfg);

}  // namespace tmlecom
