#pragma once

#include <filesystem>
#include <optional>

#include "tmlecom/data_model.hpp"
#include "tmlecom/hierarchy.hpp"
#include "tmlecom/serialize.hpp"

namespace tmlecom {

/// One run of `estimate` or `density-fit`. Keys mirror the estimator's
/// argument names in snake_case; unknown keys are rejected.
struct RunConfig {
    std::filesystem::path data;
    NodeRoles roles;
    EstimationConfig est;
    std::optional<std::filesystem::path> h_g0_model;
    std::optional<std::filesystem::path> h_gstar_model;
    int threads = 0;
    bool verbose = false;
    Json pending_interventions = Json::object();  // tables read from data columns
};

/// Relative paths resolve against `base_dir`.
RunConfig parse_run_config(const Json& j, const std::filesystem::path& base_dir = {});
Json resolved_config(const RunConfig& rc);

InterventionSpec intervention_from_json(const Json& j, const HierDataset* ds = nullptr);
Json intervention_to_json(const InterventionSpec& s);

LinearPredictor linear_predictor_from_json(const Json& j);
Json linear_predictor_to_json(const LinearPredictor& lp);

/// Loads the data and any reused density models named in the config.
HierDataset load_run_data(RunConfig& rc);

}  // namespace tmlecom
