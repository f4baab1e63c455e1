#pragma once

#include <filesystem>

#include "json.hpp"

#include "tmlecom/exposure_density.hpp"
#include "tmlecom/glm.hpp"
#include "tmlecom/hierarchy.hpp"
#include "tmlecom/tmle.hpp"

namespace tmlecom {

using Json = nlohmann::ordered_json;

inline constexpr int kDensityFormatVersion = 1;
inline constexpr int kReportFormatVersion = 1;

Json glm_to_json(const GlmFit& fit);
GlmFit glm_from_json(const Json& j);

Json density_to_json(const FittedDensity& fd);
/// Throws DataError on an unknown format or version.
FittedDensity density_from_json(const Json& j);

void save_density(const FittedDensity& fd, const std::filesystem::path& path);
FittedDensity load_density(const std::filesystem::path& path);

Json result_to_json(const InterventionResult& r, bool include_ic = true);
Json report_to_json(const EstimationReport& rep, bool include_ic = true);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const Json& j, const std::filesystem::path& path);

}  // namespace tmlecom
