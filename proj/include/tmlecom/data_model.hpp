#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tmlecom/frame.hpp"

namespace tmlecom {

struct NodeRoles {
    std::optional<std::string> ynode;
    std::vector<std::string> anodes;
    std::vector<std::string> wenodes;
    std::optional<std::string> community_id;
    std::optional<std::string> ynode_det;

    /// Throws ConfigError on empty or overlapping role sets.
    void validate() const;
};

struct Community {
    std::string key;
    std::vector<std::size_t> rows;
};

/// Validated observation table. The community partition keeps first-appearance
/// order; without a community id every row is its own community.
class HierDataset {
public:
    /// `row_keys` holds the community key of every row, or is empty when no
    /// community id is bound.
    HierDataset(Frame frame, NodeRoles roles, std::vector<std::string> row_keys = {});

    const Frame& frame() const noexcept { return frame_; }
    const NodeRoles& roles() const noexcept { return roles_; }
    std::size_t n_obs() const noexcept { return frame_.n_rows(); }
    std::size_t n_communities() const noexcept { return communities_.size(); }
    const std::vector<Community>& communities() const noexcept { return communities_; }
    const std::vector<std::size_t>& community_of_row() const noexcept { return community_of_row_; }
    const std::vector<std::string>& row_keys() const noexcept { return row_keys_; }
    bool has_community_id() const noexcept { return roles_.community_id.has_value(); }

    /// Rows of one community as a standalone dataset without a community id.
    HierDataset community_subset(std::size_t j) const;

private:
    Frame frame_;
    NodeRoles roles_;
    std::vector<std::string> row_keys_;
    std::vector<Community> communities_;
    std::vector<std::size_t> community_of_row_;
};

HierDataset load_csv(const std::filesystem::path& path, const NodeRoles& roles);
void write_csv(const HierDataset& ds, const std::filesystem::path& path);

enum class ObsWeightPolicy { equal_within_pop, equal_within_community, user };
enum class CommunityWeightPolicy { size_community, equal_community, user };

std::string to_string(ObsWeightPolicy p);
std::string to_string(CommunityWeightPolicy p);
ObsWeightPolicy obs_policy_from_string(const std::string& s);
CommunityWeightPolicy community_policy_from_string(const std::string& s);

struct WeightScheme {
    std::vector<double> obs;        // per row, as resolved from the policy
    std::vector<double> alpha;      // per row, renormalized to sum to 1 within community
    std::vector<double> community;  // per community
    ObsWeightPolicy obs_policy = ObsWeightPolicy::equal_within_pop;
    CommunityWeightPolicy community_policy = CommunityWeightPolicy::size_community;
};

WeightScheme build_weights(const HierDataset& ds, ObsWeightPolicy obs_policy,
                           CommunityWeightPolicy community_policy,
                           const std::optional<std::vector<double>>& user_obs = std::nullopt,
                           const std::optional<std::vector<double>>& user_comm = std::nullopt);

struct CommunityAggregate {
    Frame frame;                    // one row per community
    std::vector<std::string> keys;  // community keys in dataset order
    std::vector<double> sizes;      // N_j
    std::vector<double> weights;    // community weights
};

/// Collapses rows to communities: covariates and outcome become alpha-weighted
/// means, exposures are copied and must be constant within community. A
/// community counts as deterministic only when all its rows are.
CommunityAggregate aggregate_to_community(const HierDataset& ds, const WeightScheme& w);

}  // namespace tmlecom
