#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tmlecom/formula.hpp"
#include "tmlecom/frame.hpp"
#include "tmlecom/glm.hpp"

namespace tmlecom {

/// One vector per exposure column, in anode order.
using Exposures = std::vector<std::vector<double>>;

enum class VarKind { binary, categorical, continuous };
enum class BinMethod { equal_mass, equal_len, dhist };

std::string to_string(VarKind k);
std::string to_string(BinMethod m);
VarKind var_kind_from_string(const std::string& s);
BinMethod bin_method_from_string(const std::string& s);

struct BinningConfig {
    BinMethod method = BinMethod::equal_mass;
    std::optional<int> nbins;  // nullopt = rule-based (5 unless equal_mass needs more)
    int maxncats = 10;
    int max_n_per_bin = 500;
    bool pool_contin_var = false;

    void validate() const;
};

/// <= 2 distinct values is binary, <= maxncats categorical, otherwise continuous.
VarKind classify_variable(std::span<const double> values, int maxncats);

/// Finite cutoffs c_0 < ... < c_k. Bin 0 is (-inf, c_0), bins 1..k are
/// [c_{i-1}, c_i) with the last one closed, bin k+1 is (c_k, +inf).
struct BinLayout {
    std::vector<double> cutoffs;

    std::size_t n_interior() const { return cutoffs.empty() ? 0 : cutoffs.size() - 1; }
    std::size_t n_total() const { return n_interior() + 2; }
    std::size_t bin_of(double a) const;
    /// Edge bins borrow the width of the adjacent interior bin.
    double width(std::size_t bin) const;
    bool operator==(const BinLayout&) const = default;
};

BinLayout choose_bins(std::span<const double> values, const BinningConfig& cfg, std::size_t n_obs,
                      std::vector<std::string>* warnings = nullptr);

/// A bin or level hazard: either a fitted logit model or a fixed probability
/// (empty risk set, no events, or all events).
struct HazardModel {
    std::optional<GlmFit> fit;
    double constant = 0.0;
};

struct VariableDensity {
    std::string name;
    VarKind kind = VarKind::continuous;
    std::vector<double> levels;  // binary / categorical, ascending
    BinLayout layout;            // continuous only
    Formula predictors;          // outcome is `name`
    std::vector<HazardModel> hazards;
    std::optional<GlmFit> pooled;  // pooled continuous fit; hazards then hold only fixed bins
    std::vector<bool> pooled_bin;  // bins predicted by the pooled fit

    /// Number of bin models (continuous), or hazard models otherwise.
    std::size_t n_models() const;
};

struct FittedDensity {
    std::vector<VariableDensity> vars;
    double lbound = 0.005;
    BinningConfig config;
    std::vector<std::string> warnings;

    std::vector<std::string> anodes() const;
    /// Every column the density needs to evaluate, anodes excluded.
    std::vector<std::string> required_columns() const;
};

struct DensityFitOptions {
    BinningConfig config;
    double lbound = 0.005;
    std::span<const double> weights;                  // empty = unit weights
    const std::vector<BinLayout>* layouts = nullptr;  // reuse cutoffs per continuous variable
    const Learner* learner = nullptr;                 // defaults to the built-in GLM
};

/// Sequential factorization g(A1|W) g(A2|A1,W) ... in anode order. `rhs` holds
/// the covariate terms shared by all factors; earlier exposures are appended
/// as main terms for later factors.
FittedDensity fit_density(const Frame& data, const std::vector<std::string>& anodes,
                          const std::vector<Term>& rhs, const DensityFitOptions& options);

/// Conditional density (continuous) or probability (discrete) of `a` per row.
/// With `truncate` the joint value is floored at lbound.
std::vector<double> eval_density(const FittedDensity& fd, const Frame& rows, const Exposures& a,
                                 bool truncate = true);

/// Per-row probability of each bin for a continuous variable (testing aid).
std::vector<std::vector<double>> bin_probabilities(const VariableDensity& v, const Frame& rows);

/// Individual-level g: a pooled fit of the community exposure on (E, W_i)
/// across all individual rows, the empirical analogue of averaging g over
/// the other members' covariates.
FittedDensity marginalize_individual_g(const Frame& individual_rows,
                                       const std::vector<std::string>& anodes,
                                       const std::vector<Term>& rhs,
                                       const DensityFitOptions& options);

}  // namespace tmlecom
