#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tmlecom/exposure_density.hpp"
#include "tmlecom/frame.hpp"
#include "tmlecom/glm.hpp"
#include "tmlecom/interventions.hpp"

namespace tmlecom {

enum class TargetMethod { tmle_intercept, tmle_covariate };

std::string to_string(TargetMethod m);
TargetMethod target_method_from_string(const std::string& s);

/// Linear map Y in [a,b] -> Y* in [0,1]; Q predictions live in (1-alpha, alpha).
struct OutcomeScale {
    double a = 0.0;
    double b = 1.0;
    double alpha = 0.995;

    /// Default bounds are the data range widened by 10% of the range at each end.
    static OutcomeScale from_data(std::span<const double> y, std::optional<std::pair<double, double>> qbounds,
                                  double alpha);
    double to_star(double y) const { return (y - a) / (b - a); }
    double from_star(double s) const { return a + (b - a) * s; }
    double width() const { return b - a; }
    double clamp(double p) const;
};

/// h = g*/max(g, lbound). Counts units whose g fell below lbound.
std::vector<double> compute_h(std::span<const double> gstar, std::span<const double> g, double lbound,
                              std::size_t* truncated = nullptr);

struct TargetResult {
    double epsilon = 0.0;
    bool converged = true;
    std::vector<double> qstar;  // updated predictions on the Y* scale
    std::vector<std::string> warnings;
};

/// Logistic fluctuation of `qbar` towards `ystar`. Rows with det[i] != 0 are
/// left out of the fit and keep their initial prediction.
TargetResult target(std::span<const double> qbar, std::span<const double> h, std::span<const double> ystar,
                    std::span<const double> weights, TargetMethod method, std::span<const char> det = {});

/// expit(logit(q) + eps * h) (covariate) or expit(logit(q) + eps) (intercept).
double fluctuate(double q, double h, double epsilon, TargetMethod method);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

struct EstimatorTriple {
    double tmle = 0.0;
    double iptw = 0.0;
    double gcomp = 0.0;
};

struct Diagnostics {
    double h_min = 0.0;
    double h_max = 0.0;
    double h_mean = 0.0;
    double truncated_fraction = 0.0;  // share of analysis rows with g below lbound
    std::vector<std::size_t> bins_used;
    std::size_t n_units = 0;  // units entering the variance
};

struct InterventionResult {
    std::string name;
    EstimatorTriple estimate;
    EstimatorTriple variance;
    Interval ci_tmle, ci_iptw, ci_gcomp;
    std::vector<double> ic_tmle, ic_iptw, ic_gcomp;  // per unit, original scale
    std::vector<std::size_t> ic_units;               // unit index of each IC entry
    double epsilon = 0.0;
    bool epsilon_converged = true;
    Diagnostics diagnostics;
};

/// Everything the estimators need, already laid out on analysis rows.
/// Rows belong to units (communities, or the rows themselves); alpha are the
/// within-unit weights and sum to 1 per unit.
struct EngineInput {
    std::vector<double> ystar;
    std::vector<char> det;
    std::vector<double> reg_weights;  // targeting regression weights per row
    std::vector<std::size_t> unit_of_row;
    std::vector<double> alpha;
    std::vector<double> unit_weights;
    OutcomeScale scale;
    TargetMethod method = TargetMethod::tmle_intercept;
    double ci_alpha = 0.05;
    /// Initial Q on the Y* scale for any exposure assignment, already clamped.
    std::function<std::vector<double>(const Exposures&)> qbar;
};

/// Clever covariate values at the observed exposure and at each MC draw.
struct CleverCovariate {
    std::vector<double> observed;
    std::vector<std::vector<double>> at_draws;  // empty unless the covariate method needs them
    std::size_t truncated = 0;
};

InterventionResult estimate_intervention(const EngineInput& in, const Exposures& observed,
                                         const std::vector<Exposures>& draws, const CleverCovariate& h,
                                         std::string name);

/// psi1 - psi2 with the IC difference per unit.
InterventionResult contrast(const InterventionResult& r1, const InterventionResult& r2, double ci_alpha);

/// var = sum (IC - mean IC)^2 / n^2.
double ic_variance(std::span<const double> ic);
Interval normal_ci(double estimate, double variance, double ci_alpha);

/// f_gstar1 absent + intercept targeting + savetime flag: skip density fits, h = 1.
bool savetime_shortcut(bool has_gstar1, TargetMethod method, bool savetime);

/// g* on analysis rows: an indicator for deterministic rules on discrete
/// exposures, g0 itself for the natural course, otherwise a binned density
/// fit on the stacked MC draws reusing the g0 cutoffs.
struct GstarModel {
    enum class Kind { indicator, same_as_g0, fitted } kind = Kind::fitted;
    std::optional<FittedDensity> fit;
};

GstarModel fit_gstar(const InterventionSpec& spec, const FittedDensity& g0, const Frame& rows,
                     const std::vector<Exposures>& draws, const std::vector<Term>& rhs,
                     const DensityFitOptions& options);

/// g* at exposure `a`. The indicator form compares against the first draw.
std::vector<double> eval_gstar(const GstarModel& m, const FittedDensity& g0, const Frame& rows, const Exposures& a,
                               const std::vector<Exposures>& draws);

/// Builds h from g0 and g*; `need_draws` also fills h at every MC draw.
CleverCovariate clever_covariate(const GstarModel& m, const FittedDensity& g0, const Frame& rows,
                                 const Exposures& observed, const std::vector<Exposures>& draws, bool need_draws);

}  // namespace tmlecom
