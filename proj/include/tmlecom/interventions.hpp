#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tmlecom/exposure_density.hpp"
#include "tmlecom/formula.hpp"
#include "tmlecom/frame.hpp"
#include "tmlecom/rng.hpp"

namespace tmlecom {

/// intercept + sum coef * product-of-columns.
struct LinearPredictor {
    double intercept = 0.0;
    std::vector<Term> terms;
    std::vector<double> coefs;

    double eval(const Frame& rows, std::size_t i) const;
    std::vector<std::string> columns() const;
};

/// Draws u ~ N(mu + shift, sd) and keeps it unless the density ratio
/// exp(rate * shift * (u - mu - center * shift)) exceeds trunc_bound, in which
/// case u - shift is used. The defaults give the usual generator form
/// exp(0.5 shift (u - mu - shift/2)).
struct ShiftTruncate {
    double shift = 0.0;
    double trunc_bound = 1e300;
    LinearPredictor mean;
    double sd = 1.0;
    double rate = 0.5;
    double center = 0.5;
};

/// Binary exposure drawn with P(A* = 1) = expit(logit).
struct BernoulliRule {
    LinearPredictor logit;
};

/// A* = A + shift, a deterministic modification of the observed exposure.
struct ObservedShift {
    double shift = 0.0;
};

/// One vector of exposure values (anode order) for row i.
using SamplerCallback = std::function<std::vector<double>(const Frame& rows, std::size_t i, Rng& rng)>;

enum class InterventionKind { constant, table, sampler, observed };

struct InterventionSpec {
    InterventionKind kind = InterventionKind::observed;
    std::string name;
    std::vector<double> constant;                // kind == constant, one per anode
    std::vector<std::vector<double>> table;      // kind == table, rows x anodes; 1 row broadcasts
    std::string sampler;                         // shift_truncate | bernoulli | observed_shift | callback
    ShiftTruncate shift_truncate;
    BernoulliRule bernoulli;
    ObservedShift observed_shift;
    SamplerCallback callback;
    bool community_level = false;  // sampler draws once per community, broadcast to members

    /// Same exposure for every MC draw.
    bool deterministic() const;
};

struct McConfig {
    int n_mc_sims = 1;
    std::uint64_t seed = 1;
};

InterventionSpec constant_intervention(std::vector<double> values, std::string name = "");
InterventionSpec table_intervention(std::vector<std::vector<double>> table, std::string name = "");
InterventionSpec observed_intervention();
InterventionSpec builtin_shift_truncate(double shift, double trunc_bound, LinearPredictor mean,
                                        bool community_level = false);
InterventionSpec builtin_bernoulli(LinearPredictor logit, bool community_level = false);
InterventionSpec callback_intervention(SamplerCallback fn, std::string name, bool community_level = false);

/// Draws for each MC simulation on `rows` (each row is one sampling unit).
/// Row i of sim s uses the substream (seed, s, i), so results do not depend
/// on scheduling.
std::vector<Exposures> sample_gstar(const InterventionSpec& spec, const Frame& rows,
                                    const std::vector<std::string>& anodes, const McConfig& mc);

/// Expands per-unit samples to member rows: out[s][k][r] = in[s][k][unit_of_row[r]].
std::vector<Exposures> broadcast(const std::vector<Exposures>& unit_samples,
                                 const std::vector<std::size_t>& unit_of_row);

}  // namespace tmlecom
