#pragma once

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

#include "tmlecom/formula.hpp"
#include "tmlecom/frame.hpp"

namespace tmlecom {

enum class Family { gaussian_identity, binomial_logit };

std::string to_string(Family f);
Family family_from_string(const std::string& s);

struct GlmSpec {
    Family family = Family::binomial_logit;
    Formula formula;
    std::vector<double> offset;   // empty = none
    std::vector<double> weights;  // empty = all ones
};

struct GlmFit {
    Family family = Family::binomial_logit;
    Formula formula;
    std::vector<std::string> names;  // "(Intercept)" first when present
    std::vector<double> coefficients;
    std::vector<bool> aliased;  // aliased columns carry a zero coefficient
    bool converged = false;
    bool separation = false;  // a coefficient hit the logit cap
    int iterations = 0;
    double dispersion = 1.0;
    double deviance = 0.0;
    std::vector<std::string> warnings;
};

struct IrlsControl {
    double tolerance = 1e-8;
    int max_iterations = 50;
    int max_halvings = 5;
    double coef_cap = 40.0;
    double alias_tolerance = 1e-10;
};

/// Design matrix columns for `formula` over `data` (intercept first).
Eigen::MatrixXd design_matrix(const Formula& formula, const Frame& data);
std::vector<std::string> design_names(const Formula& formula);

/// Weighted fit on an explicit design. `names` label the columns of `x`.
GlmFit fit_design(Family family, const Eigen::MatrixXd& x, std::span<const double> y,
                  std::span<const double> weights, std::span<const double> offset,
                  std::vector<std::string> names, const IrlsControl& control = {});

GlmFit fit(const GlmSpec& spec, const Frame& data, const IrlsControl& control = {});

enum class PredictType { link, response };

std::vector<double> predict(const GlmFit& fit, const Frame& data, PredictType type,
                            std::span<const double> offset = {});
std::vector<double> predict_design(const GlmFit& fit, const Eigen::MatrixXd& x,
                                   PredictType type, std::span<const double> offset = {});

/// Weighted score sum_i w_i (y_i - mu_i) x_i at the fitted coefficients.
Eigen::VectorXd score(const GlmFit& fit, const Eigen::MatrixXd& x, std::span<const double> y,
                      std::span<const double> weights, std::span<const double> offset);

double expit(double x);
double logit(double p);

namespace kernels {

/// Accumulates X' diag(w) X and X' diag(w) z. The serial form is the
/// reference; the blocked form splits rows into fixed blocks summed in block
/// order, so its result does not depend on the thread count.
void weighted_crossprod_serial(const Eigen::MatrixXd& x, std::span<const double> w,
                               std::span<const double> z, Eigen::MatrixXd& xtwx,
                               Eigen::VectorXd& xtwz);
void weighted_crossprod_parallel(const Eigen::MatrixXd& x, std::span<const double> w,
                                 std::span<const double> z, Eigen::MatrixXd& xtwx,
                                 Eigen::VectorXd& xtwz);

}  // namespace kernels

/// Single learner seam: anything that turns a design into a GlmFit-shaped
/// linear predictor can back the outcome and hazard regressions.
class Learner {
public:
    virtual ~Learner() = default;
    virtual std::string name() const = 0;
    virtual GlmFit fit(Family family, const Eigen::MatrixXd& x, std::span<const double> y,
                       std::span<const double> weights, std::span<const double> offset,
                       std::vector<std::string> names) const = 0;
};

class GlmLearner final : public Learner {
public:
    explicit GlmLearner(IrlsControl control = {}) : control_(control) {}
    std::string name() const override { return "glm"; }
    GlmFit fit(Family family, const Eigen::MatrixXd& x, std::span<const double> y,
               std::span<const double> weights, std::span<const double> offset,
               std::vector<std::string> names) const override {
        return fit_design(family, x, y, weights, offset, std::move(names), control_);
    }

private:
    IrlsControl control_;
};

const Learner& default_learner();

}  // namespace tmlecom
