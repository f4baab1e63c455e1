#include "tmlecom/glm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tmlecom/error.hpp"

namespace tmlecom {

namespace {

constexpr std::size_t kBlockRows = 2048;
constexpr double kVarFloor = std::numeric_limits<double>::epsilon();

double weight_at(std::span<const double> w, std::size_t i) { return w.empty() ? 1.0 : w[i]; }
double offset_at(std::span<const double> o, std::size_t i) { return o.empty() ? 0.0 : o[i]; }

double binomial_deviance(std::span<const double> y, std::span<const double> mu,
                         std::span<const double> w) {
    auto ylogy = [](double a, double b) { return a > 0.0 ? a * std::log(a / b) : 0.0; };
    double dev = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double wi = weight_at(w, i);
        if (wi == 0.0) continue;
        const double m = std::clamp(mu[i], 1e-300, 1.0 - 1e-16);
        dev += 2.0 * wi * (ylogy(y[i], m) + ylogy(1.0 - y[i], 1.0 - m));
    }
    return dev;
}

// Cholesky of X'WX processing columns left to right; a column whose Schur
// complement falls below tol * its diagonal is marked aliased and skipped.
std::vector<bool> detect_aliased(const Eigen::MatrixXd& a, double tol) {
    const Eigen::Index p = a.rows();
    std::vector<bool> aliased(static_cast<std::size_t>(p), false);
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(p, p);
    std::vector<Eigen::Index> kept;
    for (Eigen::Index k = 0; k < p; ++k) {
        double d = a(k, k);
        for (auto j : kept) d -= l(k, j) * l(k, j);
        if (!(a(k, k) > 0.0) || d <= tol * a(k, k)) {
            aliased[static_cast<std::size_t>(k)] = true;
            continue;
        }
        l(k, k) = std::sqrt(d);
        for (Eigen::Index i = k + 1; i < p; ++i) {
            double s = a(i, k);
            for (auto j : kept) s -= l(i, j) * l(k, j);
            l(i, k) = s / l(k, k);
        }
        kept.push_back(k);
    }
    return aliased;
}

Eigen::VectorXd solve_kept(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                           const std::vector<bool>& aliased) {
    std::vector<Eigen::Index> keep;
    for (std::size_t k = 0; k < aliased.size(); ++k) {
        if (!aliased[k]) keep.push_back(static_cast<Eigen::Index>(k));
    }
    const auto m = static_cast<Eigen::Index>(keep.size());
    Eigen::MatrixXd sub(m, m);
    Eigen::VectorXd rhs(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        rhs(i) = b(keep[i]);
        for (Eigen::Index j = 0; j < m; ++j) sub(i, j) = a(keep[i], keep[j]);
    }
    Eigen::VectorXd sol(m);
    Eigen::LLT<Eigen::MatrixXd> llt(sub);
    if (llt.info() == Eigen::Success) {
        sol = llt.solve(rhs);
    } else {
        sol = sub.colPivHouseholderQr().solve(rhs);
    }
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(a.rows());
    for (Eigen::Index i = 0; i < m; ++i) beta(keep[i]) = sol(i);
    return beta;
}

void crossprod(const Eigen::MatrixXd& x, std::span<const double> w, std::span<const double> z,
               Eigen::MatrixXd& xtwx, Eigen::VectorXd& xtwz) {
    kernels::weighted_crossprod_parallel(x, w, z, xtwx, xtwz);
}

}  // namespace

double expit(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

std::string to_string(Family f) {
    return f == Family::gaussian_identity ? "gaussian_identity" : "binomial_logit";
}

Family family_from_string(const std::string& s) {
    if (s == "gaussian_identity" || s == "gaussian") return Family::gaussian_identity;
    if (s == "binomial_logit" || s == "binomial") return Family::binomial_logit;
    throw ConfigError("unknown GLM family '" + s + "'");
}

namespace kernels {

void weighted_crossprod_serial(const Eigen::MatrixXd& x, std::span<const double> w,
                               std::span<const double> z, Eigen::MatrixXd& xtwx,
                               Eigen::VectorXd& xtwz) {
    const Eigen::Index n = x.rows(), p = x.cols();
    xtwx = Eigen::MatrixXd::Zero(p, p);
    xtwz = Eigen::VectorXd::Zero(p);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double wi = w[static_cast<std::size_t>(i)];
        if (wi == 0.0) continue;
        for (Eigen::Index a = 0; a < p; ++a) {
            const double xa = wi * x(i, a);
            xtwz(a) += xa * z[static_cast<std::size_t>(i)];
            for (Eigen::Index b = 0; b <= a; ++b) xtwx(a, b) += xa * x(i, b);
        }
    }
    for (Eigen::Index a = 0; a < p; ++a)
        for (Eigen::Index b = a + 1; b < p; ++b) xtwx(a, b) = xtwx(b, a);
}

void weighted_crossprod_parallel(const Eigen::MatrixXd& x, std::span<const double> w,
                                 std::span<const double> z, Eigen::MatrixXd& xtwx,
                                 Eigen::VectorXd& xtwz) {
    const Eigen::Index n = x.rows(), p = x.cols();
    const auto n_blocks = static_cast<long long>((static_cast<std::size_t>(n) + kBlockRows - 1) / kBlockRows);
    std::vector<Eigen::MatrixXd> part_xx(static_cast<std::size_t>(std::max<long long>(n_blocks, 1)));
    std::vector<Eigen::VectorXd> part_xz(part_xx.size());
    const Eigen::Map<const Eigen::VectorXd> wv(w.data(), n);
    const Eigen::Map<const Eigen::VectorXd> zv(z.data(), n);

#pragma omp parallel for schedule(static) if (n_blocks > 1)
    for (long long b = 0; b < n_blocks; ++b) {
        const Eigen::Index start = static_cast<Eigen::Index>(b) * static_cast<Eigen::Index>(kBlockRows);
        const Eigen::Index len = std::min<Eigen::Index>(static_cast<Eigen::Index>(kBlockRows), n - start);
        const auto xb = x.middleRows(start, len);
        const Eigen::MatrixXd wx = xb.array().colwise() * wv.segment(start, len).array();
        part_xx[static_cast<std::size_t>(b)].noalias() = wx.transpose() * xb;
        part_xz[static_cast<std::size_t>(b)].noalias() = wx.transpose() * zv.segment(start, len);
    }
    xtwx = Eigen::MatrixXd::Zero(p, p);
    xtwz = Eigen::VectorXd::Zero(p);
    for (long long b = 0; b < n_blocks; ++b) {
        xtwx += part_xx[static_cast<std::size_t>(b)];
        xtwz += part_xz[static_cast<std::size_t>(b)];
    }
}

}  // namespace kernels

std::vector<std::string> design_names(const Formula& formula) {
    std::vector<std::string> names;
    if (formula.intercept) names.emplace_back("(Intercept)");
    for (const auto& t : formula.terms) names.push_back(t.name());
    return names;
}

Eigen::MatrixXd design_matrix(const Formula& formula, const Frame& data) {
    const auto n = static_cast<Eigen::Index>(data.n_rows());
    const auto p = static_cast<Eigen::Index>(formula.terms.size() + (formula.intercept ? 1 : 0));
    Eigen::MatrixXd x(n, p);
    Eigen::Index c = 0;
    if (formula.intercept) x.col(c++).setOnes();
    for (const auto& term : formula.terms) {
        x.col(c).setOnes();
        for (const auto& fac : term.factors) {
            const auto v = data.col(fac);
            x.col(c).array() *= Eigen::Map<const Eigen::ArrayXd>(v.data(), n);
        }
        ++c;
    }
    return x;
}

GlmFit fit_design(Family family, const Eigen::MatrixXd& x, std::span<const double> y,
                  std::span<const double> weights, std::span<const double> offset,
                  std::vector<std::string> names, const IrlsControl& control) {
    const std::size_t n = static_cast<std::size_t>(x.rows());
    const Eigen::Index p = x.cols();
    if (y.size() != n) throw DataError("outcome length does not match design rows");
    if (!weights.empty() && weights.size() != n) throw DataError("weights length mismatch");
    if (!offset.empty() && offset.size() != n) throw DataError("offset length mismatch");

    std::vector<double> w(n);
    double wsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = weight_at(weights, i);
        if (w[i] < 0.0 || !std::isfinite(w[i])) throw DataError("regression weights must be finite and nonnegative");
        wsum += w[i];
    }
    if (!(wsum > 0.0)) throw DataError("regression has no row with positive weight");
    if (family == Family::binomial_logit) {
        for (std::size_t i = 0; i < n; ++i) {
            if (w[i] > 0.0 && (y[i] < 0.0 || y[i] > 1.0 || !std::isfinite(y[i]))) {
                throw DataError("binomial outcome outside [0,1] at row " + std::to_string(i));
            }
        }
    }

    GlmFit out;
    out.family = family;
    out.names = std::move(names);
    if (out.names.size() != static_cast<std::size_t>(p)) out.names.resize(static_cast<std::size_t>(p));
    out.coefficients.assign(static_cast<std::size_t>(p), 0.0);
    out.aliased.assign(static_cast<std::size_t>(p), false);
    if (p == 0) {
        out.converged = true;
        return out;
    }

    Eigen::MatrixXd xtwx;
    Eigen::VectorXd xtwz;
    std::vector<double> z(n);

    // Aliasing is a property of the column space on rows with positive prior weight.
    for (std::size_t i = 0; i < n; ++i) z[i] = 0.0;
    crossprod(x, w, z, xtwx, xtwz);
    const auto aliased = detect_aliased(xtwx, control.alias_tolerance);
    out.aliased = aliased;
    for (std::size_t k = 0; k < aliased.size(); ++k) {
        if (aliased[k]) out.warnings.push_back("aliased column '" + out.names[k] + "' dropped");
    }

    auto linear_predictor = [&](const Eigen::VectorXd& beta) {
        Eigen::VectorXd eta = x * beta;
        for (std::size_t i = 0; i < n; ++i) eta(static_cast<Eigen::Index>(i)) += offset_at(offset, i);
        return eta;
    };

    if (family == Family::gaussian_identity) {
        for (std::size_t i = 0; i < n; ++i) z[i] = y[i] - offset_at(offset, i);
        crossprod(x, w, z, xtwx, xtwz);
        const Eigen::VectorXd beta = solve_kept(xtwx, xtwz, aliased);
        const Eigen::VectorXd eta = linear_predictor(beta);
        double rss = 0.0;
        std::size_t n_pos = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (w[i] <= 0.0) continue;
            ++n_pos;
            const double r = y[i] - eta(static_cast<Eigen::Index>(i));
            rss += w[i] * r * r;
        }
        const auto rank = static_cast<std::size_t>(std::count(aliased.begin(), aliased.end(), false));
        out.deviance = rss;
        out.dispersion = n_pos > rank ? rss / static_cast<double>(n_pos - rank) : 0.0;
        for (Eigen::Index k = 0; k < p; ++k) out.coefficients[static_cast<std::size_t>(k)] = beta(k);
        out.converged = true;
        out.iterations = 1;
        return out;
    }

    // Binomial-logit IRLS.
    std::vector<double> mu(n), eta(n);
    for (std::size_t i = 0; i < n; ++i) {
        mu[i] = (w[i] * y[i] + 0.5) / (w[i] + 1.0);
        eta[i] = logit(mu[i]);
    }
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    double dev_old = std::numeric_limits<double>::infinity();
    bool first = true;
    bool capped = false;

    auto deviance_at = [&](const Eigen::VectorXd& b, std::vector<double>& eta_out, std::vector<double>& mu_out) {
        const Eigen::VectorXd e = linear_predictor(b);
        for (std::size_t i = 0; i < n; ++i) {
            eta_out[i] = e(static_cast<Eigen::Index>(i));
            mu_out[i] = expit(eta_out[i]);
        }
        return binomial_deviance(y, mu_out, w);
    };

    std::vector<double> wt(n);
    for (int iter = 1; iter <= control.max_iterations; ++iter) {
        out.iterations = iter;
        for (std::size_t i = 0; i < n; ++i) {
            const double var = std::max(mu[i] * (1.0 - mu[i]), kVarFloor);
            wt[i] = w[i] * var;
            z[i] = (eta[i] - offset_at(offset, i)) + (y[i] - mu[i]) / var;
        }
        crossprod(x, wt, z, xtwx, xtwz);
        Eigen::VectorXd beta_new = solve_kept(xtwx, xtwz, aliased);
        for (Eigen::Index k = 0; k < p; ++k) {
            if (std::abs(beta_new(k)) > control.coef_cap) {
                beta_new(k) = std::copysign(control.coef_cap, beta_new(k));
                capped = true;
            }
        }
        std::vector<double> eta_new(n), mu_new(n);
        double dev_new = deviance_at(beta_new, eta_new, mu_new);
        if (!first) {
            int halvings = 0;
            while ((!std::isfinite(dev_new) || dev_new > dev_old * (1.0 + 1e-12) + 1e-12) &&
                   halvings < control.max_halvings) {
                beta_new = 0.5 * (beta_new + beta);
                dev_new = deviance_at(beta_new, eta_new, mu_new);
                ++halvings;
            }
            if (halvings > 0 && halvings == control.max_halvings && dev_new > dev_old * (1.0 + 1e-12) + 1e-12) {
                out.warnings.push_back("step halving exhausted; keeping previous iterate");
                break;
            }
        }
        double rel = 0.0;
        for (Eigen::Index k = 0; k < p; ++k) {
            rel = std::max(rel, std::abs(beta_new(k) - beta(k)) / std::max(std::abs(beta_new(k)), 1.0));
        }
        beta = beta_new;
        eta = std::move(eta_new);
        mu = std::move(mu_new);
        dev_old = dev_new;
        if (!first && rel < control.tolerance) {
            out.converged = true;
            break;
        }
        first = false;
    }
    for (Eigen::Index k = 0; k < p; ++k) {
        out.coefficients[static_cast<std::size_t>(k)] = beta(k);
        if (std::abs(beta(k)) >= control.coef_cap) capped = true;
    }
    out.deviance = dev_old;
    bool extreme = false;
    for (std::size_t i = 0; i < n; ++i) {
        if (w[i] > 0.0 && (mu[i] < 1e-10 || mu[i] > 1.0 - 1e-10)) extreme = true;
    }
    out.separation = capped || extreme;
    if (extreme && !capped) out.warnings.push_back("fitted probabilities numerically 0 or 1");
    if (capped) {
        out.converged = false;
        out.warnings.push_back("coefficient reached the logit cap (possible separation)");
    }
    if (!out.converged && !capped) out.warnings.push_back("IRLS did not converge");
    return out;
}

GlmFit fit(const GlmSpec& spec, const Frame& data, const IrlsControl& control) {
    const Eigen::MatrixXd x = design_matrix(spec.formula, data);
    auto y = data.col(spec.formula.outcome);
    GlmFit out = fit_design(spec.family, x, y, spec.weights, spec.offset, design_names(spec.formula), control);
    out.formula = spec.formula;
    return out;
}

std::vector<double> predict_design(const GlmFit& fit, const Eigen::MatrixXd& x, PredictType type,
                                   std::span<const double> offset) {
    const auto n = static_cast<std::size_t>(x.rows());
    if (static_cast<std::size_t>(x.cols()) != fit.coefficients.size()) {
        throw DataError("design has " + std::to_string(x.cols()) + " columns, model expects " +
                        std::to_string(fit.coefficients.size()));
    }
    Eigen::VectorXd beta(x.cols());
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
        beta(k) = fit.aliased[static_cast<std::size_t>(k)] ? 0.0 : fit.coefficients[static_cast<std::size_t>(k)];
    }
    const Eigen::VectorXd eta = x * beta;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double e = eta(static_cast<Eigen::Index>(i)) + offset_at(offset, i);
        out[i] = (type == PredictType::response && fit.family == Family::binomial_logit) ? expit(e) : e;
    }
    return out;
}

std::vector<double> predict(const GlmFit& fit, const Frame& data, PredictType type,
                            std::span<const double> offset) {
    return predict_design(fit, design_matrix(fit.formula, data), type, offset);
}

Eigen::VectorXd score(const GlmFit& fit, const Eigen::MatrixXd& x, std::span<const double> y,
                      std::span<const double> weights, std::span<const double> offset) {
    const auto mu = predict_design(fit, x, PredictType::response, offset);
    Eigen::VectorXd s = Eigen::VectorXd::Zero(x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const auto ui = static_cast<std::size_t>(i);
        s += weight_at(weights, ui) * (y[ui] - mu[ui]) * x.row(i).transpose();
    }
    return s;
}

const Learner& default_learner() {
    static const GlmLearner learner;
    return learner;
}

}  // namespace tmlecom
