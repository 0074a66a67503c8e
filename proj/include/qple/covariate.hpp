#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "qple/expfam.hpp"
#include "qple/kernel.hpp"
#include "qple/quadrature.hpp"
#include "qple/types.hpp"

namespace qple {

/// Zero-mean measurement error, iid across subjects and independent of
/// (y, x); one shared parameter vector for the whole dataset.
struct ErrorModel {
    enum class Kind { normal_iso, uniform_sym };
    Kind kind = Kind::normal_iso;
    Vector scale;       // per-coordinate sigma (normal) or delta (uniform half-width)
    bool known = true;  // when false the scale is re-estimated inside EM
};

/// Parametric covariate model for partially missing vectors, built as a
/// conditional chain: the Gaussian block is jointly normal with mean
/// linear in designated always-observed regressor coordinates, and each
/// binary coordinate follows a logistic model given the continuous
/// coordinates.
struct CovariateModel {
    std::vector<int> gaussian_coords;
    std::vector<int> regressor_coords;  // always observed; may be empty
    Matrix coef;   // (1 + #regressors) x #gaussian; mean = coef^T [1; x_reg]
    Matrix sigma;  // #gaussian x #gaussian, symmetric positive definite
    std::vector<int> binary_coords;
    std::vector<Vector> logit_coef;  // per binary: [1, gaussian..., regressor...] coefficients
    bool known = false;

    Vector gaussian_mean(const Vector& x_full) const;
    double binary_prob(int which, const Vector& x_full) const;
};

/// Per-subject covariate information: an exact point, a discrete or
/// continuous distribution, an error-contaminated point, or a partially
/// missing vector (NaN marks missing coordinates).
struct CovariateObservation {
    enum class Kind { exact, discrete, distributional, noisy, partially_missing };

    Kind kind = Kind::exact;
    Vector x;                     // exact value / x_err / observed-with-NaN
    QuadratureRule discrete_rule;
    std::shared_ptr<ConditionalChain> dist;
    std::vector<bool> observed;   // partially_missing mask; at least one true

    static CovariateObservation exact(Vector x);
    static CovariateObservation discrete(QuadratureRule rule);
    static CovariateObservation distributional(ConditionalChain chain);
    static CovariateObservation noisy(Vector x_err);
    static CovariateObservation partially_missing(Vector x_with_nan);

    bool is_multinode() const { return kind != Kind::exact; }
};

struct Dataset {
    Vector y;
    ExpFamilySpec family;
    std::vector<CovariateObservation> obs;
    int dim = 1;
    std::optional<ErrorModel> error_model;
    std::optional<CovariateModel> covariate_model;
    std::optional<KernelSpec> kernel;  // defaulted by dimension when absent
    RescaleMap rescale;                // already applied to the stored coordinates
    bool degenerate_error = false;     // zero-scale contamination collapsed to exact

    int n() const { return static_cast<int>(obs.size()); }
    bool has_noisy() const;
    bool has_missing() const;
    void validate() const;
};

struct QuadConfig {
    RuleMethod method = RuleMethod::gauss;
    int nodes_per_dim = 7;
    bool clamp_unit = false;  // clamp nodes into [0,1] (cubic-spline domain)
};

/// Shared rule for the error distribution p(u | theta); all noisy subjects
/// use the same node offsets within one EM iteration.
QuadratureRule error_rule(const ErrorModel& model, const QuadConfig& config);

/// Method-of-moments starting value for an unknown error scale: the excess
/// of the noisy-coordinate variance over the exact-subject variance, floored
/// at five percent of the former.
Vector mom_error_scale(const Dataset& data, ErrorModel::Kind kind);

struct RuleContext {
    const ErrorModel* error = nullptr;
    const QuadratureRule* shared_error_rule = nullptr;  // required for noisy subjects
    const CovariateModel* covariate = nullptr;          // required for partially missing
    QuadConfig config;
};

/// Resolves one subject to a quadrature rule under the current nuisance
/// parameter values.  Noisy points become x_err - z_j over the shared
/// error rule; partially missing vectors take the product of the dirac
/// measure on the observed part and the conditional rule of the missing
/// part.
QuadratureRule rule_for_subject(const CovariateObservation& obs, const RuleContext& ctx);

struct ThetaUpdateResult {
    bool degenerate = false;
    std::vector<std::string> warnings;
};

/// Weighted M-step for the error scale: weighted second moments of the
/// error nodes (normal MLE; method-of-moments surrogate for uniform).
/// `weights` has one row per noisy subject aligned with `u_rule` nodes.
ThetaUpdateResult update_theta_measurement_error(const Matrix& weights, const QuadratureRule& u_rule,
                                                 ErrorModel& model);

/// Weighted MLE of the covariate model from the stacked node set:
/// closed-form weighted regression/covariance for the Gaussian block,
/// weighted IRLS (with divergence capping) for the logistic coordinates.
ThetaUpdateResult update_theta_missing(const Vector& weights, const Matrix& nodes,
                                       const SubjectLayout& layout, CovariateModel& model);

}  // namespace qple
