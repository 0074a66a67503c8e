#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "qple/covariate.hpp"
#include "qple/solver.hpp"
#include "qple/types.hpp"

namespace qple {

struct EmOptions {
    double rel_tol = 1e-6;
    double f_tol = 0.0;  // > 0: also require max|f_{t+1} - f_t| below this
    int max_iter = 100;
    QuadConfig quad;
    bool override_a1 = false;
    FitOptions solver;
    bool quiet = true;  // suppress warning prints (still collected)
};

/// Converged fit: the representer model, the nuisance parameters, the EM
/// trace of the penalized observed-data objective, and the final
/// per-subject/node weights and rules.
struct FitResult {
    RepresenterModel model;
    Vector fitted;   // f at the stacked nodes
    Vector weights;  // final EM weights, stacked
    Vector pi;       // quadrature weights, stacked
    Vector y_nodes;  // per-node responses (subject responses replicated)
    Vector y;        // per-subject responses
    SubjectLayout layout;
    std::vector<QuadratureRule> rules;
    std::vector<double> em_trace;
    bool converged = false;
    int iterations = 0;
    double lambda = 0.0;
    ExpFamilySpec family;
    std::optional<ErrorModel> error_model;
    std::optional<CovariateModel> covariate_model;
    std::vector<std::string> warnings;
    std::shared_ptr<RepresenterBasis> basis;  // shared with tuning refits

    double objective() const { return em_trace.empty() ? 0.0 : em_trace.back(); }
};

/// Conditional probability of node j given the response:
/// w_j = pi_j p(y|z_j, f) / sum_k pi_k p(y|z_k, f), via log-sum-exp.
Vector estep_weights(double y, const Vector& f_nodes, const Vector& pi, const ExpFamilySpec& family);

/// Stacked rules for every subject under the current nuisance values.
struct RuleSet {
    std::vector<QuadratureRule> rules;
    SubjectLayout layout;
    Matrix nodes;
    Vector pi;
    Vector y_nodes;
    std::optional<QuadratureRule> u_rule;  // shared error rule, when noisy subjects exist
};
RuleSet build_rules(const Dataset& data, const std::optional<ErrorModel>& error,
                    const std::optional<CovariateModel>& covariate, const QuadConfig& config);

/// Penalized observed-data objective I_lambda^{Z,Pi} (the c(y) term, free
/// of f, is dropped).
double observed_objective(const Vector& y, const Vector& fitted, const Vector& pi,
                          const SubjectLayout& layout, const ExpFamilySpec& family, double lambda,
                          double penalty_quadratic);

/// EM with the rules held fixed; per-node responses may differ within a
/// subject (perturbed refits).  Warm starts continue from a previous fit on
/// the same basis.
FitResult em_fit_fixed_rules(const std::shared_ptr<RepresenterBasis>& basis, const SubjectLayout& layout,
                             const Vector& pi, const Vector& y_nodes, const Vector& y_subject,
                             double lambda, const ExpFamilySpec& family, const EmOptions& options,
                             const WeightedFit* warm = nullptr);

/// QPLE driver: dispatches on the dataset contents (plain randomized
/// covariates, measurement error with unknown scale, missing covariates
/// with a parametric covariate model).  A warm fit from a neighbouring
/// lambda seeds the coefficients and the nuisance parameters.
FitResult qple_fit(const Dataset& data, double lambda, const EmOptions& options,
                   const FitResult* warm = nullptr);

/// Measurement-error EM: shared error rule rebuilt from theta each
/// iteration, split M-step for f and theta.  Requires noisy subjects.
FitResult qple_fit_measurement_error(const Dataset& data, double lambda, const EmOptions& options);

/// Missing-covariate EM: per-subject conditional rules rebuilt from theta
/// each iteration, split M-step for f and theta.
FitResult qple_fit_missing(const Dataset& data, double lambda, const EmOptions& options);

/// One extra EM sweep from a converged result (fixed rules); used to check
/// the fixed-point property.
Vector em_one_sweep(const FitResult& fit);

}  // namespace qple
