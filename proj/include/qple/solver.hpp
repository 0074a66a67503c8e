#pragma once

#include <optional>
#include <string>
#include <vector>

#include "qple/expfam.hpp"
#include "qple/kernel.hpp"
#include "qple/types.hpp"

namespace qple {

/// Fitted function in the representer basis spanned by the null space and
/// the kernel sections at the quadrature nodes: f = sum d_nu phi_nu +
/// sum c_k K(., z_k).  The penalty is J(f) = c' K c.
struct RepresenterModel {
    Vector d;         // null-space coefficients
    Vector c;         // kernel coefficients, one per node
    Matrix nodes;     // stacked node list Z (unit-scale coordinates)
    KernelSpec kernel;
    double lambda = 0.0;
    RescaleMap rescale;
    ExpFamilySpec family;
};

/// Precomputed basis matrices for one node set; shared by every Newton
/// solve on that basis.
struct RepresenterBasis {
    Matrix nodes;
    Matrix gram_raw;   // K without jitter (used for penalties/evaluation)
    Matrix gram;       // K with jitter (used in linear systems)
    Matrix null_mat;   // S
    KernelSpec kernel;

    RepresenterBasis() = default;
    RepresenterBasis(Matrix node_list, const KernelSpec& k);
    int size() const { return static_cast<int>(nodes.rows()); }
    int null_dim() const { return static_cast<int>(null_mat.cols()); }
};

struct FitOptions {
    double grad_tol = 1e-8;
    int max_newton = 50;
    int max_backtrack = 30;
};

struct WeightedFit {
    Vector d, c;
    Vector fitted;  // f at the basis nodes
    double objective = 0.0;
    int newton_iterations = 0;
    std::vector<double> objective_trace;  // accepted-step objectives
};

/// Minimizes the weighted complete-data penalized likelihood
///   -(1/n) sum_ij w_ij [y_ij f_ij - b(f_ij)] + (lambda/2) c'Kc
/// over the representer basis by damped Newton with Armijo backtracking.
/// `y_nodes` carries one response per node (replicates of the subject's
/// response in ordinary use; perturbed values for randomized traces).
WeightedFit fit_weighted(const RepresenterBasis& basis, const Vector& y_nodes, const Vector& weights,
                         int n_subjects, double lambda, const ExpFamilySpec& family,
                         const std::optional<WeightedFit>& warm, const FitOptions& options = {});

/// (d, c) representation of given node values: the minimum-norm interpolant
/// in the basis, used to warm start across changing node sets.
WeightedFit interpolate_basis(const RepresenterBasis& basis, const Vector& fvals);

/// Influence machinery of the observed-data objective.  W is the diagonal
/// of variances b''(f); B and D are the per-subject blocks of the mixed and
/// pure second derivatives; H = -(D + n Sigma_lambda)^{-1} B restricted to
/// the representer basis, here obtained from the stationarity system so
/// that H is exactly the Jacobian of the fitted node values with respect
/// to the per-node responses.
struct InfluenceBlocks {
    std::vector<Matrix> B, D, H, G;  // per-subject diagonal blocks
    Vector w_diag;                   // b''(f) at the nodes
    Matrix h_full;                   // full N x N influence matrix
};

InfluenceBlocks influence_blocks(const RepresenterBasis& basis, const SubjectLayout& layout,
                                 const Vector& y, const Vector& pi, const Vector& fitted, double lambda,
                                 const ExpFamilySpec& family);

/// Observed-data E-step/likelihood weights w_ij(f) for one subject
/// (log-sum-exp stabilized); y may differ per node.
Vector likelihood_weights(const Vector& y_nodes, const Vector& f_nodes, const Vector& pi,
                          const ExpFamilySpec& family);

/// f-hat at query points (unit-scale coordinates handled internally via the
/// model's rescale map) together with the mean responses b'(f-hat).
struct Evaluation {
    Vector fhat;
    Vector mean;
};
Evaluation evaluate(const RepresenterModel& model, const Matrix& query_points);

/// Fitted values at unit-scale points without rescaling (internal use).
Vector evaluate_unit(const RepresenterModel& model, const Matrix& unit_points);

/// Null-space-condition diagnostic: fits the parametric GLM on the exactly
/// observed subjects by IRLS and reports failure to converge or parameter
/// blow-up.  Returns an explanation when the condition looks violated.
std::optional<std::string> a1_diagnostic(const Matrix& exact_points, const Vector& y_exact,
                                         const KernelSpec& kernel, const ExpFamilySpec& family);

}  // namespace qple
