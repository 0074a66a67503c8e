#pragma once

#include <vector>

#include "qple/types.hpp"

namespace qple {

/// Reproducing kernel together with its null space (the functions the
/// roughness penalty does not see).
///
///   cubic_spline   unit interval, null space {1, x - 1/2}
///   thin_plate     R^2, order 2, null space {1, x1, x2}; conditionally
///                  positive definite relative to that null space
///   gaussian_rbf   positive definite, unpenalized intercept kept in the
///                  null space
///   ssanova        tensor sum sum_beta theta_beta * K_beta of component
///                  kernels restricted to coordinate subsets
struct KernelSpec {
    enum class Type { cubic_spline, thin_plate, gaussian_rbf, ssanova };

    struct Block {
        std::vector<int> coords;          // coordinate subset the component acts on
        Type type = Type::cubic_spline;   // component kernel (non-ssanova)
        double bandwidth = 1.0;           // gaussian_rbf components
        double theta = 1.0;               // block weight, 1/lambda_beta > 0

        KernelSpec component() const;
    };

    Type type = Type::cubic_spline;
    double bandwidth = 1.0;     // gaussian_rbf
    std::vector<Block> blocks;  // ssanova

    static KernelSpec cubic_spline();
    static KernelSpec thin_plate();
    static KernelSpec gaussian_rbf(double bandwidth);
    static KernelSpec ssanova(std::vector<Block> blocks);

    /// Dimension of the covariate vectors the kernel expects; -1 for rbf
    /// (any dimension).
    int expected_dim() const;

    /// Number of null-space basis functions for d-dimensional inputs.
    int null_dim(int d) const;
};

/// K(s, t) for a single pair of points.
double kernel_value(const KernelSpec& k, const RowVec& s, const RowVec& t);

/// Symmetric Gram matrix over a point set (rows of `points`).  Entries are
/// symmetrized exactly; no jitter is added here.
Matrix gram(const Matrix& points, const KernelSpec& k);

/// Rectangular kernel matrix K(a_i, b_j).
Matrix cross_gram(const Matrix& a, const Matrix& b, const KernelSpec& k);

/// Null-space design matrix: one row per point, one column per basis
/// function; the first column is the constant.  Throws on rank-deficient
/// designs (e.g. all points identical).
Matrix null_basis(const Matrix& points, const KernelSpec& k);

/// Like null_basis but without the rank check (used for evaluation grids).
Matrix null_basis_unchecked(const Matrix& points, const KernelSpec& k);

/// sum_beta theta_beta * gram(points restricted to block beta).
Matrix ssanova_gram(const Matrix& points, const std::vector<KernelSpec::Block>& blocks);

/// Ridge added to Gram diagonals before factorization; duplicate quadrature
/// nodes otherwise make the matrix exactly singular.
void add_jitter(Matrix& g);

}  // namespace qple
