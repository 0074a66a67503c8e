#pragma once

#include <functional>

#include "qple/types.hpp"

namespace qple {

/// One-dimensional covariate distribution for which quadrature rules can
/// be built.  Custom densities carry a compact support and their first two
/// moments; an infinite endpoint is admissible and gets truncated when a
/// rule is constructed (at mu +/- 3*sigma for grid rules, following the
/// usual convention, and far in the tails for moment computations).
struct UnivariateDistribution {
    enum class Type { normal, uniform, discrete, custom };

    Type type = Type::normal;
    double mu = 0.0, sigma = 1.0;  // normal; also the declared moments of custom
    double a = 0.0, b = 1.0;       // uniform / custom support
    Vector values, probs;          // discrete
    std::function<double(double)> density;  // custom

    static UnivariateDistribution normal(double mu, double sigma);
    static UnivariateDistribution uniform(double a, double b);
    static UnivariateDistribution discrete(Vector values, Vector probs);
    static UnivariateDistribution custom(std::function<double(double)> density, double a, double b,
                                         double mean, double sd);

    double mean() const;
    double sd() const;
};

enum class RuleMethod { gauss, grid };

/// m-node Gaussian rule: exact for polynomials of degree <= 2m-1 against
/// the distribution.  Closed-form recurrences for normal/uniform; the
/// modified Chebyshev moment algorithm otherwise (m capped at 20).
QuadratureRule gauss_rule(const UnivariateDistribution& dist, int m);

/// m equally spaced nodes with weights proportional to the density.
QuadratureRule grid_rule(const UnivariateDistribution& dist, int m);

QuadratureRule univariate_rule(const UnivariateDistribution& dist, int m, RuleMethod method);

/// Joint distribution over d coordinates presented as a chain of
/// one-dimensional conditionals: coordinate(s, prefix) is the distribution
/// of coordinate s given the first s coordinates fixed at `prefix`.
struct ConditionalChain {
    int dim = 1;
    std::function<UnivariateDistribution(int s, const RowVec& prefix)> coordinate;
};

/// Recursive product-form rule: the rule for the first s coordinates is
/// extended one coordinate at a time with conditional rules, node weights
/// multiplying along the chain.
QuadratureRule multivariate_rule(const ConditionalChain& joint, const std::vector<int>& nodes_per_dim,
                                 RuleMethod method);

/// Conditional chain of a multivariate normal.  Throws if the covariance
/// is not symmetric positive definite.
ConditionalChain mvn_chain(const Vector& mu, const Matrix& sigma);

/// Collapses exactly coincident nodes, summing their weights.
QuadratureRule merge_duplicate_nodes(const QuadratureRule& rule);

}  // namespace qple
