#pragma once

#include <string>

namespace qple {

/// Exponential-family response model with known scale: the conditional
/// density is exp{y*t - b(t) + c(y)} with natural parameter t.
struct ExpFamilySpec {
    enum class Family { binomial, poisson };

    Family family = Family::poisson;
    int trials = 1;  // binomial only

    static ExpFamilySpec binomial(int k);
    static ExpFamilySpec poisson();

    bool is_binomial() const { return family == Family::binomial; }
    std::string name() const;
};

/// Cumulant function b(t); strictly convex.  Overflow-safe for binomial.
double b(double t, const ExpFamilySpec& fam);

/// b'(t), the mean response at natural parameter t.
double mean(double t, const ExpFamilySpec& fam);

/// b''(t), the variance function; strictly positive for finite t.
double variance(double t, const ExpFamilySpec& fam);

/// log p(y|t) = y*t - b(t) + c(y), with the exact combinatorial term.
/// y must lie in the family support (integers; 0..k for binomial).
double log_density(double y, double t, const ExpFamilySpec& fam);

/// The c(y) normalizing term alone (log binomial coefficient resp.
/// -log y!), extended to real y through log-gamma.
double log_norm_const(double y, const ExpFamilySpec& fam);

}  // namespace qple
