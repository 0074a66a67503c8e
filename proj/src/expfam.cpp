#include "qple/expfam.hpp"

#include <cmath>
#include <stdexcept>

namespace qple {

ExpFamilySpec ExpFamilySpec::binomial(int k) {
    if (k < 1) throw std::invalid_argument("binomial family: trials must be >= 1");
    return ExpFamilySpec{Family::binomial, k};
}

ExpFamilySpec ExpFamilySpec::poisson() { return ExpFamilySpec{Family::poisson, 1}; }

std::string ExpFamilySpec::name() const {
    return is_binomial() ? "binomial(" + std::to_string(trials) + ")" : "poisson";
}

namespace {

void check_finite(double t) {
    if (!std::isfinite(t)) throw std::domain_error("expfam: non-finite natural parameter");
}

// log(1 + e^t) without overflow.
double log1pexp(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

double sigmoid(double t) { return t > 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t)); }

}  // namespace

double b(double t, const ExpFamilySpec& fam) {
    check_finite(t);
    if (fam.is_binomial()) return fam.trials * log1pexp(t);
    return std::exp(t);
}

double mean(double t, const ExpFamilySpec& fam) {
    check_finite(t);
    if (fam.is_binomial()) return fam.trials * sigmoid(t);
    return std::exp(t);
}

double variance(double t, const ExpFamilySpec& fam) {
    check_finite(t);
    if (fam.is_binomial()) {
        const double p = sigmoid(t);
        return fam.trials * p * (1.0 - p);
    }
    return std::exp(t);
}

double log_norm_const(double y, const ExpFamilySpec& fam) {
    if (fam.is_binomial())
        return std::lgamma(fam.trials + 1.0) - std::lgamma(y + 1.0) - std::lgamma(fam.trials - y + 1.0);
    return -std::lgamma(y + 1.0);
}

double log_density(double y, double t, const ExpFamilySpec& fam) {
    check_finite(t);
    const double yi = std::round(y);
    if (std::abs(y - yi) > 1e-9 || yi < 0 || (fam.is_binomial() && yi > fam.trials))
        throw std::domain_error("expfam: response outside family support");
    return y * t - b(t, fam) + log_norm_const(y, fam);
}

}  // namespace qple
