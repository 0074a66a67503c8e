#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qple/em.hpp"

namespace qple {

/// Observed negative log-likelihood of the fit over the quadrature rules
/// (terms free of lambda dropped).
double obs_criterion(const FitResult& fit);

/// The d_ij weights of the GACV trace term for one subject.
Vector d_weights(const FitResult& fit, int subject);

/// Two-parameter exchangeable compression of per-subject diagonal blocks:
/// delta_i carries the total trace, gamma_i the total off-diagonal mass.
struct GeneralizedAverage {
    Vector delta, gamma;

    /// A_bar_ii * v for subject i.
    Vector apply(int i, const Vector& v) const;
    /// A_bar_ii^{-1} * v via the closed form; throws when the 2x2 spectrum
    /// hits zero (delta == gamma or delta + (m-1) gamma == 0).
    Vector apply_inverse(int i, const Vector& v) const;
    Matrix dense(int i, int m) const;
};

GeneralizedAverage generalized_average(const std::vector<Matrix>& blocks, const SubjectLayout& layout);

/// GACV from exact influence blocks.
double gacv(const FitResult& fit, const InfluenceBlocks& blocks);

/// R-replicated randomized GACV: quadratic forms of H and G estimated from
/// perturbed refits warm-started at the fitted values.  Deterministic in
/// (seed); replicates with degenerate randomized averages are dropped.
struct RanGacvOptions {
    int replicates = 5;
    double sigma_perturb = -1.0;  // <= 0: defaults to 0.01 * sd(y)
    std::uint64_t seed = 1;
};
double rangacv(const FitResult& fit, const RanGacvOptions& options,
               std::vector<std::string>* warnings = nullptr);

/// Exact leave-out-one-subject CV by n refits (rules fixed at the fitted
/// nuisance values).
double exact_loocv(const FitResult& fit, const EmOptions& options);

/// Theoretical KL distance to the truth, in closed form per family,
/// averaged over the true covariates.
double tkl(const RepresenterModel& model, const Matrix& x_true, const Vector& f_true);

enum class Criterion { gacv, rangacv, loocv, tkl };

std::string criterion_name(Criterion c);

struct TuneOptions {
    Criterion criterion = Criterion::gacv;
    RanGacvOptions rangacv;
    const Matrix* truth_x = nullptr;  // required for Criterion::tkl
    const Vector* truth_f = nullptr;
    int jobs = 1;
};

struct LambdaSelection {
    double lambda = 0.0;
    int index = -1;
    std::vector<double> lambdas, values;
    std::vector<bool> ok;
    bool boundary = false;
    FitResult fit;  // refit at the selected lambda
    std::vector<std::string> warnings;
};

/// Evaluates the criterion over the grid (ascending lambdas; fits are
/// warm-started along the grid) and returns the argmin, ties broken toward
/// the larger lambda.  Grid points where the criterion fails are skipped
/// with a warning.
LambdaSelection select_lambda(const Dataset& data, const std::vector<double>& grid,
                              const EmOptions& em_options, const TuneOptions& tune_options);

std::vector<double> log_grid(double log10_lo, double log10_hi, int count);

}  // namespace qple
