#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qple/covariate.hpp"
#include "qple/em.hpp"
#include "qple/tuning.hpp"

namespace qple {

enum class SimCase { case_i, case_ii, case_iii, franke_binomial, franke_poisson };

SimCase sim_case_from_name(const std::string& name);
std::string sim_case_name(SimCase c);

/// Success probability (binomial cases) or Poisson mean at x.
double test_function(SimCase c, const RowVec& x);

/// The true regression function on the natural-parameter scale.
double truth_value(SimCase c, const RowVec& x);

ExpFamilySpec sim_family(SimCase c);
int sim_dim(SimCase c);
int sim_default_n(SimCase c);

struct Scenario {
    SimCase sim_case = SimCase::case_i;
    int n = 0;  // 0: case default (101 univariate, 300 Franke)

    enum class ErrorKind { none, normal, uniform };
    ErrorKind error = ErrorKind::none;
    double error_scale = 0.0;  // sigma (normal) or delta (uniform half-width)
    bool error_known = true;
    int exact_count = 5;  // complete observations kept aside

    bool missingness = false;  // response-threshold deletion rule
};

struct SimData {
    Matrix x_true;
    Vector y;
    Vector f_true;  // truth at x_true
};

/// Covariates uniform on the unit cube, responses from the case's family.
SimData generate_dataset(const Scenario& scenario, std::uint64_t seed);

/// Exact-covariate dataset (the "full data analysis" input).
Dataset full_dataset(const Scenario& scenario, const SimData& sim);

/// Keeps `exact_count` random subjects exact and contaminates the rest with
/// x + u.
Dataset apply_measurement_error(const Scenario& scenario, const SimData& sim, std::uint64_t seed);

/// Deletes x1, x2 or both (equal probability) for subjects whose response
/// exceeds the case threshold (y > 3 binomial Franke, y > 10 Poisson
/// Franke); attaches a bivariate-normal covariate model with unknown theta.
Dataset apply_missingness(const Scenario& scenario, const SimData& sim, std::uint64_t seed);

/// The naive input: measurement error ignored (x_err treated as exact) or
/// incomplete subjects dropped.
Dataset naive_dataset(const Scenario& scenario, const Dataset& contaminated);

struct ComparisonRow {
    int replicate = 0;
    std::string method;  // full | qple | naive
    std::string tuning;  // tkl | rangacv | ...
    double lambda = 0.0;
    double tkl_value = 0.0;
};

struct ComparisonOptions {
    std::vector<std::string> methods = {"full", "qple", "naive"};
    std::vector<Criterion> tunings = {Criterion::tkl};
    int replicates = 20;
    std::vector<double> lambda_grid;  // empty: default grid
    EmOptions em;
    RanGacvOptions rangacv;
    std::uint64_t seed = 1;
    int jobs = 1;
};

/// Per-replicate fit + tune + TKL table for the requested methods.
std::vector<ComparisonRow> run_comparison(const Scenario& scenario, const ComparisonOptions& options);

}  // namespace qple
