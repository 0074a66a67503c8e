#include "qple/sim.hpp"

#include <cmath>
#include <stdexcept>

#include "qple/parallel.hpp"
#include "qple/rng.hpp"

namespace qple {

SimCase sim_case_from_name(const std::string& name) {
    if (name == "case_i") return SimCase::case_i;
    if (name == "case_ii") return SimCase::case_ii;
    if (name == "case_iii") return SimCase::case_iii;
    if (name == "franke_binomial") return SimCase::franke_binomial;
    if (name == "franke_poisson") return SimCase::franke_poisson;
    throw std::invalid_argument("unknown simulation case: " + name);
}

std::string sim_case_name(SimCase c) {
    switch (c) {
        case SimCase::case_i: return "case_i";
        case SimCase::case_ii: return "case_ii";
        case SimCase::case_iii: return "case_iii";
        case SimCase::franke_binomial: return "franke_binomial";
        case SimCase::franke_poisson: return "franke_poisson";
    }
    return "?";
}

namespace {

double franke(double x1, double x2) {
    const double a = 9 * x1 - 2, b = 9 * x2 - 2;
    const double c = 9 * x1 + 1, d = 9 * x2 + 1;
    const double e = 9 * x1 - 7, f = 9 * x2 - 3;
    const double g = 9 * x1 - 4, h = 9 * x2 - 7;
    return 0.75 * std::exp(-(a * a + b * b) / 4.0) + 0.75 * std::exp(-(c * c / 49.0 + d * d / 10.0)) +
           0.5 * std::exp(-(e * e + f * f) / 4.0) - 0.2 * std::exp(-(g * g + h * h));
}

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

double test_function(SimCase c, const RowVec& x) {
    switch (c) {
        case SimCase::case_i:
            return 0.63 * x[0] * std::cos(2.0 * M_PI * x[0]) + 0.36;
        case SimCase::case_ii:
            return 16.0 * std::exp(-18.0 * (x[0] - 0.4) * (x[0] - 0.4)) -
                   5.0 * std::exp(-7.0 * (x[0] - 0.5) * (x[0] - 0.5)) + 5.0;
        case SimCase::case_iii: {
            const double t = x[0];
            return 1e6 * std::pow(t, 11) * std::pow(1.0 - t, 6) + 1e4 * std::pow(t, 3) * std::pow(1.0 - t, 10) +
                   2.0;
        }
        case SimCase::franke_binomial:
            return (franke(x[0], x[1]) + 0.198) / 1.24;
        case SimCase::franke_poisson:
            return 15.0 * franke(x[0], x[1]) + 3.0;
    }
    throw std::logic_error("test_function: unhandled case");
}

double truth_value(SimCase c, const RowVec& x) {
    const double v = test_function(c, x);
    switch (c) {
        case SimCase::case_i:
        case SimCase::franke_binomial:
            return logit(v);
        default:
            return std::log(v);
    }
}

ExpFamilySpec sim_family(SimCase c) {
    switch (c) {
        case SimCase::case_i: return ExpFamilySpec::binomial(2);
        case SimCase::franke_binomial: return ExpFamilySpec::binomial(5);
        default: return ExpFamilySpec::poisson();
    }
}

int sim_dim(SimCase c) {
    return (c == SimCase::franke_binomial || c == SimCase::franke_poisson) ? 2 : 1;
}

int sim_default_n(SimCase c) { return sim_dim(c) == 1 ? 101 : 300; }

SimData generate_dataset(const Scenario& scenario, std::uint64_t seed) {
    const SimCase c = scenario.sim_case;
    const int n = scenario.n;
    if (n <= 0) throw std::invalid_argument("generate_dataset: n must be positive");
    const int d = sim_dim(c);
    const ExpFamilySpec fam = sim_family(c);

    Rng rng = derive_rng(seed, "simdata");
    SimData out;
    out.x_true = Matrix(n, d);
    out.y = Vector(n);
    out.f_true = Vector(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) out.x_true(i, j) = rng.uniform();
        const double v = test_function(c, out.x_true.row(i));
        out.f_true[i] = truth_value(c, out.x_true.row(i));
        out.y[i] = fam.is_binomial() ? rng.binomial(fam.trials, v) : rng.poisson(v);
    }
    return out;
}

namespace {

KernelSpec sim_kernel(SimCase c) {
    return sim_dim(c) == 1 ? KernelSpec::cubic_spline() : KernelSpec::thin_plate();
}

Dataset base_dataset(const Scenario& scenario, const SimData& sim) {
    Dataset ds;
    ds.family = sim_family(scenario.sim_case);
    ds.dim = sim_dim(scenario.sim_case);
    ds.kernel = sim_kernel(scenario.sim_case);
    ds.y = sim.y;
    return ds;
}

}  // namespace

Dataset full_dataset(const Scenario& scenario, const SimData& sim) {
    Dataset ds = base_dataset(scenario, sim);
    for (int i = 0; i < sim.y.size(); ++i)
        ds.obs.push_back(CovariateObservation::exact(sim.x_true.row(i).transpose()));
    return ds;
}

Dataset apply_measurement_error(const Scenario& scenario, const SimData& sim, std::uint64_t seed) {
    if (scenario.error == Scenario::ErrorKind::none)
        throw std::invalid_argument("apply_measurement_error: scenario has no error spec");
    const int n = static_cast<int>(sim.y.size());
    const int d = sim_dim(scenario.sim_case);
    Dataset ds = base_dataset(scenario, sim);

    if (!(scenario.error_scale > 0)) {
        // Degenerate contamination: everything stays exact.
        Dataset exact = full_dataset(scenario, sim);
        exact.degenerate_error = true;
        return exact;
    }

    Rng rng = derive_rng(seed, "error");
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    // Fisher-Yates prefix: the first exact_count positions stay exact.
    for (int i = 0; i < n - 1; ++i) {
        const int j = i + static_cast<int>(rng.uniform() * (n - i));
        std::swap(order[i], order[std::min(j, n - 1)]);
    }
    std::vector<bool> keep_exact(n, false);
    for (int k = 0; k < std::min(scenario.exact_count, n); ++k) keep_exact[order[k]] = true;

    for (int i = 0; i < n; ++i) {
        if (keep_exact[i]) {
            ds.obs.push_back(CovariateObservation::exact(sim.x_true.row(i).transpose()));
            continue;
        }
        Vector xe = sim.x_true.row(i).transpose();
        for (int j = 0; j < d; ++j) {
            const double u = scenario.error == Scenario::ErrorKind::normal
                                 ? rng.normal(0.0, scenario.error_scale)
                                 : rng.uniform(-scenario.error_scale, scenario.error_scale);
            xe[j] += u;
        }
        ds.obs.push_back(CovariateObservation::noisy(xe));
    }
    ErrorModel em;
    em.kind = scenario.error == Scenario::ErrorKind::normal ? ErrorModel::Kind::normal_iso
                                                            : ErrorModel::Kind::uniform_sym;
    em.known = scenario.error_known;
    if (em.known) em.scale = Vector::Constant(d, scenario.error_scale);
    ds.error_model = em;
    return ds;
}

Dataset apply_missingness(const Scenario& scenario, const SimData& sim, std::uint64_t seed) {
    const SimCase c = scenario.sim_case;
    if (sim_dim(c) != 2)
        throw std::invalid_argument("apply_missingness: deletion rule is defined for the Franke cases");
    const double threshold = c == SimCase::franke_binomial ? 3.0 : 10.0;
    const int n = static_cast<int>(sim.y.size());
    Dataset ds = base_dataset(scenario, sim);
    Rng rng = derive_rng(seed, "missing");
    for (int i = 0; i < n; ++i) {
        Vector x = sim.x_true.row(i).transpose();
        if (sim.y[i] > threshold) {
            const double u = rng.uniform();
            if (u < 1.0 / 3.0)
                x[0] = std::nan("");
            else if (u < 2.0 / 3.0)
                x[1] = std::nan("");
            else {
                x[0] = std::nan("");
                x[1] = std::nan("");
            }
            ds.obs.push_back(CovariateObservation::partially_missing(x));
        } else {
            ds.obs.push_back(CovariateObservation::exact(x));
        }
    }
    CovariateModel cm;
    cm.gaussian_coords = {0, 1};
    cm.known = false;
    ds.covariate_model = cm;
    return ds;
}

Dataset naive_dataset(const Scenario& scenario, const Dataset& contaminated) {
    Dataset ds;
    ds.family = contaminated.family;
    ds.dim = contaminated.dim;
    ds.kernel = contaminated.kernel;
    ds.rescale = contaminated.rescale;
    std::vector<double> y;
    for (int i = 0; i < contaminated.n(); ++i) {
        const auto& o = contaminated.obs[i];
        switch (o.kind) {
            case CovariateObservation::Kind::noisy:
                ds.obs.push_back(CovariateObservation::exact(o.x));
                y.push_back(contaminated.y[i]);
                break;
            case CovariateObservation::Kind::partially_missing:
                break;  // dropped
            default:
                ds.obs.push_back(contaminated.obs[i]);
                y.push_back(contaminated.y[i]);
                break;
        }
    }
    if (y.empty()) throw std::runtime_error("naive_dataset: every subject was dropped");
    ds.y = Eigen::Map<Vector>(y.data(), y.size());
    (void)scenario;
    return ds;
}

namespace {

// Cubic splines live on the unit interval; contaminated coordinates can
// leave it, so the dataset is affinely rescaled the way ingestion does
// (noisy coordinates get a four-scale margin for their shifted nodes).
void rescale_to_unit(Dataset& ds) {
    if (!(ds.kernel && ds.kernel->type == KernelSpec::Type::cubic_spline)) return;
    const int d = ds.dim;
    Vector lo = Vector::Constant(d, 0.0), hi = Vector::Constant(d, 1.0);
    Vector noisy_margin = Vector::Zero(d);
    if (ds.has_noisy() && ds.error_model) {
        noisy_margin = ds.error_model->scale.size() == d
                           ? 4.0 * ds.error_model->scale
                           : 4.0 * mom_error_scale(ds, ds.error_model->kind);
    }
    bool needed = false;
    for (const auto& o : ds.obs) {
        const Vector* pts = &o.x;
        if (o.kind == CovariateObservation::Kind::discrete) pts = nullptr;
        Vector margin = Vector::Zero(d);
        if (o.kind == CovariateObservation::Kind::noisy && ds.error_model) margin = noisy_margin;
        if (pts) {
            for (int j = 0; j < d; ++j) {
                if (std::isnan((*pts)[j])) continue;
                if ((*pts)[j] - margin[j] < lo[j] || (*pts)[j] + margin[j] > hi[j]) needed = true;
                lo[j] = std::min(lo[j], (*pts)[j] - margin[j]);
                hi[j] = std::max(hi[j], (*pts)[j] + margin[j]);
            }
        } else {
            for (int r = 0; r < o.discrete_rule.size(); ++r)
                for (int j = 0; j < d; ++j) {
                    const double v = o.discrete_rule.nodes(r, j);
                    if (v < lo[j] || v > hi[j]) needed = true;
                    lo[j] = std::min(lo[j], v);
                    hi[j] = std::max(hi[j], v);
                }
        }
    }
    if (!needed) return;
    RescaleMap map;
    map.lo = lo;
    map.range = (hi - lo).cwiseMax(1e-12);
    for (auto& o : ds.obs) {
        if (o.kind == CovariateObservation::Kind::discrete) {
            for (int r = 0; r < o.discrete_rule.size(); ++r)
                o.discrete_rule.nodes.row(r) =
                    (o.discrete_rule.nodes.row(r) - lo.transpose()).cwiseQuotient(map.range.transpose());
        } else if (o.x.size() > 0) {
            for (int j = 0; j < d; ++j)
                if (!std::isnan(o.x[j])) o.x[j] = (o.x[j] - lo[j]) / map.range[j];
        }
    }
    if (ds.error_model && ds.error_model->scale.size() == d)
        ds.error_model->scale = ds.error_model->scale.cwiseQuotient(map.range);
    ds.rescale = map;
}

}  // namespace

std::vector<ComparisonRow> run_comparison(const Scenario& scenario, const ComparisonOptions& options) {
    if (options.replicates < 1 || options.replicates > 100)
        throw std::invalid_argument("run_comparison: replicates must be in 1..100");
    std::vector<double> grid = options.lambda_grid;
    if (grid.empty()) grid = log_grid(-6.0, -1.0, 11);

    const int rows_per_rep =
        static_cast<int>(options.methods.size()) * static_cast<int>(options.tunings.size());
    std::vector<ComparisonRow> rows(options.replicates * rows_per_rep);

    parallel_for(options.replicates, options.jobs, [&](int rep) {
        const std::uint64_t rep_seed = mix_seed(options.seed, "replicate", static_cast<std::uint64_t>(rep));
        const SimData sim = generate_dataset(scenario, rep_seed);

        Dataset contaminated;
        if (scenario.error != Scenario::ErrorKind::none)
            contaminated = apply_measurement_error(scenario, sim, rep_seed);
        else if (scenario.missingness)
            contaminated = apply_missingness(scenario, sim, rep_seed);
        else
            contaminated = full_dataset(scenario, sim);

        int slot = rep * rows_per_rep;
        for (const std::string& method : options.methods) {
            Dataset ds;
            if (method == "full")
                ds = full_dataset(scenario, sim);
            else if (method == "qple")
                ds = contaminated;
            else if (method == "naive")
                ds = naive_dataset(scenario, contaminated);
            else
                throw std::invalid_argument("run_comparison: unknown method " + method);
            rescale_to_unit(ds);

            for (const Criterion crit : options.tunings) {
                TuneOptions topt;
                topt.criterion = crit;
                topt.truth_x = &sim.x_true;
                topt.truth_f = &sim.f_true;
                topt.rangacv = options.rangacv;
                topt.rangacv.seed = mix_seed(rep_seed, method + "/rangacv");
                EmOptions em = options.em;
                em.quad.clamp_unit = ds.kernel && ds.kernel->type == KernelSpec::Type::cubic_spline;
                // saturated draws can trip the null-space diagnostic on the few
                // exact subjects; the penalized fit itself is well defined
                em.override_a1 = true;
                const LambdaSelection sel = select_lambda(ds, grid, em, topt);
                ComparisonRow row;
                row.replicate = rep;
                row.method = method;
                row.tuning = criterion_name(crit);
                row.lambda = sel.lambda;
                row.tkl_value = tkl(sel.fit.model, sim.x_true, sim.f_true);
                rows[slot++] = row;
            }
        }
    });
    return rows;
}

}  // namespace qple
