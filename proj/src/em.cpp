#include "qple/em.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

namespace qple {

Vector estep_weights(double y, const Vector& f_nodes, const Vector& pi, const ExpFamilySpec& family) {
    if ((pi.array() <= 0).any() || std::abs(pi.sum() - 1.0) > 1e-9)
        throw std::invalid_argument("estep_weights: pi must be positive and sum to 1");
    return likelihood_weights(Vector::Constant(f_nodes.size(), y), f_nodes, pi, family);
}

RuleSet build_rules(const Dataset& data, const std::optional<ErrorModel>& error,
                    const std::optional<CovariateModel>& covariate, const QuadConfig& config) {
    RuleSet rs;
    RuleContext ctx;
    ctx.config = config;
    if (error) {
        ctx.error = &*error;
        if (data.has_noisy()) {
            rs.u_rule = error_rule(*error, config);
            ctx.shared_error_rule = &*rs.u_rule;
        }
    }
    if (covariate) ctx.covariate = &*covariate;

    std::vector<int> counts;
    rs.rules.reserve(data.n());
    for (const auto& obs : data.obs) {
        rs.rules.push_back(rule_for_subject(obs, ctx));
        counts.push_back(rs.rules.back().size());
    }
    rs.layout = SubjectLayout::from_counts(counts);
    rs.nodes = Matrix(rs.layout.total, data.dim);
    rs.pi = Vector(rs.layout.total);
    rs.y_nodes = Vector(rs.layout.total);
    for (int i = 0; i < data.n(); ++i) {
        const int off = rs.layout.offset[i];
        rs.nodes.middleRows(off, rs.layout.count[i]) = rs.rules[i].nodes;
        rs.pi.segment(off, rs.layout.count[i]) = rs.rules[i].weights;
        rs.y_nodes.segment(off, rs.layout.count[i]).setConstant(data.y[i]);
    }
    return rs;
}

double observed_objective(const Vector& y, const Vector& fitted, const Vector& pi,
                          const SubjectLayout& layout, const ExpFamilySpec& family, double lambda,
                          double penalty_quadratic) {
    const int n = layout.subjects();
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const int off = layout.offset[i], m = layout.count[i];
        double top = -std::numeric_limits<double>::infinity();
        Vector terms(m);
        for (int j = 0; j < m; ++j) {
            terms[j] = std::log(pi[off + j]) + y[i] * fitted[off + j] - b(fitted[off + j], family);
            top = std::max(top, terms[j]);
        }
        acc += top + std::log((terms.array() - top).exp().sum());
    }
    return -acc / n + 0.5 * lambda * penalty_quadratic;
}

namespace {

double penalty_quad(const RepresenterBasis& basis, const Vector& c) {
    return c.dot(basis.gram_raw * c);
}

Vector stacked_estep(const Vector& y_nodes, const Vector& fitted, const Vector& pi,
                     const SubjectLayout& layout, const ExpFamilySpec& family) {
    Vector w(layout.total);
    for (int i = 0; i < layout.subjects(); ++i) {
        const int off = layout.offset[i], m = layout.count[i];
        w.segment(off, m) =
            likelihood_weights(y_nodes.segment(off, m), fitted.segment(off, m), pi.segment(off, m), family);
    }
    return w;
}

// Observed objective with per-node responses (used by perturbed refits).
double observed_objective_nodes(const Vector& y_nodes, const Vector& fitted, const Vector& pi,
                                const SubjectLayout& layout, const ExpFamilySpec& family, double lambda,
                                double penalty_quadratic) {
    const int n = layout.subjects();
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const int off = layout.offset[i], m = layout.count[i];
        double top = -std::numeric_limits<double>::infinity();
        Vector terms(m);
        for (int j = 0; j < m; ++j) {
            terms[j] =
                std::log(pi[off + j]) + y_nodes[off + j] * fitted[off + j] - b(fitted[off + j], family);
            top = std::max(top, terms[j]);
        }
        acc += top + std::log((terms.array() - top).exp().sum());
    }
    return -acc / n + 0.5 * lambda * penalty_quadratic;
}

Vector rule_mean(const QuadratureRule& rule) { return rule.nodes.transpose() * rule.weights; }

// Classical fit over the one-node (distribution mean) rules; the EM
// initializer.
WeightedFit naive_initial_values(const Dataset& data, const RuleSet& rs, double lambda,
                                 const ExpFamilySpec& family, const EmOptions& options,
                                 const RepresenterBasis& target_basis, const KernelSpec& kernel) {
    Matrix mean_nodes(data.n(), data.dim);
    for (int i = 0; i < data.n(); ++i) mean_nodes.row(i) = rule_mean(rs.rules[i]).transpose();
    if (options.quad.clamp_unit) mean_nodes = mean_nodes.cwiseMax(0.0).cwiseMin(1.0);
    RepresenterBasis naive_basis(mean_nodes, kernel);
    WeightedFit naive = fit_weighted(naive_basis, data.y, Vector::Ones(data.n()), data.n(), lambda, family,
                                     std::nullopt, options.solver);
    RepresenterModel m0;
    m0.d = naive.d;
    m0.c = naive.c;
    m0.nodes = mean_nodes;
    m0.kernel = kernel;
    m0.lambda = lambda;
    m0.family = family;
    const Vector f0 = evaluate_unit(m0, target_basis.nodes);
    return interpolate_basis(target_basis, f0);
}

void check_a1(const Dataset& data, const KernelSpec& kernel, const EmOptions& options,
              std::vector<std::string>& warnings) {
    std::vector<int> exact_idx;
    for (int i = 0; i < data.n(); ++i)
        if (data.obs[i].kind == CovariateObservation::Kind::exact) exact_idx.push_back(i);
    Matrix pts(exact_idx.size(), data.dim);
    Vector ye(exact_idx.size());
    for (size_t k = 0; k < exact_idx.size(); ++k) {
        pts.row(static_cast<int>(k)) = data.obs[exact_idx[k]].x.transpose();
        ye[static_cast<int>(k)] = data.y[exact_idx[k]];
    }
    auto verdict = a1_diagnostic(pts, ye, kernel, data.family);
    if (verdict) {
        if (options.override_a1)
            warnings.push_back("A.1 diagnostic overridden: " + *verdict);
        else
            throw std::runtime_error("A.1 null-space condition diagnostic failed: " + *verdict +
                                     " (rerun with the override flag to proceed)");
    }
}

struct ThetaState {
    std::optional<ErrorModel> error;
    std::optional<CovariateModel> covariate;
    bool updating = false;
};

// Starting values for an unknown error scale (kept when already supplied).
void init_error_model(const Dataset& data, ErrorModel& model) {
    if (model.scale.size() == static_cast<Eigen::Index>(data.dim) && (model.scale.array() > 0).all())
        return;
    model.scale = mom_error_scale(data, model.kind);
}

// Complete-case MLE starting values for the covariate model.
void init_covariate_model(const Dataset& data, CovariateModel& model) {
    if (model.sigma.rows() == static_cast<Eigen::Index>(model.gaussian_coords.size()) &&
        model.sigma.rows() > 0 && model.coef.size() > 0)
        return;
    std::vector<int> complete;
    for (int i = 0; i < data.n(); ++i)
        if (data.obs[i].kind != CovariateObservation::Kind::partially_missing) complete.push_back(i);
    if (complete.size() < model.gaussian_coords.size() + 2)
        throw std::runtime_error("missing-covariate model: too few complete cases to initialize theta");
    Matrix nodes(complete.size(), data.dim);
    for (size_t k = 0; k < complete.size(); ++k) nodes.row(static_cast<int>(k)) = data.obs[complete[k]].x.transpose();
    SubjectLayout lay = SubjectLayout::from_counts(std::vector<int>(complete.size(), 1));
    update_theta_missing(Vector::Ones(complete.size()), nodes, lay, model);
}

}  // namespace

FitResult em_fit_fixed_rules(const std::shared_ptr<RepresenterBasis>& basis, const SubjectLayout& layout,
                             const Vector& pi, const Vector& y_nodes, const Vector& y_subject,
                             double lambda, const ExpFamilySpec& family, const EmOptions& options,
                             const WeightedFit* warm) {
    FitResult res;
    res.basis = basis;
    res.layout = layout;
    res.pi = pi;
    res.y_nodes = y_nodes;
    res.y = y_subject;
    res.lambda = lambda;
    res.family = family;

    WeightedFit cur;
    if (warm && warm->c.size() == basis->size()) {
        cur = *warm;
    } else {
        cur.d = Vector::Zero(basis->null_dim());
        cur.c = Vector::Zero(basis->size());
        cur.fitted = Vector::Zero(basis->size());
    }

    const int n = layout.subjects();
    double prev = std::numeric_limits<double>::infinity();
    bool all_single = true;
    for (int i = 0; i < n; ++i) all_single = all_single && layout.count[i] == 1;

    for (int t = 0; t < options.max_iter; ++t) {
        res.iterations = t + 1;
        const Vector w = stacked_estep(y_nodes, cur.fitted, pi, layout, family);
        const double obj = observed_objective_nodes(y_nodes, cur.fitted, pi, layout, family, lambda,
                                                    penalty_quad(*basis, cur.c));
        res.em_trace.push_back(obj);
        if (t > 0 && options.f_tol <= 0 &&
            std::abs(obj - prev) <= options.rel_tol * (1.0 + std::abs(prev))) {
            res.converged = true;
            break;
        }
        prev = obj;
        const Vector f_before = cur.fitted;
        cur = fit_weighted(*basis, y_nodes, w, n, lambda, family, cur, options.solver);
        if (options.f_tol > 0 && (cur.fitted - f_before).cwiseAbs().maxCoeff() < options.f_tol) {
            res.em_trace.push_back(observed_objective_nodes(y_nodes, cur.fitted, pi, layout, family, lambda,
                                                            penalty_quad(*basis, cur.c)));
            res.converged = true;
            break;
        }
        if (all_single && t == 0) {
            // every subject exact: one M-step is the classical fit
            res.em_trace.push_back(observed_objective_nodes(y_nodes, cur.fitted, pi, layout, family, lambda,
                                                            penalty_quad(*basis, cur.c)));
            res.converged = true;
            res.iterations = 1;
            break;
        }
    }
    if (!res.converged)
        res.warnings.push_back("EM did not converge in " + std::to_string(options.max_iter) + " iterations");

    res.weights = stacked_estep(y_nodes, cur.fitted, pi, layout, family);
    res.fitted = cur.fitted;
    res.model.d = cur.d;
    res.model.c = cur.c;
    res.model.nodes = basis->nodes;
    res.model.kernel = basis->kernel;
    res.model.lambda = lambda;
    res.model.family = family;
    return res;
}

namespace {

FitResult qple_theta_loop(const Dataset& data, double lambda, const EmOptions& options,
                          const KernelSpec& kernel, ThetaState theta,
                          std::vector<std::string> warnings) {
    const int n = data.n();
    RuleSet rs = build_rules(data, theta.error, theta.covariate, options.quad);
    auto basis = std::make_shared<RepresenterBasis>(rs.nodes, kernel);
    WeightedFit cur = naive_initial_values(data, rs, lambda, data.family, options, *basis, kernel);

    FitResult res;
    res.family = data.family;
    res.lambda = lambda;
    res.y = data.y;

    double prev = std::numeric_limits<double>::infinity();
    bool converged = false;
    int iters = 0;
    for (int t = 0; t < options.max_iter; ++t) {
        iters = t + 1;
        const Vector w = stacked_estep(rs.y_nodes, cur.fitted, rs.pi, rs.layout, data.family);
        const double obj = observed_objective(data.y, cur.fitted, rs.pi, rs.layout, data.family, lambda,
                                              penalty_quad(*basis, cur.c));
        res.em_trace.push_back(obj);
        if (t > 0 && std::abs(obj - prev) <= options.rel_tol * (1.0 + std::abs(prev))) {
            converged = true;
            break;
        }
        prev = obj;

        // M-step for f on the current rules.
        cur = fit_weighted(*basis, rs.y_nodes, w, n, lambda, data.family, cur, options.solver);

        // M-step for theta, then rules for the next iteration.  Once theta
        // stops moving the rules are final and the loop continues on the
        // fixed basis.
        if (theta.updating) {
            Vector theta_before = theta.error ? theta.error->scale : Vector();
            Matrix coef_before, sigma_before;
            if (theta.covariate) {
                coef_before = theta.covariate->coef;
                sigma_before = theta.covariate->sigma;
            }
            if (theta.error && !theta.error->known) {
                std::vector<int> noisy;
                for (int i = 0; i < n; ++i)
                    if (data.obs[i].kind == CovariateObservation::Kind::noisy) noisy.push_back(i);
                Matrix wn(noisy.size(), rs.u_rule->size());
                for (size_t k = 0; k < noisy.size(); ++k)
                    wn.row(static_cast<int>(k)) =
                        w.segment(rs.layout.offset[noisy[k]], rs.layout.count[noisy[k]]).transpose();
                auto upd = update_theta_measurement_error(wn, *rs.u_rule, *theta.error);
                for (auto& msg : upd.warnings) warnings.push_back(msg);
                if (upd.degenerate) {
                    warnings.push_back("stopping EM: error scale collapsed");
                    converged = false;
                    break;
                }
            }
            if (theta.covariate && !theta.covariate->known) {
                auto upd = update_theta_missing(w, rs.nodes, rs.layout, *theta.covariate);
                for (auto& msg : upd.warnings) warnings.push_back(msg);
            }
            double theta_change = 0.0;
            if (theta.error && theta_before.size() == theta.error->scale.size())
                theta_change = std::max(theta_change, (theta.error->scale - theta_before).cwiseAbs().maxCoeff() /
                                                          (1.0 + theta_before.cwiseAbs().maxCoeff()));
            if (theta.covariate && coef_before.size() == theta.covariate->coef.size()) {
                theta_change =
                    std::max(theta_change, (theta.covariate->coef - coef_before).cwiseAbs().maxCoeff() /
                                               (1.0 + coef_before.cwiseAbs().maxCoeff()));
                theta_change =
                    std::max(theta_change, (theta.covariate->sigma - sigma_before).cwiseAbs().maxCoeff() /
                                               (1.0 + sigma_before.cwiseAbs().maxCoeff()));
            }
            if (theta_change < 1e-6) {
                theta.updating = false;  // rules are final; finish EM on this basis
            } else {
                // Rebuild rules under the new theta and carry f over to the
                // new node set.
                RepresenterModel snapshot;
                snapshot.d = cur.d;
                snapshot.c = cur.c;
                snapshot.nodes = basis->nodes;
                snapshot.kernel = kernel;
                snapshot.lambda = lambda;
                snapshot.family = data.family;
                rs = build_rules(data, theta.error, theta.covariate, options.quad);
                basis = std::make_shared<RepresenterBasis>(rs.nodes, kernel);
                const Vector fvals = evaluate_unit(snapshot, basis->nodes);
                cur = interpolate_basis(*basis, fvals);
            }
        }
    }
    if (!converged)
        warnings.push_back("EM did not converge in " + std::to_string(options.max_iter) + " iterations");

    res.converged = converged;
    res.iterations = iters;
    res.layout = rs.layout;
    res.pi = rs.pi;
    res.y_nodes = rs.y_nodes;
    res.rules = rs.rules;
    res.basis = basis;
    res.weights = stacked_estep(rs.y_nodes, cur.fitted, rs.pi, rs.layout, data.family);
    res.fitted = cur.fitted;
    res.model.d = cur.d;
    res.model.c = cur.c;
    res.model.nodes = basis->nodes;
    res.model.kernel = kernel;
    res.model.lambda = lambda;
    res.model.family = data.family;
    res.model.rescale = data.rescale;
    res.error_model = theta.error;
    res.covariate_model = theta.covariate;
    res.warnings = std::move(warnings);
    if (!options.quiet)
        for (const auto& msg : res.warnings) std::cerr << "[qple] warning: " << msg << "\n";
    return res;
}

KernelSpec default_kernel_for(const Dataset& data, const EmOptions& options, const KernelSpec* kernel) {
    (void)options;
    if (kernel) return *kernel;
    if (data.dim == 1) return KernelSpec::cubic_spline();
    if (data.dim == 2) return KernelSpec::thin_plate();
    throw std::invalid_argument("qple_fit: no default kernel for dimension " + std::to_string(data.dim));
}

}  // namespace

FitResult qple_fit(const Dataset& data, double lambda, const EmOptions& options,
                   const FitResult* warm) {
    data.validate();
    if (!(lambda > 0)) throw std::invalid_argument("qple_fit: lambda must be positive");
    KernelSpec kernel = default_kernel_for(data, options, data.kernel ? &*data.kernel : nullptr);

    std::vector<std::string> warnings;
    check_a1(data, kernel, options, warnings);

    ThetaState theta;
    theta.error = data.error_model;
    theta.covariate = data.covariate_model;
    if (theta.error && !theta.error->known && data.has_noisy()) {
        if (warm && warm->error_model && warm->error_model->scale.size() == data.dim)
            theta.error->scale = warm->error_model->scale;
        init_error_model(data, *theta.error);
        theta.updating = true;
    }
    if (theta.covariate && !theta.covariate->known) {
        if (warm && warm->covariate_model && warm->covariate_model->sigma.rows() ==
                                                 static_cast<Eigen::Index>(theta.covariate->gaussian_coords.size())) {
            theta.covariate->coef = warm->covariate_model->coef;
            theta.covariate->sigma = warm->covariate_model->sigma;
            theta.covariate->logit_coef = warm->covariate_model->logit_coef;
        }
        // Complete-case MLE; with no missing subjects this is already the
        // final estimate and the rules never move.
        init_covariate_model(data, *theta.covariate);
        if (data.has_missing()) theta.updating = true;
    }

    if (theta.updating) return qple_theta_loop(data, lambda, options, kernel, theta, std::move(warnings));

    // Fixed rules throughout: single basis, plain EM.
    RuleSet rs = build_rules(data, theta.error, theta.covariate, options.quad);
    std::shared_ptr<RepresenterBasis> basis;
    WeightedFit init;
    const bool reuse = warm && warm->basis && warm->basis->size() == rs.layout.total &&
                       warm->layout.count == rs.layout.count && warm->basis->kernel.type == kernel.type;
    if (reuse) {
        basis = warm->basis;
        init.d = warm->model.d;
        init.c = warm->model.c;
        init.fitted = warm->fitted;
    } else {
        basis = std::make_shared<RepresenterBasis>(rs.nodes, kernel);
        init = naive_initial_values(data, rs, lambda, data.family, options, *basis, kernel);
    }
    FitResult res = em_fit_fixed_rules(basis, rs.layout, rs.pi, rs.y_nodes, data.y, lambda, data.family,
                                       options, &init);
    res.rules = rs.rules;
    res.model.rescale = data.rescale;
    res.error_model = theta.error;
    res.covariate_model = theta.covariate;
    for (auto& msg : warnings) res.warnings.push_back(msg);
    if (!options.quiet)
        for (const auto& msg : res.warnings) std::cerr << "[qple] warning: " << msg << "\n";
    return res;
}

FitResult qple_fit_measurement_error(const Dataset& data, double lambda, const EmOptions& options) {
    if (!data.has_noisy())
        throw std::invalid_argument(
            "qple_fit_measurement_error: no noisy subjects, the error scale is unidentifiable");
    return qple_fit(data, lambda, options);
}

FitResult qple_fit_missing(const Dataset& data, double lambda, const EmOptions& options) {
    if (!data.covariate_model)
        throw std::invalid_argument("qple_fit_missing: dataset carries no covariate model");
    // With no incomplete subjects this reduces to the classical fit plus the
    // plain complete-data MLE of the covariate model.
    return qple_fit(data, lambda, options);
}

Vector em_one_sweep(const FitResult& fit) {
    const Vector w = fit.weights;
    WeightedFit warm;
    warm.d = fit.model.d;
    warm.c = fit.model.c;
    warm.fitted = fit.fitted;
    FitOptions opts;
    opts.grad_tol = 1e-12;
    const WeightedFit next = fit_weighted(*fit.basis, fit.y_nodes, w, fit.layout.subjects(), fit.lambda,
                                          fit.family, warm, opts);
    return next.fitted;
}

}  // namespace qple
