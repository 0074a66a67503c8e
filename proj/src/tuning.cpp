#include "qple/tuning.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "qple/parallel.hpp"
#include "qple/rng.hpp"

namespace qple {

double obs_criterion(const FitResult& fit) {
    return observed_objective(fit.y, fit.fitted, fit.pi, fit.layout, fit.family, 0.0, 0.0);
}

Vector d_weights(const FitResult& fit, int subject) {
    const int off = fit.layout.offset[subject], m = fit.layout.count[subject];
    const Vector w = fit.weights.segment(off, m);
    const Vector f = fit.fitted.segment(off, m);
    const double y = fit.y[subject];
    const double fbar = w.dot(f);
    Vector d(m);
    for (int j = 0; j < m; ++j) d[j] = w[j] * ((y - mean(f[j], fit.family)) * (f[j] - fbar) + 1.0);
    return d;
}

GeneralizedAverage generalized_average(const std::vector<Matrix>& blocks, const SubjectLayout& layout) {
    const int n = layout.subjects();
    double trace = 0.0, offsum = 0.0;
    for (int k = 0; k < n; ++k) {
        trace += blocks[k].trace();
        offsum += blocks[k].sum() - blocks[k].trace();
    }
    GeneralizedAverage g;
    g.delta = Vector(n);
    g.gamma = Vector(n);
    for (int i = 0; i < n; ++i) {
        const int m = layout.count[i];
        g.delta[i] = trace / (static_cast<double>(n) * m);
        g.gamma[i] = m == 1 ? 0.0 : offsum / (static_cast<double>(n) * m * (m - 1));
    }
    return g;
}

Vector GeneralizedAverage::apply(int i, const Vector& v) const {
    const double d = delta[i], g = gamma[i];
    return (d - g) * v + g * v.sum() * Vector::Ones(v.size());
}

Vector GeneralizedAverage::apply_inverse(int i, const Vector& v) const {
    const int m = static_cast<int>(v.size());
    const double d = delta[i], g = gamma[i];
    const double lead = d - g, full = d + (m - 1) * g;
    if (std::abs(lead) < 1e-14 || std::abs(full) < 1e-14)
        throw std::runtime_error("generalized average: singular block (delta == gamma)");
    return v / lead - (g * v.sum() / (lead * full)) * Vector::Ones(m);
}

Matrix GeneralizedAverage::dense(int i, int m) const {
    return (delta[i] - gamma[i]) * Matrix::Identity(m, m) + gamma[i] * Matrix::Ones(m, m);
}

namespace {

double gacv_trace_term(const FitResult& fit, const GeneralizedAverage& gen_h,
                       const GeneralizedAverage& gen_g) {
    const int n = fit.layout.subjects();
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const int off = fit.layout.offset[i], m = fit.layout.count[i];
        Vector resid(m);
        for (int j = 0; j < m; ++j) resid[j] = fit.y[i] - mean(fit.fitted[off + j], fit.family);
        const Vector hr = gen_h.apply(i, resid);
        const Vector ghr = gen_g.apply_inverse(i, hr);
        acc += fit.y[i] * d_weights(fit, i).dot(ghr);
    }
    return acc / n;
}

}  // namespace

double gacv(const FitResult& fit, const InfluenceBlocks& blocks) {
    const auto gen_h = generalized_average(blocks.H, fit.layout);
    const auto gen_g = generalized_average(blocks.G, fit.layout);
    return obs_criterion(fit) + gacv_trace_term(fit, gen_h, gen_g);
}

double rangacv(const FitResult& fit, const RanGacvOptions& options, std::vector<std::string>* warnings) {
    const int n = fit.layout.subjects();
    const int total = fit.layout.total;
    const double sd_y = std::sqrt((fit.y.array() - fit.y.mean()).square().sum() / n);
    const double sp = options.sigma_perturb > 0 ? options.sigma_perturb : 0.01 * std::max(sd_y, 1e-3);
    const double s2 = sp * sp;

    Vector w_var(total);
    for (int k = 0; k < total; ++k) w_var[k] = variance(fit.fitted[k], fit.family);

    WeightedFit warm;
    warm.d = fit.model.d;
    warm.c = fit.model.c;
    warm.fitted = fit.fitted;

    EmOptions refit_opts;
    refit_opts.rel_tol = 1e-9;
    refit_opts.max_iter = 200;
    refit_opts.solver.grad_tol = 1e-10;

    double acc = 0.0;
    int kept = 0;
    for (int r = 0; r < options.replicates; ++r) {
        Rng rng = derive_rng(options.seed, "rangacv", static_cast<std::uint64_t>(r));
        Vector eps(total), eps_bar(total);
        for (int k = 0; k < total; ++k) eps[k] = sp * rng.normal();
        for (int i = 0; i < n; ++i) {
            const int off = fit.layout.offset[i], m = fit.layout.count[i];
            const double bar = eps.segment(off, m).sum() / std::sqrt(static_cast<double>(m));
            eps_bar.segment(off, m).setConstant(bar);
        }
        try {
            const FitResult fe = em_fit_fixed_rules(fit.basis, fit.layout, fit.pi, fit.y_nodes + eps, fit.y,
                                                    fit.lambda, fit.family, refit_opts, &warm);
            const FitResult fb = em_fit_fixed_rules(fit.basis, fit.layout, fit.pi, fit.y_nodes + eps_bar,
                                                    fit.y, fit.lambda, fit.family, refit_opts, &warm);
            const Vector de = fe.fitted - fit.fitted;
            const Vector db = fb.fitted - fit.fitted;
            const double t_h = eps.dot(de);
            const double t_hb = eps_bar.dot(db);
            const double t_g = eps.squaredNorm() - eps.dot(w_var.cwiseProduct(de));
            const double t_gb = eps_bar.squaredNorm() - eps_bar.dot(w_var.cwiseProduct(db));

            GeneralizedAverage gen_h, gen_g;
            gen_h.delta = Vector(n);
            gen_h.gamma = Vector(n);
            gen_g.delta = Vector(n);
            gen_g.gamma = Vector(n);
            for (int i = 0; i < n; ++i) {
                const int m = fit.layout.count[i];
                const double nm = static_cast<double>(n) * m;
                gen_h.delta[i] = t_h / (nm * s2);
                gen_g.delta[i] = t_g / (nm * s2);
                gen_h.gamma[i] = m == 1 ? 0.0 : (t_hb - t_h) / (nm * (m - 1) * s2);
                gen_g.gamma[i] = m == 1 ? 0.0 : (t_gb - t_g) / (nm * (m - 1) * s2);
            }
            acc += gacv_trace_term(fit, gen_h, gen_g);
            ++kept;
        } catch (const std::exception& e) {
            if (warnings)
                warnings->push_back("rangacv replicate " + std::to_string(r) + " dropped: " + e.what());
        }
    }
    if (kept == 0) throw std::runtime_error("rangacv: every replicate failed");
    return obs_criterion(fit) + acc / kept;
}

namespace {

RepresenterBasis basis_excluding(const RepresenterBasis& full, const SubjectLayout& layout, int subject) {
    const int total = layout.total;
    const int off = layout.offset[subject], m = layout.count[subject];
    std::vector<int> keep;
    keep.reserve(total - m);
    for (int k = 0; k < total; ++k)
        if (k < off || k >= off + m) keep.push_back(k);
    const int r = static_cast<int>(keep.size());
    RepresenterBasis red;
    red.kernel = full.kernel;
    red.nodes = Matrix(r, full.nodes.cols());
    red.null_mat = Matrix(r, full.null_mat.cols());
    red.gram_raw = Matrix(r, r);
    red.gram = Matrix(r, r);
    for (int a = 0; a < r; ++a) {
        red.nodes.row(a) = full.nodes.row(keep[a]);
        red.null_mat.row(a) = full.null_mat.row(keep[a]);
        for (int b2 = 0; b2 < r; ++b2) {
            red.gram_raw(a, b2) = full.gram_raw(keep[a], keep[b2]);
            red.gram(a, b2) = full.gram(keep[a], keep[b2]);
        }
    }
    return red;
}

}  // namespace

double exact_loocv(const FitResult& fit, const EmOptions& options) {
    const int n = fit.layout.subjects();
    if (n < 2) throw std::invalid_argument("exact_loocv: cannot leave out the only subject");

    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const int off = fit.layout.offset[i], m = fit.layout.count[i];
        auto reduced = std::make_shared<RepresenterBasis>(basis_excluding(*fit.basis, fit.layout, i));
        std::vector<int> counts;
        for (int k = 0; k < n; ++k)
            if (k != i) counts.push_back(fit.layout.count[k]);
        SubjectLayout lay = SubjectLayout::from_counts(counts);
        Vector y_nodes(lay.total), pi(lay.total), y_sub(n - 1);
        int at = 0, si = 0;
        for (int k = 0; k < n; ++k) {
            if (k == i) continue;
            const int ko = fit.layout.offset[k], km = fit.layout.count[k];
            y_nodes.segment(at, km) = fit.y_nodes.segment(ko, km);
            pi.segment(at, km) = fit.pi.segment(ko, km);
            y_sub[si++] = fit.y[k];
            at += km;
        }
        // Lemma B.1 keeps the original n*lambda penalty in the leave-out
        // objective; the (n-1)-subject refit needs lambda scaled accordingly.
        const double lambda_sub = fit.lambda * n / (n - 1.0);
        WeightedFit warm;
        warm.d = fit.model.d;
        warm.c = Vector(lay.total);
        at = 0;
        for (int k = 0; k < n; ++k) {
            if (k == i) continue;
            warm.c.segment(at, fit.layout.count[k]) =
                fit.model.c.segment(fit.layout.offset[k], fit.layout.count[k]);
            at += fit.layout.count[k];
        }
        warm.fitted = reduced->null_mat * warm.d + reduced->gram_raw * warm.c;
        EmOptions opts = options;
        opts.rel_tol = std::min(options.rel_tol, 1e-9);
        const FitResult sub =
            em_fit_fixed_rules(reduced, lay, pi, y_nodes, y_sub, lambda_sub, fit.family, opts, &warm);

        const Vector f_i_out = evaluate_unit(sub.model, fit.basis->nodes.middleRows(off, m));
        const Vector w_out = estep_weights(fit.y[i], f_i_out, fit.pi.segment(off, m), fit.family);
        const Vector w_in = fit.weights.segment(off, m);
        const Vector f_in = fit.fitted.segment(off, m);
        acc += fit.y[i] * (w_in.dot(f_in) - w_out.dot(f_i_out));
    }
    return obs_criterion(fit) + acc / n;
}

double tkl(const RepresenterModel& model, const Matrix& x_true, const Vector& f_true) {
    const int n = static_cast<int>(x_true.rows());
    if (f_true.size() != n) throw std::invalid_argument("tkl: truth shape mismatch");
    const Evaluation ev = evaluate(model, x_true);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const double mu_star = mean(f_true[i], model.family);
        acc += mu_star * (f_true[i] - ev.fhat[i]) - (b(f_true[i], model.family) - b(ev.fhat[i], model.family));
    }
    return acc / n;
}

std::string criterion_name(Criterion c) {
    switch (c) {
        case Criterion::gacv: return "gacv";
        case Criterion::rangacv: return "rangacv";
        case Criterion::loocv: return "loocv";
        case Criterion::tkl: return "tkl";
    }
    return "?";
}

std::vector<double> log_grid(double log10_lo, double log10_hi, int count) {
    if (count < 1 || !(log10_lo <= log10_hi)) throw std::invalid_argument("log_grid: bad bounds");
    std::vector<double> g(count);
    for (int i = 0; i < count; ++i) {
        const double t = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
        g[i] = std::pow(10.0, log10_lo + t * (log10_hi - log10_lo));
    }
    return g;
}

LambdaSelection select_lambda(const Dataset& data, const std::vector<double>& grid,
                              const EmOptions& em_options, const TuneOptions& tune_options) {
    if (grid.empty()) throw std::invalid_argument("select_lambda: empty grid");
    if (tune_options.criterion == Criterion::tkl && (!tune_options.truth_x || !tune_options.truth_f))
        throw std::invalid_argument("select_lambda: tkl criterion requires the truth");

    std::vector<double> lambdas = grid;
    std::sort(lambdas.begin(), lambdas.end());
    const int k = static_cast<int>(lambdas.size());

    LambdaSelection sel;
    sel.lambdas = lambdas;
    sel.values.assign(k, std::numeric_limits<double>::quiet_NaN());
    sel.ok.assign(k, false);

    // Walk from the smoothest fit down, carrying warm starts.
    FitResult prev;
    bool have_prev = false;
    for (int idx = k - 1; idx >= 0; --idx) {
        const double lam = lambdas[idx];
        FitResult fit;
        try {
            fit = qple_fit(data, lam, em_options, have_prev ? &prev : nullptr);
        } catch (const std::exception& e) {
            sel.warnings.push_back("lambda " + std::to_string(lam) + ": fit failed: " + e.what());
            continue;
        }
        double value;
        try {
            switch (tune_options.criterion) {
                case Criterion::gacv: {
                    const InfluenceBlocks blocks = influence_blocks(
                        *fit.basis, fit.layout, fit.y, fit.pi, fit.fitted, fit.lambda, fit.family);
                    value = gacv(fit, blocks);
                    break;
                }
                case Criterion::rangacv: {
                    RanGacvOptions ropt = tune_options.rangacv;
                    ropt.seed = mix_seed(tune_options.rangacv.seed, "lambda", static_cast<std::uint64_t>(idx));
                    value = rangacv(fit, ropt, &sel.warnings);
                    break;
                }
                case Criterion::loocv:
                    value = exact_loocv(fit, em_options);
                    break;
                case Criterion::tkl:
                    value = tkl(fit.model, *tune_options.truth_x, *tune_options.truth_f);
                    break;
                default:
                    throw std::logic_error("unknown criterion");
            }
        } catch (const std::exception& e) {
            sel.warnings.push_back("lambda " + std::to_string(lam) + ": criterion failed, grid point skipped: " +
                                   e.what());
            prev = std::move(fit);
            have_prev = true;
            continue;
        }
        sel.values[idx] = value;
        sel.ok[idx] = true;
        // ties broken toward larger lambda: strict improvement required when
        // moving to smaller lambda
        if (sel.index < 0 || value < sel.values[sel.index]) {
            sel.index = idx;
            sel.fit = fit;
        }
        prev = std::move(fit);
        have_prev = true;
    }
    if (sel.index < 0) throw std::runtime_error("select_lambda: criterion failed at every grid point");
    sel.lambda = lambdas[sel.index];
    int lo_ok = -1, hi_ok = -1;
    for (int i = 0; i < k; ++i)
        if (sel.ok[i]) {
            if (lo_ok < 0) lo_ok = i;
            hi_ok = i;
        }
    sel.boundary = sel.index == lo_ok || sel.index == hi_ok;
    if (sel.boundary)
        sel.warnings.push_back("selected lambda sits on the grid boundary; widen the grid");
    return sel;
}

}  // namespace qple
