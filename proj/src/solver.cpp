#include "qple/solver.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace qple {

RepresenterBasis::RepresenterBasis(Matrix node_list, const KernelSpec& k) {
    nodes = std::move(node_list);
    kernel = k;
    gram_raw = qple::gram(nodes, k);
    gram = gram_raw;
    add_jitter(gram);
    null_mat = null_basis(nodes, k);
}

Vector likelihood_weights(const Vector& y_nodes, const Vector& f_nodes, const Vector& pi,
                          const ExpFamilySpec& family) {
    const int m = static_cast<int>(f_nodes.size());
    if (m == 1) return Vector::Ones(1);
    Vector logterm(m);
    for (int j = 0; j < m; ++j)
        logterm[j] = std::log(pi[j]) + y_nodes[j] * f_nodes[j] - b(f_nodes[j], family);
    const double top = logterm.maxCoeff();
    Vector w = (logterm.array() - top).exp();
    const double total = w.sum();
    if (!(total > 0) || !std::isfinite(total))
        throw std::runtime_error("likelihood_weights: degenerate weights (log-sum-exp failed)");
    return w / total;
}

namespace {

struct Objective {
    const RepresenterBasis& basis;
    const Vector& y_nodes;
    const Vector& weights;
    int n_subjects;
    double lambda;
    const ExpFamilySpec& family;

    // -(1/n) sum w (y f - b(f)) + (lambda/2) c'Kc, penalty part supplied by caller
    double likelihood(const Vector& f) const {
        double acc = 0.0;
        for (int k = 0; k < f.size(); ++k) acc += weights[k] * (y_nodes[k] * f[k] - b(f[k], family));
        return -acc / n_subjects;
    }

    // gradient of the likelihood part with respect to f
    Vector grad_f(const Vector& f) const {
        Vector g(f.size());
        for (int k = 0; k < f.size(); ++k) g[k] = -weights[k] * (y_nodes[k] - mean(f[k], family)) / n_subjects;
        return g;
    }

    // diagonal Hessian of the likelihood part with respect to f
    Vector hess_f(const Vector& f) const {
        Vector v(f.size());
        for (int k = 0; k < f.size(); ++k) v[k] = weights[k] * variance(f[k], family) / n_subjects;
        return v;
    }
};

}  // namespace

WeightedFit interpolate_basis(const RepresenterBasis& basis, const Vector& fvals) {
    const int n = basis.size(), n0 = basis.null_dim();
    Matrix m = Matrix::Zero(n + n0, n + n0);
    m.topLeftCorner(n, n) = basis.gram;
    m.topRightCorner(n, n0) = basis.null_mat;
    m.bottomLeftCorner(n0, n) = basis.null_mat.transpose();
    Vector rhs = Vector::Zero(n + n0);
    rhs.head(n) = fvals;
    Vector sol = m.partialPivLu().solve(rhs);
    WeightedFit fit;
    fit.c = sol.head(n);
    fit.d = sol.tail(n0);
    fit.fitted = basis.null_mat * fit.d + basis.gram_raw * fit.c;
    return fit;
}

WeightedFit fit_weighted(const RepresenterBasis& basis, const Vector& y_nodes, const Vector& weights,
                         int n_subjects, double lambda, const ExpFamilySpec& family,
                         const std::optional<WeightedFit>& warm, const FitOptions& options) {
    const int n = basis.size(), n0 = basis.null_dim();
    if (y_nodes.size() != n || weights.size() != n)
        throw std::invalid_argument("fit_weighted: shape mismatch");
    if (!(lambda > 0)) throw std::invalid_argument("fit_weighted: lambda must be positive");
    if ((weights.array() < 0).any()) throw std::invalid_argument("fit_weighted: negative weight");

    Objective obj{basis, y_nodes, weights, n_subjects, lambda, family};

    WeightedFit cur;
    if (warm && warm->c.size() == n) {
        cur = *warm;
        cur.objective_trace.clear();
    } else {
        cur.d = Vector::Zero(n0);
        cur.c = Vector::Zero(n);
        cur.fitted = Vector::Zero(n);
    }

    Vector kc = basis.gram_raw * cur.c;
    double penalty = 0.5 * lambda * cur.c.dot(kc);
    double fval = obj.likelihood(cur.fitted) + penalty;
    cur.objective_trace.push_back(fval);

    const double nl = n_subjects * lambda;
    Matrix sys(n + n0, n + n0);
    Vector rhs(n + n0);

    for (int iter = 0; iter < options.max_newton; ++iter) {
        cur.newton_iterations = iter;
        const Vector g = obj.grad_f(cur.fitted);
        // First-order conditions: S'g = 0 and g + lambda c = 0 (K nonsingular).
        const double err = std::max((basis.null_mat.transpose() * g).cwiseAbs().maxCoeff(),
                                    (g + lambda * cur.c).cwiseAbs().maxCoeff());
        if (err <= options.grad_tol * (1.0 + std::abs(fval))) break;

        // Newton step in (c, d): V(S d + K c) + n*lambda*c = V f + r, S'c = 0,
        // with V the weighted curvature and r the weighted residual.
        const Vector v = (obj.hess_f(cur.fitted) * n_subjects).eval();  // w * b''
        Vector r(n);
        for (int k = 0; k < n; ++k) r[k] = weights[k] * (y_nodes[k] - mean(cur.fitted[k], family));
        sys.setZero();
        sys.topLeftCorner(n, n) = v.asDiagonal() * basis.gram;
        sys.topLeftCorner(n, n).diagonal().array() += nl;
        sys.topRightCorner(n, n0) = v.asDiagonal() * basis.null_mat;
        sys.bottomLeftCorner(n0, n) = basis.null_mat.transpose();
        rhs.head(n) = v.cwiseProduct(cur.fitted) + r;
        rhs.tail(n0).setZero();
        Eigen::PartialPivLU<Matrix> lu(sys);
        const Vector sol = lu.solve(rhs);
        if (!sol.allFinite())
            throw std::runtime_error("fit_weighted: Newton system solve failed (singular system)");
        const Vector c_new = sol.head(n);
        const Vector d_new = sol.tail(n0);
        const Vector f_new = basis.null_mat * d_new + basis.gram_raw * c_new;

        const Vector dc = c_new - cur.c;
        const Vector dd = d_new - cur.d;
        const Vector df = f_new - cur.fitted;
        const Vector k_dc = basis.gram_raw * dc;
        // directional derivative of the objective along the step
        const double dir = g.dot(df) + lambda * cur.c.dot(k_dc);
        const double quad_cross = 2.0 * dc.dot(kc), quad_self = dc.dot(k_dc);

        double alpha = 1.0;
        bool accepted = false;
        for (int bt = 0; bt <= options.max_backtrack; ++bt) {
            const Vector f_try = cur.fitted + alpha * df;
            const double pen_try =
                0.5 * lambda * (cur.c.dot(kc) + alpha * quad_cross + alpha * alpha * quad_self);
            const double f_obj = obj.likelihood(f_try) + pen_try;
            const bool armijo = dir < 0 ? (f_obj <= fval + 1e-4 * alpha * dir) : (f_obj <= fval);
            if (std::isfinite(f_obj) && armijo) {
                cur.c += alpha * dc;
                cur.d += alpha * dd;
                cur.fitted = f_try;
                kc += alpha * k_dc;
                fval = f_obj;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        cur.objective_trace.push_back(fval);
        if (!accepted) {
            if (std::abs(dir) <= 1e-12 * (1.0 + std::abs(fval))) break;  // flat: converged in practice
            throw std::runtime_error(
                "fit_weighted: Newton diverged (no Armijo decrease after backtracking budget; objective " +
                std::to_string(fval) + ")");
        }
    }
    cur.objective = fval;
    return cur;
}

InfluenceBlocks influence_blocks(const RepresenterBasis& basis, const SubjectLayout& layout,
                                 const Vector& y, const Vector& pi, const Vector& fitted, double lambda,
                                 const ExpFamilySpec& family) {
    const int n_sub = layout.subjects();
    const int n = basis.size(), n0 = basis.null_dim();
    InfluenceBlocks out;
    out.w_diag = Vector(n);
    for (int k = 0; k < n; ++k) out.w_diag[k] = variance(fitted[k], family);

    // Per-subject blocks of the observed-data second derivatives, scaled by n.
    Matrix bfull = Matrix::Zero(n, n), dfull = Matrix::Zero(n, n);
    out.B.resize(n_sub);
    out.D.resize(n_sub);
    for (int i = 0; i < n_sub; ++i) {
        const int off = layout.offset[i], m = layout.count[i];
        const Vector f_i = fitted.segment(off, m);
        const Vector pi_i = pi.segment(off, m);
        const Vector w = likelihood_weights(Vector::Constant(m, y[i]), f_i, pi_i, family);
        Matrix bi(m, m), di(m, m);
        for (int s = 0; s < m; ++s) {
            const double res_s = y[i] - mean(f_i[s], family);
            for (int t = 0; t < m; ++t) {
                if (s == t) {
                    bi(s, t) = -w[s] * (1.0 + (1.0 - w[s]) * f_i[s] * res_s);
                    di(s, t) = w[s] * (variance(f_i[s], family) - (1.0 - w[s]) * res_s * res_s);
                } else {
                    const double res_t = y[i] - mean(f_i[t], family);
                    // row = f index, column = response index, so that
                    // H = -(D + n Sigma)^{-1} B is the Jacobian df/dy.
                    bi(s, t) = w[s] * w[t] * f_i[t] * res_s;
                    di(s, t) = w[s] * w[t] * res_s * res_t;
                }
            }
        }
        out.B[i] = bi;
        out.D[i] = di;
        bfull.block(off, off, m, m) = bi;
        dfull.block(off, off, m, m) = di;
    }

    // Differentiate the stationarity equations of the observed objective in
    // the (c, d) parametrization:  (n*lambda*I + K D) H - n*lambda*S P = -K B
    // and S' D H = -S' B, with H = dF/dy and P = dd/dy.
    const double nl = layout.subjects() * lambda;
    Matrix sys = Matrix::Zero(n + n0, n + n0);
    sys.topLeftCorner(n, n) = basis.gram * dfull;
    sys.topLeftCorner(n, n).diagonal().array() += nl;
    sys.topRightCorner(n, n0) = -nl * basis.null_mat;
    sys.bottomLeftCorner(n0, n) = basis.null_mat.transpose() * dfull;
    Matrix rhs(n + n0, n);
    rhs.topRows(n) = -basis.gram * bfull;
    rhs.bottomRows(n0) = -basis.null_mat.transpose() * bfull;
    Eigen::PartialPivLU<Matrix> lu(sys);
    Matrix sol = lu.solve(rhs);
    if (!sol.allFinite())
        throw std::runtime_error("influence_blocks: (D + n Sigma_lambda) system is singular");
    out.h_full = sol.topRows(n);

    out.H.resize(n_sub);
    out.G.resize(n_sub);
    for (int i = 0; i < n_sub; ++i) {
        const int off = layout.offset[i], m = layout.count[i];
        out.H[i] = out.h_full.block(off, off, m, m);
        out.G[i] = Matrix::Identity(m, m) - out.H[i] * out.w_diag.segment(off, m).asDiagonal().toDenseMatrix();
    }
    return out;
}

Evaluation evaluate(const RepresenterModel& model, const Matrix& query_points) {
    Matrix unit = model.rescale.to_unit_rows(query_points);
    Evaluation ev;
    ev.fhat = evaluate_unit(model, unit);
    ev.mean = Vector(ev.fhat.size());
    for (int i = 0; i < ev.fhat.size(); ++i) ev.mean[i] = mean(ev.fhat[i], model.family);
    return ev;
}

Vector evaluate_unit(const RepresenterModel& model, const Matrix& unit_points) {
    const Matrix s = null_basis_unchecked(unit_points, model.kernel);
    const Matrix kx = cross_gram(unit_points, model.nodes, model.kernel);
    return s * model.d + kx * model.c;
}

std::optional<std::string> a1_diagnostic(const Matrix& exact_points, const Vector& y_exact,
                                         const KernelSpec& kernel, const ExpFamilySpec& family) {
    if (exact_points.rows() == 0)
        return "no exactly observed subjects; the null-space condition cannot be verified";
    Matrix s;
    try {
        s = null_basis(exact_points, kernel);
    } catch (const std::exception& e) {
        return std::string("degenerate null-space design on exact subjects: ") + e.what();
    }
    if (s.rows() < s.cols())
        return "fewer exact subjects than null-space dimensions";
    const int p = static_cast<int>(s.cols());
    Vector beta = Vector::Zero(p);
    for (int iter = 0; iter < 100; ++iter) {
        const Vector eta = s * beta;
        Vector g = Vector::Zero(p);
        Matrix h = Matrix::Zero(p, p);
        for (int i = 0; i < s.rows(); ++i) {
            g += (y_exact[i] - mean(eta[i], family)) * s.row(i).transpose();
            h += variance(eta[i], family) * s.row(i).transpose() * s.row(i);
        }
        h.diagonal().array() += 1e-12;
        const Vector step = h.ldlt().solve(g);
        beta += step;
        if (beta.norm() > 1e3)
            return "null-space GLM on exact subjects diverged (parameter norm > 1e3): the penalized "
                   "likelihood may be unbounded along a null-space direction";
        if (step.cwiseAbs().maxCoeff() < 1e-9) return std::nullopt;
    }
    return "null-space GLM on exact subjects failed to converge in 100 IRLS steps";
}

}  // namespace qple
