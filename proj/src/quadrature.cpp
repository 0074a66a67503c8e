#include "qple/quadrature.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>

namespace qple {

UnivariateDistribution UnivariateDistribution::normal(double mu, double sigma) {
    if (!(sigma > 0)) throw std::invalid_argument("normal: sigma must be positive");
    UnivariateDistribution d;
    d.type = Type::normal;
    d.mu = mu;
    d.sigma = sigma;
    return d;
}

UnivariateDistribution UnivariateDistribution::uniform(double a, double b) {
    if (!(a < b)) throw std::invalid_argument("uniform: need a < b");
    UnivariateDistribution d;
    d.type = Type::uniform;
    d.a = a;
    d.b = b;
    d.mu = 0.5 * (a + b);
    d.sigma = (b - a) / std::sqrt(12.0);
    return d;
}

UnivariateDistribution UnivariateDistribution::discrete(Vector values, Vector probs) {
    if (values.size() != probs.size() || values.size() == 0)
        throw std::invalid_argument("discrete: values/probs shape mismatch");
    if ((probs.array() <= 0).any()) throw std::invalid_argument("discrete: probs must be positive");
    if (std::abs(probs.sum() - 1.0) > 1e-9) throw std::invalid_argument("discrete: probs must sum to 1");
    UnivariateDistribution d;
    d.type = Type::discrete;
    d.mu = values.dot(probs);
    d.sigma = std::sqrt(std::max(0.0, (values.array() - d.mu).square().matrix().dot(probs)));
    d.values = std::move(values);
    d.probs = std::move(probs);
    return d;
}

UnivariateDistribution UnivariateDistribution::custom(std::function<double(double)> density, double a,
                                                      double b, double mean, double sd) {
    if (!(a < b)) throw std::invalid_argument("custom: need a < b");
    if (!(sd > 0)) throw std::invalid_argument("custom: sd must be positive");
    UnivariateDistribution d;
    d.type = Type::custom;
    d.density = std::move(density);
    d.a = a;
    d.b = b;
    d.mu = mean;
    d.sigma = sd;
    return d;
}

double UnivariateDistribution::mean() const { return mu; }
double UnivariateDistribution::sd() const { return sigma; }

namespace {

QuadratureRule make_rule_1d(const Vector& nodes, Vector weights) {
    weights /= weights.sum();
    QuadratureRule rule;
    rule.nodes = nodes;
    rule.weights = std::move(weights);
    rule.validate(1e-9);
    return rule;
}

// Nodes and weights from the three-term recurrence of the monic orthogonal
// polynomials: eigen-decomposition of the Jacobi matrix (Golub & Welsch).
// alpha has length m, beta length m with beta[0] = total mass.
QuadratureRule golub_welsch(const Vector& alpha, const Vector& beta) {
    const int m = static_cast<int>(alpha.size());
    Matrix jacobi = Matrix::Zero(m, m);
    for (int i = 0; i < m; ++i) {
        jacobi(i, i) = alpha[i];
        if (i + 1 < m) {
            if (!(beta[i + 1] > 0))
                throw std::runtime_error("gauss_rule: recurrence broke down (nonpositive beta[" +
                                         std::to_string(i + 1) + "] = " + std::to_string(beta[i + 1]) +
                                         "); moment matrix numerically singular");
            const double off = std::sqrt(beta[i + 1]);
            jacobi(i, i + 1) = off;
            jacobi(i + 1, i) = off;
        }
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(jacobi);
    if (eig.info() != Eigen::Success) throw std::runtime_error("gauss_rule: Jacobi eigensolve failed");
    Vector weights = beta[0] * eig.eigenvectors().row(0).transpose().array().square();
    // Guard against weights that underflow to zero for large m.
    weights = weights.cwiseMax(1e-300);
    return make_rule_1d(eig.eigenvalues(), weights);
}

// Monic Legendre recurrence for the uniform probability measure on [-1,1].
void legendre_recurrence(int m, Vector& alpha, Vector& beta) {
    alpha = Vector::Zero(m);
    beta = Vector::Zero(m);
    beta[0] = 1.0;
    for (int k = 1; k < m; ++k) beta[k] = static_cast<double>(k) * k / (4.0 * k * k - 1.0);
}

// Modified Chebyshev algorithm (Gautschi): recurrence coefficients of the
// target measure from 2m modified moments against auxiliary monic
// polynomials with known recurrence (a, b).  Row r of sigma holds the mixed
// moments of target polynomial order r-1 (row 0 is the zero row).
void modified_chebyshev(int m, const Vector& mod_moments, const Vector& aux_a, const Vector& aux_b,
                        Vector& alpha, Vector& beta) {
    const int n2 = 2 * m;
    if (mod_moments.size() < n2) throw std::logic_error("modified_chebyshev: not enough moments");
    if (!(mod_moments[0] > 0))
        throw std::runtime_error("gauss_rule: zero total mass; moment matrix numerically singular");
    alpha = Vector::Zero(m);
    beta = Vector::Zero(m);
    alpha[0] = aux_a[0] + mod_moments[1] / mod_moments[0];
    beta[0] = mod_moments[0];
    if (m == 1) return;
    Matrix sigma = Matrix::Zero(m + 1, n2);
    sigma.row(1) = mod_moments.head(n2).transpose();
    for (int k = 1; k < m; ++k) {
        for (int l = k; l <= n2 - k - 1; ++l) {
            sigma(k + 1, l) = sigma(k, l + 1) - (alpha[k - 1] - aux_a[l]) * sigma(k, l) -
                              beta[k - 1] * sigma(k - 1, l) + aux_b[l] * sigma(k, l - 1);
        }
        const double diag_prev = sigma(k, k - 1);
        const double diag_cur = sigma(k + 1, k);
        if (!std::isfinite(diag_cur) || !std::isfinite(diag_prev) || diag_prev == 0.0 || diag_cur == 0.0)
            throw std::runtime_error("gauss_rule: moment matrix numerically singular at order " +
                                     std::to_string(k));
        alpha[k] = aux_a[k] + sigma(k + 1, k + 1) / diag_cur - sigma(k, k) / diag_prev;
        beta[k] = diag_cur / diag_prev;
    }
}

// 64-point Gauss-Legendre panel rule used only to compute modified moments
// of custom densities.
QuadratureRule base_legendre_rule(int m) {
    Vector alpha, beta;
    legendre_recurrence(m, alpha, beta);
    return golub_welsch(alpha, beta);
}

struct AuxPolys {
    Vector a, b;  // monic recurrence of the auxiliary family
    // evaluates p_0..p_{kmax} at x
    void eval(double x, int kmax, Vector& out) const {
        out.resize(kmax + 1);
        out[0] = 1.0;
        if (kmax >= 1) out[1] = x - a[0];
        for (int k = 1; k < kmax; ++k) out[k + 1] = (x - a[k]) * out[k] - b[k] * out[k - 1];
    }
};

// Legendre polynomials shifted to [lo, hi], monic in x.
AuxPolys shifted_legendre(int count, double lo, double hi) {
    AuxPolys aux;
    Vector a1, b1;
    legendre_recurrence(count, a1, b1);
    const double half = 0.5 * (hi - lo);
    aux.a = Vector::Constant(count, 0.5 * (lo + hi));
    aux.b = b1 * (half * half);
    aux.b[0] = 1.0;
    return aux;
}

std::pair<double, double> truncated_support(const UnivariateDistribution& dist, double k_sigma) {
    double lo = dist.a, hi = dist.b;
    if (dist.type == UnivariateDistribution::Type::normal) {
        lo = dist.mu - k_sigma * dist.sigma;
        hi = dist.mu + k_sigma * dist.sigma;
    } else {
        if (std::isinf(lo)) lo = dist.mu - k_sigma * dist.sigma;
        if (std::isinf(hi)) hi = dist.mu + k_sigma * dist.sigma;
    }
    return {lo, hi};
}

QuadratureRule gauss_rule_from_density(const UnivariateDistribution& dist, int m) {
    // Modified moments against shifted Legendre polynomials, integrated by
    // composite Gauss-Legendre; far tails are immaterial at this accuracy.
    auto [lo, hi] = truncated_support(dist, 10.0);
    const int n2 = 2 * m;
    AuxPolys aux = shifted_legendre(n2 + 1, lo, hi);
    QuadratureRule base = base_legendre_rule(64);
    const int panels = 8;
    Vector moments = Vector::Zero(n2);
    Vector pvals;
    for (int p = 0; p < panels; ++p) {
        const double pa = lo + (hi - lo) * p / panels;
        const double pb = lo + (hi - lo) * (p + 1) / panels;
        for (int q = 0; q < base.size(); ++q) {
            const double x = 0.5 * (pa + pb) + 0.5 * (pb - pa) * base.nodes(q, 0);
            const double w = base.weights[q] * (pb - pa);  // base weights integrate to 1 over [-1,1]
            const double rho = dist.density(x);
            if (!(rho >= 0) || !std::isfinite(rho))
                throw std::runtime_error("gauss_rule: density returned an invalid value");
            aux.eval(x, n2 - 1, pvals);
            moments += (w * rho) * pvals.head(n2);
        }
    }
    Vector alpha, beta;
    modified_chebyshev(m, moments, aux.a, aux.b, alpha, beta);
    return golub_welsch(alpha, beta);
}

QuadratureRule gauss_rule_discrete(const UnivariateDistribution& dist, int m) {
    if (m >= dist.values.size()) {
        QuadratureRule rule;
        rule.nodes = dist.values;
        rule.weights = dist.probs;
        return merge_duplicate_nodes(rule);
    }
    const double lo = dist.values.minCoeff(), hi = dist.values.maxCoeff();
    const int n2 = 2 * m;
    AuxPolys aux = shifted_legendre(n2 + 1, lo, hi);
    Vector moments = Vector::Zero(n2);
    Vector pvals;
    for (int i = 0; i < dist.values.size(); ++i) {
        aux.eval(dist.values[i], n2 - 1, pvals);
        moments += dist.probs[i] * pvals.head(n2);
    }
    Vector alpha, beta;
    modified_chebyshev(m, moments, aux.a, aux.b, alpha, beta);
    return golub_welsch(alpha, beta);
}

}  // namespace

QuadratureRule gauss_rule(const UnivariateDistribution& dist, int m) {
    if (m < 1) throw std::invalid_argument("gauss_rule: need m >= 1");
    if (m > 20) throw std::invalid_argument("gauss_rule: m capped at 20 (moment algorithm conditioning)");
    switch (dist.type) {
        case UnivariateDistribution::Type::normal: {
            // Probabilists' Hermite: alpha_k = 0, beta_k = k.
            Vector alpha = Vector::Zero(m), beta = Vector::Zero(m);
            beta[0] = 1.0;
            for (int k = 1; k < m; ++k) beta[k] = k;
            QuadratureRule std_rule = golub_welsch(alpha, beta);
            std_rule.nodes = (dist.mu + dist.sigma * std_rule.nodes.array()).matrix();
            return std_rule;
        }
        case UnivariateDistribution::Type::uniform: {
            Vector alpha, beta;
            legendre_recurrence(m, alpha, beta);
            QuadratureRule std_rule = golub_welsch(alpha, beta);
            std_rule.nodes =
                (0.5 * (dist.a + dist.b) + 0.5 * (dist.b - dist.a) * std_rule.nodes.array()).matrix();
            return std_rule;
        }
        case UnivariateDistribution::Type::discrete:
            return gauss_rule_discrete(dist, m);
        case UnivariateDistribution::Type::custom:
            if (!dist.density) throw std::invalid_argument("gauss_rule: custom distribution lacks density");
            return gauss_rule_from_density(dist, m);
    }
    throw std::logic_error("gauss_rule: unhandled distribution type");
}

QuadratureRule grid_rule(const UnivariateDistribution& dist, int m) {
    if (m < 1) throw std::invalid_argument("grid_rule: need m >= 1");
    if (dist.type == UnivariateDistribution::Type::discrete)
        throw std::invalid_argument("grid_rule: requires a density (discrete distribution given)");
    auto [lo, hi] = truncated_support(dist, 3.0);
    std::function<double(double)> density;
    switch (dist.type) {
        case UnivariateDistribution::Type::normal:
            density = [mu = dist.mu, s = dist.sigma](double x) {
                const double z = (x - mu) / s;
                return std::exp(-0.5 * z * z) / (s * std::sqrt(2.0 * M_PI));
            };
            break;
        case UnivariateDistribution::Type::uniform:
            density = [a = dist.a, b = dist.b](double x) { return (x >= a && x <= b) ? 1.0 / (b - a) : 0.0; };
            break;
        case UnivariateDistribution::Type::custom:
            if (!dist.density) throw std::invalid_argument("grid_rule: custom distribution lacks density");
            density = dist.density;
            break;
        default:
            throw std::logic_error("grid_rule: unhandled distribution type");
    }
    Vector nodes(m), weights(m);
    for (int j = 0; j < m; ++j) {
        nodes[j] = (m == 1) ? 0.5 * (lo + hi) : lo + (hi - lo) * j / (m - 1);
        weights[j] = density(nodes[j]);
        if (!(weights[j] >= 0) || !std::isfinite(weights[j]))
            throw std::runtime_error("grid_rule: density returned an invalid value");
    }
    if (weights.sum() <= 0) throw std::runtime_error("grid_rule: density vanishes at every node");
    // Zero-density nodes carry no information and would violate the
    // positive-weight invariant.
    std::vector<int> keep;
    for (int j = 0; j < m; ++j)
        if (weights[j] > 0) keep.push_back(j);
    Vector kn(keep.size()), kw(keep.size());
    for (size_t j = 0; j < keep.size(); ++j) {
        kn[static_cast<int>(j)] = nodes[keep[j]];
        kw[static_cast<int>(j)] = weights[keep[j]];
    }
    return make_rule_1d(kn, kw);
}

QuadratureRule univariate_rule(const UnivariateDistribution& dist, int m, RuleMethod method) {
    if (dist.type == UnivariateDistribution::Type::discrete) return gauss_rule(dist, m);
    return method == RuleMethod::gauss ? gauss_rule(dist, m) : grid_rule(dist, m);
}

QuadratureRule multivariate_rule(const ConditionalChain& joint, const std::vector<int>& nodes_per_dim,
                                 RuleMethod method) {
    if (static_cast<int>(nodes_per_dim.size()) != joint.dim)
        throw std::invalid_argument("multivariate_rule: nodes_per_dim length must equal dimension");
    if (!joint.coordinate) throw std::invalid_argument("multivariate_rule: missing conditional callback");

    QuadratureRule acc = univariate_rule(joint.coordinate(0, RowVec(0)), nodes_per_dim[0], method);
    for (int s = 1; s < joint.dim; ++s) {
        std::vector<Matrix> node_chunks;
        std::vector<Vector> weight_chunks;
        int total = 0;
        for (int j = 0; j < acc.size(); ++j) {
            const RowVec prefix = acc.nodes.row(j);
            QuadratureRule cond = univariate_rule(joint.coordinate(s, prefix), nodes_per_dim[s], method);
            Matrix chunk(cond.size(), s + 1);
            chunk.leftCols(s) = prefix.replicate(cond.size(), 1);
            chunk.col(s) = cond.nodes.col(0);
            node_chunks.push_back(std::move(chunk));
            weight_chunks.push_back(acc.weights[j] * cond.weights);
            total += cond.size();
        }
        Matrix nodes(total, s + 1);
        Vector weights(total);
        int at = 0;
        for (size_t j = 0; j < node_chunks.size(); ++j) {
            const int c = static_cast<int>(node_chunks[j].rows());
            nodes.middleRows(at, c) = node_chunks[j];
            weights.segment(at, c) = weight_chunks[j];
            at += c;
        }
        acc.nodes = std::move(nodes);
        acc.weights = std::move(weights);
    }
    acc.weights /= acc.weights.sum();
    acc.validate(1e-9);
    return acc;
}

ConditionalChain mvn_chain(const Vector& mu, const Matrix& sigma) {
    const int d = static_cast<int>(mu.size());
    if (sigma.rows() != d || sigma.cols() != d) throw std::invalid_argument("mvn_chain: shape mismatch");
    if (!sigma.isApprox(sigma.transpose(), 1e-10))
        throw std::invalid_argument("mvn_chain: covariance not symmetric");
    Eigen::LLT<Matrix> llt(sigma);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("mvn_chain: covariance not positive definite");

    // Precompute regression coefficients of each coordinate on its prefix.
    struct Cond {
        Vector coef;
        double intercept;
        double sd;
    };
    auto conds = std::make_shared<std::vector<Cond>>();
    for (int s = 0; s < d; ++s) {
        Cond c;
        if (s == 0) {
            c.coef = Vector(0);
            c.intercept = mu[0];
            c.sd = std::sqrt(sigma(0, 0));
        } else {
            const Matrix spp = sigma.topLeftCorner(s, s);
            const Vector ssp = sigma.block(0, s, s, 1);
            Eigen::LLT<Matrix> sub(spp);
            if (sub.info() != Eigen::Success)
                throw std::runtime_error("mvn_chain: covariance not positive definite");
            c.coef = sub.solve(ssp);
            c.intercept = mu[s] - c.coef.dot(mu.head(s));
            const double var = sigma(s, s) - ssp.dot(c.coef);
            if (!(var > 0)) throw std::runtime_error("mvn_chain: degenerate conditional variance");
            c.sd = std::sqrt(var);
        }
        conds->push_back(std::move(c));
    }
    ConditionalChain chain;
    chain.dim = d;
    chain.coordinate = [conds](int s, const RowVec& prefix) {
        const Cond& c = (*conds)[s];
        const double m = c.intercept + (s > 0 ? c.coef.dot(prefix.transpose().head(s)) : 0.0);
        return UnivariateDistribution::normal(m, c.sd);
    };
    return chain;
}

QuadratureRule merge_duplicate_nodes(const QuadratureRule& rule) {
    std::map<std::vector<double>, double> seen;
    std::vector<std::vector<double>> order;
    for (int i = 0; i < rule.size(); ++i) {
        std::vector<double> key(rule.nodes.row(i).begin(), rule.nodes.row(i).end());
        auto [it, inserted] = seen.emplace(key, 0.0);
        it->second += rule.weights[i];
        if (inserted) order.push_back(key);
    }
    QuadratureRule out;
    out.nodes = Matrix(order.size(), rule.dim());
    out.weights = Vector(order.size());
    for (size_t i = 0; i < order.size(); ++i) {
        for (int j = 0; j < rule.dim(); ++j) out.nodes(static_cast<int>(i), j) = order[i][j];
        out.weights[static_cast<int>(i)] = seen[order[i]];
    }
    out.weights /= out.weights.sum();
    return out;
}

}  // namespace qple
