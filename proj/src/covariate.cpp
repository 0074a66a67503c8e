#include "qple/covariate.hpp"

#include <cmath>
#include <stdexcept>

namespace qple {

Vector CovariateModel::gaussian_mean(const Vector& x_full) const {
    Vector reg(1 + regressor_coords.size());
    reg[0] = 1.0;
    for (size_t j = 0; j < regressor_coords.size(); ++j) {
        const double v = x_full[regressor_coords[j]];
        if (std::isnan(v)) throw std::runtime_error("covariate model: regressor coordinate is missing");
        reg[static_cast<int>(j) + 1] = v;
    }
    return coef.transpose() * reg;
}

double CovariateModel::binary_prob(int which, const Vector& x_full) const {
    const Vector& beta = logit_coef[which];
    double eta = beta[0];
    int at = 1;
    for (int c : gaussian_coords) eta += beta[at++] * x_full[c];
    for (int c : regressor_coords) eta += beta[at++] * x_full[c];
    return eta > 0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
}

CovariateObservation CovariateObservation::exact(Vector x) {
    if (!x.allFinite()) throw std::invalid_argument("exact covariate must be finite");
    CovariateObservation o;
    o.kind = Kind::exact;
    o.x = std::move(x);
    return o;
}

CovariateObservation CovariateObservation::discrete(QuadratureRule rule) {
    rule.validate(1e-9);
    CovariateObservation o;
    o.kind = Kind::discrete;
    o.discrete_rule = std::move(rule);
    return o;
}

CovariateObservation CovariateObservation::distributional(ConditionalChain chain) {
    CovariateObservation o;
    o.kind = Kind::distributional;
    o.dist = std::make_shared<ConditionalChain>(std::move(chain));
    return o;
}

CovariateObservation CovariateObservation::noisy(Vector x_err) {
    if (!x_err.allFinite()) throw std::invalid_argument("noisy covariate must be finite");
    CovariateObservation o;
    o.kind = Kind::noisy;
    o.x = std::move(x_err);
    return o;
}

CovariateObservation CovariateObservation::partially_missing(Vector x_with_nan) {
    CovariateObservation o;
    o.kind = Kind::partially_missing;
    o.observed.resize(x_with_nan.size());
    int n_obs = 0, n_mis = 0;
    for (int j = 0; j < x_with_nan.size(); ++j) {
        o.observed[j] = !std::isnan(x_with_nan[j]);
        o.observed[j] ? ++n_obs : ++n_mis;
    }
    if (n_mis == 0) throw std::invalid_argument("partially_missing: nothing is missing");
    o.x = std::move(x_with_nan);
    return o;
}

bool Dataset::has_noisy() const {
    for (const auto& o : obs)
        if (o.kind == CovariateObservation::Kind::noisy) return true;
    return false;
}

bool Dataset::has_missing() const {
    for (const auto& o : obs)
        if (o.kind == CovariateObservation::Kind::partially_missing) return true;
    return false;
}

void Dataset::validate() const {
    if (n() == 0) throw std::invalid_argument("dataset: needs at least one subject");
    if (y.size() != n()) throw std::invalid_argument("dataset: response/observation count mismatch");
    if (has_noisy() && !error_model) throw std::invalid_argument("dataset: noisy subjects need an error model");
    if (has_missing() && !covariate_model)
        throw std::invalid_argument("dataset: missing subjects need a covariate model");
    if (has_noisy() && has_missing())
        throw std::invalid_argument("dataset: mixing noisy and partially missing subjects is unsupported");
}

Vector mom_error_scale(const Dataset& data, ErrorModel::Kind kind) {
    std::vector<int> noisy, exact;
    for (int i = 0; i < data.n(); ++i) {
        if (data.obs[i].kind == CovariateObservation::Kind::noisy) noisy.push_back(i);
        if (data.obs[i].kind == CovariateObservation::Kind::exact) exact.push_back(i);
    }
    if (noisy.empty()) throw std::invalid_argument("mom_error_scale: no noisy subjects");
    Vector scale(data.dim);
    for (int c2 = 0; c2 < data.dim; ++c2) {
        double m1 = 0, m2 = 0;
        for (int i : noisy) {
            m1 += data.obs[i].x[c2];
            m2 += data.obs[i].x[c2] * data.obs[i].x[c2];
        }
        m1 /= noisy.size();
        const double var_err = m2 / noisy.size() - m1 * m1;
        double var_x = 0.75 * var_err;
        if (exact.size() >= 2) {
            double e1 = 0, e2 = 0;
            for (int i : exact) {
                e1 += data.obs[i].x[c2];
                e2 += data.obs[i].x[c2] * data.obs[i].x[c2];
            }
            e1 /= exact.size();
            var_x = e2 / exact.size() - e1 * e1;
        }
        const double var_u = std::max(var_err - var_x, 0.05 * var_err);
        const double sigma0 = std::sqrt(std::max(var_u, 1e-8));
        scale[c2] = kind == ErrorModel::Kind::normal_iso ? sigma0 : std::sqrt(3.0) * sigma0;
    }
    return scale;
}

QuadratureRule error_rule(const ErrorModel& model, const QuadConfig& config) {
    const int d = static_cast<int>(model.scale.size());
    ConditionalChain chain;
    chain.dim = d;
    const ErrorModel snapshot = model;
    chain.coordinate = [snapshot](int s, const RowVec&) {
        const double sc = snapshot.scale[s];
        if (!(sc > 0)) throw std::runtime_error("error model: degenerate scale");
        return snapshot.kind == ErrorModel::Kind::normal_iso ? UnivariateDistribution::normal(0.0, sc)
                                                             : UnivariateDistribution::uniform(-sc, sc);
    };
    return multivariate_rule(chain, std::vector<int>(d, config.nodes_per_dim), config.method);
}

namespace {

QuadratureRule one_point(const Vector& x) {
    QuadratureRule r;
    r.nodes = x.transpose();
    r.weights = Vector::Ones(1);
    return r;
}

void clamp_unit_nodes(Matrix& nodes) {
    nodes = nodes.cwiseMax(0.0).cwiseMin(1.0);
}

QuadratureRule missing_rule(const CovariateObservation& obs, const CovariateModel& model,
                            const QuadConfig& config) {
    const int d = static_cast<int>(obs.x.size());
    std::vector<int> mis_gauss, mis_binary;
    for (int c : model.gaussian_coords)
        if (!obs.observed[c]) mis_gauss.push_back(c);
    for (size_t j = 0; j < model.binary_coords.size(); ++j)
        if (!obs.observed[model.binary_coords[j]]) mis_binary.push_back(static_cast<int>(j));
    for (int c = 0; c < d; ++c) {
        if (obs.observed[c]) continue;
        const bool in_gauss =
            std::find(model.gaussian_coords.begin(), model.gaussian_coords.end(), c) != model.gaussian_coords.end();
        const bool in_binary =
            std::find(model.binary_coords.begin(), model.binary_coords.end(), c) != model.binary_coords.end();
        if (!in_gauss && !in_binary)
            throw std::runtime_error("covariate model does not cover missing coordinate " + std::to_string(c));
    }

    // Conditional of the missing Gaussian coordinates given the observed
    // ones: standard multivariate-normal conditioning.
    const Vector mean_full = model.gaussian_coords.empty() ? Vector() : model.gaussian_mean(obs.x);
    std::vector<int> obs_gauss_pos, mis_gauss_pos;
    for (size_t j = 0; j < model.gaussian_coords.size(); ++j) {
        if (obs.observed[model.gaussian_coords[j]])
            obs_gauss_pos.push_back(static_cast<int>(j));
        else
            mis_gauss_pos.push_back(static_cast<int>(j));
    }
    Vector cond_mean;
    Matrix cond_cov;
    if (!mis_gauss_pos.empty()) {
        const int no = static_cast<int>(obs_gauss_pos.size());
        const int nm = static_cast<int>(mis_gauss_pos.size());
        Matrix s_oo(no, no), s_mo(nm, no), s_mm(nm, nm);
        Vector mu_o(no), mu_m(nm), x_o(no);
        for (int a = 0; a < no; ++a) {
            mu_o[a] = mean_full[obs_gauss_pos[a]];
            x_o[a] = obs.x[model.gaussian_coords[obs_gauss_pos[a]]];
            for (int b2 = 0; b2 < no; ++b2) s_oo(a, b2) = model.sigma(obs_gauss_pos[a], obs_gauss_pos[b2]);
        }
        for (int a = 0; a < nm; ++a) {
            mu_m[a] = mean_full[mis_gauss_pos[a]];
            for (int b2 = 0; b2 < no; ++b2) s_mo(a, b2) = model.sigma(mis_gauss_pos[a], obs_gauss_pos[b2]);
            for (int b2 = 0; b2 < nm; ++b2) s_mm(a, b2) = model.sigma(mis_gauss_pos[a], mis_gauss_pos[b2]);
        }
        if (no == 0) {
            cond_mean = mu_m;
            cond_cov = s_mm;
        } else {
            Eigen::LLT<Matrix> llt(s_oo);
            if (llt.info() != Eigen::Success)
                throw std::runtime_error("covariate model: singular covariance in conditional");
            const Matrix gain = llt.solve(s_mo.transpose()).transpose();  // nm x no
            cond_mean = mu_m + gain * (x_o - mu_o);
            cond_cov = s_mm - gain * s_mo.transpose();
            cond_cov = 0.5 * (cond_cov + cond_cov.transpose());
        }
    }

    // Chain: missing Gaussian coordinates first, then missing binaries whose
    // logistic probabilities see the resolved continuous values.
    const int chain_dim = static_cast<int>(mis_gauss.size() + mis_binary.size());
    ConditionalChain chain;
    chain.dim = chain_dim;
    auto gauss_chain = mis_gauss.empty() ? std::shared_ptr<ConditionalChain>()
                                         : std::make_shared<ConditionalChain>(mvn_chain(cond_mean, cond_cov));
    const CovariateModel model_copy = model;
    const Vector x_copy = obs.x;
    const std::vector<int> mis_gauss_copy = mis_gauss, mis_binary_copy = mis_binary;
    chain.coordinate = [gauss_chain, model_copy, x_copy, mis_gauss_copy,
                        mis_binary_copy](int s, const RowVec& prefix) {
        const int ng = static_cast<int>(mis_gauss_copy.size());
        if (s < ng) return gauss_chain->coordinate(s, prefix);
        Vector x_full = x_copy;
        for (int j = 0; j < ng; ++j) x_full[mis_gauss_copy[j]] = prefix[j];
        for (int j = ng; j < s; ++j) x_full[model_copy.binary_coords[mis_binary_copy[j - ng]]] = prefix[j];
        const double p = model_copy.binary_prob(mis_binary_copy[s - ng], x_full);
        Vector v(2), pr(2);
        v << 0.0, 1.0;
        const double pc = std::min(1.0 - 1e-12, std::max(1e-12, p));
        pr << 1.0 - pc, pc;
        return UnivariateDistribution::discrete(v, pr);
    };
    // Full node budget on continuous coordinates; binaries only need both values.
    std::vector<int> nodes_per_dim(chain_dim);
    for (int s = 0; s < chain_dim; ++s)
        nodes_per_dim[s] = s < static_cast<int>(mis_gauss.size()) ? config.nodes_per_dim : 2;

    QuadratureRule partial = multivariate_rule(chain, nodes_per_dim, config.method);

    QuadratureRule rule;
    rule.weights = partial.weights;
    rule.nodes = obs.x.transpose().replicate(partial.size(), 1);
    for (int s = 0; s < chain_dim; ++s) {
        const int coord = s < static_cast<int>(mis_gauss.size())
                              ? mis_gauss[s]
                              : model.binary_coords[mis_binary[s - static_cast<int>(mis_gauss.size())]];
        rule.nodes.col(coord) = partial.nodes.col(s);
    }
    if (config.clamp_unit) clamp_unit_nodes(rule.nodes);
    return rule;
}

}  // namespace

QuadratureRule rule_for_subject(const CovariateObservation& obs, const RuleContext& ctx) {
    switch (obs.kind) {
        case CovariateObservation::Kind::exact:
            return one_point(obs.x);
        case CovariateObservation::Kind::discrete:
            return merge_duplicate_nodes(obs.discrete_rule);
        case CovariateObservation::Kind::distributional: {
            auto rule = multivariate_rule(*obs.dist, std::vector<int>(obs.dist->dim, ctx.config.nodes_per_dim),
                                          ctx.config.method);
            if (ctx.config.clamp_unit) clamp_unit_nodes(rule.nodes);
            return rule;
        }
        case CovariateObservation::Kind::noisy: {
            if (!ctx.shared_error_rule || !ctx.error)
                throw std::invalid_argument("rule_for_subject: noisy subject without an error rule");
            QuadratureRule rule;
            rule.nodes = (-ctx.shared_error_rule->nodes).rowwise() + obs.x.transpose();
            rule.weights = ctx.shared_error_rule->weights;
            if (ctx.config.clamp_unit) clamp_unit_nodes(rule.nodes);
            return rule;
        }
        case CovariateObservation::Kind::partially_missing: {
            if (!ctx.covariate)
                throw std::invalid_argument("rule_for_subject: missing subject without a covariate model");
            return missing_rule(obs, *ctx.covariate, ctx.config);
        }
    }
    throw std::logic_error("rule_for_subject: unhandled kind");
}

ThetaUpdateResult update_theta_measurement_error(const Matrix& weights, const QuadratureRule& u_rule,
                                                 ErrorModel& model) {
    ThetaUpdateResult res;
    const int n_noisy = static_cast<int>(weights.rows());
    if (n_noisy == 0) throw std::invalid_argument("theta update: no noisy subjects");
    const int d = u_rule.dim();
    Vector second = Vector::Zero(d);
    for (int i = 0; i < n_noisy; ++i)
        for (int j = 0; j < u_rule.size(); ++j)
            second += weights(i, j) * u_rule.nodes.row(j).transpose().cwiseAbs2();
    second /= n_noisy;
    for (int c = 0; c < d; ++c) {
        if (second[c] < 1e-12) {
            res.degenerate = true;
            res.warnings.push_back("error-scale update degenerate (weighted second moment ~ 0)");
            second[c] = 1e-12;
        }
    }
    if (model.kind == ErrorModel::Kind::normal_iso)
        model.scale = second.cwiseSqrt();
    else
        model.scale = (3.0 * second).cwiseSqrt();
    return res;
}

ThetaUpdateResult update_theta_missing(const Vector& weights, const Matrix& nodes,
                                       const SubjectLayout& layout, CovariateModel& model) {
    ThetaUpdateResult res;
    const int rows = static_cast<int>(nodes.rows());
    if (weights.size() != rows) throw std::invalid_argument("theta update: weight/node mismatch");
    (void)layout;
    const double wsum = weights.sum();

    if (!model.gaussian_coords.empty()) {
        const int ng = static_cast<int>(model.gaussian_coords.size());
        const int nr = static_cast<int>(model.regressor_coords.size());
        Matrix x(rows, 1 + nr), ymat(rows, ng);
        for (int i = 0; i < rows; ++i) {
            x(i, 0) = 1.0;
            for (int j = 0; j < nr; ++j) x(i, 1 + j) = nodes(i, model.regressor_coords[j]);
            for (int j = 0; j < ng; ++j) ymat(i, j) = nodes(i, model.gaussian_coords[j]);
        }
        const Matrix xw = x.transpose() * weights.asDiagonal();
        Eigen::LDLT<Matrix> xtx((xw * x).eval());
        if (xtx.info() != Eigen::Success)
            throw std::runtime_error("theta update: singular regressor design");
        model.coef = xtx.solve(xw * ymat);
        const Matrix resid = ymat - x * model.coef;
        Matrix cov = Matrix::Zero(ng, ng);
        for (int i = 0; i < rows; ++i) cov += weights[i] * resid.row(i).transpose() * resid.row(i);
        cov /= wsum;
        cov = 0.5 * (cov + cov.transpose());
        Eigen::LLT<Matrix> chol(cov);
        if (chol.info() != Eigen::Success) {
            cov.diagonal().array() += 1e-8 * (cov.trace() / ng + 1e-8);
            res.warnings.push_back("covariance update near-singular; ridge added");
        }
        model.sigma = cov;
    }

    for (size_t b = 0; b < model.binary_coords.size(); ++b) {
        const int coord = model.binary_coords[b];
        const int np = 1 + static_cast<int>(model.gaussian_coords.size() + model.regressor_coords.size());
        Matrix x(rows, np);
        Vector t(rows);
        for (int i = 0; i < rows; ++i) {
            x(i, 0) = 1.0;
            int at = 1;
            for (int c : model.gaussian_coords) x(i, at++) = nodes(i, c);
            for (int c : model.regressor_coords) x(i, at++) = nodes(i, c);
            t[i] = nodes(i, coord);
        }
        Vector beta = model.logit_coef.size() > b && model.logit_coef[b].size() == np
                          ? model.logit_coef[b]
                          : Vector::Zero(np);
        bool capped = false;
        for (int iter = 0; iter < 100; ++iter) {
            Vector eta = x * beta;
            Vector p = eta.unaryExpr([](double e) {
                return e > 0 ? 1.0 / (1.0 + std::exp(-e)) : std::exp(e) / (1.0 + std::exp(e));
            });
            Vector v = weights.array() * p.array() * (1.0 - p.array());
            Vector g = x.transpose() * (weights.array() * (t - p).array()).matrix();
            Matrix h = x.transpose() * v.asDiagonal() * x;
            h.diagonal().array() += 1e-10;
            Vector step = h.ldlt().solve(g);
            beta += step;
            if (beta.cwiseAbs().maxCoeff() > 30.0) {
                beta = beta.cwiseMax(-30.0).cwiseMin(30.0);
                capped = true;
            }
            if (step.cwiseAbs().maxCoeff() < 1e-10) break;
        }
        if (capped)
            res.warnings.push_back("logistic block diverged (separable data); coefficients capped at 30");
        if (model.logit_coef.size() <= b) model.logit_coef.resize(b + 1);
        model.logit_coef[b] = beta;
    }
    return res;
}

}  // namespace qple
