#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "qple/covariate.hpp"
#include "qple/rng.hpp"

using namespace qple;

namespace {

QuadConfig gauss_cfg(int m) {
    QuadConfig c;
    c.method = RuleMethod::gauss;
    c.nodes_per_dim = m;
    return c;
}

}  // namespace

TEST_CASE("exact observation resolves to a one-node rule") {
    Vector x(1);
    x << 0.3;
    RuleContext ctx;
    auto r = rule_for_subject(CovariateObservation::exact(x), ctx);
    REQUIRE(r.size() == 1);
    CHECK(r.nodes(0, 0) == 0.3);
    CHECK(r.weights[0] == 1.0);
    r.validate();
}

TEST_CASE("noisy point shifts the error rule") {
    ErrorModel em;
    em.kind = ErrorModel::Kind::normal_iso;
    em.scale = Vector::Constant(1, 0.1);
    const QuadConfig cfg = gauss_cfg(2);
    const QuadratureRule u = error_rule(em, cfg);
    RuleContext ctx;
    ctx.error = &em;
    ctx.shared_error_rule = &u;
    ctx.config = cfg;
    Vector xe(1);
    xe << 0.5;
    auto r = rule_for_subject(CovariateObservation::noisy(xe), ctx);
    REQUIRE(r.size() == 2);
    CHECK(std::min(r.nodes(0, 0), r.nodes(1, 0)) == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(std::max(r.nodes(0, 0), r.nodes(1, 0)) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(r.weights[0] == doctest::Approx(0.5).epsilon(1e-12));

    // zero-mean errors: weighted node mean recovers x_err
    for (int m : {3, 7, 11}) {
        const QuadConfig c2 = gauss_cfg(m);
        const QuadratureRule u2 = error_rule(em, c2);
        RuleContext ctx2;
        ctx2.error = &em;
        ctx2.shared_error_rule = &u2;
        ctx2.config = c2;
        auto r2 = rule_for_subject(CovariateObservation::noisy(xe), ctx2);
        CHECK(std::abs(r2.weights.dot(r2.nodes.col(0)) - 0.5) < 1e-10);
        r2.validate(1e-9);
    }
}

TEST_CASE("partially missing vector uses the conditional normal") {
    CovariateModel cm;
    cm.gaussian_coords = {0, 1};
    cm.coef = Matrix(1, 2);
    cm.coef << 0.3, 0.6;  // means
    cm.sigma = Matrix(2, 2);
    cm.sigma << 0.04, 0.018, 0.018, 0.09;
    RuleContext ctx;
    ctx.covariate = &cm;
    ctx.config = gauss_cfg(5);

    Vector x(2);
    x << 0.25, std::nan("");
    auto r = rule_for_subject(CovariateObservation::partially_missing(x), ctx);
    REQUIRE(r.size() == 5);
    r.validate(1e-9);
    // observed coordinate pinned; missing one follows
    // N(mu2 + s21/s11 (x1-mu1), s22 - s21^2/s11)
    const double cmean = 0.6 + 0.018 / 0.04 * (0.25 - 0.3);
    const double cvar = 0.09 - 0.018 * 0.018 / 0.04;
    CHECK((r.nodes.col(0).array() == 0.25).all());
    CHECK(r.weights.dot(r.nodes.col(1)) == doctest::Approx(cmean).epsilon(1e-10));
    const Vector centered = r.nodes.col(1).array() - cmean;
    CHECK(r.weights.dot(centered.cwiseAbs2()) == doctest::Approx(cvar).epsilon(1e-8));

    // singular covariance propagates as an error
    CovariateModel bad = cm;
    bad.sigma << 0.04, 0.06, 0.06, 0.09;
    RuleContext bctx;
    bctx.covariate = &bad;
    bctx.config = gauss_cfg(3);
    CHECK_THROWS(rule_for_subject(CovariateObservation::partially_missing(x), bctx));
}

TEST_CASE("missing binary coordinate enumerates both values") {
    CovariateModel cm;
    cm.gaussian_coords = {0};
    cm.coef = Matrix(1, 1);
    cm.coef << 0.5;
    cm.sigma = Matrix::Constant(1, 1, 0.01);
    cm.binary_coords = {1};
    Vector beta(2);
    beta << 0.2, 1.0;  // intercept + gaussian coord
    cm.logit_coef = {beta};
    RuleContext ctx;
    ctx.covariate = &cm;
    ctx.config = gauss_cfg(3);

    Vector x(2);
    x << 0.4, std::nan("");
    auto r = rule_for_subject(CovariateObservation::partially_missing(x), ctx);
    REQUIRE(r.size() == 2);
    const double eta = 0.2 + 1.0 * 0.4;
    const double p = 1.0 / (1.0 + std::exp(-eta));
    for (int j = 0; j < 2; ++j)
        if (r.nodes(j, 1) == 1.0) CHECK(r.weights[j] == doctest::Approx(p).epsilon(1e-12));
}

TEST_CASE("distributional observation delegates to the multivariate rule") {
    Vector mu(2);
    mu << 0.4, 0.6;
    Matrix sig(2, 2);
    sig << 0.04, 0.01, 0.01, 0.02;
    auto obs = CovariateObservation::distributional(mvn_chain(mu, sig));
    RuleContext ctx;
    ctx.config = gauss_cfg(3);
    auto r = rule_for_subject(obs, ctx);
    REQUIRE(r.size() == 9);
    r.validate(1e-9);
    CHECK(r.weights.dot(r.nodes.col(0)) == doctest::Approx(0.4).epsilon(1e-10));
    CHECK(r.weights.dot(r.nodes.col(1)) == doctest::Approx(0.6).epsilon(1e-10));
}

TEST_CASE("error-scale update: weighted second moments") {
    ErrorModel em;
    em.kind = ErrorModel::Kind::normal_iso;
    em.scale = Vector::Constant(1, 0.5);
    em.known = false;
    QuadratureRule u;
    const double s = 0.37;
    u.nodes = Matrix(2, 1);
    u.nodes << -s, s;
    u.weights = Vector::Constant(2, 0.5);

    Matrix w(2, 2);
    w << 1.0, 0.0, 0.0, 1.0;  // each subject concentrated on one node
    auto res = update_theta_measurement_error(w, u, em);
    CHECK(!res.degenerate);
    CHECK(em.scale[0] == doctest::Approx(s).epsilon(1e-12));

    // uniform surrogate: delta = sqrt(3 * weighted second moment)
    ErrorModel eu = em;
    eu.kind = ErrorModel::Kind::uniform_sym;
    update_theta_measurement_error(w, u, eu);
    CHECK(eu.scale[0] == doctest::Approx(std::sqrt(3.0) * s).epsilon(1e-12));

    // all mass on a zero node -> degenerate
    QuadratureRule z;
    z.nodes = Matrix(2, 1);
    z.nodes << 0.0, 1.0;
    z.weights = Vector(2);
    z.weights << 0.9, 0.1;
    Matrix w0(1, 2);
    w0 << 1.0, 0.0;
    ErrorModel ed = em;
    auto dres = update_theta_measurement_error(w0, z, ed);
    CHECK(dres.degenerate);
}

TEST_CASE("error-scale update maximizes the weighted likelihood (grid oracle)") {
    Rng rng(derive_rng(21, "theta"));
    for (int trial = 0; trial < 5; ++trial) {
        const int n = 6, m = 4;
        QuadratureRule u;
        u.nodes = Matrix(m, 1);
        for (int j = 0; j < m; ++j) u.nodes(j, 0) = rng.uniform(-1.0, 1.0);
        u.weights = Vector::Constant(m, 1.0 / m);
        Matrix w(n, m);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < m; ++j) w(i, j) = rng.uniform_pos();
            w.row(i) /= w.row(i).sum();
        }
        ErrorModel em;
        em.kind = ErrorModel::Kind::normal_iso;
        em.known = false;
        em.scale = Vector::Constant(1, 1.0);
        update_theta_measurement_error(w, u, em);

        auto loglik = [&](double sigma) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < m; ++j) {
                    const double zz = u.nodes(j, 0) / sigma;
                    acc += w(i, j) * (-std::log(sigma) - 0.5 * zz * zz);
                }
            return acc;
        };
        double best = 1e-3, best_val = loglik(1e-3);
        for (double sg = 1e-3; sg < 2.0; sg += 1e-3) {
            const double v = loglik(sg);
            if (v > best_val) {
                best_val = v;
                best = sg;
            }
        }
        CHECK(em.scale[0] == doctest::Approx(best).epsilon(2e-3));
        CHECK(loglik(em.scale[0]) >= best_val - 1e-9);
    }
}

TEST_CASE("covariate-model update: complete data is the ordinary MLE") {
    Rng rng(derive_rng(9, "covmle"));
    const int n = 40;
    Matrix nodes(n, 2);
    for (int i = 0; i < n; ++i)
        nodes.row(i) << 0.3 + 0.1 * rng.normal(), 0.6 + 0.2 * rng.normal();
    CovariateModel cm;
    cm.gaussian_coords = {0, 1};
    auto lay = SubjectLayout::from_counts(std::vector<int>(n, 1));
    update_theta_missing(Vector::Ones(n), nodes, lay, cm);

    const Vector mean = nodes.colwise().mean();
    CHECK(cm.coef(0, 0) == doctest::Approx(mean[0]).epsilon(1e-12));
    CHECK(cm.coef(0, 1) == doctest::Approx(mean[1]).epsilon(1e-12));
    Matrix cov = Matrix::Zero(2, 2);
    for (int i = 0; i < n; ++i) {
        const Vector r = nodes.row(i).transpose() - mean;
        cov += r * r.transpose();
    }
    cov /= n;
    CHECK((cm.sigma - cov).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("covariate-model update: weighted mean/covariance closed form") {
    Rng rng(derive_rng(10, "covw"));
    const int rows = 30;
    Matrix nodes(rows, 2);
    Vector w(rows);
    for (int i = 0; i < rows; ++i) {
        nodes.row(i) << rng.uniform(), rng.uniform();
        w[i] = rng.uniform_pos();
    }
    CovariateModel cm;
    cm.gaussian_coords = {0, 1};
    auto lay = SubjectLayout::from_counts(std::vector<int>(rows, 1));
    update_theta_missing(w, nodes, lay, cm);

    const double ws = w.sum();
    Vector mu = Vector::Zero(2);
    for (int i = 0; i < rows; ++i) mu += w[i] * nodes.row(i).transpose();
    mu /= ws;
    Matrix cov = Matrix::Zero(2, 2);
    for (int i = 0; i < rows; ++i) {
        const Vector r = nodes.row(i).transpose() - mu;
        cov += w[i] * r * r.transpose();
    }
    cov /= ws;
    CHECK(std::abs(cm.coef(0, 0) - mu[0]) < 1e-12);
    CHECK(std::abs(cm.coef(0, 1) - mu[1]) < 1e-12);
    CHECK((cm.sigma - cov).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("separable logistic block is capped with a warning") {
    const int n = 20;
    Matrix nodes(n, 2);
    for (int i = 0; i < n; ++i) {
        const double x = static_cast<double>(i) / (n - 1);
        nodes(i, 0) = x;
        nodes(i, 1) = x > 0.5 ? 1.0 : 0.0;  // perfectly separated
    }
    CovariateModel cm;
    cm.gaussian_coords = {0};
    cm.binary_coords = {1};
    auto lay = SubjectLayout::from_counts(std::vector<int>(n, 1));
    auto res = update_theta_missing(Vector::Ones(n), nodes, lay, cm);
    REQUIRE(!res.warnings.empty());
    CHECK(cm.logit_coef[0].cwiseAbs().maxCoeff() <= 30.0 + 1e-9);
}

TEST_CASE("dataset validation") {
    Dataset ds;
    ds.family = ExpFamilySpec::poisson();
    ds.dim = 1;
    CHECK_THROWS(ds.validate());
    Vector x(1);
    x << 0.5;
    ds.obs.push_back(CovariateObservation::noisy(x));
    ds.y = Vector::Ones(1);
    CHECK_THROWS_AS(ds.validate(), std::invalid_argument);  // noisy without error model
}
