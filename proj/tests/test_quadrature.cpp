#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "qple/quadrature.hpp"
#include "qple/rng.hpp"

using namespace qple;

namespace {

// Closed-form monomial moments, the oracle for polynomial exactness.
double normal_moment(double mu, double sigma, int p) {
    // E[(mu + sigma Z)^p] by binomial expansion with E[Z^q] = (q-1)!! for even q.
    double total = 0.0;
    for (int q = 0; q <= p; q += 2) {
        double dfact = 1.0;
        for (int j = q - 1; j > 1; j -= 2) dfact *= j;
        if (q == 0) dfact = 1.0;
        double binom = 1.0;
        for (int j = 0; j < q; ++j) binom = binom * (p - j) / (j + 1);
        total += binom * std::pow(mu, p - q) * std::pow(sigma, q) * dfact;
    }
    return total;
}

double uniform_moment(double a, double b, int p) {
    return (std::pow(b, p + 1) - std::pow(a, p + 1)) / ((p + 1) * (b - a));
}

double rule_moment(const QuadratureRule& r, int p) {
    double s = 0.0;
    for (int j = 0; j < r.size(); ++j) s += r.weights[j] * std::pow(r.nodes(j, 0), p);
    return s;
}

}  // namespace

TEST_CASE("two-point rules match hand-solved moment equations") {
    auto n2 = gauss_rule(UnivariateDistribution::normal(0, 1), 2);
    REQUIRE(n2.size() == 2);
    CHECK(n2.nodes(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(n2.nodes(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(n2.weights[0] == doctest::Approx(0.5).epsilon(1e-12));

    auto u2 = gauss_rule(UnivariateDistribution::uniform(0, 1), 2);
    const double off = 1.0 / (2.0 * std::sqrt(3.0));
    CHECK(u2.nodes(0, 0) == doctest::Approx(0.5 - off).epsilon(1e-12));
    CHECK(u2.nodes(1, 0) == doctest::Approx(0.5 + off).epsilon(1e-12));
    CHECK(u2.weights[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("one-point rule sits at the mean") {
    for (const auto& d : {UnivariateDistribution::normal(1.7, 0.3), UnivariateDistribution::uniform(-2, 5)}) {
        auto r = gauss_rule(d, 1);
        REQUIRE(r.size() == 1);
        CHECK(r.nodes(0, 0) == doctest::Approx(d.mean()).epsilon(1e-12));
        CHECK(r.weights[0] == doctest::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("polynomial exactness for closed-form families, m = 1..8") {
    for (int m = 1; m <= 8; ++m) {
        for (const auto& d : {UnivariateDistribution::normal(0, 1), UnivariateDistribution::normal(-0.4, 2.3),
                              UnivariateDistribution::uniform(0, 1), UnivariateDistribution::uniform(-1, 3)}) {
            auto r = gauss_rule(d, m);
            r.validate(1e-9);
            for (int p = 0; p <= 2 * m - 1; ++p) {
                const double truth = d.type == UnivariateDistribution::Type::normal
                                         ? normal_moment(d.mu, d.sigma, p)
                                         : uniform_moment(d.a, d.b, p);
                CHECK(std::abs(rule_moment(r, p) - truth) <= 1e-8 * (1.0 + std::abs(truth)));
            }
        }
    }
}

TEST_CASE("custom density rule via the moment algorithm") {
    // Triangular density on [0,2]: mean 2/3... actually f(x) = 1-x/2 scaled:
    // use f(x) = (2-x)/2 on [0,2], mean = 2/3, var = 2/9.
    auto dens = [](double x) { return (x >= 0 && x <= 2) ? (2.0 - x) / 2.0 : 0.0; };
    auto d = UnivariateDistribution::custom(dens, 0.0, 2.0, 2.0 / 3.0, std::sqrt(2.0 / 9.0));
    for (int m : {1, 2, 3, 5, 8}) {
        auto r = gauss_rule(d, m);
        r.validate(1e-9);
        for (int p = 0; p <= 2 * m - 1; ++p) {
            // E X^p = int_0^2 x^p (2-x)/2 dx = 2^(p+1)/((p+1)(p+2))
            const double truth = std::pow(2.0, p + 1) / ((p + 1.0) * (p + 2.0));
            CHECK(std::abs(rule_moment(r, p) - truth) <= 1e-7 * (1.0 + std::abs(truth)));
        }
    }
    CHECK_THROWS(gauss_rule(d, 21));
}

TEST_CASE("discrete distributions pass through or compress") {
    Vector v(3), p(3);
    v << -1, 0, 2;
    p << 0.2, 0.5, 0.3;
    auto d = UnivariateDistribution::discrete(v, p);
    auto full = gauss_rule(d, 5);
    REQUIRE(full.size() == 3);
    CHECK(full.weights.sum() == doctest::Approx(1.0));
    auto two = gauss_rule(d, 2);
    REQUIRE(two.size() == 2);
    for (int q = 0; q <= 3; ++q) {
        double truth = 0.0;
        for (int i = 0; i < 3; ++i) truth += p[i] * std::pow(v[i], q);
        CHECK(rule_moment(two, q) == doctest::Approx(truth).epsilon(1e-9));
    }
}

TEST_CASE("grid rule: density-proportional weights and truncation") {
    auto g = grid_rule(UnivariateDistribution::normal(0, 1), 3);
    REQUIRE(g.size() == 3);
    CHECK(g.nodes(0, 0) == doctest::Approx(-3.0));
    CHECK(g.nodes(1, 0) == doctest::Approx(0.0));
    CHECK(g.nodes(2, 0) == doctest::Approx(3.0));
    const double phi0 = 1.0 / std::sqrt(2 * M_PI), phi3 = std::exp(-4.5) / std::sqrt(2 * M_PI);
    CHECK(g.weights[0] == doctest::Approx(phi3 / (2 * phi3 + phi0)).epsilon(1e-12));
    CHECK(g.weights[1] == doctest::Approx(phi0 / (2 * phi3 + phi0)).epsilon(1e-12));
    CHECK(g.weights[0] == doctest::Approx(0.01087).epsilon(1e-3));
    CHECK(g.weights[1] == doctest::Approx(0.97826).epsilon(1e-4));

    auto u = grid_rule(UnivariateDistribution::uniform(0, 1), 5);
    for (int j = 0; j < 5; ++j) CHECK(u.weights[j] == doctest::Approx(0.2).epsilon(1e-14));

    Vector v(2), p(2);
    v << 0, 1;
    p << 0.5, 0.5;
    CHECK_THROWS_AS(grid_rule(UnivariateDistribution::discrete(v, p), 3), std::invalid_argument);

    // one infinite endpoint truncates only that side
    auto half = UnivariateDistribution::custom([](double x) { return x >= 0 ? std::exp(-x) : 0.0; }, 0.0,
                                               std::numeric_limits<double>::infinity(), 1.0, 1.0);
    auto hg = grid_rule(half, 4);
    CHECK(hg.nodes(0, 0) == doctest::Approx(0.0));
    CHECK(hg.nodes(hg.size() - 1, 0) == doctest::Approx(4.0));  // mu + 3 sigma
}

TEST_CASE("multivariate product rule for independent normals") {
    ConditionalChain chain;
    chain.dim = 2;
    chain.coordinate = [](int, const RowVec&) { return UnivariateDistribution::normal(0, 1); };
    auto r = multivariate_rule(chain, {2, 2}, RuleMethod::gauss);
    REQUIRE(r.size() == 4);
    CHECK(r.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
    for (int j = 0; j < 4; ++j) {
        CHECK(r.weights[j] == doctest::Approx(0.25).epsilon(1e-10));
        CHECK(std::abs(r.nodes(j, 0)) == doctest::Approx(1.0).epsilon(1e-10));
        CHECK(std::abs(r.nodes(j, 1)) == doctest::Approx(1.0).epsilon(1e-10));
    }
    CHECK_THROWS_AS(multivariate_rule(chain, {2}, RuleMethod::gauss), std::invalid_argument);
}

TEST_CASE("bivariate normal chain shifts conditional means by rho") {
    Vector mu = Vector::Zero(2);
    Matrix sig(2, 2);
    sig << 1.0, 0.5, 0.5, 1.0;
    auto chain = mvn_chain(mu, sig);
    auto r = multivariate_rule(chain, {2, 2}, RuleMethod::gauss);
    REQUIRE(r.size() == 4);
    const double csd = std::sqrt(1.0 - 0.25);
    for (int j = 0; j < 4; ++j) {
        CHECK(r.weights[j] == doctest::Approx(0.25).epsilon(1e-10));
        const double z1 = r.nodes(j, 0);
        const double resid = (r.nodes(j, 1) - 0.5 * z1) / csd;
        CHECK(std::abs(resid) == doctest::Approx(1.0).epsilon(1e-10));
    }
    // total weight one and product node count
    auto r3 = multivariate_rule(chain, {3, 4}, RuleMethod::gauss);
    CHECK(r3.size() == 12);
    CHECK(r3.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("singular covariance is rejected") {
    Vector mu = Vector::Zero(2);
    Matrix sig(2, 2);
    sig << 1.0, 1.0, 1.0, 1.0;
    CHECK_THROWS(mvn_chain(mu, sig));
}

TEST_CASE("duplicate node merge") {
    QuadratureRule r;
    r.nodes = Matrix(3, 1);
    r.nodes << 1.0, 1.0, 2.0;
    r.weights = Vector(3);
    r.weights << 0.25, 0.25, 0.5;
    auto m = merge_duplicate_nodes(r);
    REQUIRE(m.size() == 2);
    CHECK(m.weights[0] == doctest::Approx(0.5));
}

TEST_CASE("weight positivity and normalization across random rules") {
    Rng rng(derive_rng(7, "quadtest"));
    for (int trial = 0; trial < 25; ++trial) {
        const double mu = rng.uniform(-3, 3), sd = 0.2 + rng.uniform();
        const int m = 1 + static_cast<int>(rng.uniform() * 12);
        auto r = gauss_rule(UnivariateDistribution::normal(mu, sd), m);
        r.validate(1e-9);
        auto g = grid_rule(UnivariateDistribution::normal(mu, sd), m);
        g.validate(1e-9);
    }
}
