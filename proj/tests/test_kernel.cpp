#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "qple/kernel.hpp"
#include "qple/rng.hpp"

using namespace qple;

TEST_CASE("gram symmetry is exact and rbf diagonal is one") {
    Rng rng(derive_rng(3, "kernel"));
    Matrix pts(6, 2);
    for (int i = 0; i < 6; ++i)
        pts.row(i) << rng.uniform(), rng.uniform();
    auto k = KernelSpec::gaussian_rbf(0.7);
    Matrix g = gram(pts, k);
    CHECK((g - g.transpose()).cwiseAbs().maxCoeff() == 0.0);
    for (int i = 0; i < 6; ++i) CHECK(g(i, i) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("cubic spline kernel symmetry under x -> 1-x") {
    Matrix pts(3, 1);
    pts << 0.0, 0.5, 1.0;
    auto k = KernelSpec::cubic_spline();
    Matrix g = gram(pts, k);
    CHECK((g - g.transpose()).cwiseAbs().maxCoeff() == 0.0);
    // swapping x <-> 1-x maps node 0 <-> node 2 and fixes node 1
    CHECK(g(0, 0) == doctest::Approx(g(2, 2)).epsilon(1e-14));
    CHECK(g(0, 1) == doctest::Approx(g(2, 1)).epsilon(1e-14));

    Matrix bad(1, 1);
    bad << 1.4;
    CHECK_THROWS_AS(gram(bad, k), std::domain_error);
}

TEST_CASE("thin plate values") {
    Matrix pts(2, 2);
    pts << 0.0, 0.0, 1.0, 0.0;  // r = 1
    auto k = KernelSpec::thin_plate();
    Matrix g = gram(pts, k);
    CHECK(g(0, 1) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(g(0, 0) == 0.0);  // r = 0 limit
    Matrix q(1, 2);
    q << 0.0, 2.0;
    CHECK(cross_gram(pts, q, k)(0, 0) == doctest::Approx(4.0 * std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("null space bases") {
    auto cub = KernelSpec::cubic_spline();
    Matrix x(3, 1);
    x << 0.1, 0.5, 0.9;
    Matrix s = null_basis(x, cub);
    REQUIRE(s.cols() == 2);
    CHECK((s.col(0).array() == 1.0).all());
    CHECK(s(1, 1) == doctest::Approx(0.0).epsilon(1e-15));

    auto tps = KernelSpec::thin_plate();
    Matrix v(3, 2);
    v << 0, 0, 1, 0, 0, 1;
    Matrix st = null_basis(v, tps);
    REQUIRE(st.cols() == 3);
    CHECK(st(0, 0) == 1.0);
    CHECK(st(1, 1) == 1.0);
    CHECK(st(2, 2) == 1.0);
    CHECK(Eigen::FullPivLU<Matrix>(st).rank() == 3);

    // degenerate design: identical points
    Matrix same(4, 1);
    same << 0.3, 0.3, 0.3, 0.3;
    CHECK_THROWS_AS(null_basis(same, cub), std::runtime_error);
}

TEST_CASE("projected Gram matrices are PSD up to jitter scale") {
    Rng rng(derive_rng(11, "kernelpsd"));
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 4 + static_cast<int>(rng.uniform() * 8);
        const int which = trial % 3;
        KernelSpec k = which == 0   ? KernelSpec::cubic_spline()
                       : which == 1 ? KernelSpec::gaussian_rbf(0.3 + rng.uniform())
                                    : KernelSpec::thin_plate();
        const int d = k.type == KernelSpec::Type::thin_plate ? 2 : 1;
        Matrix pts(n, d);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) pts(i, j) = rng.uniform();
        Matrix g = gram(pts, k);
        Matrix s = null_basis_unchecked(pts, k);
        // project orthogonal to the null-space columns
        Eigen::HouseholderQR<Matrix> qr(s);
        Matrix q = qr.householderQ() * Matrix::Identity(n, n);
        Matrix p1 = Matrix::Identity(n, n) - q.leftCols(s.cols()) * q.leftCols(s.cols()).transpose();
        Matrix proj = p1.transpose() * g * p1;
        Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (proj + proj.transpose()));
        const double scale = std::abs(g.trace()) + 1.0;
        CHECK(eig.eigenvalues().minCoeff() >= -1e-8 * scale);
    }
}

TEST_CASE("ssanova combination is the weighted sum of block grams") {
    Rng rng(derive_rng(5, "ssanova"));
    Matrix pts(5, 2);
    for (int i = 0; i < 5; ++i)
        pts.row(i) << rng.uniform(), rng.uniform();

    KernelSpec::Block a{{0}, KernelSpec::Type::cubic_spline, 1.0, 1.0};
    KernelSpec::Block bblk{{1}, KernelSpec::Type::cubic_spline, 1.0, 1.0};

    auto one = KernelSpec::ssanova({a});
    CHECK((gram(pts, one) - gram(pts.col(0), KernelSpec::cubic_spline())).cwiseAbs().maxCoeff() < 1e-15);

    auto twin = KernelSpec::ssanova({a, a});
    CHECK((gram(pts, twin) - 2.0 * gram(pts.col(0), KernelSpec::cubic_spline())).cwiseAbs().maxCoeff() <
          1e-14);

    KernelSpec::Block a2 = a, b3 = bblk;
    a2.theta = 2.0;
    b3.theta = 3.0;
    auto mix = KernelSpec::ssanova({a2, b3});
    Matrix direct = 2.0 * gram(pts.col(0), KernelSpec::cubic_spline()) +
                    3.0 * gram(pts.col(1), KernelSpec::cubic_spline());
    CHECK((gram(pts, mix) - direct).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((ssanova_gram(pts, mix.blocks) - direct).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(mix.null_dim(2) == 3);

    CHECK_THROWS(KernelSpec::ssanova({KernelSpec::Block{{0}, KernelSpec::Type::cubic_spline, 1.0, -1.0}}));
}

TEST_CASE("huge penalty reproduces the closed-form linear regression") {
    // Penalized least squares through 5 points with lambda -> 1e6 must match
    // straight-line regression on the null-space basis {1, x - 1/2}.
    Matrix x(5, 1);
    x << 0.05, 0.3, 0.45, 0.7, 0.95;
    Vector y(5);
    y << 0.2, 0.8, 0.5, 1.4, 1.1;
    auto k = KernelSpec::cubic_spline();
    Matrix kk = gram(x, k);
    Matrix s = null_basis(x, k);
    const int n = 5, n0 = 2;
    const double lambda = 1e6;

    // stationarity of ||y - S d - K c||^2 + lambda c'Kc reduces, for
    // nonsingular K, to (K + lambda I) c + S d = y with S'c = 0
    Matrix kj = kk;
    add_jitter(kj);
    Matrix m = Matrix::Zero(n + n0, n + n0);
    m.topLeftCorner(n, n) = kj + lambda * Matrix::Identity(n, n);
    m.topRightCorner(n, n0) = s;
    m.bottomLeftCorner(n0, n) = s.transpose();
    Vector rhs = Vector::Zero(n + n0);
    rhs.head(n) = y;
    Vector sol = m.partialPivLu().solve(rhs);
    Vector fhat = s * sol.tail(n0) + kk * sol.head(n);

    Vector beta = (s.transpose() * s).ldlt().solve(s.transpose() * y);
    Vector flin = s * beta;
    CHECK((fhat - flin).cwiseAbs().maxCoeff() < 1e-6);
}
