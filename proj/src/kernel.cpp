#include "qple/kernel.hpp"

#include <Eigen/QR>
#include <cmath>
#include <stdexcept>

namespace qple {

KernelSpec KernelSpec::cubic_spline() { return KernelSpec{Type::cubic_spline, 1.0, {}}; }
KernelSpec KernelSpec::thin_plate() { return KernelSpec{Type::thin_plate, 1.0, {}}; }

KernelSpec KernelSpec::gaussian_rbf(double bandwidth) {
    if (!(bandwidth > 0)) throw std::invalid_argument("gaussian_rbf: bandwidth must be positive");
    return KernelSpec{Type::gaussian_rbf, bandwidth, {}};
}

KernelSpec KernelSpec::Block::component() const {
    switch (type) {
        case Type::cubic_spline: return KernelSpec::cubic_spline();
        case Type::thin_plate: return KernelSpec::thin_plate();
        case Type::gaussian_rbf: return KernelSpec::gaussian_rbf(bandwidth);
        default: throw std::invalid_argument("ssanova: blocks cannot nest");
    }
}

KernelSpec KernelSpec::ssanova(std::vector<Block> blocks) {
    if (blocks.empty()) throw std::invalid_argument("ssanova: needs at least one block");
    for (const auto& blk : blocks) {
        if (!(blk.theta > 0)) throw std::invalid_argument("ssanova: block weights must be positive");
        if (blk.type == Type::ssanova) throw std::invalid_argument("ssanova: blocks cannot nest");
        if (blk.coords.empty()) throw std::invalid_argument("ssanova: block needs coordinates");
    }
    KernelSpec k;
    k.type = Type::ssanova;
    k.blocks = std::move(blocks);
    return k;
}

int KernelSpec::expected_dim() const {
    switch (type) {
        case Type::cubic_spline: return 1;
        case Type::thin_plate: return 2;
        case Type::gaussian_rbf: return -1;
        case Type::ssanova: {
            int d = 0;
            for (const auto& blk : blocks)
                for (int c : blk.coords) d = std::max(d, c + 1);
            return d;
        }
    }
    return -1;
}

int KernelSpec::null_dim(int d) const {
    switch (type) {
        case Type::cubic_spline: return 2;
        case Type::thin_plate: return 3;
        case Type::gaussian_rbf: return 1;
        case Type::ssanova: {
            int n0 = 1;
            for (const auto& blk : blocks) {
                if (blk.type == Type::cubic_spline) n0 += 1;
                else if (blk.type == Type::thin_plate) n0 += 2;
            }
            (void)d;
            return n0;
        }
    }
    return 1;
}

namespace {

// Scaled Bernoulli polynomials k_r = B_r(x)/r! on [0,1]; the standard
// order-2 smoothing-spline kernel is K(x,y) = k2(x)k2(y) - k4(|x-y|).
double bern_k2(double x) {
    const double u = x - 0.5;
    return 0.5 * (u * u - 1.0 / 12.0);
}

double bern_k4(double x) {
    const double u = x - 0.5;
    const double u2 = u * u;
    return (u2 * u2 - 0.5 * u2 + 7.0 / 240.0) / 24.0;
}

void check_unit_interval(double x) {
    if (x < -1e-9 || x > 1.0 + 1e-9)
        throw std::domain_error("cubic_spline kernel: point outside [0,1]");
}

double cubic_spline_value(double s, double t) {
    check_unit_interval(s);
    check_unit_interval(t);
    return bern_k2(s) * bern_k2(t) - bern_k4(std::abs(s - t));
}

double thin_plate_value(const RowVec& s, const RowVec& t) {
    const double r2 = (s - t).squaredNorm();
    if (r2 == 0.0) return 0.0;
    return 0.5 * r2 * std::log(r2);  // r^2 log r
}

double rbf_value(const RowVec& s, const RowVec& t, double bw) {
    return std::exp(-(s - t).squaredNorm() / (2.0 * bw * bw));
}

RowVec subset(const RowVec& x, const std::vector<int>& coords) {
    RowVec out(coords.size());
    for (size_t i = 0; i < coords.size(); ++i) out[static_cast<int>(i)] = x[coords[i]];
    return out;
}

Matrix subset_cols(const Matrix& pts, const std::vector<int>& coords) {
    Matrix out(pts.rows(), coords.size());
    for (size_t j = 0; j < coords.size(); ++j) out.col(static_cast<int>(j)) = pts.col(coords[j]);
    return out;
}

}  // namespace

double kernel_value(const KernelSpec& k, const RowVec& s, const RowVec& t) {
    if (!s.allFinite() || !t.allFinite()) throw std::domain_error("kernel: non-finite point");
    switch (k.type) {
        case KernelSpec::Type::cubic_spline:
            if (s.size() != 1) throw std::invalid_argument("cubic_spline kernel expects d=1");
            return cubic_spline_value(s[0], t[0]);
        case KernelSpec::Type::thin_plate:
            if (s.size() != 2) throw std::invalid_argument("thin_plate kernel expects d=2");
            return thin_plate_value(s, t);
        case KernelSpec::Type::gaussian_rbf:
            return rbf_value(s, t, k.bandwidth);
        case KernelSpec::Type::ssanova: {
            double acc = 0.0;
            for (const auto& blk : k.blocks)
                acc += blk.theta * kernel_value(blk.component(), subset(s, blk.coords), subset(t, blk.coords));
            return acc;
        }
    }
    throw std::logic_error("kernel_value: unhandled kernel type");
}

Matrix gram(const Matrix& points, const KernelSpec& k) {
    const int n = static_cast<int>(points.rows());
    Matrix g(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            const double v = kernel_value(k, points.row(i), points.row(j));
            g(i, j) = v;
            g(j, i) = v;
        }
    }
    return g;
}

Matrix cross_gram(const Matrix& a, const Matrix& b, const KernelSpec& k) {
    Matrix g(a.rows(), b.rows());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < b.rows(); ++j) g(i, j) = kernel_value(k, a.row(i), b.row(j));
    return g;
}

Matrix null_basis_unchecked(const Matrix& points, const KernelSpec& k) {
    const int n = static_cast<int>(points.rows());
    switch (k.type) {
        case KernelSpec::Type::cubic_spline: {
            Matrix s(n, 2);
            s.col(0).setOnes();
            s.col(1) = points.col(0).array() - 0.5;
            return s;
        }
        case KernelSpec::Type::thin_plate: {
            Matrix s(n, 3);
            s.col(0).setOnes();
            s.col(1) = points.col(0);
            s.col(2) = points.col(1);
            return s;
        }
        case KernelSpec::Type::gaussian_rbf: {
            return Matrix::Ones(n, 1);
        }
        case KernelSpec::Type::ssanova: {
            Matrix s(n, k.null_dim(static_cast<int>(points.cols())));
            s.col(0).setOnes();
            int col = 1;
            for (const auto& blk : k.blocks) {
                if (blk.type == KernelSpec::Type::cubic_spline) {
                    s.col(col++) = points.col(blk.coords[0]).array() - 0.5;
                } else if (blk.type == KernelSpec::Type::thin_plate) {
                    s.col(col++) = points.col(blk.coords[0]);
                    s.col(col++) = points.col(blk.coords[1]);
                }
            }
            return s;
        }
    }
    throw std::logic_error("null_basis: unhandled kernel type");
}

Matrix null_basis(const Matrix& points, const KernelSpec& k) {
    Matrix s = null_basis_unchecked(points, k);
    Eigen::ColPivHouseholderQR<Matrix> qr(s);
    qr.setThreshold(1e-10);
    if (qr.rank() < s.cols())
        throw std::runtime_error("null_basis: degenerate design (null-space basis is rank deficient)");
    return s;
}

Matrix ssanova_gram(const Matrix& points, const std::vector<KernelSpec::Block>& blocks) {
    Matrix g = Matrix::Zero(points.rows(), points.rows());
    for (const auto& blk : blocks) g += blk.theta * gram(subset_cols(points, blk.coords), blk.component());
    return g;
}

void add_jitter(Matrix& g) {
    const int n = static_cast<int>(g.rows());
    if (n == 0) return;
    const double eps = 1e-10 * g.trace() / n;
    g.diagonal().array() += std::max(eps, 1e-12);
}

}  // namespace qple
