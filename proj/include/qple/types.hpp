#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

namespace qple {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

/// Discrete approximation of one subject's covariate distribution.
/// Nodes are stored one per row; weights are positive and sum to one.
/// A single node with weight one encodes an exactly observed covariate.
struct QuadratureRule {
    Matrix nodes;    // m x d
    Vector weights;  // m

    int size() const { return static_cast<int>(nodes.rows()); }
    int dim() const { return static_cast<int>(nodes.cols()); }

    void validate(double tol = 1e-12) const {
        if (nodes.rows() < 1 || nodes.rows() != weights.size())
            throw std::invalid_argument("QuadratureRule: node/weight shape mismatch");
        if ((weights.array() <= 0.0).any())
            throw std::invalid_argument("QuadratureRule: weights must be positive");
        if (std::abs(weights.sum() - 1.0) > tol)
            throw std::invalid_argument("QuadratureRule: weights must sum to 1");
        if (!nodes.allFinite())
            throw std::invalid_argument("QuadratureRule: non-finite node");
    }
};

/// Block layout of per-subject nodes inside the stacked node vector.
struct SubjectLayout {
    std::vector<int> offset;
    std::vector<int> count;
    int total = 0;

    int subjects() const { return static_cast<int>(offset.size()); }

    static SubjectLayout from_counts(const std::vector<int>& counts) {
        SubjectLayout lay;
        lay.offset.reserve(counts.size());
        lay.count = counts;
        for (int c : counts) {
            lay.offset.push_back(lay.total);
            lay.total += c;
        }
        return lay;
    }
};

/// Affine map taking each covariate coordinate to the unit interval.
struct RescaleMap {
    Vector lo;     // per-coordinate offset
    Vector range;  // per-coordinate scale, > 0

    bool identity() const { return lo.size() == 0; }

    static RescaleMap make_identity() { return RescaleMap{}; }

    Vector to_unit(const Vector& x) const {
        if (identity()) return x;
        return (x - lo).cwiseQuotient(range);
    }
    Vector from_unit(const Vector& u) const {
        if (identity()) return u;
        return lo + u.cwiseProduct(range);
    }
    Matrix to_unit_rows(const Matrix& pts) const {
        if (identity()) return pts;
        Matrix out = pts;
        for (int i = 0; i < out.rows(); ++i)
            out.row(i) = (out.row(i) - lo.transpose()).cwiseQuotient(range.transpose());
        return out;
    }
};

}  // namespace qple
