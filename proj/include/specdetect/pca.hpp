#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "error.hpp"
#include "model.hpp"

namespace specdetect {

/// Truncated factorization Y (- mean_row) ~ U V^T. U carries the singular
/// values; V has orthonormal columns.
struct PcaModel {
    Matrix u;
    Matrix v;
    Vector singular_values;
    /// Zero when the model was built without centering.
    Vector mean_row;
    bool centered = false;

    [[nodiscard]] Eigen::Index rank() const noexcept { return v.cols(); }

    /// Orthonormal left factor U diag(s)^-1.
    [[nodiscard]] Matrix left_basis() const {
        Matrix b = u;
        for (Eigen::Index k = 0; k < b.cols(); ++k) {
            if (singular_values(k) > 0.0) b.col(k) /= singular_values(k);
        }
        return b;
    }

    /// U V^T plus the mean row when centered.
    [[nodiscard]] Matrix reconstruct() const {
        Matrix y = u * v.transpose();
        if (centered) y.rowwise() += mean_row.transpose();
        return y;
    }
};

inline PcaModel pca_decompose(const MeasurementMatrix& y, std::size_t k, bool center = false) {
    y.check();
    const auto limit = static_cast<std::size_t>(std::min(y.rows(), y.cols()));
    detail::require(k >= 1 && k <= limit, "pca_decompose: k must lie in [1, min(N, M)]");
    PcaModel model;
    model.centered = center;
    Matrix data = y.values;
    model.mean_row = Vector::Zero(y.cols());
    if (center) {
        model.mean_row = data.colwise().mean().transpose();
        data.rowwise() -= model.mean_row.transpose();
    }
    Eigen::BDCSVD<Matrix> svd(data, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto kk = static_cast<Eigen::Index>(k);
    model.singular_values = svd.singularValues().head(kk);
    model.v = svd.matrixV().leftCols(kk);
    model.u = svd.matrixU().leftCols(kk) * model.singular_values.asDiagonal();
    return model;
}

struct Rotation {
    /// k x k mixing matrix; Lambda_hat = U T.
    Matrix t;
    /// T was rank deficient and a pseudo-inverse is needed downstream.
    bool singular = false;
    /// Pearson correlation between each matched column of U T and the truth.
    std::vector<double> lambda_correlation;
    /// Pearson correlation between each matched column of V T^-T and the truth (empty without truth_x).
    std::vector<double> x_correlation;
};

namespace detail {

inline double pearson(const Vector& a, const Vector& b) {
    const Vector ac = a.array() - a.mean();
    const Vector bc = b.array() - b.mean();
    const double denom = ac.norm() * bc.norm();
    return denom > 0.0 ? ac.dot(bc) / denom : 0.0;
}

inline Matrix pseudo_inverse(const Matrix& m) {
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vector s = svd.singularValues();
    const double tol = 1e-12 * std::max(m.rows(), m.cols()) * (s.size() > 0 ? s(0) : 0.0);
    Vector inv = Vector::Zero(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) inv(i) = s(i) > tol ? 1.0 / s(i) : 0.0;
    return svd.matrixV().leftCols(s.size()) * inv.asDiagonal() * svd.matrixU().leftCols(s.size()).transpose();
}

inline bool is_singular(const Matrix& t) {
    Eigen::JacobiSVD<Matrix> svd(t);
    const Vector s = svd.singularValues();
    return s.size() == 0 || s(s.size() - 1) <= 1e-12 * s(0);
}

}  // namespace detail

struct Components {
    Matrix lambda_hat;
    Matrix x_hat;
    bool pseudo_inverse = false;
};

/// Lambda_hat = U T and X_hat = V T^-T, so Lambda_hat X_hat^T = U V^T.
inline Components reconstruct_components(const PcaModel& model, const Matrix& t, bool allow_pseudo_inverse = false) {
    detail::require(t.rows() == model.rank() && t.cols() == model.rank(), "reconstruct_components: T must be k x k");
    Components c;
    c.lambda_hat = model.u * t;
    if (detail::is_singular(t)) {
        if (!allow_pseudo_inverse) throw NumericalError("reconstruct_components: T is not invertible");
        c.pseudo_inverse = true;
        c.x_hat = model.v * detail::pseudo_inverse(t).transpose();
    } else {
        c.x_hat = model.v * t.inverse().transpose();
    }
    return c;
}

/// Stand-in for the manual rotation step: the first K columns of T solve
/// min ||U T - Lambda_true||_F in closed form; any remaining columns span the
/// orthogonal complement of those K columns (components matched to no truth).
inline Rotation oracle_rotation(const PcaModel& model, const Matrix& truth_lambda, const Matrix& truth_x = Matrix()) {
    const Eigen::Index k = model.rank();
    const Eigen::Index truth_k = truth_lambda.cols();
    detail::require_data(truth_lambda.rows() == model.u.rows(), "oracle_rotation: truth_lambda has the wrong row count");
    detail::require(truth_k >= 1 && truth_k <= k, "oracle_rotation: need 1 <= K <= model rank");
    detail::require_data(truth_x.size() == 0 || (truth_x.rows() == model.v.rows() && truth_x.cols() == truth_k),
                         "oracle_rotation: truth_x must be M x K");

    Rotation rot;
    const Matrix matched = model.u.colPivHouseholderQr().solve(truth_lambda);
    rot.t = Matrix::Zero(k, k);
    rot.t.leftCols(truth_k) = matched;
    if (truth_k < k) {
        Eigen::HouseholderQR<Matrix> qr(matched);
        const Matrix q = qr.householderQ() * Matrix::Identity(k, k);
        const double scale = matched.colwise().norm().mean();
        rot.t.rightCols(k - truth_k) = q.rightCols(k - truth_k) * (scale > 0.0 ? scale : 1.0);
    }
    rot.singular = detail::is_singular(rot.t);

    const Components comp = reconstruct_components(model, rot.t, true);
    for (Eigen::Index c = 0; c < truth_k; ++c) {
        rot.lambda_correlation.push_back(detail::pearson(comp.lambda_hat.col(c), truth_lambda.col(c)));
        if (truth_x.size() > 0) rot.x_correlation.push_back(detail::pearson(comp.x_hat.col(c), truth_x.col(c)));
    }
    return rot;
}

}  // namespace specdetect
