#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "error.hpp"
#include "model.hpp"

namespace specdetect {

// ---------------------------------------------------------------------------
// Fluorescence baseline under the positive-MSE loss
// ---------------------------------------------------------------------------

/// Polynomial baseline that never exceeds the signal it was fitted to.
/// Coefficients refer to the sample index mapped onto [0, 1].
struct BaselineFit {
    std::vector<double> coeffs;
    int degree = 0;
    /// Sum of squared gaps between signal and baseline.
    double loss = 0.0;
    bool converged = true;
    std::size_t iterations = 0;
    Vector baseline;
};

struct FluorescenceCorrection {
    Vector corrected;
    BaselineFit fit;
};

namespace detail {

inline Matrix unit_vandermonde(Eigen::Index m, int degree) {
    Matrix v(m, degree + 1);
    const double span = m > 1 ? static_cast<double>(m - 1) : 1.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        const double x = static_cast<double>(i) / span;
        double p = 1.0;
        for (int k = 0; k <= degree; ++k) {
            v(i, k) = p;
            p *= x;
        }
    }
    return v;
}

/// Orthonormal basis of the null space of the rows of `a` (columns of the result).
inline Matrix null_space(const Matrix& a, Eigen::Index dim) {
    if (a.rows() == 0) return Matrix::Identity(dim, dim);
    Eigen::FullPivHouseholderQR<Matrix> qr(a.transpose());
    const Matrix q = qr.matrixQ();
    const Eigen::Index rank = qr.rank();
    return q.rightCols(dim - rank);
}

}  // namespace detail

/// Minimizes sum (y_i - b_i)^2 over degree-`degree` polynomials b subject to
/// b_i <= y_i at every sample, i.e. the squared loss with an infinite penalty
/// whenever the baseline rises above the data. Solved exactly with a primal
/// active-set method started from the feasible constant min(y).
inline FluorescenceCorrection remove_fluorescence(const Vector& spectrum, int degree,
                                                  std::size_t max_iterations = 1000) {
    const Eigen::Index m = spectrum.size();
    detail::require(degree >= 0, "remove_fluorescence: degree must be >= 0");
    detail::require(m > degree, "remove_fluorescence: degree must be < number of samples");

    FluorescenceCorrection out;
    out.fit.degree = degree;
    const double scale = spectrum.cwiseAbs().maxCoeff();
    if (scale == 0.0) {
        out.fit.coeffs.assign(static_cast<std::size_t>(degree) + 1, 0.0);
        out.fit.baseline = Vector::Zero(m);
        out.corrected = Vector::Zero(m);
        return out;
    }

    const Vector y = spectrum / scale;
    const Matrix v = detail::unit_vandermonde(m, degree);
    const Eigen::Index p = degree + 1;
    Vector c = Vector::Zero(p);
    c(0) = y.minCoeff();

    std::vector<Eigen::Index> working;
    const double tol = 1e-12;
    bool optimal = false;
    std::size_t it = 0;
    for (; it < max_iterations; ++it) {
        Matrix active(static_cast<Eigen::Index>(working.size()), p);
        for (std::size_t w = 0; w < working.size(); ++w) active.row(static_cast<Eigen::Index>(w)) = v.row(working[w]);
        const Vector r = y - v * c;

        Vector step = Vector::Zero(p);
        const Matrix z = detail::null_space(active, p);
        if (z.cols() > 0) {
            const Matrix vz = v * z;
            step = z * vz.colPivHouseholderQr().solve(r);
        }

        if (step.norm() <= tol * (1.0 + c.norm())) {
            if (working.empty()) {
                optimal = true;
                break;
            }
            // grad = -V^T r; KKT: -V^T r + A^T mu = 0 with mu >= 0.
            const Vector mu = active.transpose().colPivHouseholderQr().solve(v.transpose() * r);
            Eigen::Index worst = 0;
            const double most_negative = mu.minCoeff(&worst);
            if (most_negative >= -1e-12) {
                optimal = true;
                break;
            }
            working.erase(working.begin() + worst);
            continue;
        }

        double alpha = 1.0;
        Eigen::Index blocking = -1;
        const Vector vs = v * step;
        for (Eigen::Index i = 0; i < m; ++i) {
            if (vs(i) <= 1e-15) continue;
            if (std::find(working.begin(), working.end(), i) != working.end()) continue;
            const double slack = std::max(r(i), 0.0);
            const double a = slack / vs(i);
            if (a < alpha) {
                alpha = a;
                blocking = i;
            }
        }
        c += alpha * step;
        if (blocking >= 0) working.push_back(blocking);
    }

    Vector baseline = v * c;
    // Round-off may leave the baseline a hair above the data; shift it down.
    const double violation = (baseline - y).maxCoeff();
    if (violation > 0.0) {
        baseline.array() -= violation;
        c(0) -= violation;
    }

    out.fit.converged = optimal;
    out.fit.iterations = it;
    out.fit.baseline = baseline * scale;
    out.fit.coeffs.resize(static_cast<std::size_t>(p));
    for (Eigen::Index k = 0; k < p; ++k) out.fit.coeffs[static_cast<std::size_t>(k)] = c(k) * scale;
    out.corrected = (spectrum - out.fit.baseline).cwiseMax(0.0);
    out.fit.loss = (spectrum - out.fit.baseline).squaredNorm();
    return out;
}

// ---------------------------------------------------------------------------
// Solvent subtraction
// ---------------------------------------------------------------------------

struct SolventSubtraction {
    MeasurementMatrix residual;
    /// Regression coefficient per time row, clamped at >= 0.
    Vector coeffs;
};

/// Per time row, b_j = max(0, <Y_j - E_j, S> / <S, S>) and residual_j = Y_j - b_j S,
/// where E is an optional estimate of the analyte term (zero when absent).
inline SolventSubtraction subtract_solvent(const MeasurementMatrix& y, const Vector& solvent_spectrum,
                                           const Matrix* analyte_estimate = nullptr) {
    y.check();
    detail::require_data(solvent_spectrum.size() == y.cols(), "subtract_solvent: solvent length != M");
    const double norm2 = solvent_spectrum.squaredNorm();
    detail::require_data(norm2 > 0.0, "subtract_solvent: solvent spectrum has zero norm");
    detail::require_data(analyte_estimate == nullptr ||
                             (analyte_estimate->rows() == y.rows() && analyte_estimate->cols() == y.cols()),
                         "subtract_solvent: analyte estimate has the wrong shape");

    SolventSubtraction out;
    const Vector projection =
        analyte_estimate ? Vector((y.values - *analyte_estimate) * solvent_spectrum) : Vector(y.values * solvent_spectrum);
    out.coeffs = (projection / norm2).cwiseMax(0.0);
    Matrix residual = y.values - out.coeffs * solvent_spectrum.transpose();
    out.residual = MeasurementMatrix(y.grid_t, y.grid_f, std::move(residual));
    return out;
}

// ---------------------------------------------------------------------------
// Savitzky-Golay smoothing
// ---------------------------------------------------------------------------

/// window x window hat matrix of the local polynomial fit: row k gives the
/// weights producing the fitted value at window position k.
inline Matrix savitzky_golay_weights(int window, int order) {
    detail::require(window >= 1 && window % 2 == 1, "savitzky_golay: window must be a positive odd integer");
    detail::require(order >= 0 && order < window, "savitzky_golay: order must satisfy 0 <= order < window");
    const int half = window / 2;
    Matrix a(window, order + 1);
    for (int j = 0; j < window; ++j) {
        const double x = half > 0 ? static_cast<double>(j - half) / half : 0.0;
        double pw = 1.0;
        for (int p = 0; p <= order; ++p) {
            a(j, p) = pw;
            pw *= x;
        }
    }
    const Matrix pinv = a.colPivHouseholderQr().solve(Matrix::Identity(window, window));
    return a * pinv;
}

/// Local least-squares polynomial smoothing. The first and last half-window of
/// samples take their values from the polynomial fitted to the first/last full
/// window, which keeps the operator linear and polynomial-exact up to `order`.
inline Vector savitzky_golay(const Vector& signal, int window, int order) {
    const Matrix h = savitzky_golay_weights(window, order);
    const Eigen::Index n = signal.size();
    detail::require(n >= window, "savitzky_golay: signal shorter than window");
    const int half = window / 2;
    Vector out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index start = i - half;
        Eigen::Index pos = half;
        if (start < 0) {
            start = 0;
            pos = i;
        } else if (start + window > n) {
            start = n - window;
            pos = i - start;
        }
        out(i) = h.row(pos).dot(signal.segment(start, window));
    }
    return out;
}

enum class SmoothAxes { frequency, both };

/// Smooths every time row along frequency; with SmoothAxes::both each
/// frequency column is then smoothed along time as well.
inline MeasurementMatrix smooth_matrix(const MeasurementMatrix& y, int window, int order,
                                       SmoothAxes axes = SmoothAxes::frequency) {
    y.check();
    Matrix out(y.rows(), y.cols());
    for (Eigen::Index j = 0; j < y.rows(); ++j) out.row(j) = savitzky_golay(y.values.row(j).transpose(), window, order).transpose();
    if (axes == SmoothAxes::both) {
        for (Eigen::Index i = 0; i < y.cols(); ++i) out.col(i) = savitzky_golay(out.col(i), window, order);
    }
    return MeasurementMatrix(y.grid_t, y.grid_f, std::move(out));
}

// ---------------------------------------------------------------------------
// Cosmic-ray impulse filter
// ---------------------------------------------------------------------------

namespace detail {

inline double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2 == 1) return *mid;
    const double upper = *mid;
    const double lower = *std::max_element(v.begin(), mid);
    return 0.5 * (lower + upper);
}

}  // namespace detail

/// Replaces isolated temporal impulses by the median of their neighbours.
///
/// Per frequency column, every sample is compared with the median of its
/// +-2 temporal neighbours. A sample is an impulse when that deviation exceeds
/// z_threshold robust standard deviations (1.4826 MAD of the column's
/// deviations, or their RMS when the MAD vanishes) and the sample stands out
/// from both adjacent samples by the same margin in the same direction.
inline MeasurementMatrix despike_cosmic(const MeasurementMatrix& y, double z_threshold = 8.0) {
    y.check();
    detail::require(z_threshold > 0.0, "despike_cosmic: z_threshold must be > 0");
    Matrix out = y.values;
    const Eigen::Index n = y.rows();
    if (n < 3) return MeasurementMatrix(y.grid_t, y.grid_f, std::move(out));

    std::vector<double> neighbours;
    std::vector<double> deviation(static_cast<std::size_t>(n));
    std::vector<double> medians(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < y.cols(); ++i) {
        const auto col = y.values.col(i);
        for (Eigen::Index j = 0; j < n; ++j) {
            neighbours.clear();
            for (Eigen::Index d = -2; d <= 2; ++d) {
                const Eigen::Index k = j + d;
                if (d != 0 && k >= 0 && k < n) neighbours.push_back(col(k));
            }
            medians[static_cast<std::size_t>(j)] = detail::median_of(neighbours);
            deviation[static_cast<std::size_t>(j)] = col(j) - medians[static_cast<std::size_t>(j)];
        }
        std::vector<double> abs_dev(deviation.size());
        std::transform(deviation.begin(), deviation.end(), abs_dev.begin(), [](double d) { return std::abs(d); });
        double spread = 1.4826 * detail::median_of(abs_dev);
        double sum_sq = 0.0;
        for (double d : deviation) sum_sq += d * d;

        for (Eigen::Index j = 0; j < n; ++j) {
            const double dev = deviation[static_cast<std::size_t>(j)];
            double s = spread;
            if (s <= 0.0) {
                const double others = sum_sq - dev * dev;
                s = std::sqrt(std::max(others, 0.0) / static_cast<double>(n - 1));
            }
            const double margin = z_threshold * s;
            if (std::abs(dev) <= margin || (s == 0.0 && dev == 0.0)) continue;
            const double sign = dev > 0.0 ? 1.0 : -1.0;
            bool isolated = true;
            if (j > 0) isolated = isolated && sign * (col(j) - col(j - 1)) > margin;
            if (j + 1 < n) isolated = isolated && sign * (col(j) - col(j + 1)) > margin;
            if (isolated) out(j, i) = medians[static_cast<std::size_t>(j)];
        }
    }
    return MeasurementMatrix(y.grid_t, y.grid_f, std::move(out));
}

}  // namespace specdetect
