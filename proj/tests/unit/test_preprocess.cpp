#include <gtest/gtest.h>

#include "support.hpp"

#include <cmath>
#include <limits>

using namespace specdetect;

namespace {

Vector polynomial_on_unit_axis(Eigen::Index m, const std::vector<double>& coeffs) {
    Vector v(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const double x = static_cast<double>(i) / static_cast<double>(m - 1);
        double acc = 0.0;
        for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = acc * x + *it;
        v(i) = acc;
    }
    return v;
}

// Exhaustive active-set enumeration for a line under y: the optimum is the
// unconstrained fit, a fit pinned to one sample, or the line through two samples.
double best_line_loss_under(const Vector& y) {
    const Eigen::Index m = y.size();
    Vector x(m);
    for (Eigen::Index i = 0; i < m; ++i) x(i) = static_cast<double>(i) / static_cast<double>(m - 1);
    double best = std::numeric_limits<double>::infinity();
    auto consider = [&](double c0, double c1) {
        const Vector b = c0 + c1 * x.array();
        if ((b - y).maxCoeff() > 1e-12) return;
        best = std::min(best, (y - b).squaredNorm());
    };
    {
        Matrix a(m, 2);
        a.col(0).setOnes();
        a.col(1) = x;
        const Vector c = a.colPivHouseholderQr().solve(y);
        consider(c(0), c(1));
    }
    for (Eigen::Index p = 0; p < m; ++p) {
        // b(x) = y_p + s (x - x_p); least-squares s.
        const Vector dx = x.array() - x(p);
        const Vector dy = y.array() - y(p);
        const double s = dx.squaredNorm() > 0.0 ? dx.dot(dy) / dx.squaredNorm() : 0.0;
        consider(y(p) - s * x(p), s);
        for (Eigen::Index q = p + 1; q < m; ++q) {
            const double slope = (y(q) - y(p)) / (x(q) - x(p));
            consider(y(p) - slope * x(p), slope);
        }
    }
    return best;
}

}  // namespace

TEST(PositiveBaseline, ConstantCaseIsMinimum) {
    std::mt19937_64 rng(1);
    const Vector y = testsupport::random_vector(60, rng, 0.0, 10.0);
    const BaselineFit fit = remove_fluorescence(y, 0).fit;
    EXPECT_NEAR(fit.coeffs[0], y.minCoeff(), 1e-12);
    EXPECT_TRUE(fit.converged);
}

TEST(PositiveBaseline, LineMatchesExhaustiveOracle) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const Vector y = testsupport::random_vector(40, rng, 0.0, 5.0) +
                         polynomial_on_unit_axis(40, {1.0, 3.0 * (trial % 3 - 1)});
        const FluorescenceCorrection fc = remove_fluorescence(y, 1);
        EXPECT_NEAR(fc.fit.loss, best_line_loss_under(y), 1e-9 * (1.0 + fc.fit.loss)) << "trial " << trial;
    }
}

TEST(PositiveBaseline, NeverAboveSignal) {
    std::mt19937_64 rng(3);
    for (int degree = 0; degree <= 5; ++degree) {
        const Vector y = testsupport::random_vector(300, rng, -2.0, 2.0) + polynomial_on_unit_axis(300, {5.0, -4.0, 6.0});
        const FluorescenceCorrection fc = remove_fluorescence(y, degree);
        EXPECT_LE((fc.fit.baseline - y).maxCoeff(), 1e-9);
        EXPECT_GE(fc.corrected.minCoeff(), 0.0);
        EXPECT_TRUE(fc.fit.converged);
    }
}

TEST(PositiveBaseline, RecoversPurePolynomial) {
    const std::vector<double> coeffs{2.0, -1.0, 4.0, -3.0};
    const Vector y = polynomial_on_unit_axis(500, coeffs);
    const FluorescenceCorrection fc = remove_fluorescence(y, 3);
    EXPECT_LE((fc.fit.baseline - y).cwiseAbs().maxCoeff(), 1e-6);
    for (std::size_t k = 0; k < coeffs.size(); ++k) EXPECT_NEAR(fc.fit.coeffs[k], coeffs[k], 1e-6);
}

TEST(PositiveBaseline, KeepsPeaksAboveBaseline) {
    Vector y = polynomial_on_unit_axis(400, {10.0, 5.0, -3.0});
    y(100) += 50.0;
    y(250) += 30.0;
    const FluorescenceCorrection fc = remove_fluorescence(y, 2);
    EXPECT_NEAR(fc.corrected(100), 50.0, 1e-6);
    EXPECT_NEAR(fc.corrected(250), 30.0, 1e-6);
    EXPECT_LE(fc.corrected.sum(), 80.0 + 1e-5);
}

TEST(PositiveBaseline, ScaleEquivariant) {
    std::mt19937_64 rng(4);
    const Vector y = testsupport::random_vector(120, rng, 0.0, 3.0);
    const BaselineFit a = remove_fluorescence(y, 2).fit;
    const BaselineFit b = remove_fluorescence(7.0 * y, 2).fit;
    EXPECT_LE((b.baseline - 7.0 * a.baseline).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(PositiveBaseline, Validation) {
    const Vector y = Vector::Ones(3);
    EXPECT_THROW(remove_fluorescence(y, 3), UsageError);
    EXPECT_THROW(remove_fluorescence(y, -1), UsageError);
    const FluorescenceCorrection zero = remove_fluorescence(Vector::Zero(10), 2);
    EXPECT_EQ(zero.fit.baseline.cwiseAbs().maxCoeff(), 0.0);
}

TEST(SolventSubtraction, PerRowLeastSquaresOracle) {
    std::mt19937_64 rng(5);
    const TimeGrid gt{1.0, 12};
    const FrequencyGrid gf{0.0, 1.0, 40};
    const Vector s = testsupport::random_vector(40, rng, 0.5, 2.0);
    Matrix y = testsupport::random_matrix(12, 40, rng, 0.0, 0.3);
    for (Eigen::Index j = 0; j < 12; ++j) y.row(j) += (0.5 * static_cast<double>(j)) * s.transpose();
    const SolventSubtraction out = subtract_solvent(MeasurementMatrix(gt, gf, y), s);
    const Matrix smat = s;
    for (Eigen::Index j = 0; j < 12; ++j) {
        const double b = smat.colPivHouseholderQr().solve(Matrix(y.row(j).transpose()))(0, 0);
        EXPECT_NEAR(out.coeffs(j), std::max(b, 0.0), 1e-12);
        EXPECT_NEAR(out.residual.values.row(j).dot(s), 0.0, 1e-9);
    }
}

TEST(SolventSubtraction, NegativeCoefficientsClampToZero) {
    const TimeGrid gt{1.0, 2};
    const FrequencyGrid gf{0.0, 1.0, 3};
    Matrix y(2, 3);
    y << -1.0, -2.0, -3.0, 1.0, 2.0, 3.0;
    const Vector s = Vector::Ones(3);
    const SolventSubtraction out = subtract_solvent(MeasurementMatrix(gt, gf, y), s);
    EXPECT_EQ(out.coeffs(0), 0.0);
    EXPECT_EQ(out.residual.values.row(0), y.row(0));
    EXPECT_NEAR(out.coeffs(1), 2.0, 1e-15);
}

TEST(SolventSubtraction, ZeroSpectrumIsDataError) {
    const TimeGrid gt{1.0, 2};
    const FrequencyGrid gf{0.0, 1.0, 3};
    EXPECT_THROW(subtract_solvent(MeasurementMatrix(gt, gf), Vector::Zero(3)), DataError);
    EXPECT_THROW(subtract_solvent(MeasurementMatrix(gt, gf), Vector::Ones(4)), DataError);
}

TEST(SavitzkyGolay, ClassicFivePointQuadraticCoefficients) {
    const Matrix h = savitzky_golay_weights(5, 2);
    const double expect[] = {-3.0, 12.0, 17.0, 12.0, -3.0};
    for (int k = 0; k < 5; ++k) EXPECT_NEAR(h(2, k), expect[k] / 35.0, 1e-14);
}

TEST(SavitzkyGolay, ReproducesCubicsIncludingEdges) {
    const Eigen::Index n = 80;
    for (int degree = 0; degree <= 3; ++degree) {
        Vector y(n);
        for (Eigen::Index i = 0; i < n; ++i) y(i) = std::pow(0.1 * static_cast<double>(i) - 3.0, degree) + 0.5;
        EXPECT_LE((savitzky_golay(y, 9, 3) - y).cwiseAbs().maxCoeff(), 1e-9) << "degree " << degree;
    }
}

TEST(SavitzkyGolay, InteriorMatchesLocalPolynomialFit) {
    std::mt19937_64 rng(6);
    const Vector y = testsupport::random_vector(50, rng);
    const Vector s = savitzky_golay(y, 7, 2);
    for (Eigen::Index i = 3; i < 47; ++i) {
        Matrix a(7, 3);
        Vector b(7);
        for (int k = -3; k <= 3; ++k) {
            a.row(k + 3) << 1.0, static_cast<double>(k), static_cast<double>(k * k);
            b(k + 3) = y(i + k);
        }
        const Vector c = (a.transpose() * a).ldlt().solve(a.transpose() * b);
        EXPECT_NEAR(s(i), c(0), 1e-12);
    }
}

TEST(SavitzkyGolay, Linear) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const Vector x = testsupport::random_vector(64, rng);
        const Vector y = testsupport::random_vector(64, rng);
        const double a = 3.0 * (trial % 7) - 9.0, b = 0.25 * trial;
        const Vector lhs = savitzky_golay(a * x + b * y, 9, 3);
        const Vector rhs = a * savitzky_golay(x, 9, 3) + b * savitzky_golay(y, 9, 3);
        EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(SavitzkyGolay, Validation) {
    EXPECT_THROW(savitzky_golay_weights(8, 3), UsageError);
    EXPECT_THROW(savitzky_golay_weights(5, 5), UsageError);
    EXPECT_THROW(savitzky_golay(Vector::Ones(4), 9, 3), UsageError);
}

TEST(SavitzkyGolay, MatrixSmoothingAlongFrequencyOnly) {
    std::mt19937_64 rng(8);
    const TimeGrid gt{1.0, 12};
    const FrequencyGrid gf{0.0, 1.0, 30};
    const MeasurementMatrix y(gt, gf, testsupport::random_matrix(12, 30, rng));
    const MeasurementMatrix s = smooth_matrix(y, 9, 3);
    for (Eigen::Index j = 0; j < 12; ++j) {
        const Vector row = savitzky_golay(y.values.row(j).transpose(), 9, 3);
        EXPECT_LE((s.values.row(j).transpose() - row).cwiseAbs().maxCoeff(), 1e-15);
    }
}

TEST(Despike, RemovesIsolatedImpulse) {
    std::mt19937_64 rng(9);
    const TimeGrid gt{1.0, 40};
    const FrequencyGrid gf{0.0, 1.0, 6};
    Matrix y = testsupport::random_matrix(40, 6, rng, 9.0, 11.0);
    const Matrix clean = y;
    y(17, 2) += 500.0;
    const MeasurementMatrix out = despike_cosmic(MeasurementMatrix(gt, gf, y));
    EXPECT_LT(out.values(17, 2), 12.0);
    Matrix diff = out.values - clean;
    diff(17, 2) = 0.0;
    EXPECT_EQ(diff.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Despike, LeavesSmoothPeaksAlone) {
    const TimeGrid gt{1.0, 60};
    const FrequencyGrid gf{0.0, 1.0, 3};
    std::mt19937_64 rng(10);
    std::normal_distribution<double> noise(0.0, 1.0);
    Matrix y(60, 3);
    for (Eigen::Index j = 0; j < 60; ++j)
        for (Eigen::Index i = 0; i < 3; ++i) y(j, i) = 100.0 * std::exp(-0.5 * std::pow((j - 30) / 3.0, 2)) + noise(rng);
    const MeasurementMatrix out = despike_cosmic(MeasurementMatrix(gt, gf, y));
    EXPECT_EQ(out.values, y);
}
