#include <gtest/gtest.h>

#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

using namespace specdetect;

namespace {

double partition_inertia(const std::vector<TimePoint>& pts, const std::vector<std::size_t>& label, std::size_t k) {
    std::vector<TimePoint> sum(k, {0.0, 0.0});
    std::vector<double> count(k, 0.0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        sum[label[i]][0] += pts[i][0];
        sum[label[i]][1] += pts[i][1];
        count[label[i]] += 1.0;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto c = label[i];
        const double dx = pts[i][0] - sum[c][0] / count[c];
        const double dy = pts[i][1] - sum[c][1] / count[c];
        total += dx * dx + dy * dy;
    }
    return total;
}

// Minimum inertia over every assignment of the points to k non-empty clusters.
double brute_force_inertia(const std::vector<TimePoint>& pts, std::size_t k) {
    const std::size_t n = pts.size();
    std::vector<std::size_t> label(n, 0);
    double best = std::numeric_limits<double>::infinity();
    while (true) {
        std::vector<bool> seen(k, false);
        for (auto l : label) seen[l] = true;
        if (std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) best = std::min(best, partition_inertia(pts, label, k));
        std::size_t pos = 0;
        while (pos < n && ++label[pos] == k) label[pos++] = 0;
        if (pos == n) break;
    }
    return best;
}

std::vector<TimePoint> random_points(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 10.0);
    std::vector<TimePoint> pts(n);
    for (auto& p : pts) p = {u(rng), u(rng)};
    return pts;
}

std::vector<TimePoint> blobs(const std::vector<TimePoint>& centers, std::size_t per, double spread, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, spread);
    std::vector<TimePoint> pts;
    for (const auto& c : centers)
        for (std::size_t i = 0; i < per; ++i) pts.push_back({c[0] + g(rng), c[1] + g(rng)});
    return pts;
}

}  // namespace

TEST(KMeans, MatchesExhaustivePartitionOptimum) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 3 + static_cast<std::size_t>(trial % 6);
        const std::size_t k = 1 + static_cast<std::size_t>(trial % 3);
        const auto pts = random_points(n, rng);
        const ClusterModel model = kmeans(pts, k, static_cast<std::uint64_t>(trial));
        EXPECT_NEAR(model.inertia, brute_force_inertia(pts, k), 1e-9) << "trial " << trial;
        EXPECT_NEAR(model.inertia, partition_inertia(pts, model.assignments, k), 1e-9);
    }
}

TEST(KMeans, InertiaTraceNonIncreasing) {
    std::mt19937_64 rng(2);
    const auto pts = random_points(200, rng);
    Rng r = make_rng(3, "test");
    const ClusterModel model = kmeans_single(pts, 5, r);
    ASSERT_FALSE(model.inertia_trace.empty());
    for (std::size_t i = 1; i < model.inertia_trace.size(); ++i) {
        EXPECT_LE(model.inertia_trace[i], model.inertia_trace[i - 1] + 1e-12);
    }
}

TEST(KMeans, InputOrderDoesNotMatter) {
    std::mt19937_64 rng(4);
    const auto pts = random_points(40, rng);
    auto shuffled_idx = std::vector<std::size_t>(pts.size());
    std::iota(shuffled_idx.begin(), shuffled_idx.end(), std::size_t{0});
    std::shuffle(shuffled_idx.begin(), shuffled_idx.end(), rng);
    std::vector<TimePoint> shuffled(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) shuffled[i] = pts[shuffled_idx[i]];

    const ClusterModel a = kmeans(pts, 4, 7);
    const ClusterModel b = kmeans(shuffled, 4, 7);
    EXPECT_DOUBLE_EQ(a.inertia, b.inertia);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        for (std::size_t j = 0; j < pts.size(); ++j) {
            const bool together_a = a.assignments[shuffled_idx[i]] == a.assignments[shuffled_idx[j]];
            const bool together_b = b.assignments[i] == b.assignments[j];
            EXPECT_EQ(together_a, together_b);
        }
    }
}

TEST(KMeans, SeededDeterminismAndValidation) {
    std::mt19937_64 rng(5);
    const auto pts = random_points(30, rng);
    const ClusterModel a = kmeans(pts, 3, 11);
    const ClusterModel b = kmeans(pts, 3, 11);
    EXPECT_EQ(a.assignments, b.assignments);
    EXPECT_EQ(a.inertia, b.inertia);
    EXPECT_THROW(kmeans(pts, 0, 1), UsageError);
    EXPECT_THROW(kmeans(pts, 31, 1), UsageError);
}

TEST(Silhouette, KnownTwoClusterValue) {
    // Two pairs far apart: a = 1, b ~ 10, silhouette = 1 - a/b for every point.
    const std::vector<TimePoint> pts{{0.0, 0.0}, {1.0, 0.0}, {10.0, 0.0}, {11.0, 0.0}};
    const std::vector<std::size_t> labels{0, 0, 1, 1};
    const double s0 = 1.0 - 1.0 / 10.5;  // b for point 0: (10 + 11) / 2
    const double s1 = 1.0 - 1.0 / 9.5;   // b for point 1: (9 + 10) / 2
    EXPECT_NEAR(silhouette_score(pts, labels, 2), (2.0 * s0 + 2.0 * s1) / 4.0, 1e-12);
}

TEST(SelectK, FindsWellSeparatedBlobs) {
    std::mt19937_64 rng(6);
    for (std::size_t true_k : {2u, 3u, 4u}) {
        std::vector<TimePoint> centers;
        for (std::size_t c = 0; c < true_k; ++c) centers.push_back({5.0 * static_cast<double>(c), 1.0});
        const auto pts = blobs(centers, 4, 0.1, rng);
        EXPECT_EQ(select_k(pts, 8, 1), true_k);
        EXPECT_EQ(select_k(pts, 8, 1, {}, 1.0), true_k);
    }
}

TEST(SelectK, SingleBlobAndTinyInputs) {
    std::mt19937_64 rng(7);
    const auto pts = blobs({{3.0, 1.0}}, 12, 0.1, rng);
    EXPECT_EQ(select_k(pts, 6, 1, {}, 1.0), 1u);
    EXPECT_EQ(select_k({{1.0, 1.0}}, 1, 1), 1u);
    EXPECT_EQ(select_k({}, 1, 1), 0u);
}

TEST(Standardize, ZeroMeanUnitVariance) {
    std::mt19937_64 rng(8);
    const auto z = standardize(random_points(50, rng));
    for (std::size_t d = 0; d < 2; ++d) {
        double mean = 0.0, var = 0.0;
        for (const auto& p : z) mean += p[d];
        mean /= 50.0;
        for (const auto& p : z) var += (p[d] - mean) * (p[d] - mean);
        EXPECT_NEAR(mean, 0.0, 1e-12);
        EXPECT_NEAR(var / 50.0, 1.0, 1e-12);
    }
    const auto flat = standardize({{2.0, 1.0}, {2.0, 3.0}});
    EXPECT_EQ(flat[0][0], 0.0);
}

TEST(Assemble, GroupsFitsAndReproducesSurfaces) {
    const TimeGrid gt{0.2, 80};
    const FrequencyGrid gf{900.0, 2.0, 150};
    auto make_fit = [](double c, double o, double d, double mag) {
        PeakFit f;
        f.c_hat = c;
        f.sigma2_hat = 20.0;
        f.nu_hat = 0.5;
        f.o_hat = o;
        f.d_hat = d;
        f.alpha_hat = 0.6;
        f.beta_hat = 0.6;
        f.mag_hat = mag;
        return f;
    };
    const std::vector<PeakFit> fits{make_fit(950.0, 8.0, 1.0, 40.0), make_fit(1000.0, 2.0, 1.0, 100.0),
                                    make_fit(1100.0, 2.0, 1.0, 50.0)};
    ClusterModel model;
    model.k_hat = 2;
    model.assignments = {1, 0, 0};
    const DetectionResult r = assemble(fits, model, gf, gt);
    ASSERT_EQ(r.k_hat, 2u);
    EXPECT_DOUBLE_EQ(r.analytes[0].window.origin, 2.0);
    EXPECT_EQ(r.analytes[0].peaks.size(), 2u);
    EXPECT_DOUBLE_EQ(r.analytes[1].window.origin, 8.0);
    EXPECT_DOUBLE_EQ(r.analytes[0].window.magnitude, 75.0);

    // Same windows: elution x spectrum equals the sum of the member surfaces.
    const auto& a = r.analytes[0];
    const Matrix surface = a.elution * a.spectrum.transpose();
    Matrix expect = Matrix::Zero(80, 150);
    for (std::size_t q = 1; q < 3; ++q) {
        const auto& f = fits[q];
        for (std::size_t j = 0; j < gt.n; ++j)
            for (std::size_t i = 0; i < gf.m; ++i)
                expect(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) +=
                    f.mag_hat * eval_elution_window(gt.at(j), {f.o_hat, f.d_hat, f.alpha_hat, f.beta_hat, 1.0}) *
                    pseudo_voigt_profile(gf.at(i) - f.c_hat, f.sigma2_hat, f.nu_hat);
    }
    EXPECT_LE((surface - expect).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Assemble, EmptyFitsGiveEmptyResult) {
    const DetectionResult r = assemble({}, ClusterModel{}, FrequencyGrid{}, TimeGrid{});
    EXPECT_EQ(r.k_hat, 0u);
    EXPECT_TRUE(r.analytes.empty());
}
