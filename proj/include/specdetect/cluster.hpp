#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "error.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "peakfit.hpp"
#include "random.hpp"

namespace specdetect {

/// A fitted peak in clustering space: (origin, duration).
using TimePoint = std::array<double, 2>;

struct ClusterModel {
    std::size_t k_hat = 0;
    std::vector<TimePoint> centroids;
    /// assignments[i] is the cluster of point i.
    std::vector<std::size_t> assignments;
    double inertia = 0.0;
    /// Inertia after every centroid update of the winning Lloyd run.
    std::vector<double> inertia_trace;
};

struct KMeansOptions {
    std::size_t restarts = 20;
    std::size_t max_iterations = 300;
    unsigned threads = 1;
};

namespace detail {

inline double squared_distance(const TimePoint& a, const TimePoint& b) noexcept {
    const double dx = a[0] - b[0];
    const double dy = a[1] - b[1];
    return dx * dx + dy * dy;
}

inline std::size_t nearest_centroid(const TimePoint& p, const std::vector<TimePoint>& centroids) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        const double d = squared_distance(p, centroids[c]);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

inline std::vector<TimePoint> kmeanspp_seeds(const std::vector<TimePoint>& points, std::size_t k, Rng& rng) {
    std::vector<TimePoint> seeds;
    std::uniform_int_distribution<std::size_t> pick(0, points.size() - 1);
    seeds.push_back(points[pick(rng)]);
    std::vector<double> d2(points.size());
    while (seeds.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            d2[i] = squared_distance(points[i], seeds[nearest_centroid(points[i], seeds)]);
            total += d2[i];
        }
        if (total <= 0.0) {
            seeds.push_back(points[pick(rng)]);
            continue;
        }
        std::uniform_real_distribution<double> u(0.0, total);
        double target = u(rng);
        std::size_t chosen = points.size() - 1;
        for (std::size_t i = 0; i < points.size(); ++i) {
            target -= d2[i];
            if (target < 0.0 && d2[i] > 0.0) {
                chosen = i;
                break;
            }
        }
        seeds.push_back(points[chosen]);
    }
    return seeds;
}

}  // namespace detail

/// One Lloyd run from k-means++ seeds, stopping at an assignment fixpoint or
/// after max_iterations updates.
inline ClusterModel kmeans_single(const std::vector<TimePoint>& points, std::size_t k, Rng& rng,
                                  std::size_t max_iterations = 300) {
    detail::require(k >= 1 && k <= points.size(), "kmeans: need 1 <= k <= number of points");
    ClusterModel model;
    model.k_hat = k;
    model.centroids = detail::kmeanspp_seeds(points, k, rng);
    std::vector<std::size_t> assign(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) assign[i] = detail::nearest_centroid(points[i], model.centroids);

    for (std::size_t it = 0; it < max_iterations; ++it) {
        std::vector<TimePoint> sums(k, TimePoint{0.0, 0.0});
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < points.size(); ++i) {
            sums[assign[i]][0] += points[i][0];
            sums[assign[i]][1] += points[i][1];
            ++counts[assign[i]];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                model.centroids[c] = {sums[c][0] / static_cast<double>(counts[c]),
                                      sums[c][1] / static_cast<double>(counts[c])};
            }
        }
        double inertia = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) inertia += detail::squared_distance(points[i], model.centroids[assign[i]]);
        model.inertia_trace.push_back(inertia);
        // Re-seed empty clusters at the worst-served point.
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] > 0) continue;
            std::size_t worst = 0;
            double worst_d = -1.0;
            for (std::size_t i = 0; i < points.size(); ++i) {
                const double d = detail::squared_distance(points[i], model.centroids[assign[i]]);
                if (d > worst_d) {
                    worst_d = d;
                    worst = i;
                }
            }
            model.centroids[c] = points[worst];
        }

        std::vector<std::size_t> next(points.size());
        for (std::size_t i = 0; i < points.size(); ++i) next[i] = detail::nearest_centroid(points[i], model.centroids);
        if (next == assign) break;
        assign = std::move(next);
    }
    model.assignments = std::move(assign);
    model.inertia = model.inertia_trace.back();
    return model;
}

/// Best of `restarts` seeded Lloyd runs (lowest inertia, ties to the earliest
/// restart). Points are clustered in lexicographic order, so the result does
/// not depend on the input order.
inline ClusterModel kmeans(const std::vector<TimePoint>& points, std::size_t k, std::uint64_t seed,
                           const KMeansOptions& options = {}) {
    detail::require(k >= 1 && k <= points.size(), "kmeans: need 1 <= k <= number of points");
    detail::require(options.restarts >= 1, "kmeans: restarts must be >= 1");
    std::vector<std::size_t> order(points.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return points[a] < points[b]; });
    std::vector<TimePoint> sorted(points.size());
    for (std::size_t i = 0; i < order.size(); ++i) sorted[i] = points[order[i]];

    std::vector<ClusterModel> runs(options.restarts);
    parallel_for(
        options.restarts,
        [&](std::size_t r) {
            Rng rng = make_rng(seed, "kmeans-restart", r);
            runs[r] = kmeans_single(sorted, k, rng, options.max_iterations);
        },
        options.threads);
    std::size_t best = 0;
    for (std::size_t r = 1; r < runs.size(); ++r) {
        if (runs[r].inertia < runs[best].inertia) best = r;
    }
    ClusterModel model = std::move(runs[best]);
    std::vector<std::size_t> assign(points.size());
    for (std::size_t i = 0; i < order.size(); ++i) assign[order[i]] = model.assignments[i];
    model.assignments = std::move(assign);
    return model;
}

/// Mean silhouette coefficient; singleton clusters contribute 0.
inline double silhouette_score(const std::vector<TimePoint>& points, const std::vector<std::size_t>& assignments,
                               std::size_t k) {
    const std::size_t n = points.size();
    if (n == 0) return 0.0;
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t a : assignments) ++sizes[a];
    double total = 0.0;
    std::vector<double> dist_sum(k);
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(dist_sum.begin(), dist_sum.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) dist_sum[assignments[j]] += std::sqrt(detail::squared_distance(points[i], points[j]));
        }
        const std::size_t own = assignments[i];
        if (sizes[own] <= 1) continue;
        const double a = dist_sum[own] / static_cast<double>(sizes[own] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) {
            if (c != own && sizes[c] > 0) b = std::min(b, dist_sum[c] / static_cast<double>(sizes[c]));
        }
        if (!std::isfinite(b)) continue;
        const double denom = std::max(a, b);
        if (denom > 0.0) total += (b - a) / denom;
    }
    return total / static_cast<double>(n);
}

/// Number of clusters maximizing the mean silhouette over k = 2..k_max;
/// returns 1 when no k reaches a silhouette of 0.5. Solutions with two
/// centroids closer than min_separation are not eligible.
inline std::size_t select_k(const std::vector<TimePoint>& points, std::size_t k_max, std::uint64_t seed,
                            const KMeansOptions& options = {}, double min_separation = 0.0) {
    if (points.size() < 2) return points.size();
    detail::require(k_max <= points.size(), "select_k: k_max exceeds the number of points");
    detail::require(min_separation >= 0.0, "select_k: min_separation must be >= 0");
    const double min_d2 = min_separation * min_separation;
    std::size_t best_k = 1;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 2; k <= k_max; ++k) {
        const ClusterModel model = kmeans(points, k, seed, options);
        bool resolved = true;
        for (std::size_t a = 0; a < k && resolved; ++a)
            for (std::size_t b = a + 1; b < k && resolved; ++b)
                resolved = detail::squared_distance(model.centroids[a], model.centroids[b]) >= min_d2;
        if (!resolved) continue;
        const double s = silhouette_score(points, model.assignments, k);
        if (s > best) {
            best = s;
            best_k = k;
        }
    }
    return best >= 0.5 ? best_k : 1;
}

/// z-scores each coordinate; constant coordinates map to 0.
inline std::vector<TimePoint> standardize(const std::vector<TimePoint>& points) {
    std::vector<TimePoint> out(points.size());
    for (std::size_t d = 0; d < 2; ++d) {
        double mean = 0.0;
        for (const auto& p : points) mean += p[d];
        mean /= static_cast<double>(std::max<std::size_t>(points.size(), 1));
        double var = 0.0;
        for (const auto& p : points) var += (p[d] - mean) * (p[d] - mean);
        const double sd = points.empty() ? 0.0 : std::sqrt(var / static_cast<double>(points.size()));
        for (std::size_t i = 0; i < points.size(); ++i) out[i][d] = sd > 0.0 ? (points[i][d] - mean) / sd : 0.0;
    }
    return out;
}

inline std::vector<TimePoint> time_points(const std::vector<PeakFit>& fits) {
    std::vector<TimePoint> pts;
    pts.reserve(fits.size());
    for (const auto& f : fits) pts.push_back({f.o_hat, f.d_hat});
    return pts;
}

// ---------------------------------------------------------------------------
// Detection result
// ---------------------------------------------------------------------------

struct DetectedAnalyte {
    Vector spectrum;
    Vector elution;
    ElutionWindow window;
    std::vector<PeakFit> peaks;
};

struct DetectionResult {
    std::size_t k_hat = 0;
    /// Ordered by estimated elution origin.
    std::vector<DetectedAnalyte> analytes;
};

namespace detail {
inline double median_value(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    if (n == 0) return 0.0;
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}
}  // namespace detail

/// Groups the fits by cluster. Each analyte's elution is a window at the mean
/// member (origin, duration) with the median member rise and fall and the mean
/// member magnitude m; its spectrum sums the member lines, each scaled by
/// mag_hat / m, so that elution x spectrum reproduces the fitted surfaces.
inline DetectionResult assemble(const std::vector<PeakFit>& fits, const ClusterModel& model, const FrequencyGrid& gf,
                                const TimeGrid& gt) {
    DetectionResult result;
    if (fits.empty()) return result;
    detail::require_data(model.assignments.size() == fits.size(), "assemble: assignments do not cover the fits");

    std::vector<std::vector<std::size_t>> members(model.k_hat);
    for (std::size_t i = 0; i < fits.size(); ++i) {
        detail::require_data(model.assignments[i] < model.k_hat, "assemble: assignment out of range");
        members[model.assignments[i]].push_back(i);
    }
    for (const auto& idx : members) {
        if (idx.empty()) continue;
        DetectedAnalyte a;
        double o = 0.0, d = 0.0, mag = 0.0;
        std::vector<double> rises, falls;
        for (std::size_t i : idx) {
            const auto& f = fits[i];
            o += f.o_hat;
            d += f.d_hat;
            mag += f.mag_hat;
            rises.push_back(f.alpha_hat);
            falls.push_back(f.beta_hat);
            a.peaks.push_back(f);
        }
        const auto count = static_cast<double>(idx.size());
        a.window = {o / count, d / count, detail::median_value(rises), detail::median_value(falls), mag / count};
        a.elution.resize(static_cast<Eigen::Index>(gt.n));
        for (std::size_t j = 0; j < gt.n; ++j) a.elution(static_cast<Eigen::Index>(j)) = eval_elution_window(gt.at(j), a.window);
        a.spectrum = Vector::Zero(static_cast<Eigen::Index>(gf.m));
        for (const auto& f : a.peaks) {
            const double weight = f.mag_hat / a.window.magnitude;
            for (std::size_t i = 0; i < gf.m; ++i) {
                a.spectrum(static_cast<Eigen::Index>(i)) += weight * pseudo_voigt_profile(gf.at(i) - f.c_hat, f.sigma2_hat, f.nu_hat);
            }
        }
        result.analytes.push_back(std::move(a));
    }
    std::stable_sort(result.analytes.begin(), result.analytes.end(),
                     [](const DetectedAnalyte& a, const DetectedAnalyte& b) { return a.window.origin < b.window.origin; });
    result.k_hat = result.analytes.size();
    return result;
}

}  // namespace specdetect
