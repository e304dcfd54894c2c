#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <numbers>
#include <span>
#include <vector>

#include "error.hpp"
#include "model.hpp"

namespace specdetect {

/// Mexican-hat (Ricker) wavelet with unit L2 norm at scale `a` (in samples).
inline double ricker(double x, double a) noexcept {
    const double norm = 2.0 / (std::sqrt(3.0 * a) * std::pow(std::numbers::pi, 0.25));
    const double u = x / a;
    return norm * (1.0 - u * u) * std::exp(-0.5 * u * u);
}

namespace detail {

/// Mirror an index into [0, n) (whole-sample symmetric extension).
inline Eigen::Index reflect_index(Eigen::Index i, Eigen::Index n) noexcept {
    if (n == 1) return 0;
    const Eigen::Index period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

}  // namespace detail

/// Continuous wavelet transform, one row per scale. The signal is extended by
/// mirroring at both ends and the kernel is truncated at +-5 scales.
inline Matrix ricker_cwt(const Vector& signal, std::span<const double> scales) {
    const Eigen::Index n = signal.size();
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(scales.size()), n);
    for (std::size_t s = 0; s < scales.size(); ++s) {
        const double a = scales[s];
        detail::require(a > 0.0, "cwt: scales must be positive");
        const auto half = static_cast<Eigen::Index>(std::ceil(5.0 * a));
        std::vector<double> kernel(static_cast<std::size_t>(2 * half + 1));
        for (Eigen::Index k = -half; k <= half; ++k) kernel[static_cast<std::size_t>(k + half)] = ricker(static_cast<double>(k), a);
        // Zero-mean after truncation.
        const double dc = std::accumulate(kernel.begin(), kernel.end(), 0.0) / static_cast<double>(kernel.size());
        for (double& v : kernel) v -= dc;
        for (Eigen::Index x = 0; x < n; ++x) {
            double acc = 0.0;
            for (Eigen::Index k = -half; k <= half; ++k) {
                acc += kernel[static_cast<std::size_t>(k + half)] * signal(detail::reflect_index(x + k, n));
            }
            out(static_cast<Eigen::Index>(s), x) = acc;
        }
    }
    return out;
}

/// Height of signal[index] above the higher of its two flanking minima. Each
/// flank extends until the signal rises above the peak or the boundary.
inline double peak_prominence(const Vector& signal, Eigen::Index index) {
    const double h = signal(index);
    double left_min = h;
    for (Eigen::Index i = index - 1; i >= 0 && signal(i) <= h; --i) left_min = std::min(left_min, signal(i));
    double right_min = h;
    for (Eigen::Index i = index + 1; i < signal.size() && signal(i) <= h; ++i) right_min = std::min(right_min, signal(i));
    return h - std::max(left_min, right_min);
}

struct CwtPeak {
    std::size_t index = 0;
    double prominence = 0.0;
    double snr = 0.0;
};

/// Ridge-line peak detection on the Mexican-hat scale stack.
///
/// Positive local maxima of every scale row are linked from the coarsest row
/// down to the finest (nearest maximum within max(1, ceil(scale/2)) samples,
/// at most one missing row). A ridge is kept when it spans at least
/// max(2, ceil(S/4)) rows (capped at S) and its strongest coefficient exceeds
/// min_snr times the noise level 1.4826 MAD of the finest row. The reported
/// index is the signal maximum within +-2 samples of the ridge's finest point.
inline std::vector<CwtPeak> find_peaks_1d_cwt(const Vector& signal, std::span<const double> scales, double min_snr) {
    detail::require(!scales.empty(), "find_peaks_1d_cwt: scales must be non-empty");
    std::vector<double> sorted(scales.begin(), scales.end());
    std::sort(sorted.begin(), sorted.end());
    for (double s : sorted) detail::require(s > 0.0, "find_peaks_1d_cwt: scales must be positive");
    const Eigen::Index n = signal.size();
    std::vector<CwtPeak> peaks;
    if (n < 3) return peaks;

    const Matrix w = ricker_cwt(signal, sorted);
    const auto rows = static_cast<Eigen::Index>(sorted.size());
    const double wmax = w.cwiseAbs().maxCoeff();
    const double floor = 1e-9 * std::max(wmax, signal.cwiseAbs().maxCoeff());
    if (wmax <= floor) return peaks;

    std::vector<std::vector<Eigen::Index>> maxima(static_cast<std::size_t>(rows));
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index x = 0; x < n; ++x) {
            const double v = w(r, x);
            if (v <= floor) continue;
            const double left = x > 0 ? w(r, x - 1) : -std::numeric_limits<double>::infinity();
            const double right = x + 1 < n ? w(r, x + 1) : -std::numeric_limits<double>::infinity();
            if (v > left && v >= right) maxima[static_cast<std::size_t>(r)].push_back(x);
        }
    }

    struct Ridge {
        std::vector<std::pair<Eigen::Index, Eigen::Index>> points;  // (row, column)
        int gap = 0;
        bool open = true;
    };
    std::vector<Ridge> ridges;
    for (Eigen::Index r = rows - 1; r >= 0; --r) {
        const auto& here = maxima[static_cast<std::size_t>(r)];
        std::vector<bool> taken(here.size(), false);
        const double reach = std::max(1.0, std::ceil(sorted[static_cast<std::size_t>(r)] / 2.0));
        for (auto& ridge : ridges) {
            if (!ridge.open) continue;
            const Eigen::Index last = ridge.points.back().second;
            std::size_t best = here.size();
            Eigen::Index best_dist = std::numeric_limits<Eigen::Index>::max();
            for (std::size_t q = 0; q < here.size(); ++q) {
                if (taken[q]) continue;
                const Eigen::Index d = std::abs(here[q] - last);
                if (static_cast<double>(d) <= reach && d < best_dist) {
                    best = q;
                    best_dist = d;
                }
            }
            if (best < here.size()) {
                taken[best] = true;
                ridge.points.emplace_back(r, here[best]);
                ridge.gap = 0;
            } else if (++ridge.gap > 1) {
                ridge.open = false;
            }
        }
        for (std::size_t q = 0; q < here.size(); ++q) {
            if (!taken[q]) ridges.push_back(Ridge{{{r, here[q]}}, 0, true});
        }
    }

    std::vector<double> finest(static_cast<std::size_t>(n));
    for (Eigen::Index x = 0; x < n; ++x) finest[static_cast<std::size_t>(x)] = std::abs(w(0, x));
    const auto mid = finest.begin() + static_cast<std::ptrdiff_t>(finest.size() / 2);
    std::nth_element(finest.begin(), mid, finest.end());
    const double noise = std::max(1.4826 * *mid, floor);

    const auto min_rows = static_cast<std::size_t>(std::min<double>(
        static_cast<double>(rows), std::max(2.0, std::ceil(static_cast<double>(rows) / 4.0))));
    for (const auto& ridge : ridges) {
        if (ridge.points.size() < min_rows) continue;
        double strength = 0.0;
        for (const auto& [r, x] : ridge.points) strength = std::max(strength, w(r, x));
        const double snr = strength / noise;
        if (snr < min_snr) continue;
        const Eigen::Index x0 = ridge.points.back().second;
        Eigen::Index best = x0;
        for (Eigen::Index x = std::max<Eigen::Index>(0, x0 - 2); x <= std::min(n - 1, x0 + 2); ++x) {
            if (signal(x) > signal(best)) best = x;
        }
        peaks.push_back(CwtPeak{static_cast<std::size_t>(best), peak_prominence(signal, best), snr});
    }

    std::sort(peaks.begin(), peaks.end(), [](const CwtPeak& a, const CwtPeak& b) {
        return a.index != b.index ? a.index < b.index : a.snr > b.snr;
    });
    peaks.erase(std::unique(peaks.begin(), peaks.end(),
                            [](const CwtPeak& a, const CwtPeak& b) { return a.index == b.index; }),
                peaks.end());
    return peaks;
}

// ---------------------------------------------------------------------------
// Two-dimensional candidates
// ---------------------------------------------------------------------------

/// A time-frequency peak persisting over consecutive time rows.
struct PeakCandidate {
    std::size_t t_index = 0;
    std::size_t f_index = 0;
    double intensity = 0.0;
    double prominence = 0.0;
    /// First and last time row of the merged detections.
    std::size_t t_start = 0;
    std::size_t t_end = 0;

    bool operator==(const PeakCandidate&) const = default;
};

struct PeakFindOptions {
    std::vector<double> scales{1.0, 2.0, 4.0, 8.0, 16.0};
    double min_snr = 3.0;
    /// Row-to-row frequency tolerance when chaining detections.
    std::size_t merge_bins = 2;
    /// Minimum number of consecutive rows forming a candidate.
    std::size_t min_rows = 2;
};

/// Runs the 1-D detector on every time row and chains detections whose
/// frequency bins differ by at most merge_bins on consecutive rows. Each chain
/// spanning min_rows or more becomes one candidate at its intensity-weighted
/// centroid; candidates whose strongest member is below gamma are dropped.
/// Output is ordered by (f_index, t_index).
inline std::vector<PeakCandidate> find_peaks_2d(const MeasurementMatrix& y, double gamma,
                                                const PeakFindOptions& options = {}) {
    y.check();
    detail::require(gamma >= 0.0, "find_peaks_2d: gamma must be >= 0");
    detail::require(options.min_rows >= 1, "find_peaks_2d: min_rows must be >= 1");

    struct Member {
        std::size_t t, f;
        double intensity;
    };
    struct Track {
        std::vector<Member> members;
        bool open = true;
    };
    std::vector<Track> tracks;
    std::vector<std::size_t> active;

    for (Eigen::Index j = 0; j < y.rows(); ++j) {
        const Vector row = y.values.row(j).transpose();
        const auto found = find_peaks_1d_cwt(row, options.scales, options.min_snr);
        std::vector<bool> used(found.size(), false);
        std::vector<std::size_t> still_active;
        for (std::size_t id : active) {
            const auto& last = tracks[id].members.back();
            std::size_t best = found.size();
            std::size_t best_dist = options.merge_bins + 1;
            for (std::size_t q = 0; q < found.size(); ++q) {
                if (used[q]) continue;
                const std::size_t d = found[q].index > last.f ? found[q].index - last.f : last.f - found[q].index;
                if (d < best_dist) {
                    best = q;
                    best_dist = d;
                }
            }
            if (best < found.size()) {
                used[best] = true;
                tracks[id].members.push_back(
                    Member{static_cast<std::size_t>(j), found[best].index, row(static_cast<Eigen::Index>(found[best].index))});
                still_active.push_back(id);
            } else {
                tracks[id].open = false;
            }
        }
        for (std::size_t q = 0; q < found.size(); ++q) {
            if (used[q]) continue;
            tracks.push_back(Track{{Member{static_cast<std::size_t>(j), found[q].index,
                                           row(static_cast<Eigen::Index>(found[q].index))}},
                                   true});
            still_active.push_back(tracks.size() - 1);
        }
        active = std::move(still_active);
    }

    std::vector<PeakCandidate> out;
    for (const auto& track : tracks) {
        if (track.members.size() < options.min_rows) continue;
        double peak = -std::numeric_limits<double>::infinity();
        double wsum = 0.0, tsum = 0.0, fsum = 0.0;
        for (const auto& m : track.members) {
            peak = std::max(peak, m.intensity);
            const double w = std::max(m.intensity, 0.0);
            wsum += w;
            tsum += w * static_cast<double>(m.t);
            fsum += w * static_cast<double>(m.f);
        }
        if (peak < gamma) continue;
        if (wsum <= 0.0) {
            wsum = static_cast<double>(track.members.size());
            tsum = fsum = 0.0;
            for (const auto& m : track.members) {
                tsum += static_cast<double>(m.t);
                fsum += static_cast<double>(m.f);
            }
        }
        PeakCandidate c;
        c.t_index = static_cast<std::size_t>(std::lround(tsum / wsum));
        c.f_index = static_cast<std::size_t>(std::lround(fsum / wsum));
        c.intensity = peak;
        c.t_start = track.members.front().t;
        c.t_end = track.members.back().t;
        const Vector row = y.values.row(static_cast<Eigen::Index>(c.t_index)).transpose();
        c.prominence = peak_prominence(row, static_cast<Eigen::Index>(c.f_index));
        out.push_back(c);
    }
    std::sort(out.begin(), out.end(), [](const PeakCandidate& a, const PeakCandidate& b) {
        return a.f_index != b.f_index ? a.f_index < b.f_index : a.t_index < b.t_index;
    });
    out.erase(std::unique(out.begin(), out.end(),
                          [](const PeakCandidate& a, const PeakCandidate& b) {
                              return a.f_index == b.f_index && a.t_index == b.t_index;
                          }),
              out.end());
    return out;
}

inline std::vector<PeakCandidate> find_peaks_2d(const MeasurementMatrix& y, double gamma,
                                                std::span<const double> scales, double min_snr) {
    PeakFindOptions options;
    options.scales.assign(scales.begin(), scales.end());
    options.min_snr = min_snr;
    return find_peaks_2d(y, gamma, options);
}

/// Nearest-rank percentiles of the candidates' prominences.
inline std::vector<double> prominence_percentiles(std::span<const double> prominences,
                                                  std::span<const double> percentiles) {
    detail::require_data(!prominences.empty(), "prominence_percentiles: no candidates");
    std::vector<double> sorted(prominences.begin(), prominences.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> out;
    out.reserve(percentiles.size());
    const auto n = static_cast<double>(sorted.size());
    for (double p : percentiles) {
        detail::require(p >= 0.0 && p <= 100.0, "prominence_percentiles: percentile outside [0, 100]");
        const auto rank = static_cast<std::size_t>(std::clamp(std::ceil(p / 100.0 * n), 1.0, n));
        out.push_back(sorted[rank - 1]);
    }
    return out;
}

inline std::vector<double> prominence_percentiles(std::span<const PeakCandidate> candidates,
                                                  std::span<const double> percentiles) {
    std::vector<double> prom;
    prom.reserve(candidates.size());
    for (const auto& c : candidates) prom.push_back(c.prominence);
    return prominence_percentiles(std::span<const double>(prom), percentiles);
}

}  // namespace specdetect
