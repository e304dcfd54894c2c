#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cluster.hpp"
#include "error.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "peakfind.hpp"
#include "random.hpp"

namespace specdetect {

/// Y_hat = sum_k elution_k spectrum_k^T (solvent not included).
inline MeasurementMatrix reconstruct_y(const DetectionResult& result, const TimeGrid& gt, const FrequencyGrid& gf) {
    MeasurementMatrix out(gt, gf);
    for (const auto& a : result.analytes) {
        detail::require_data(a.elution.size() == out.rows() && a.spectrum.size() == out.cols(),
                             "reconstruct_y: analyte vectors do not match the grids");
        out.values.noalias() += a.elution * a.spectrum.transpose();
    }
    return out;
}

enum class RhoNormalization {
    /// Divide by T (f_max - f_min).
    area,
    /// Divide by the number of rows that entered the sum.
    mean,
};

/// Sum over time rows of the cosine similarity between Y_i and Y_hat_i.
///
/// Rows where the reference Y_i has zero norm are skipped. A zero Y_hat_i
/// against a nonzero Y_i contributes a cosine of 0.
inline double rho(const MeasurementMatrix& y, const MeasurementMatrix& y_hat,
                  RhoNormalization normalization = RhoNormalization::mean) {
    y.check();
    y_hat.check();
    detail::require_data(y.rows() == y_hat.rows() && y.cols() == y_hat.cols(), "rho: matrices differ in shape");
    double sum = 0.0;
    std::size_t used = 0;
    for (Eigen::Index j = 0; j < y.rows(); ++j) {
        const double ny = y.values.row(j).norm();
        if (ny == 0.0) continue;
        ++used;
        const double nh = y_hat.values.row(j).norm();
        if (nh == 0.0) continue;
        sum += y.values.row(j).dot(y_hat.values.row(j)) / (ny * nh);
    }
    detail::require_data(used > 0, "rho: every reference row has zero norm");
    if (normalization == RhoNormalization::mean) return sum / static_cast<double>(used);
    return sum / (y.grid_t.duration() * (y.grid_f.f_max() - y.grid_f.f_min));
}

// ---------------------------------------------------------------------------
// Limit-of-detection sweep
// ---------------------------------------------------------------------------

struct LodScenario {
    std::vector<AnalyteSpec> analytes;
    SolventSpec solvent;
    NoiseConfig noise;
    TimeGrid grid_t;
    FrequencyGrid grid_f;
};

/// Signature of a full detection pipeline: measurement and solvent spectrum in, result out.
using Detector = std::function<DetectionResult(const MeasurementMatrix&, const Vector&)>;

struct LodCurve {
    std::vector<double> c_direction;
    std::vector<double> etas;
    /// Mean rho over the trials at each eta.
    std::vector<double> rhos;
    /// Standard error of each mean.
    std::vector<double> rho_stderr;
    /// Smallest eta whose mean rho reaches the threshold.
    std::optional<double> eta_star;
    double threshold = 0.9;
    std::size_t trials = 0;
};

/// For every eta, synthesizes `trials` noisy measurements with quantities
/// eta * c_direction, runs the detector and scores it with rho (mean
/// normalization) against the noise-free analyte term. Trial t uses the same
/// noise sub-stream at every eta.
inline LodCurve lod_sweep(const LodScenario& scenario, std::span<const double> c_direction,
                          std::span<const double> eta_grid, const Detector& detector, double threshold,
                          std::size_t trials, std::uint64_t seed, unsigned threads = thread_budget()) {
    detail::require(c_direction.size() == scenario.analytes.size(), "lod_sweep: c_direction length != analyte count");
    double norm2 = 0.0;
    for (double c : c_direction) {
        detail::require(c > 0.0, "lod_sweep: relative concentrations must be > 0");
        norm2 += c * c;
    }
    detail::require(std::abs(std::sqrt(norm2) - 1.0) <= 1e-9, "lod_sweep: c_direction must have unit norm");
    detail::require(!eta_grid.empty(), "lod_sweep: empty eta grid");
    for (std::size_t i = 0; i < eta_grid.size(); ++i) {
        detail::require(eta_grid[i] > 0.0, "lod_sweep: eta values must be > 0");
        if (i > 0) detail::require(eta_grid[i] > eta_grid[i - 1], "lod_sweep: eta grid must be strictly increasing");
    }
    detail::require(threshold > 0.0, "lod_sweep: threshold must be > 0");
    detail::require(trials >= 1, "lod_sweep: trials must be >= 1");

    LodCurve curve;
    curve.c_direction.assign(c_direction.begin(), c_direction.end());
    curve.etas.assign(eta_grid.begin(), eta_grid.end());
    curve.threshold = threshold;
    curve.trials = trials;

    const std::size_t jobs = eta_grid.size() * trials;
    std::vector<double> scores(jobs, 0.0);
    parallel_for(
        jobs,
        [&](std::size_t job) {
            const std::size_t e = job / trials;
            const std::size_t t = job % trials;
            std::vector<AnalyteSpec> analytes = scenario.analytes;
            for (std::size_t k = 0; k < analytes.size(); ++k) analytes[k].quantity = eta_grid[e] * c_direction[k];
            const Synthesis syn = synthesize(analytes, scenario.solvent, scenario.noise, scenario.grid_t,
                                             scenario.grid_f, derive_seed(seed, "lod-trial", t));
            const DetectionResult result = detector(syn.measurement, scenario.solvent.spectrum);
            const MeasurementMatrix truth(scenario.grid_t, scenario.grid_f, syn.analyte_term);
            scores[job] = rho(truth, reconstruct_y(result, scenario.grid_t, scenario.grid_f));
        },
        threads);

    for (std::size_t e = 0; e < eta_grid.size(); ++e) {
        double mean = 0.0;
        for (std::size_t t = 0; t < trials; ++t) mean += scores[e * trials + t];
        mean /= static_cast<double>(trials);
        double var = 0.0;
        for (std::size_t t = 0; t < trials; ++t) var += (scores[e * trials + t] - mean) * (scores[e * trials + t] - mean);
        const double se = trials > 1 ? std::sqrt(var / static_cast<double>(trials - 1) / static_cast<double>(trials)) : 0.0;
        curve.rhos.push_back(mean);
        curve.rho_stderr.push_back(se);
        if (!curve.eta_star && mean >= threshold) curve.eta_star = eta_grid[e];
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Detection plot table
// ---------------------------------------------------------------------------

/// One row of the detection plot table. Bands span time [x0, x1] at height y
/// (the analyte index); peak rows mark frequency x0 == x1 inside band y.
struct PlotRow {
    std::string kind;
    int analyte = 0;
    double x0 = 0.0;
    double x1 = 0.0;
    double y = 0.0;
    std::string style;

    bool operator==(const PlotRow&) const = default;
};

/// Truth bands and lines, then the estimated ones. True lines are styled
/// "solid" at or above the first percentile of all true line heights and
/// "dotted" at or above the second; lower lines are not drawn.
inline std::vector<PlotRow> emit_detection_plot_data(std::span<const AnalyteSpec> truth, const DetectionResult& result,
                                                     std::span<const double> percentiles) {
    detail::require(percentiles.size() == 2, "emit_detection_plot_data: expected two percentiles (solid, dotted)");
    std::vector<PlotRow> rows;
    std::vector<double> heights;
    for (const auto& a : truth) {
        for (const auto& p : a.peaks) heights.push_back(eval_pseudo_voigt(p.center, p));
    }
    std::vector<double> cuts;
    if (!heights.empty()) cuts = prominence_percentiles(std::span<const double>(heights), percentiles);

    for (std::size_t k = 0; k < truth.size(); ++k) {
        const auto& a = truth[k];
        const auto idx = static_cast<int>(k);
        rows.push_back({"band", idx, a.window.origin, a.window.end(), static_cast<double>(k), "truth"});
        for (const auto& p : a.peaks) {
            const double h = eval_pseudo_voigt(p.center, p);
            std::string style;
            if (h >= cuts[0]) style = "solid";
            else if (h >= cuts[1]) style = "dotted";
            else continue;
            rows.push_back({"peak", idx, p.center, p.center, static_cast<double>(k), style});
        }
    }
    for (std::size_t k = 0; k < result.analytes.size(); ++k) {
        const auto& a = result.analytes[k];
        const auto idx = static_cast<int>(k);
        rows.push_back({"est_band", idx, a.window.origin, a.window.end(), static_cast<double>(k), "estimate"});
        for (const auto& f : a.peaks) rows.push_back({"est_peak", idx, f.c_hat, f.c_hat, static_cast<double>(k), "estimate"});
    }
    return rows;
}

inline std::vector<PlotRow> emit_detection_plot_data(std::span<const AnalyteSpec> truth, const DetectionResult& result) {
    const std::vector<double> defaults{50.0, 30.0};
    return emit_detection_plot_data(truth, result, defaults);
}

}  // namespace specdetect
