#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "cluster.hpp"
#include "error.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "peakfind.hpp"
#include "peakfit.hpp"
#include "preprocess.hpp"
#include "random.hpp"

namespace specdetect {

/// Knobs of the label-free detection pipeline.
struct PipelineConfig {
    /// Sensitivity level: candidates weaker than this (after preprocessing) are ignored.
    double gamma = 5.0;
    int sg_window = 9;
    int sg_order = 3;
    SmoothAxes smooth_axes = SmoothAxes::frequency;
    /// Degree of the positive-MSE baseline removed from the time-averaged
    /// residual; negative disables the step.
    int fluorescence_degree = 3;
    std::vector<double> scales{1.0, 2.0, 4.0, 8.0, 16.0};
    double min_snr = 3.0;
    std::size_t k_max = 10;
    double reject_ratio = 0.9;
    std::size_t half_f = 15;
    std::size_t pad_t = 10;
    bool despike = false;
    double despike_z = 8.0;
    /// z-score (origin, duration) before clustering.
    bool standardize = false;
    /// Cluster centroids closer than this many time samples count as one analyte
    /// (ignored when standardizing).
    double min_separation = 2.0;
    /// Rounds of solvent re-estimation against the detected analyte term.
    std::size_t solvent_refinements = 3;
    std::uint64_t seed = 0;
    unsigned threads = thread_budget();

    void validate() const {
        detail::require(gamma >= 0.0, "pipeline: gamma must be >= 0");
        detail::require(sg_window >= 1 && sg_window % 2 == 1, "pipeline: sg_window must be odd");
        detail::require(sg_order >= 0 && sg_order < sg_window, "pipeline: sg_order must be < sg_window");
        detail::require(!scales.empty(), "pipeline: wavelet scales must be non-empty");
        detail::require(k_max >= 1, "pipeline: k_max must be >= 1");
        detail::require(reject_ratio > 0.0, "pipeline: reject_ratio must be > 0");
        detail::require(despike_z > 0.0, "pipeline: despike_z must be > 0");
        detail::require(min_separation >= 0.0, "pipeline: min_separation must be >= 0");
    }
};

struct Preprocessed {
    /// Solvent- and fluorescence-corrected data; peaks are fitted on this.
    MeasurementMatrix residual;
    /// Savitzky-Golay smoothed residual; peaks are detected on this.
    MeasurementMatrix smoothed;
    Vector solvent_coeffs;
    BaselineFit fluorescence;
};

/// Optional impulse filter, per-row solvent regression, removal of the
/// positive-MSE polynomial baseline of the time-averaged residual from every
/// row, then Savitzky-Golay smoothing. With an analyte estimate the solvent
/// coefficients are regressed on Y minus that estimate.
inline Preprocessed preprocess(const MeasurementMatrix& y, const Vector& solvent_spectrum, const PipelineConfig& cfg,
                               const Matrix* analyte_estimate = nullptr) {
    cfg.validate();
    const MeasurementMatrix input = cfg.despike ? despike_cosmic(y, cfg.despike_z) : y;
    SolventSubtraction sub = subtract_solvent(input, solvent_spectrum, analyte_estimate);
    Preprocessed out;
    out.solvent_coeffs = std::move(sub.coeffs);
    out.residual = std::move(sub.residual);
    if (cfg.fluorescence_degree >= 0 && out.residual.cols() > cfg.fluorescence_degree) {
        const Vector average = out.residual.values.colwise().mean().transpose();
        FluorescenceCorrection fl = remove_fluorescence(average, cfg.fluorescence_degree);
        out.residual.values.rowwise() -= fl.fit.baseline.transpose();
        out.fluorescence = std::move(fl.fit);
    }
    const bool can_smooth = out.residual.cols() >= cfg.sg_window &&
                            (cfg.smooth_axes == SmoothAxes::frequency || out.residual.rows() >= cfg.sg_window);
    out.smoothed = can_smooth ? smooth_matrix(out.residual, cfg.sg_window, cfg.sg_order, cfg.smooth_axes) : out.residual;
    return out;
}

struct DetectionRun {
    std::vector<PeakCandidate> candidates;
    std::vector<PeakFit> fits;
    ClusterModel clusters;
    DetectionResult result;

    /// Number of retained fits that hit the iteration limit or stalled.
    [[nodiscard]] std::size_t unconverged() const {
        return static_cast<std::size_t>(std::count_if(fits.begin(), fits.end(), [](const PeakFit& f) { return !f.converged; }));
    }
};

/// Peak detection, per-peak fitting, clustering over (origin, duration) and
/// assembly, starting from already preprocessed matrices.
inline DetectionRun detect_preprocessed(const MeasurementMatrix& residual, const MeasurementMatrix& smoothed,
                                        const PipelineConfig& cfg) {
    cfg.validate();
    DetectionRun run;
    PeakFindOptions find;
    find.scales = cfg.scales;
    find.min_snr = cfg.min_snr;
    run.candidates = find_peaks_2d(smoothed, cfg.gamma, find);

    FitAllOptions fit;
    fit.half_f = cfg.half_f;
    fit.pad_t = cfg.pad_t;
    fit.reject_ratio = cfg.reject_ratio;
    fit.threads = cfg.threads;
    run.fits = fit_all(residual, run.candidates, fit);
    if (run.fits.empty()) return run;

    std::vector<TimePoint> points = time_points(run.fits);
    if (cfg.standardize) points = standardize(points);
    KMeansOptions km;
    km.threads = cfg.threads;
    const std::size_t k_max = std::min(cfg.k_max, points.size());
    const double separation = cfg.standardize ? 0.0 : cfg.min_separation * residual.grid_t.delta_t;
    const std::size_t k = std::max<std::size_t>(1, select_k(points, k_max, derive_seed(cfg.seed, "select-k"), km, separation));
    run.clusters = kmeans(points, k, derive_seed(cfg.seed, "kmeans"), km);
    run.result = assemble(run.fits, run.clusters, residual.grid_f, residual.grid_t);
    return run;
}

struct PipelineRun {
    Preprocessed pre;
    DetectionRun detection;
};

/// Sum of elution * spectrum^T over the detected analytes.
inline Matrix analyte_term(const DetectionResult& result, Eigen::Index rows, Eigen::Index cols) {
    Matrix out = Matrix::Zero(rows, cols);
    for (const auto& a : result.analytes) {
        detail::require_data(a.elution.size() == rows && a.spectrum.size() == cols, "analyte_term: shape mismatch");
        out.noalias() += a.elution * a.spectrum.transpose();
    }
    return out;
}

/// The complete label-free detection pipeline. After the first pass the
/// solvent coefficients are re-estimated from Y minus the detected analyte
/// term and detection is repeated, solvent_refinements times at most.
inline PipelineRun run_pipeline(const MeasurementMatrix& y, const Vector& solvent_spectrum, const PipelineConfig& cfg) {
    PipelineRun run;
    run.pre = preprocess(y, solvent_spectrum, cfg);
    run.detection = detect_preprocessed(run.pre.residual, run.pre.smoothed, cfg);
    for (std::size_t r = 0; r < cfg.solvent_refinements && run.detection.result.k_hat > 0; ++r) {
        const Matrix estimate = analyte_term(run.detection.result, y.rows(), y.cols());
        Preprocessed next = preprocess(y, solvent_spectrum, cfg, &estimate);
        const double change = (next.solvent_coeffs - run.pre.solvent_coeffs).cwiseAbs().maxCoeff();
        const double scale = run.pre.solvent_coeffs.cwiseAbs().maxCoeff();
        run.pre = std::move(next);
        run.detection = detect_preprocessed(run.pre.residual, run.pre.smoothed, cfg);
        if (change <= 1e-12 * scale) break;
    }
    return run;
}

inline DetectionResult detect(const MeasurementMatrix& y, const Vector& solvent_spectrum, const PipelineConfig& cfg) {
    return run_pipeline(y, solvent_spectrum, cfg).detection.result;
}

}  // namespace specdetect
