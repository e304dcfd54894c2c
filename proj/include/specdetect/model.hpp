#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "random.hpp"

namespace specdetect {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Discretization axes
// ---------------------------------------------------------------------------

/// Frequency axis: bin i sits at f_min + i * delta_f (wavenumbers, cm^-1).
struct FrequencyGrid {
    double f_min = 400.0;
    double delta_f = 2.0;
    std::size_t m = 700;

    void validate() const {
        detail::require(delta_f > 0.0 && std::isfinite(delta_f), "frequency grid: delta_f must be > 0");
        detail::require(m >= 1, "frequency grid: m must be >= 1");
        detail::require(std::isfinite(f_min), "frequency grid: f_min must be finite");
    }

    [[nodiscard]] double at(std::size_t i) const noexcept { return f_min + delta_f * static_cast<double>(i); }
    [[nodiscard]] double f_max() const noexcept { return f_min + delta_f * static_cast<double>(m); }

    /// Nearest bin to frequency f, clamped to the grid.
    [[nodiscard]] std::size_t bin_of(double f) const noexcept {
        const double pos = std::round((f - f_min) / delta_f);
        if (pos <= 0.0) return 0;
        return std::min(static_cast<std::size_t>(pos), m - 1);
    }

    [[nodiscard]] Vector axis() const {
        Vector v(static_cast<Eigen::Index>(m));
        for (std::size_t i = 0; i < m; ++i) v(static_cast<Eigen::Index>(i)) = at(i);
        return v;
    }

    bool operator==(const FrequencyGrid&) const = default;
};

/// Time axis: sample j sits at j * delta_t (seconds).
struct TimeGrid {
    double delta_t = 0.2;
    std::size_t n = 100;

    void validate() const {
        detail::require(delta_t > 0.0 && std::isfinite(delta_t), "time grid: delta_t must be > 0");
        detail::require(n >= 1, "time grid: n must be >= 1");
    }

    [[nodiscard]] double at(std::size_t j) const noexcept { return delta_t * static_cast<double>(j); }
    [[nodiscard]] double duration() const noexcept { return delta_t * static_cast<double>(n); }

    [[nodiscard]] Vector axis() const {
        Vector v(static_cast<Eigen::Index>(n));
        for (std::size_t j = 0; j < n; ++j) v(static_cast<Eigen::Index>(j)) = at(j);
        return v;
    }

    bool operator==(const TimeGrid&) const = default;
};

// ---------------------------------------------------------------------------
// Line shapes
// ---------------------------------------------------------------------------

/// One spectral line. The Lorentzian half-width is tied to the Gaussian
/// variance, Gamma = sqrt(2 ln2 sigma2), so both components share their HWHM.
struct PseudoVoigtPeak {
    double center = 0.0;
    double amplitude = 1.0;
    double sigma2 = 1.0;
    double nu = 0.5;

    [[nodiscard]] double half_width() const noexcept { return std::sqrt(2.0 * std::numbers::ln2 * sigma2); }

    void validate() const {
        detail::require(amplitude > 0.0, "peak: amplitude must be > 0");
        detail::require(sigma2 > 0.0, "peak: sigma2 must be > 0");
        detail::require(nu >= 0.0 && nu <= 1.0, "peak: nu must lie in [0, 1]");
    }

    bool operator==(const PseudoVoigtPeak&) const = default;
};

/// Normalized Gaussian density with variance sigma2.
inline double gaussian_density(double x, double sigma2) noexcept {
    return std::exp(-x * x / (2.0 * sigma2)) / std::sqrt(2.0 * std::numbers::pi * sigma2);
}

/// Normalized Lorentzian (Cauchy) density with half-width gamma.
inline double lorentzian_density(double x, double gamma) noexcept {
    return gamma / (std::numbers::pi * (x * x + gamma * gamma));
}

/// Unit-area pseudo-Voigt profile centred at 0, evaluated at offset x.
inline double pseudo_voigt_profile(double x, double sigma2, double nu) noexcept {
    const double gamma = std::sqrt(2.0 * std::numbers::ln2 * sigma2);
    return nu * gaussian_density(x, sigma2) + (1.0 - nu) * lorentzian_density(x, gamma);
}

/// A * [nu * Gauss + (1 - nu) * Lorentz]; the area under the curve equals A.
inline double eval_pseudo_voigt(double f, const PseudoVoigtPeak& peak) noexcept {
    return peak.amplitude * pseudo_voigt_profile(f - peak.center, peak.sigma2, peak.nu);
}

// ---------------------------------------------------------------------------
// Elution window
// ---------------------------------------------------------------------------

/// Raised-cosine rise over `rise` seconds starting at `origin`, a plateau of
/// `duration` seconds, then a raised-cosine fall over `fall` seconds.
struct ElutionWindow {
    double origin = 0.0;
    double duration = 0.0;
    double rise = 0.0;
    double fall = 0.0;
    double magnitude = 1.0;

    [[nodiscard]] double end() const noexcept { return origin + rise + duration + fall; }

    void validate() const {
        detail::require(origin >= 0.0, "window: origin must be >= 0");
        detail::require(duration >= 0.0 && rise >= 0.0 && fall >= 0.0,
                        "window: duration, rise and fall must be >= 0");
        detail::require(magnitude > 0.0, "window: magnitude must be > 0");
    }

    bool operator==(const ElutionWindow&) const = default;
};

/// Piecewise window weight; zero outside [origin, end()], continuous everywhere.
inline double eval_elution_window(double t, const ElutionWindow& w) noexcept {
    const double rise_end = w.origin + w.rise;
    const double plateau_end = rise_end + w.duration;
    const double fall_end = plateau_end + w.fall;
    if (t > w.origin && t <= rise_end) {
        return 0.5 * w.magnitude * (1.0 - std::cos(std::numbers::pi * (t - w.origin) / w.rise));
    }
    if (t > rise_end && t <= plateau_end) return w.magnitude;
    if (t > plateau_end && t <= fall_end) {
        const double into_fall = t - plateau_end;
        return 0.5 * w.magnitude * (1.0 - std::cos(std::numbers::pi * (w.fall - into_fall) / w.fall));
    }
    return 0.0;
}

// ---------------------------------------------------------------------------
// Scenario description
// ---------------------------------------------------------------------------

struct AnalyteSpec {
    std::string name;
    std::vector<PseudoVoigtPeak> peaks;
    ElutionWindow window;
    double quantity = 1.0;

    void validate() const {
        detail::require(!peaks.empty(), "analyte '" + name + "': needs at least one peak");
        detail::require(quantity > 0.0, "analyte '" + name + "': quantity must be > 0");
        for (const auto& p : peaks) p.validate();
        window.validate();
    }
};

/// Solvent spectrum S[f] (length M) and its elution pattern (length N).
struct SolventSpec {
    Vector spectrum;
    Vector elution;
};

struct NoiseConfig {
    double gaussian_sigma = 1.0;
    bool shot_enabled = false;
    double cosmic_amplitude = 0.0;
    /// Impulses per second, per frequency column.
    double cosmic_rate = 0.0;
    /// Upper bound on the degree of any per-analyte fluorescence polynomial.
    int fluorescence_degree = 5;
    /// Index-aligned with the analyte list; a missing or empty entry means no fluorescence.
    std::vector<std::vector<double>> fluorescence_coeffs;
    /// Clamp the synthesized matrix at zero as the very last step.
    bool clamp_nonnegative = true;

    void validate() const {
        detail::require(gaussian_sigma >= 0.0, "noise: gaussian_sigma must be >= 0");
        detail::require(cosmic_rate >= 0.0, "noise: cosmic_rate must be >= 0");
        detail::require(cosmic_amplitude >= 0.0, "noise: cosmic_amplitude must be >= 0");
        detail::require(fluorescence_degree >= 0, "noise: fluorescence_degree must be >= 0");
        for (const auto& c : fluorescence_coeffs) {
            detail::require(static_cast<int>(c.size()) <= fluorescence_degree + 1,
                            "noise: fluorescence polynomial exceeds fluorescence_degree");
        }
    }

    /// Noise-free, unclamped configuration used for exact model checks.
    static NoiseConfig none() {
        NoiseConfig cfg;
        cfg.gaussian_sigma = 0.0;
        cfg.clamp_nonnegative = false;
        return cfg;
    }
};

/// N x M intensities, rows are time samples and columns frequency bins.
struct MeasurementMatrix {
    TimeGrid grid_t;
    FrequencyGrid grid_f;
    Matrix values;

    MeasurementMatrix() = default;
    MeasurementMatrix(TimeGrid gt, FrequencyGrid gf)
        : grid_t(gt), grid_f(gf), values(Matrix::Zero(static_cast<Eigen::Index>(gt.n), static_cast<Eigen::Index>(gf.m))) {}
    MeasurementMatrix(TimeGrid gt, FrequencyGrid gf, Matrix v) : grid_t(gt), grid_f(gf), values(std::move(v)) {
        check();
    }

    [[nodiscard]] Eigen::Index rows() const noexcept { return values.rows(); }
    [[nodiscard]] Eigen::Index cols() const noexcept { return values.cols(); }

    void check() const {
        detail::require_data(values.rows() == static_cast<Eigen::Index>(grid_t.n) &&
                                 values.cols() == static_cast<Eigen::Index>(grid_f.m),
                             "measurement matrix: dimensions do not match the grids");
    }
};

// ---------------------------------------------------------------------------
// Forward model pieces
// ---------------------------------------------------------------------------

/// X_k[f] = sum_j L(f; peak_j) on the grid.
inline Vector analyte_spectrum(const AnalyteSpec& a, const FrequencyGrid& g) {
    Vector x = Vector::Zero(static_cast<Eigen::Index>(g.m));
    for (const auto& peak : a.peaks) {
        for (std::size_t i = 0; i < g.m; ++i) x(static_cast<Eigen::Index>(i)) += eval_pseudo_voigt(g.at(i), peak);
    }
    return x;
}

/// lambda_k[t] = q * G(t; window).
inline Vector analyte_elution(const AnalyteSpec& a, const TimeGrid& g) {
    Vector v(static_cast<Eigen::Index>(g.n));
    for (std::size_t j = 0; j < g.n; ++j) {
        v(static_cast<Eigen::Index>(j)) = a.quantity * eval_elution_window(g.at(j), a.window);
    }
    return v;
}

/// Columns are the analyte spectra (M x K).
inline Matrix spectra_matrix(std::span<const AnalyteSpec> analytes, const FrequencyGrid& g) {
    Matrix x(static_cast<Eigen::Index>(g.m), static_cast<Eigen::Index>(analytes.size()));
    for (std::size_t k = 0; k < analytes.size(); ++k) x.col(static_cast<Eigen::Index>(k)) = analyte_spectrum(analytes[k], g);
    return x;
}

/// Columns are the analyte elution patterns (N x K).
inline Matrix elution_matrix(std::span<const AnalyteSpec> analytes, const TimeGrid& g) {
    Matrix l(static_cast<Eigen::Index>(g.n), static_cast<Eigen::Index>(analytes.size()));
    for (std::size_t k = 0; k < analytes.size(); ++k) l.col(static_cast<Eigen::Index>(k)) = analyte_elution(analytes[k], g);
    return l;
}

/// Low-degree polynomial evaluated on the frequency axis mapped to [0, 1],
/// clamped at zero. `degree` must equal coeffs.size() - 1.
inline Vector fluorescence_background(int degree, std::span<const double> coeffs, const FrequencyGrid& g) {
    detail::require(!coeffs.empty(), "fluorescence: empty coefficient list");
    detail::require(degree == static_cast<int>(coeffs.size()) - 1, "fluorescence: degree != len(coeffs) - 1");
    Vector out(static_cast<Eigen::Index>(g.m));
    const double span = g.m > 1 ? static_cast<double>(g.m - 1) : 1.0;
    for (std::size_t i = 0; i < g.m; ++i) {
        const double x = static_cast<double>(i) / span;
        double acc = 0.0;
        for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = acc * x + *it;
        out(static_cast<Eigen::Index>(i)) = std::max(acc, 0.0);
    }
    return out;
}

/// Independent Poisson draws with the given per-cell means.
inline Matrix sample_shot_noise(const Matrix& rate, Rng& rng) {
    Matrix out(rate.rows(), rate.cols());
    for (Eigen::Index j = 0; j < rate.rows(); ++j) {
        for (Eigen::Index i = 0; i < rate.cols(); ++i) {
            const double lambda = rate(j, i);
            detail::require_data(lambda >= 0.0 && std::isfinite(lambda), "shot noise: negative or non-finite rate");
            if (lambda == 0.0) {
                out(j, i) = 0.0;
                continue;
            }
            std::poisson_distribution<std::int64_t> draw(lambda);
            out(j, i) = static_cast<double>(draw(rng));
        }
    }
    return out;
}

inline Matrix sample_shot_noise(const Matrix& rate, std::uint64_t seed) {
    Rng rng(seed);
    return sample_shot_noise(rate, rng);
}

/// Per frequency column, a train of impulses with exponential inter-arrival
/// gaps of mean 1/rate. Impulse cells hold `amplitude`, every other cell 0.
inline Matrix sample_cosmic_noise(const TimeGrid& gt, const FrequencyGrid& gf, double amplitude, double rate,
                                  Rng& rng) {
    detail::require(amplitude >= 0.0 && rate >= 0.0, "cosmic noise: amplitude and rate must be >= 0");
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(gt.n), static_cast<Eigen::Index>(gf.m));
    if (amplitude == 0.0 || rate == 0.0) return out;
    std::exponential_distribution<double> gap(rate);
    const double total = gt.duration();
    for (std::size_t i = 0; i < gf.m; ++i) {
        for (double t = gap(rng); t < total; t += gap(rng)) {
            const auto j = std::min(static_cast<std::size_t>(t / gt.delta_t), gt.n - 1);
            out(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = amplitude;
        }
    }
    return out;
}

inline Matrix sample_cosmic_noise(const TimeGrid& gt, const FrequencyGrid& gf, double amplitude, double rate,
                                  std::uint64_t seed) {
    Rng rng(seed);
    return sample_cosmic_noise(gt, gf, amplitude, rate, rng);
}

/// Human-readable warnings for pairs of analytes whose elution supports overlap.
inline std::vector<std::string> elution_overlap_warnings(std::span<const AnalyteSpec> analytes) {
    std::vector<std::string> warnings;
    for (std::size_t a = 0; a < analytes.size(); ++a) {
        for (std::size_t b = a + 1; b < analytes.size(); ++b) {
            const auto& wa = analytes[a].window;
            const auto& wb = analytes[b].window;
            if (wa.origin < wb.end() && wb.origin < wa.end()) {
                warnings.push_back("elution windows of '" + analytes[a].name + "' and '" + analytes[b].name +
                                   "' overlap");
            }
        }
    }
    return warnings;
}

/// Synthesized measurement together with the ground truth that produced it.
struct Synthesis {
    MeasurementMatrix measurement;
    /// Noise-free analyte term sum_k lambda_k X_k^T (no fluorescence, no solvent).
    Matrix analyte_term;
    /// N x K true elution patterns.
    Matrix elution;
    /// M x K true analyte spectra.
    Matrix spectra;
};

/// Y = sum_k lambda_k (X_k + X_FL,k)^T + lambda_0 S^T + N + Z_SN + Z_CN.
///
/// Shot noise enters as the zero-mean fluctuation Poisson(rate) - rate around
/// the noise-free signal. Gaussian, shot and cosmic terms draw from separate
/// sub-streams of `seed`, so switching one off leaves the others unchanged.
inline Synthesis synthesize(std::span<const AnalyteSpec> analytes, const SolventSpec& solvent,
                            const NoiseConfig& noise, const TimeGrid& gt, const FrequencyGrid& gf,
                            std::uint64_t seed) {
    gt.validate();
    gf.validate();
    noise.validate();
    for (const auto& a : analytes) a.validate();
    const auto n = static_cast<Eigen::Index>(gt.n);
    const auto m = static_cast<Eigen::Index>(gf.m);
    detail::require_data(solvent.spectrum.size() == m, "synthesize: solvent spectrum length != M");
    detail::require_data(solvent.elution.size() == n, "synthesize: solvent elution length != N");
    detail::require_data((solvent.spectrum.array() >= 0.0).all() && (solvent.elution.array() >= 0.0).all(),
                         "synthesize: solvent entries must be nonnegative");
    detail::require(noise.fluorescence_coeffs.size() <= analytes.size(),
                    "synthesize: more fluorescence entries than analytes");

    Synthesis out;
    out.elution = elution_matrix(analytes, gt);
    out.spectra = spectra_matrix(analytes, gf);
    out.analyte_term = out.elution * out.spectra.transpose();

    Matrix clean = out.analyte_term;
    for (std::size_t k = 0; k < noise.fluorescence_coeffs.size(); ++k) {
        const auto& coeffs = noise.fluorescence_coeffs[k];
        if (coeffs.empty()) continue;
        const Vector fl = fluorescence_background(static_cast<int>(coeffs.size()) - 1, coeffs, gf);
        clean.noalias() += out.elution.col(static_cast<Eigen::Index>(k)) * fl.transpose();
    }
    clean.noalias() += solvent.elution * solvent.spectrum.transpose();

    Matrix y = clean;
    if (noise.gaussian_sigma > 0.0) {
        Rng rng = make_rng(seed, "gaussian");
        std::normal_distribution<double> gauss(0.0, noise.gaussian_sigma);
        for (Eigen::Index j = 0; j < n; ++j)
            for (Eigen::Index i = 0; i < m; ++i) y(j, i) += gauss(rng);
    }
    if (noise.shot_enabled) {
        Rng rng = make_rng(seed, "shot");
        const Matrix rate = clean.cwiseMax(0.0);
        y += sample_shot_noise(rate, rng) - rate;
    }
    if (noise.cosmic_amplitude > 0.0 && noise.cosmic_rate > 0.0) {
        Rng rng = make_rng(seed, "cosmic");
        y += sample_cosmic_noise(gt, gf, noise.cosmic_amplitude, noise.cosmic_rate, rng);
    }
    if (noise.clamp_nonnegative) y = y.cwiseMax(0.0);

    out.measurement = MeasurementMatrix(gt, gf, std::move(y));
    return out;
}

}  // namespace specdetect
