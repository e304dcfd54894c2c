#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include "error.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "peakfind.hpp"

namespace specdetect {

// ---------------------------------------------------------------------------
// Patches
// ---------------------------------------------------------------------------

/// Rectangular sub-matrix of a measurement with its absolute axes.
struct Patch {
    Matrix values;
    std::size_t t_offset = 0;
    std::size_t f_offset = 0;
    Vector times;
    Vector freqs;
    double delta_t = 1.0;
    double delta_f = 1.0;
};

/// Rows [t_start - pad_t, t_end + pad_t] x columns [f_index - half_f, f_index + half_f],
/// clipped to the matrix.
inline Patch extract_patch(const MeasurementMatrix& y, const PeakCandidate& cand, std::size_t half_f = 15,
                           std::size_t pad_t = 10) {
    y.check();
    const auto n = static_cast<std::size_t>(y.rows());
    const auto m = static_cast<std::size_t>(y.cols());
    detail::require_data(cand.f_index < m && cand.t_index < n && cand.t_start <= cand.t_end && cand.t_end < n,
                         "extract_patch: candidate outside the matrix");
    const std::size_t t0 = cand.t_start > pad_t ? cand.t_start - pad_t : 0;
    const std::size_t t1 = std::min(n - 1, cand.t_end + pad_t);
    const std::size_t f0 = cand.f_index > half_f ? cand.f_index - half_f : 0;
    const std::size_t f1 = std::min(m - 1, cand.f_index + half_f);
    detail::require_data(t1 >= t0 && f1 >= f0, "extract_patch: empty patch");

    Patch p;
    p.t_offset = t0;
    p.f_offset = f0;
    const auto rows = static_cast<Eigen::Index>(t1 - t0 + 1);
    const auto cols = static_cast<Eigen::Index>(f1 - f0 + 1);
    p.values = y.values.block(static_cast<Eigen::Index>(t0), static_cast<Eigen::Index>(f0), rows, cols);
    p.times.resize(rows);
    p.freqs.resize(cols);
    for (Eigen::Index j = 0; j < rows; ++j) p.times(j) = y.grid_t.at(t0 + static_cast<std::size_t>(j));
    for (Eigen::Index i = 0; i < cols; ++i) p.freqs(i) = y.grid_f.at(f0 + static_cast<std::size_t>(i));
    p.delta_t = y.grid_t.delta_t;
    p.delta_f = y.grid_f.delta_f;
    return p;
}

// ---------------------------------------------------------------------------
// Separable time-frequency model  F(t, f) = mag * G(t) * L(f)
// ---------------------------------------------------------------------------

/// Parameters of one separable peak, with the line amplitude folded into `magnitude`.
struct SeparableParams {
    double center = 0.0;
    double sigma2 = 1.0;
    double nu = 0.5;
    double origin = 0.0;
    double duration = 1.0;
    double rise = 1.0;
    double fall = 1.0;
    double magnitude = 1.0;

    static constexpr std::size_t size = 8;

    [[nodiscard]] std::array<double, size> to_array() const {
        return {center, sigma2, nu, origin, duration, rise, fall, magnitude};
    }
    static SeparableParams from_array(const std::array<double, size>& a) {
        return {a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7]};
    }
    [[nodiscard]] ElutionWindow window() const { return {origin, duration, rise, fall, 1.0}; }
};

namespace detail {

/// Unit-magnitude window and its derivatives w.r.t. (origin, duration, rise, fall).
struct WindowSample {
    double value = 0.0;
    std::array<double, 4> grad{};
};

inline WindowSample window_with_gradient(double t, const SeparableParams& p) {
    constexpr double pi = std::numbers::pi;
    WindowSample s;
    const double rise_end = p.origin + p.rise;
    const double plateau_end = rise_end + p.duration;
    const double fall_end = plateau_end + p.fall;
    if (t > p.origin && t <= rise_end) {
        const double x = pi * (t - p.origin) / p.rise;
        s.value = 0.5 * (1.0 - std::cos(x));
        const double dx = 0.5 * std::sin(x);
        s.grad[0] = dx * (-pi / p.rise);
        s.grad[2] = dx * (-pi * (t - p.origin) / (p.rise * p.rise));
    } else if (t > rise_end && t <= plateau_end) {
        s.value = 1.0;
    } else if (t > plateau_end && t <= fall_end) {
        const double into = t - plateau_end;
        const double y = pi * (p.fall - into) / p.fall;
        s.value = 0.5 * (1.0 - std::cos(y));
        const double dy = 0.5 * std::sin(y);
        // d(into)/d(origin, duration, rise) = -1
        s.grad[0] = dy * (pi / p.fall);
        s.grad[1] = dy * (pi / p.fall);
        s.grad[2] = dy * (pi / p.fall);
        s.grad[3] = dy * (pi * into / (p.fall * p.fall));
    }
    return s;
}

/// Unit-area pseudo-Voigt and its derivatives w.r.t. (center, sigma2, nu).
struct LineSample {
    double value = 0.0;
    std::array<double, 3> grad{};
};

inline LineSample line_with_gradient(double f, const SeparableParams& p) {
    LineSample s;
    const double u = f - p.center;
    const double s2 = p.sigma2;
    const double gamma = std::sqrt(2.0 * std::numbers::ln2 * s2);
    const double g = gaussian_density(u, s2);
    const double denom = u * u + gamma * gamma;
    const double l = gamma / (std::numbers::pi * denom);
    s.value = p.nu * g + (1.0 - p.nu) * l;

    const double dg_dc = g * u / s2;
    const double dg_ds = g * (u * u / (2.0 * s2 * s2) - 1.0 / (2.0 * s2));
    const double dl_dc = 2.0 * gamma * u / (std::numbers::pi * denom * denom);
    const double dl_dgamma = (u * u - gamma * gamma) / (std::numbers::pi * denom * denom);
    const double dgamma_ds = std::numbers::ln2 / gamma;
    s.grad[0] = p.nu * dg_dc + (1.0 - p.nu) * dl_dc;
    s.grad[1] = p.nu * dg_ds + (1.0 - p.nu) * dl_dgamma * dgamma_ds;
    s.grad[2] = g - l;
    return s;
}

}  // namespace detail

/// Model surface on the patch axes (rows = times, columns = frequencies).
inline Matrix separable_model(const SeparableParams& p, const Vector& times, const Vector& freqs) {
    Vector g(times.size());
    Vector l(freqs.size());
    const ElutionWindow w = p.window();
    for (Eigen::Index j = 0; j < times.size(); ++j) g(j) = eval_elution_window(times(j), w);
    for (Eigen::Index i = 0; i < freqs.size(); ++i) l(i) = pseudo_voigt_profile(freqs(i) - p.center, p.sigma2, p.nu);
    return p.magnitude * g * l.transpose();
}

/// Jacobian of the flattened model (row-major cell order, cell = t * nf + f)
/// with respect to (center, sigma2, nu, origin, duration, rise, fall, magnitude).
inline Matrix separable_jacobian(const SeparableParams& p, const Vector& times, const Vector& freqs) {
    const Eigen::Index nt = times.size();
    const Eigen::Index nf = freqs.size();
    std::vector<detail::WindowSample> gs(static_cast<std::size_t>(nt));
    std::vector<detail::LineSample> ls(static_cast<std::size_t>(nf));
    for (Eigen::Index j = 0; j < nt; ++j) gs[static_cast<std::size_t>(j)] = detail::window_with_gradient(times(j), p);
    for (Eigen::Index i = 0; i < nf; ++i) ls[static_cast<std::size_t>(i)] = detail::line_with_gradient(freqs(i), p);

    Matrix jac(nt * nf, static_cast<Eigen::Index>(SeparableParams::size));
    for (Eigen::Index j = 0; j < nt; ++j) {
        const auto& g = gs[static_cast<std::size_t>(j)];
        for (Eigen::Index i = 0; i < nf; ++i) {
            const auto& l = ls[static_cast<std::size_t>(i)];
            const Eigen::Index row = j * nf + i;
            jac(row, 0) = p.magnitude * g.value * l.grad[0];
            jac(row, 1) = p.magnitude * g.value * l.grad[1];
            jac(row, 2) = p.magnitude * g.value * l.grad[2];
            jac(row, 3) = p.magnitude * g.grad[0] * l.value;
            jac(row, 4) = p.magnitude * g.grad[1] * l.value;
            jac(row, 5) = p.magnitude * g.grad[2] * l.value;
            jac(row, 6) = p.magnitude * g.grad[3] * l.value;
            jac(row, 7) = g.value * l.value;
        }
    }
    return jac;
}

// ---------------------------------------------------------------------------
// Unconstrained parameterization
// ---------------------------------------------------------------------------

/// Solver coordinates: sigma2, duration, rise, fall and magnitude in log
/// space, nu through the logistic function, center and origin unchanged.
struct InternalParams {
    std::array<double, SeparableParams::size> x{};

    static InternalParams from(const SeparableParams& p) {
        const double nu = std::clamp(p.nu, 1e-9, 1.0 - 1e-9);
        return {{p.center, std::log(p.sigma2), std::log(nu / (1.0 - nu)), p.origin, std::log(p.duration),
                 std::log(p.rise), std::log(p.fall), std::log(p.magnitude)}};
    }

    [[nodiscard]] SeparableParams natural() const {
        return {x[0], std::exp(x[1]), 1.0 / (1.0 + std::exp(-x[2])), x[3], std::exp(x[4]),
                std::exp(x[5]),   std::exp(x[6]), std::exp(x[7])};
    }

    /// d(natural)/d(internal), diagonal.
    [[nodiscard]] std::array<double, SeparableParams::size> chain() const {
        const SeparableParams p = natural();
        return {1.0, p.sigma2, p.nu * (1.0 - p.nu), 1.0, p.duration, p.rise, p.fall, p.magnitude};
    }
};

inline Matrix internal_jacobian(const InternalParams& ip, const Vector& times, const Vector& freqs) {
    Matrix jac = separable_jacobian(ip.natural(), times, freqs);
    const auto chain = ip.chain();
    for (std::size_t k = 0; k < SeparableParams::size; ++k) jac.col(static_cast<Eigen::Index>(k)) *= chain[k];
    return jac;
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

struct PeakFit {
    PeakCandidate candidate;
    /// Always 1: the line amplitude is not separable from the window magnitude.
    double a_hat = 1.0;
    double gamma_hat = 0.0;
    double sigma2_hat = 0.0;
    double c_hat = 0.0;
    double nu_hat = 0.5;
    double o_hat = 0.0;
    double d_hat = 0.0;
    double alpha_hat = 0.0;
    double beta_hat = 0.0;
    double mag_hat = 0.0;
    double rss = 0.0;
    bool converged = false;
    std::size_t iterations = 0;
    /// RSS after every accepted step, starting with the initial guess.
    std::vector<double> rss_trace;

    [[nodiscard]] SeparableParams params() const {
        return {c_hat, sigma2_hat, nu_hat, o_hat, d_hat, alpha_hat, beta_hat, mag_hat};
    }
    [[nodiscard]] ElutionWindow window() const { return {o_hat, d_hat, alpha_hat, beta_hat, mag_hat}; }
    [[nodiscard]] PseudoVoigtPeak line() const { return {c_hat, 1.0, sigma2_hat, nu_hat}; }
};

struct FitOptions {
    std::size_t max_iterations = 500;
    double relative_tolerance = 1e-8;
};

namespace detail {

inline double linear_crossing(double x0, double y0, double x1, double y1, double level) {
    if (y1 == y0) return 0.5 * (x0 + x1);
    return x0 + (level - y0) * (x1 - x0) / (y1 - y0);
}

/// Starting point from the candidate and simple half-maximum measurements.
inline SeparableParams initial_guess(const Patch& patch, const PeakCandidate& cand) {
    const Eigen::Index nt = patch.values.rows();
    const Eigen::Index nf = patch.values.cols();
    const Eigen::Index fc = std::clamp<Eigen::Index>(
        static_cast<Eigen::Index>(cand.f_index) - static_cast<Eigen::Index>(patch.f_offset), 0, nf - 1);

    Vector g = Vector::Zero(nt);
    for (Eigen::Index i = std::max<Eigen::Index>(0, fc - 1); i <= std::min(nf - 1, fc + 1); ++i) g += patch.values.col(i);
    Eigen::Index tp = 0;
    const double gmax = g.maxCoeff(&tp);
    const double dt = patch.delta_t;
    double t_up = patch.times(tp) - dt;
    double t_down = patch.times(tp) + dt;
    if (gmax > 0.0) {
        const double half = 0.5 * gmax;
        for (Eigen::Index j = tp; j > 0; --j) {
            if (g(j - 1) < half) {
                t_up = linear_crossing(patch.times(j - 1), g(j - 1), patch.times(j), g(j), half);
                break;
            }
            if (j - 1 == 0) t_up = patch.times(0) - 0.5 * dt;
        }
        for (Eigen::Index j = tp; j + 1 < nt; ++j) {
            if (g(j + 1) < half) {
                t_down = linear_crossing(patch.times(j), g(j), patch.times(j + 1), g(j + 1), half);
                break;
            }
            if (j + 2 == nt) t_down = patch.times(nt - 1) + 0.5 * dt;
        }
    }
    const double width = std::max(t_down - t_up, dt);
    SeparableParams p;
    p.rise = p.fall = std::max(0.5 * dt, 0.3 * width);
    p.duration = std::max(0.5 * dt, width - p.rise);
    p.origin = t_up - 0.5 * p.rise;

    Vector prof = Vector::Zero(nf);
    for (Eigen::Index j = 0; j < nt; ++j) {
        if (g(j) >= 0.5 * gmax) prof += patch.values.row(j).transpose();
    }
    Eigen::Index fp = fc;
    for (Eigen::Index i = std::max<Eigen::Index>(0, fc - 2); i <= std::min(nf - 1, fc + 2); ++i) {
        if (prof(i) > prof(fp)) fp = i;
    }
    const double df = patch.delta_f;
    p.center = patch.freqs(fp);
    if (fp > 0 && fp + 1 < nf) {
        const double a = prof(fp - 1), b = prof(fp), c = prof(fp + 1);
        const double curv = a - 2.0 * b + c;
        if (curv < 0.0) p.center += std::clamp(0.5 * (a - c) / curv, -0.5, 0.5) * df;
    }
    const double pmax = prof(fp);
    double hw_sum = 0.0;
    int sides = 0;
    if (pmax > 0.0) {
        for (Eigen::Index i = fp; i > 0; --i) {
            if (prof(i - 1) < 0.5 * pmax) {
                hw_sum += p.center - linear_crossing(patch.freqs(i - 1), prof(i - 1), patch.freqs(i), prof(i), 0.5 * pmax);
                ++sides;
                break;
            }
        }
        for (Eigen::Index i = fp; i + 1 < nf; ++i) {
            if (prof(i + 1) < 0.5 * pmax) {
                hw_sum += linear_crossing(patch.freqs(i), prof(i), patch.freqs(i + 1), prof(i + 1), 0.5 * pmax) - p.center;
                ++sides;
                break;
            }
        }
    }
    const double hwhm = sides > 0 ? std::max(hw_sum / sides, 0.5 * df) : 2.0 * df;
    p.sigma2 = hwhm * hwhm / (2.0 * std::numbers::ln2);
    p.nu = 0.5;
    const double peak_value = patch.values(tp, fp);
    const double line_peak = pseudo_voigt_profile(0.0, p.sigma2, p.nu);
    p.magnitude = peak_value > 0.0 ? peak_value / line_peak : std::max(gmax, 1e-12) / (3.0 * line_peak);
    return p;
}

inline bool admissible(const SeparableParams& p, const Patch& patch) {
    const auto a = p.to_array();
    for (double v : a) {
        if (!std::isfinite(v)) return false;
    }
    const double f_lo = patch.freqs(0);
    const double f_hi = patch.freqs(patch.freqs.size() - 1);
    const double t_lo = patch.times(0);
    const double t_hi = patch.times(patch.times.size() - 1);
    const double span_f = std::max(f_hi - f_lo, patch.delta_f);
    const double span_t = std::max(t_hi - t_lo, patch.delta_t);
    if (p.center < f_lo || p.center > f_hi) return false;
    if (p.sigma2 < 1e-4 * patch.delta_f * patch.delta_f || p.sigma2 > span_f * span_f) return false;
    const double t_min = 1e-6 * patch.delta_t;
    const double t_max = 4.0 * span_t;
    if (p.duration < t_min || p.rise < t_min || p.fall < t_min) return false;
    if (p.duration > t_max || p.rise > t_max || p.fall > t_max) return false;
    if (p.origin < t_lo - span_t || p.origin > t_hi) return false;
    return p.magnitude > 0.0;
}

}  // namespace detail

/// Least-squares fit of mag * G(t) * L(f) to a patch by Levenberg-Marquardt.
///
/// Steps are accepted only when they lower the RSS; the damping factor is
/// divided by 10 after an accepted step and multiplied by 10 after a rejected
/// one. The fit converges when an accepted step improves the RSS by less than
/// `relative_tolerance`, or when no damped step can improve it further.
inline PeakFit fit_separable_peak(const Patch& patch, const PeakCandidate& init, const FitOptions& options = {}) {
    detail::require_data(patch.values.size() > 0, "fit_separable_peak: empty patch");
    const Eigen::Index nt = patch.values.rows();
    const Eigen::Index nf = patch.values.cols();
    Vector data(nt * nf);
    for (Eigen::Index j = 0; j < nt; ++j)
        for (Eigen::Index i = 0; i < nf; ++i) data(j * nf + i) = patch.values(j, i);
    const double energy = data.squaredNorm();

    PeakFit fit;
    fit.candidate = init;
    auto finish = [&fit](const SeparableParams& p) {
        fit.c_hat = p.center;
        fit.sigma2_hat = p.sigma2;
        fit.gamma_hat = std::sqrt(2.0 * std::numbers::ln2 * p.sigma2);
        fit.nu_hat = p.nu;
        fit.o_hat = p.origin;
        fit.d_hat = p.duration;
        fit.alpha_hat = p.rise;
        fit.beta_hat = p.fall;
        fit.mag_hat = p.magnitude;
    };

    SeparableParams start = detail::initial_guess(patch, init);
    if (energy == 0.0) {
        finish(start);
        fit.rss = energy;
        fit.converged = false;
        fit.rss_trace = {energy};
        return fit;
    }
    if (!detail::admissible(start, patch)) {
        start.center = std::clamp(start.center, patch.freqs(0), patch.freqs(nf - 1));
    }

    auto residual = [&](const SeparableParams& p) {
        const Matrix model = separable_model(p, patch.times, patch.freqs);
        Vector r(nt * nf);
        for (Eigen::Index j = 0; j < nt; ++j)
            for (Eigen::Index i = 0; i < nf; ++i) r(j * nf + i) = data(j * nf + i) - model(j, i);
        return r;
    };

    InternalParams theta = InternalParams::from(start);
    Vector r = residual(theta.natural());
    double rss = r.squaredNorm();
    fit.rss_trace.push_back(rss);
    double lambda = 1e-3;
    bool converged = false;
    bool stalled = false;
    std::size_t iter = 0;
    constexpr auto dim = static_cast<Eigen::Index>(SeparableParams::size);

    while (iter < options.max_iterations && !converged && !stalled) {
        ++iter;
        if (rss == 0.0) {
            converged = true;
            break;
        }
        const Matrix jac = internal_jacobian(theta, patch.times, patch.freqs);
        const Matrix jtj = jac.transpose() * jac;
        const Vector jtr = jac.transpose() * r;
        const double diag_max = jtj.diagonal().maxCoeff();
        if (!(diag_max > 0.0) || !std::isfinite(diag_max)) {
            stalled = true;
            break;
        }
        Vector diag = jtj.diagonal().cwiseMax(1e-12 * diag_max);
        bool accepted = false;
        while (!accepted) {
            Matrix damped = jtj;
            damped.diagonal() += lambda * diag;
            const Vector step = damped.ldlt().solve(jtr);
            InternalParams trial = theta;
            for (Eigen::Index k = 0; k < dim; ++k) trial.x[static_cast<std::size_t>(k)] += step(k);
            const SeparableParams tp = trial.natural();
            if (step.allFinite() && detail::admissible(tp, patch)) {
                const Vector r_new = residual(tp);
                const double rss_new = r_new.squaredNorm();
                if (rss_new < rss) {
                    const double improvement = (rss - rss_new) / rss;
                    theta = trial;
                    r = r_new;
                    rss = rss_new;
                    fit.rss_trace.push_back(rss);
                    lambda = std::max(lambda / 10.0, 1e-12);
                    accepted = true;
                    if (improvement < options.relative_tolerance) converged = true;
                    continue;
                }
            }
            lambda *= 10.0;
            if (lambda > 1e16) {
                // No damped step lowers the RSS: a stationary point to working precision.
                converged = true;
                break;
            }
        }
    }

    finish(theta.natural());
    fit.rss = rss;
    fit.converged = converged;
    fit.iterations = iter;
    return fit;
}

struct FitAllOptions {
    std::size_t half_f = 15;
    std::size_t pad_t = 10;
    /// Fits with rss / patch energy above this ratio are discarded.
    double reject_ratio = 0.9;
    /// Collapse fits of the same line (centres within one bin, overlapping
    /// windows) onto the one with the lowest RSS.
    bool merge_duplicates = true;
    FitOptions fit;
    unsigned threads = thread_budget();
};

/// Extracts a patch around every candidate and fits it. Retained fits keep
/// the candidate order.
inline std::vector<PeakFit> fit_all(const MeasurementMatrix& y, const std::vector<PeakCandidate>& candidates,
                                    const FitAllOptions& options = {}) {
    std::vector<std::optional<PeakFit>> slots(candidates.size());
    parallel_for(
        candidates.size(),
        [&](std::size_t i) {
            const Patch patch = extract_patch(y, candidates[i], options.half_f, options.pad_t);
            const double energy = patch.values.squaredNorm();
            if (energy <= 0.0) return;
            PeakFit fit = fit_separable_peak(patch, candidates[i], options.fit);
            if (fit.rss / energy > options.reject_ratio) return;
            slots[i] = std::move(fit);
        },
        options.threads);

    if (options.merge_duplicates) {
        const double df = y.grid_f.delta_f;
        for (std::size_t a = 0; a < slots.size(); ++a) {
            if (!slots[a]) continue;
            for (std::size_t b = a + 1; b < slots.size(); ++b) {
                if (!slots[b] || !slots[a]) continue;
                const auto& fa = *slots[a];
                const auto& fb = *slots[b];
                const bool same_line = std::abs(fa.c_hat - fb.c_hat) <= df;
                const bool overlap = fa.o_hat < fb.window().origin + fb.alpha_hat + fb.d_hat + fb.beta_hat &&
                                     fb.o_hat < fa.o_hat + fa.alpha_hat + fa.d_hat + fa.beta_hat;
                if (same_line && overlap) {
                    if (fb.rss < fa.rss) slots[a].reset();
                    else slots[b].reset();
                }
            }
        }
    }

    std::vector<PeakFit> out;
    for (auto& s : slots) {
        if (s) out.push_back(std::move(*s));
    }
    return out;
}

}  // namespace specdetect
