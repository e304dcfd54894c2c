#pragma once

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "cluster.hpp"
#include "error.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "pca.hpp"
#include "peakfind.hpp"
#include "peakfit.hpp"
#include "pipeline.hpp"
#include "random.hpp"

namespace specdetect {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Number formatting
// ---------------------------------------------------------------------------

/// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text) {
    while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
    while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) text.remove_suffix(1);
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw DataError("not a number: '" + std::string(text) + "'");
    }
    return v;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

// ---------------------------------------------------------------------------
// JSON mappings
// ---------------------------------------------------------------------------

namespace detail {

inline Json vector_to_json(const Vector& v) {
    Json j = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v(i));
    return j;
}

inline Vector vector_from_json(const Json& j) {
    require_data(j.is_array(), "expected a numeric array");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        require_data(j[i].is_number(), "expected a numeric array");
        v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    }
    return v;
}

inline Json matrix_to_json(const Matrix& m) {
    Json j = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) j.push_back(vector_to_json(m.row(r).transpose()));
    return j;
}

template <class T>
void read_optional(const Json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

inline void reject_unknown(const Json& j, std::initializer_list<std::string_view> known, const std::string& where) {
    require_data(j.is_object(), where + ": expected a JSON object");
    for (const auto& item : j.items()) {
        bool ok = false;
        for (auto k : known) ok = ok || item.key() == k;
        require_data(ok, where + ": unknown key '" + item.key() + "'");
    }
}

}  // namespace detail

inline void to_json(Json& j, const FrequencyGrid& g) { j = Json{{"f_min", g.f_min}, {"delta_f", g.delta_f}, {"m", g.m}}; }
inline void from_json(const Json& j, FrequencyGrid& g) {
    detail::reject_unknown(j, {"f_min", "delta_f", "m"}, "frequency_grid");
    detail::read_optional(j, "f_min", g.f_min);
    detail::read_optional(j, "delta_f", g.delta_f);
    detail::read_optional(j, "m", g.m);
}

inline void to_json(Json& j, const TimeGrid& g) { j = Json{{"delta_t", g.delta_t}, {"n", g.n}}; }
inline void from_json(const Json& j, TimeGrid& g) {
    detail::reject_unknown(j, {"delta_t", "n"}, "time_grid");
    detail::read_optional(j, "delta_t", g.delta_t);
    detail::read_optional(j, "n", g.n);
}

inline void to_json(Json& j, const PseudoVoigtPeak& p) {
    j = Json{{"center", p.center}, {"amplitude", p.amplitude}, {"sigma2", p.sigma2}, {"nu", p.nu}};
}
inline void from_json(const Json& j, PseudoVoigtPeak& p) {
    detail::reject_unknown(j, {"center", "amplitude", "sigma2", "nu"}, "peak");
    p.center = j.at("center").get<double>();
    detail::read_optional(j, "amplitude", p.amplitude);
    detail::read_optional(j, "sigma2", p.sigma2);
    detail::read_optional(j, "nu", p.nu);
}

inline void to_json(Json& j, const ElutionWindow& w) {
    j = Json{{"origin", w.origin}, {"duration", w.duration}, {"rise", w.rise}, {"fall", w.fall}, {"magnitude", w.magnitude}};
}
inline void from_json(const Json& j, ElutionWindow& w) {
    detail::reject_unknown(j, {"origin", "duration", "rise", "fall", "magnitude"}, "window");
    detail::read_optional(j, "origin", w.origin);
    detail::read_optional(j, "duration", w.duration);
    detail::read_optional(j, "rise", w.rise);
    detail::read_optional(j, "fall", w.fall);
    detail::read_optional(j, "magnitude", w.magnitude);
}

inline void to_json(Json& j, const AnalyteSpec& a) {
    j = Json{{"name", a.name}, {"quantity", a.quantity}, {"peaks", a.peaks}, {"window", a.window}};
}
inline void from_json(const Json& j, AnalyteSpec& a) {
    detail::reject_unknown(j, {"name", "quantity", "peaks", "window"}, "analyte");
    detail::read_optional(j, "name", a.name);
    detail::read_optional(j, "quantity", a.quantity);
    a.peaks = j.at("peaks").get<std::vector<PseudoVoigtPeak>>();
    a.window = j.at("window").get<ElutionWindow>();
}

inline void to_json(Json& j, const NoiseConfig& n) {
    j = Json{{"gaussian_sigma", n.gaussian_sigma},
             {"shot_enabled", n.shot_enabled},
             {"cosmic_amplitude", n.cosmic_amplitude},
             {"cosmic_rate", n.cosmic_rate},
             {"fluorescence_degree", n.fluorescence_degree},
             {"fluorescence_coeffs", n.fluorescence_coeffs},
             {"clamp_nonnegative", n.clamp_nonnegative}};
}
inline void from_json(const Json& j, NoiseConfig& n) {
    detail::reject_unknown(j,
                           {"gaussian_sigma", "shot_enabled", "cosmic_amplitude", "cosmic_rate", "fluorescence_degree",
                            "fluorescence_coeffs", "clamp_nonnegative"},
                           "noise");
    detail::read_optional(j, "gaussian_sigma", n.gaussian_sigma);
    detail::read_optional(j, "shot_enabled", n.shot_enabled);
    detail::read_optional(j, "cosmic_amplitude", n.cosmic_amplitude);
    detail::read_optional(j, "cosmic_rate", n.cosmic_rate);
    detail::read_optional(j, "fluorescence_degree", n.fluorescence_degree);
    detail::read_optional(j, "fluorescence_coeffs", n.fluorescence_coeffs);
    detail::read_optional(j, "clamp_nonnegative", n.clamp_nonnegative);
}

inline void to_json(Json& j, const PipelineConfig& c) {
    j = Json{{"gamma", c.gamma},
             {"sg_window", c.sg_window},
             {"sg_order", c.sg_order},
             {"smooth_axes", c.smooth_axes == SmoothAxes::both ? "both" : "frequency"},
             {"fluorescence_degree", c.fluorescence_degree},
             {"scales", c.scales},
             {"min_snr", c.min_snr},
             {"k_max", c.k_max},
             {"reject_ratio", c.reject_ratio},
             {"half_f", c.half_f},
             {"pad_t", c.pad_t},
             {"despike", c.despike},
             {"despike_z", c.despike_z},
             {"standardize", c.standardize},
             {"min_separation", c.min_separation},
             {"solvent_refinements", c.solvent_refinements},
             {"seed", c.seed}};
}
inline void from_json(const Json& j, PipelineConfig& c) {
    detail::reject_unknown(j,
                           {"gamma", "sg_window", "sg_order", "smooth_axes", "fluorescence_degree", "scales", "min_snr",
                            "k_max", "reject_ratio", "half_f", "pad_t", "despike", "despike_z", "standardize",
                            "min_separation", "solvent_refinements", "seed"},
                           "pipeline");
    detail::read_optional(j, "gamma", c.gamma);
    detail::read_optional(j, "sg_window", c.sg_window);
    detail::read_optional(j, "sg_order", c.sg_order);
    if (j.contains("smooth_axes")) {
        const auto axes = j.at("smooth_axes").get<std::string>();
        detail::require_data(axes == "frequency" || axes == "both", "pipeline: smooth_axes must be 'frequency' or 'both'");
        c.smooth_axes = axes == "both" ? SmoothAxes::both : SmoothAxes::frequency;
    }
    detail::read_optional(j, "fluorescence_degree", c.fluorescence_degree);
    detail::read_optional(j, "scales", c.scales);
    detail::read_optional(j, "min_snr", c.min_snr);
    detail::read_optional(j, "k_max", c.k_max);
    detail::read_optional(j, "reject_ratio", c.reject_ratio);
    detail::read_optional(j, "half_f", c.half_f);
    detail::read_optional(j, "pad_t", c.pad_t);
    detail::read_optional(j, "despike", c.despike);
    detail::read_optional(j, "despike_z", c.despike_z);
    detail::read_optional(j, "standardize", c.standardize);
    detail::read_optional(j, "min_separation", c.min_separation);
    detail::read_optional(j, "solvent_refinements", c.solvent_refinements);
    detail::read_optional(j, "seed", c.seed);
}

inline void to_json(Json& j, const PeakCandidate& c) {
    j = Json{{"t_index", c.t_index}, {"f_index", c.f_index},       {"intensity", c.intensity},
             {"prominence", c.prominence}, {"t_start", c.t_start}, {"t_end", c.t_end}};
}
inline void from_json(const Json& j, PeakCandidate& c) {
    c.t_index = j.at("t_index").get<std::size_t>();
    c.f_index = j.at("f_index").get<std::size_t>();
    c.intensity = j.at("intensity").get<double>();
    c.prominence = j.at("prominence").get<double>();
    detail::read_optional(j, "t_start", c.t_start);
    detail::read_optional(j, "t_end", c.t_end);
}

inline void to_json(Json& j, const PeakFit& f) {
    j = Json{{"candidate", f.candidate}, {"a_hat", f.a_hat},         {"gamma_hat", f.gamma_hat},
             {"sigma2_hat", f.sigma2_hat}, {"c_hat", f.c_hat},       {"nu_hat", f.nu_hat},
             {"o_hat", f.o_hat},           {"d_hat", f.d_hat},       {"alpha_hat", f.alpha_hat},
             {"beta_hat", f.beta_hat},     {"mag_hat", f.mag_hat},   {"rss", f.rss},
             {"converged", f.converged},   {"iterations", f.iterations}};
}
inline void from_json(const Json& j, PeakFit& f) {
    f.candidate = j.at("candidate").get<PeakCandidate>();
    detail::read_optional(j, "a_hat", f.a_hat);
    f.sigma2_hat = j.at("sigma2_hat").get<double>();
    f.gamma_hat = std::sqrt(2.0 * std::numbers::ln2 * f.sigma2_hat);
    f.c_hat = j.at("c_hat").get<double>();
    f.nu_hat = j.at("nu_hat").get<double>();
    f.o_hat = j.at("o_hat").get<double>();
    f.d_hat = j.at("d_hat").get<double>();
    f.alpha_hat = j.at("alpha_hat").get<double>();
    f.beta_hat = j.at("beta_hat").get<double>();
    f.mag_hat = j.at("mag_hat").get<double>();
    detail::read_optional(j, "rss", f.rss);
    detail::read_optional(j, "converged", f.converged);
    detail::read_optional(j, "iterations", f.iterations);
}

inline void to_json(Json& j, const DetectedAnalyte& a) {
    j = Json{{"spectrum", detail::vector_to_json(a.spectrum)},
             {"elution", detail::vector_to_json(a.elution)},
             {"window", a.window},
             {"peaks", a.peaks}};
}
inline void from_json(const Json& j, DetectedAnalyte& a) {
    a.spectrum = detail::vector_from_json(j.at("spectrum"));
    a.elution = detail::vector_from_json(j.at("elution"));
    detail::read_optional(j, "window", a.window);
    a.peaks = j.at("peaks").get<std::vector<PeakFit>>();
}

inline void to_json(Json& j, const DetectionResult& r) { j = Json{{"k_hat", r.k_hat}, {"analytes", r.analytes}}; }
inline void from_json(const Json& j, DetectionResult& r) {
    r.k_hat = j.at("k_hat").get<std::size_t>();
    r.analytes = j.at("analytes").get<std::vector<DetectedAnalyte>>();
    detail::require_data(r.k_hat == r.analytes.size(), "detection result: k_hat != number of analytes");
}

inline void to_json(Json& j, const LodCurve& c) {
    j = Json{{"c_direction", c.c_direction}, {"etas", c.etas}, {"rhos", c.rhos}, {"rho_stderr", c.rho_stderr},
             {"threshold", c.threshold},     {"trials", c.trials}};
    j["eta_star"] = c.eta_star ? Json(*c.eta_star) : Json("not-found");
}

inline Json rotation_to_json(const Rotation& r) {
    return Json{{"t", detail::matrix_to_json(r.t)},
                {"singular", r.singular},
                {"lambda_correlation", r.lambda_correlation},
                {"x_correlation", r.x_correlation}};
}

// ---------------------------------------------------------------------------
// Scenario files
// ---------------------------------------------------------------------------

/// A synthesis scenario: grids, analytes, solvent, noise, plus optional
/// pipeline and sweep sections.
struct Scenario {
    TimeGrid grid_t;
    FrequencyGrid grid_f;
    std::vector<AnalyteSpec> analytes;
    SolventSpec solvent;
    NoiseConfig noise;
    PipelineConfig pipeline;
    Json lod = Json::object();
    std::string config_hash;
};

namespace detail {

/// Spectrum: explicit array, or {"peaks": [...], "offset": c}.
inline Vector solvent_spectrum_from_json(const Json& j, const FrequencyGrid& gf) {
    if (j.is_array()) return vector_from_json(j);
    reject_unknown(j, {"peaks", "offset"}, "solvent.spectrum");
    Vector s = Vector::Constant(static_cast<Eigen::Index>(gf.m), j.value("offset", 0.0));
    for (const auto& pj : j.value("peaks", Json::array())) {
        const auto p = pj.get<PseudoVoigtPeak>();
        p.validate();
        for (std::size_t i = 0; i < gf.m; ++i) s(static_cast<Eigen::Index>(i)) += eval_pseudo_voigt(gf.at(i), p);
    }
    return s;
}

/// Elution: explicit array, or {"level": a, "slope": b} for a + b t.
inline Vector solvent_elution_from_json(const Json& j, const TimeGrid& gt) {
    if (j.is_array()) return vector_from_json(j);
    reject_unknown(j, {"level", "slope"}, "solvent.elution");
    const double level = j.value("level", 1.0);
    const double slope = j.value("slope", 0.0);
    Vector e(static_cast<Eigen::Index>(gt.n));
    for (std::size_t t = 0; t < gt.n; ++t) e(static_cast<Eigen::Index>(t)) = level + slope * gt.at(t);
    return e;
}

}  // namespace detail

inline Scenario scenario_from_json(const Json& j) {
    detail::reject_unknown(j, {"time_grid", "frequency_grid", "analytes", "solvent", "noise", "pipeline", "lod"},
                           "scenario");
    Scenario s;
    if (j.contains("time_grid")) s.grid_t = j.at("time_grid").get<TimeGrid>();
    if (j.contains("frequency_grid")) s.grid_f = j.at("frequency_grid").get<FrequencyGrid>();
    s.grid_t.validate();
    s.grid_f.validate();
    if (j.contains("analytes")) s.analytes = j.at("analytes").get<std::vector<AnalyteSpec>>();
    for (const auto& a : s.analytes) a.validate();
    detail::require_data(j.contains("solvent"), "scenario: missing 'solvent'");
    const Json& sj = j.at("solvent");
    detail::reject_unknown(sj, {"spectrum", "elution"}, "solvent");
    s.solvent.spectrum = detail::solvent_spectrum_from_json(sj.at("spectrum"), s.grid_f);
    s.solvent.elution = sj.contains("elution") ? detail::solvent_elution_from_json(sj.at("elution"), s.grid_t)
                                               : Vector::Ones(static_cast<Eigen::Index>(s.grid_t.n));
    if (j.contains("noise")) s.noise = j.at("noise").get<NoiseConfig>();
    s.noise.validate();
    if (j.contains("pipeline")) s.pipeline = j.at("pipeline").get<PipelineConfig>();
    if (j.contains("lod")) s.lod = j.at("lod");
    s.config_hash = hex64(fnv1a64(j.dump()));
    return s;
}

inline Json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw DataError("'" + path + "': " + e.what());
    }
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << text;
}

inline void write_json_file(const std::string& path, const Json& j) { write_text_file(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Matrix CSV
// ---------------------------------------------------------------------------

/// First row: label cell then the frequency axis; every further row: time
/// value then the intensities of that time sample.
inline std::string matrix_to_csv(const MeasurementMatrix& y) {
    y.check();
    std::string out = "t\\f";
    for (std::size_t i = 0; i < y.grid_f.m; ++i) {
        out += ',';
        out += format_double(y.grid_f.at(i));
    }
    out += '\n';
    for (Eigen::Index j = 0; j < y.rows(); ++j) {
        out += format_double(y.grid_t.at(static_cast<std::size_t>(j)));
        for (Eigen::Index i = 0; i < y.cols(); ++i) {
            out += ',';
            out += format_double(y.values(j, i));
        }
        out += '\n';
    }
    return out;
}

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        cells.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return cells;
}

inline double uniform_step(const std::vector<double>& axis, const char* what) {
    if (axis.size() < 2) return 1.0;
    const double step = (axis.back() - axis.front()) / static_cast<double>(axis.size() - 1);
    require_data(step > 0.0, std::string(what) + " axis must be increasing");
    for (std::size_t i = 1; i < axis.size(); ++i) {
        require_data(std::abs(axis[i] - axis[i - 1] - step) <= 1e-6 * std::abs(step) + 1e-9,
                     std::string(what) + " axis is not uniformly spaced");
    }
    return step;
}

}  // namespace detail

/// Parses the matrix CSV. Grids are inferred from the axes (a single-sample
/// axis gets step 1); the time axis is re-based to start at 0.
inline MeasurementMatrix matrix_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    auto next_line = [&]() -> bool {
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) return true;
        }
        return false;
    };
    auto where = [&] { return "matrix csv line " + std::to_string(line_no) + ": "; };

    if (!next_line()) throw DataError("matrix csv: empty input");
    const auto header = detail::split_csv_line(line);
    if (header.size() < 2) throw DataError(where() + "header needs at least one frequency");
    std::vector<double> freqs;
    for (std::size_t i = 1; i < header.size(); ++i) {
        try {
            freqs.push_back(parse_double(header[i]));
        } catch (const DataError& e) {
            throw DataError(where() + e.what());
        }
    }
    std::vector<double> times;
    std::vector<std::vector<double>> rows;
    while (next_line()) {
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) {
            throw DataError(where() + "expected " + std::to_string(header.size()) + " cells, found " +
                            std::to_string(cells.size()));
        }
        std::vector<double> row;
        row.reserve(freqs.size());
        try {
            times.push_back(parse_double(cells[0]));
            for (std::size_t i = 1; i < cells.size(); ++i) row.push_back(parse_double(cells[i]));
        } catch (const DataError& e) {
            throw DataError(where() + e.what());
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError("matrix csv: no data rows");

    FrequencyGrid gf{freqs.front(), detail::uniform_step(freqs, "frequency"), freqs.size()};
    TimeGrid gt{detail::uniform_step(times, "time"), times.size()};
    Matrix values(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(freqs.size()));
    for (std::size_t j = 0; j < rows.size(); ++j)
        for (std::size_t i = 0; i < freqs.size(); ++i) values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = rows[j][i];
    return MeasurementMatrix(gt, gf, std::move(values));
}

inline MeasurementMatrix read_matrix_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return matrix_from_csv(buf.str());
}

inline void write_matrix_csv(const std::string& path, const MeasurementMatrix& y) { write_text_file(path, matrix_to_csv(y)); }

/// Plain numeric table (one row per line), used for factor exports.
inline std::string table_to_csv(const Matrix& m, const std::vector<std::string>& header = {}) {
    std::string out;
    for (std::size_t h = 0; h < header.size(); ++h) {
        if (h) out += ',';
        out += header[h];
    }
    if (!header.empty()) out += '\n';
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            if (c) out += ',';
            out += format_double(m(r, c));
        }
        out += '\n';
    }
    return out;
}

/// A single spectrum stored as one row or one column of numbers.
inline Vector vector_from_csv(const std::string& text) {
    std::vector<double> values;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        for (auto cell : detail::split_csv_line(line)) values.push_back(parse_double(cell));
    }
    detail::require_data(!values.empty(), "vector csv: no values");
    return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

inline std::string candidates_to_csv(const std::vector<PeakCandidate>& cands, const TimeGrid& gt, const FrequencyGrid& gf) {
    std::string out = "t_index,f_index,t,f,intensity,prominence\n";
    for (const auto& c : cands) {
        out += std::to_string(c.t_index) + ',' + std::to_string(c.f_index) + ',' + format_double(gt.at(c.t_index)) + ',' +
               format_double(gf.at(c.f_index)) + ',' + format_double(c.intensity) + ',' + format_double(c.prominence) + '\n';
    }
    return out;
}

inline std::string fits_to_csv(const std::vector<PeakFit>& fits) {
    std::string out =
        "t_index,f_index,intensity,prominence,a_hat,gamma_hat,sigma2_hat,c_hat,nu_hat,o_hat,d_hat,alpha_hat,beta_hat,"
        "mag_hat,rss,converged\n";
    for (const auto& f : fits) {
        const double vals[] = {f.candidate.intensity, f.candidate.prominence, f.a_hat, f.gamma_hat, f.sigma2_hat,
                               f.c_hat, f.nu_hat, f.o_hat, f.d_hat, f.alpha_hat, f.beta_hat, f.mag_hat, f.rss};
        out += std::to_string(f.candidate.t_index) + ',' + std::to_string(f.candidate.f_index);
        for (double v : vals) out += ',' + format_double(v);
        out += f.converged ? ",1\n" : ",0\n";
    }
    return out;
}

inline std::string plot_rows_to_csv(const std::vector<PlotRow>& rows) {
    std::string out = "kind,analyte,x0,x1,y,style\n";
    for (const auto& r : rows) {
        out += r.kind + ',' + std::to_string(r.analyte) + ',' + format_double(r.x0) + ',' + format_double(r.x1) + ',' +
               format_double(r.y) + ',' + r.style + '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sidecar
// ---------------------------------------------------------------------------

inline constexpr const char* sidecar_format = "specdetect-matrix/1";

/// Grids, provenance and (for synthetic data) the ground truth.
inline Json make_sidecar(const Scenario& s, std::uint64_t seed) {
    Json truth{{"analytes", s.analytes},
               {"solvent", {{"spectrum", detail::vector_to_json(s.solvent.spectrum)},
                            {"elution", detail::vector_to_json(s.solvent.elution)}}},
               {"noise", s.noise}};
    return Json{{"format", sidecar_format},
                {"time_grid", s.grid_t},
                {"frequency_grid", s.grid_f},
                {"provenance", {{"generator", "synth"}, {"seed", seed}, {"config_hash", s.config_hash}}},
                {"truth", truth}};
}

struct Sidecar {
    TimeGrid grid_t;
    FrequencyGrid grid_f;
    std::optional<Vector> solvent_spectrum;
    std::optional<Vector> solvent_elution;
    std::vector<AnalyteSpec> analytes;
    bool has_truth = false;
};

inline Sidecar sidecar_from_json(const Json& j) {
    detail::require_data(j.is_object() && j.value("format", std::string()) == sidecar_format,
                         "sidecar: missing or unsupported format tag");
    Sidecar s;
    s.grid_t = j.at("time_grid").get<TimeGrid>();
    s.grid_f = j.at("frequency_grid").get<FrequencyGrid>();
    if (j.contains("truth")) {
        const Json& t = j.at("truth");
        s.has_truth = true;
        if (t.contains("analytes")) s.analytes = t.at("analytes").get<std::vector<AnalyteSpec>>();
        if (t.contains("solvent")) {
            const Json& sol = t.at("solvent");
            if (sol.contains("spectrum")) s.solvent_spectrum = detail::vector_from_json(sol.at("spectrum"));
            if (sol.contains("elution")) s.solvent_elution = detail::vector_from_json(sol.at("elution"));
        }
    }
    return s;
}

}  // namespace specdetect
