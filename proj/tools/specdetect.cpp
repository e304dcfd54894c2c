#include <CLI11.hpp>

#include <specdetect/specdetect.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace specdetect;

namespace {

enum ExitCode { ok = 0, usage = 1, data = 2, numerical = 3 };

std::string replace_extension(const std::string& path, const std::string& ext) {
    return fs::path(path).replace_extension(ext).string();
}

std::string with_suffix(const std::string& prefix, const std::string& suffix) { return prefix + suffix; }

struct PipelineFlags {
    std::optional<double> gamma;
    std::optional<int> sg_window;
    std::optional<int> sg_order;
    std::optional<int> fluorescence_degree;
    std::optional<std::size_t> k_max;
    std::optional<std::uint64_t> seed;

    void add(CLI::App* cmd, bool with_seed = true) {
        cmd->add_option("--gamma", gamma, "Sensitivity level");
        cmd->add_option("--sg-window", sg_window, "Savitzky-Golay window length (odd)");
        cmd->add_option("--sg-order", sg_order, "Savitzky-Golay polynomial order");
        cmd->add_option("--fluorescence-degree", fluorescence_degree, "Baseline polynomial degree (negative disables)");
        cmd->add_option("--k-max", k_max, "Largest cluster count considered");
        if (with_seed) cmd->add_option("--seed", seed, "Seed for clustering restarts");
    }

    void apply(PipelineConfig& cfg) const {
        if (gamma) cfg.gamma = *gamma;
        if (sg_window) cfg.sg_window = *sg_window;
        if (sg_order) cfg.sg_order = *sg_order;
        if (fluorescence_degree) cfg.fluorescence_degree = *fluorescence_degree;
        if (k_max) cfg.k_max = *k_max;
        if (seed) cfg.seed = *seed;
    }
};

// Pipeline section and solvent spectrum from either a scenario file or a bare pipeline object.
struct DetectConfig {
    PipelineConfig pipeline;
    std::optional<Vector> solvent;
};

DetectConfig load_detect_config(const std::string& path) {
    const Json j = read_json_file(path);
    DetectConfig out;
    if (j.contains("solvent") || j.contains("analytes") || j.contains("frequency_grid")) {
        Scenario s = scenario_from_json(j);
        out.pipeline = s.pipeline;
        out.solvent = s.solvent.spectrum;
    } else {
        out.pipeline = j.get<PipelineConfig>();
    }
    return out;
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& config_path, std::uint64_t seed, const std::string& out) {
    const Scenario s = scenario_from_json(read_json_file(config_path));
    for (const auto& w : elution_overlap_warnings(s.analytes)) std::cerr << "warning: " << w << "\n";
    const Synthesis syn = synthesize(s.analytes, s.solvent, s.noise, s.grid_t, s.grid_f, seed);
    write_matrix_csv(out, syn.measurement);
    write_json_file(replace_extension(out, ".json"), make_sidecar(s, seed));
    return ok;
}

struct DetectArgs {
    std::string input;
    std::string sidecar;
    std::string solvent;
    std::string config;
    std::string out;
    std::string dump_dir;
    std::string resume_dir;
    PipelineFlags flags;
};

void write_dumps(const std::string& dir, const PipelineRun& run) {
    fs::create_directories(dir);
    const auto p = [&](const char* name) { return (fs::path(dir) / name).string(); };
    write_matrix_csv(p("residual.csv"), run.pre.residual);
    write_matrix_csv(p("smoothed.csv"), run.pre.smoothed);
    write_json_file(p("grids.json"), Json{{"time_grid", run.pre.residual.grid_t}, {"frequency_grid", run.pre.residual.grid_f}});
    write_text_file(p("solvent_coeffs.csv"), table_to_csv(run.pre.solvent_coeffs, {"coeff"}));
    write_text_file(p("baseline.csv"), table_to_csv(run.pre.fluorescence.baseline, {"baseline"}));
    const auto& gt = run.pre.residual.grid_t;
    const auto& gf = run.pre.residual.grid_f;
    write_text_file(p("candidates.csv"), candidates_to_csv(run.detection.candidates, gt, gf));
    write_text_file(p("fits.csv"), fits_to_csv(run.detection.fits));
}

int cmd_detect(const DetectArgs& args) {
    DetectConfig cfg;
    if (!args.config.empty()) cfg = load_detect_config(args.config);
    args.flags.apply(cfg.pipeline);
    cfg.pipeline.validate();

    PipelineRun run;
    if (!args.resume_dir.empty()) {
        run.pre.residual = read_matrix_csv((fs::path(args.resume_dir) / "residual.csv").string());
        run.pre.smoothed = read_matrix_csv((fs::path(args.resume_dir) / "smoothed.csv").string());
        const fs::path grids = fs::path(args.resume_dir) / "grids.json";
        if (fs::exists(grids)) {
            const Json g = read_json_file(grids.string());
            const auto gt = g.at("time_grid").get<TimeGrid>();
            const auto gf = g.at("frequency_grid").get<FrequencyGrid>();
            detail::require_data(gt.n == run.pre.residual.grid_t.n && gf.m == run.pre.residual.grid_f.m,
                                 "resume: grids.json does not match the dumped matrices");
            run.pre.residual.grid_t = run.pre.smoothed.grid_t = gt;
            run.pre.residual.grid_f = run.pre.smoothed.grid_f = gf;
        }
        detail::require_data(run.pre.residual.rows() == run.pre.smoothed.rows() &&
                                 run.pre.residual.cols() == run.pre.smoothed.cols(),
                             "resume: residual and smoothed matrices differ in shape");
        run.detection = detect_preprocessed(run.pre.residual, run.pre.smoothed, cfg.pipeline);
    } else {
        if (args.input.empty()) throw UsageError("detect: --input or --resume-from is required");
        MeasurementMatrix y = read_matrix_csv(args.input);
        const std::string sidecar_path = args.sidecar.empty() ? replace_extension(args.input, ".json") : args.sidecar;
        std::optional<Sidecar> sidecar;
        if (!args.sidecar.empty() || fs::exists(sidecar_path)) sidecar = sidecar_from_json(read_json_file(sidecar_path));
        if (sidecar) {
            detail::require_data(sidecar->grid_t.n == y.grid_t.n && sidecar->grid_f.m == y.grid_f.m,
                                 "sidecar grids do not match the matrix dimensions");
            y.grid_t = sidecar->grid_t;
            y.grid_f = sidecar->grid_f;
        }
        std::optional<Vector> solvent;
        if (!args.solvent.empty()) {
            std::ifstream in(args.solvent);
            if (!in) throw DataError("cannot open '" + args.solvent + "'");
            std::stringstream buf;
            buf << in.rdbuf();
            solvent = vector_from_csv(buf.str());
        } else if (cfg.solvent) {
            solvent = cfg.solvent;
        } else if (sidecar && sidecar->solvent_spectrum) {
            solvent = sidecar->solvent_spectrum;
        }
        if (!solvent) {
            throw DataError("detect: no solvent spectrum (use --solvent, a scenario --config, or a sidecar with truth)");
        }
        detail::require_data(solvent->size() == y.cols(), "detect: solvent spectrum length does not match the matrix");
        run = run_pipeline(y, *solvent, cfg.pipeline);
        if (!args.dump_dir.empty()) write_dumps(args.dump_dir, run);
    }

    Json out = run.detection.result;
    out["unconverged_fits"] = run.detection.unconverged();
    write_json_file(args.out, out);
    if (run.detection.unconverged() > 0) {
        std::cerr << "error: " << run.detection.unconverged() << " peak fit(s) did not converge; results written\n";
        return numerical;
    }
    return ok;
}

struct PcaArgs {
    std::string input;
    std::size_t k = 1;
    std::string truth;
    bool center = false;
    std::string out;
};

int cmd_pca(const PcaArgs& args) {
    const MeasurementMatrix y = read_matrix_csv(args.input);
    const PcaModel model = pca_decompose(y, args.k, args.center);
    write_text_file(with_suffix(args.out, "_U.csv"), table_to_csv(model.u));
    write_text_file(with_suffix(args.out, "_V.csv"), table_to_csv(model.v));

    const double y_norm = y.values.norm();
    const double err = (model.reconstruct() - y.values).norm();
    Json report{{"k", args.k},
                {"centered", args.center},
                {"singular_values", detail::vector_to_json(model.singular_values)},
                {"reconstruction_error", err},
                {"relative_reconstruction_error", y_norm > 0.0 ? err / y_norm : 0.0}};

    if (args.truth.empty()) {
        report["rotation"] = "skipped: no ground truth supplied";
    } else {
        const Sidecar truth = sidecar_from_json(read_json_file(args.truth));
        detail::require_data(truth.has_truth, "pca: sidecar carries no ground truth");
        detail::require_data(truth.grid_t.n == y.grid_t.n && truth.grid_f.m == y.grid_f.m,
                             "pca: truth grids do not match the matrix");
        Matrix lambda = elution_matrix(truth.analytes, truth.grid_t);
        Matrix x = spectra_matrix(truth.analytes, truth.grid_f);
        std::vector<std::string> names;
        for (const auto& a : truth.analytes) names.push_back(a.name);
        if (truth.solvent_spectrum && truth.solvent_elution && lambda.cols() < static_cast<Eigen::Index>(args.k)) {
            lambda.conservativeResize(Eigen::NoChange, lambda.cols() + 1);
            x.conservativeResize(Eigen::NoChange, x.cols() + 1);
            lambda.col(lambda.cols() - 1) = *truth.solvent_elution;
            x.col(x.cols() - 1) = *truth.solvent_spectrum;
            names.push_back("solvent");
        }
        const auto keep = std::min<Eigen::Index>(lambda.cols(), static_cast<Eigen::Index>(args.k));
        if (keep < lambda.cols()) report["truth_truncated"] = "only the first " + std::to_string(keep) + " truth factors are matched";
        names.resize(static_cast<std::size_t>(keep));
        lambda = lambda.leftCols(keep).eval();
        x = x.leftCols(keep).eval();
        detail::require_data(keep >= 1, "pca: truth has no factors");

        const Rotation rot = oracle_rotation(model, lambda, x);
        const Components comp = reconstruct_components(model, rot.t, true);
        write_json_file(with_suffix(args.out, "_T.json"), rotation_to_json(rot));
        write_text_file(with_suffix(args.out, "_lambda.csv"), table_to_csv(comp.lambda_hat));
        write_text_file(with_suffix(args.out, "_x.csv"), table_to_csv(comp.x_hat));
        report["rotation"] = "oracle";
        report["factors"] = names;
        report["elution_correlation"] = rot.lambda_correlation;
        report["spectrum_correlation"] = rot.x_correlation;
        report["pseudo_inverse"] = comp.pseudo_inverse;
    }
    write_json_file(with_suffix(args.out, "_report.json"), report);
    return ok;
}

struct LodArgs {
    std::string config;
    std::optional<double> threshold;
    std::optional<double> eta_min;
    std::optional<double> eta_max;
    std::optional<std::size_t> eta_steps;
    std::optional<std::size_t> trials;
    std::optional<double> sigma;
    std::uint64_t seed = 0;
    std::string out;
    PipelineFlags flags;
};

std::vector<double> eta_grid(double lo, double hi, std::size_t steps) {
    detail::require(steps >= 1, "lod: --eta-steps must be >= 1");
    detail::require(lo > 0.0 && hi >= lo, "lod: need 0 < eta-min <= eta-max");
    detail::require(steps == 1 || hi > lo, "lod: eta-max must exceed eta-min when eta-steps > 1");
    std::vector<double> grid;
    for (std::size_t i = 0; i < steps; ++i) {
        const double u = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
        grid.push_back(lo * std::pow(hi / lo, u));
    }
    return grid;
}

int cmd_lod(const LodArgs& args) {
    const Scenario s = scenario_from_json(read_json_file(args.config));
    detail::require(!s.analytes.empty(), "lod: scenario has no analytes");
    PipelineConfig pipeline = s.pipeline;
    args.flags.apply(pipeline);
    pipeline.validate();

    const auto lod_value = [&](const char* key, double fallback) { return s.lod.value(key, fallback); };
    const double threshold = args.threshold.value_or(lod_value("threshold", 0.9));
    const auto trials = args.trials.value_or(static_cast<std::size_t>(lod_value("trials", 10)));
    const auto grid = eta_grid(args.eta_min.value_or(lod_value("eta_min", 5.0)),
                               args.eta_max.value_or(lod_value("eta_max", 200.0)),
                               args.eta_steps.value_or(static_cast<std::size_t>(lod_value("eta_steps", 8))));

    LodScenario scenario{s.analytes, s.solvent, s.noise, s.grid_t, s.grid_f};
    if (args.sigma) scenario.noise.gaussian_sigma = *args.sigma;
    scenario.noise.validate();
    std::vector<double> direction;
    double norm = 0.0;
    for (const auto& a : s.analytes) norm += a.quantity * a.quantity;
    for (const auto& a : s.analytes) direction.push_back(a.quantity / std::sqrt(norm));

    const Detector detector = [pipeline](const MeasurementMatrix& y, const Vector& solvent) {
        PipelineConfig cfg = pipeline;
        cfg.threads = 1;
        return detect(y, solvent, cfg);
    };
    const LodCurve curve = lod_sweep(scenario, direction, grid, detector, threshold, trials, args.seed);
    write_json_file(with_suffix(args.out, ".json"), curve);

    // Plot data for the first trial at eta_star (truth rows only when not found).
    std::vector<AnalyteSpec> truth = s.analytes;
    DetectionResult result;
    if (curve.eta_star) {
        for (std::size_t k = 0; k < truth.size(); ++k) truth[k].quantity = *curve.eta_star * direction[k];
        const Synthesis syn = synthesize(truth, scenario.solvent, scenario.noise, scenario.grid_t, scenario.grid_f,
                                         derive_seed(args.seed, "lod-trial", 0));
        result = detector(syn.measurement, scenario.solvent.spectrum);
    }
    write_text_file(with_suffix(args.out, "_plot.csv"), plot_rows_to_csv(emit_detection_plot_data(truth, result)));
    return ok;
}

int cmd_plot_data(const std::string& sidecar_path, const std::string& result_path, std::vector<double> percentiles,
                  const std::string& out) {
    const Sidecar sidecar = sidecar_from_json(read_json_file(sidecar_path));
    detail::require_data(sidecar.has_truth, "plot-data: sidecar carries no ground truth");
    const DetectionResult result = read_json_file(result_path).get<DetectionResult>();
    write_text_file(out, plot_rows_to_csv(emit_detection_plot_data(sidecar.analytes, result, percentiles)));
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Label-free analyte detection in time-resolved spectra"};
    app.require_subcommand(1);

    std::string config, out, input;
    std::uint64_t seed = 0;

    auto* synth = app.add_subcommand("synth", "Synthesize a measurement matrix and its ground truth");
    synth->add_option("--config", config, "Scenario JSON")->required();
    synth->add_option("--seed", seed, "Noise seed");
    synth->add_option("--out", out, "Output matrix CSV (sidecar written next to it as .json)")->required();

    DetectArgs det;
    auto* detect_cmd = app.add_subcommand("detect", "Run the detection pipeline on a matrix CSV");
    detect_cmd->add_option("--input", det.input, "Matrix CSV");
    detect_cmd->add_option("--sidecar", det.sidecar, "Sidecar JSON (default: input with .json extension, if present)");
    detect_cmd->add_option("--solvent", det.solvent, "Solvent spectrum CSV");
    detect_cmd->add_option("--config", det.config, "Scenario or pipeline JSON");
    detect_cmd->add_option("--out", det.out, "Detection result JSON")->required();
    detect_cmd->add_option("--dump-intermediate", det.dump_dir, "Directory for intermediate matrices and tables");
    detect_cmd->add_option("--resume-from", det.resume_dir, "Resume from a dump directory (skips preprocessing)");
    det.flags.add(detect_cmd);

    PcaArgs pca;
    auto* pca_cmd = app.add_subcommand("pca", "Truncated PCA baseline with optional oracle rotation");
    pca_cmd->add_option("--input", pca.input, "Matrix CSV")->required();
    pca_cmd->add_option("--k", pca.k, "Number of components")->required();
    pca_cmd->add_option("--truth", pca.truth, "Sidecar JSON with ground truth");
    pca_cmd->add_flag("--center", pca.center, "Subtract the mean row first");
    pca_cmd->add_option("--out", pca.out, "Output prefix")->required();

    LodArgs lod;
    auto* lod_cmd = app.add_subcommand("lod", "Monte-Carlo limit-of-detection sweep");
    lod_cmd->add_option("--config", lod.config, "Scenario JSON")->required();
    lod_cmd->add_option("--threshold", lod.threshold, "rho threshold");
    lod_cmd->add_option("--eta-min", lod.eta_min, "Smallest concentration scale");
    lod_cmd->add_option("--eta-max", lod.eta_max, "Largest concentration scale");
    lod_cmd->add_option("--eta-steps", lod.eta_steps, "Number of geometrically spaced scales");
    lod_cmd->add_option("--trials", lod.trials, "Trials per scale");
    lod_cmd->add_option("--sigma", lod.sigma, "Override the Gaussian noise level");
    lod_cmd->add_option("--seed", lod.seed, "Master seed");
    lod_cmd->add_option("--out", lod.out, "Output prefix")->required();
    lod.flags.add(lod_cmd, false);

    std::string sidecar_path, result_path;
    std::vector<double> percentiles{50.0, 30.0};
    auto* plot = app.add_subcommand("plot-data", "Emit the detection plot table");
    plot->add_option("--sidecar", sidecar_path, "Sidecar JSON with ground truth")->required();
    plot->add_option("--result", result_path, "Detection result JSON")->required();
    plot->add_option("--percentiles", percentiles, "Solid and dotted percentile cut-offs")->expected(2);
    plot->add_option("--out", out, "Output CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? ok : usage;
    }

    try {
        if (*synth) return cmd_synth(config, seed, out);
        if (*detect_cmd) return cmd_detect(det);
        if (*pca_cmd) return cmd_pca(pca);
        if (*lod_cmd) return cmd_lod(lod);
        if (*plot) return cmd_plot_data(sidecar_path, result_path, percentiles, out);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return usage;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return numerical;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return data;
    } catch (const Json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return data;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return data;
    }
    return usage;
}
