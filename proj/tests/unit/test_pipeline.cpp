#include <gtest/gtest.h>

#include "support.hpp"

#include <cmath>
#include <limits>

using namespace specdetect;

namespace {

struct FixtureRun {
    Scenario scenario;
    Synthesis synthesis;
};

FixtureRun noiseless_fixture() {
    FixtureRun f{testsupport::fixture(), {}};
    f.synthesis = synthesize(f.scenario.analytes, f.scenario.solvent, NoiseConfig::none(), f.scenario.grid_t,
                             f.scenario.grid_f, 0);
    return f;
}

}  // namespace

TEST(Pipeline, NoiselessFixtureFindsFourAnalytes) {
    const FixtureRun f = noiseless_fixture();
    const PipelineRun run = run_pipeline(f.synthesis.measurement, f.scenario.solvent.spectrum, f.scenario.pipeline);
    EXPECT_EQ(run.detection.result.k_hat, 4u);
    EXPECT_EQ(run.detection.unconverged(), 0u);
    for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_NEAR(run.detection.result.analytes[k].window.origin, f.scenario.analytes[k].window.origin,
                    f.scenario.grid_t.delta_t);
    }
    const MeasurementMatrix truth(f.scenario.grid_t, f.scenario.grid_f, f.synthesis.analyte_term);
    EXPECT_GT(rho(truth, reconstruct_y(run.detection.result, f.scenario.grid_t, f.scenario.grid_f)), 0.99);
}

TEST(Pipeline, GammaAboveEverythingFindsNothing) {
    const FixtureRun f = noiseless_fixture();
    PipelineConfig cfg = f.scenario.pipeline;
    cfg.gamma = 1e9;
    const DetectionResult r = detect(f.synthesis.measurement, f.scenario.solvent.spectrum, cfg);
    EXPECT_EQ(r.k_hat, 0u);
    EXPECT_TRUE(r.analytes.empty());
}

TEST(Pipeline, PreprocessingRemovesSolvent) {
    const FixtureRun f = noiseless_fixture();
    // Row 45 lies between two elution windows and holds solvent only.
    const double row_energy = f.synthesis.measurement.values.row(45).norm();
    const SolventSubtraction sub = subtract_solvent(f.synthesis.measurement, f.scenario.solvent.spectrum);
    EXPECT_LT(sub.residual.values.row(45).norm(), 1e-9 * row_energy);
    EXPECT_NEAR(sub.coeffs(45), f.scenario.solvent.elution(45), 1e-12);
    const Preprocessed pre = preprocess(f.synthesis.measurement, f.scenario.solvent.spectrum, f.scenario.pipeline);
    EXPECT_LT(pre.residual.values.row(45).norm(), 1e-2 * row_energy);
}

TEST(Pipeline, SolventRefinementConvergesToTrueCoefficients) {
    const FixtureRun f = noiseless_fixture();
    const MeasurementMatrix truth(f.scenario.grid_t, f.scenario.grid_f, f.synthesis.analyte_term);
    double previous = std::numeric_limits<double>::infinity();
    double last_rho = 0.0;
    for (std::size_t rounds = 0; rounds <= 3; ++rounds) {
        PipelineConfig cfg = f.scenario.pipeline;
        cfg.solvent_refinements = rounds;
        const PipelineRun run = run_pipeline(f.synthesis.measurement, f.scenario.solvent.spectrum, cfg);
        const double err = (run.pre.solvent_coeffs - f.scenario.solvent.elution).cwiseAbs().maxCoeff();
        EXPECT_LT(err, previous) << rounds;
        previous = err;
        last_rho = rho(truth, reconstruct_y(run.detection.result, f.scenario.grid_t, f.scenario.grid_f));
    }
    EXPECT_LT(previous, 1e-4);
    EXPECT_GT(last_rho, 0.99999);
}

TEST(Pipeline, SolventOnlyInputGivesNoAnalytes) {
    const Scenario s = testsupport::fixture();
    NoiseConfig noise;
    noise.gaussian_sigma = 1.0;
    const Synthesis syn = synthesize({}, s.solvent, noise, s.grid_t, s.grid_f, 4);
    EXPECT_EQ(detect(syn.measurement, s.solvent.spectrum, s.pipeline).k_hat, 0u);
}

TEST(Pipeline, ResumingFromPreprocessedMatricesIsIdentical) {
    const FixtureRun f = noiseless_fixture();
    const PipelineRun run = run_pipeline(f.synthesis.measurement, f.scenario.solvent.spectrum, f.scenario.pipeline);
    const MeasurementMatrix residual = matrix_from_csv(matrix_to_csv(run.pre.residual));
    const MeasurementMatrix smoothed = matrix_from_csv(matrix_to_csv(run.pre.smoothed));
    MeasurementMatrix r = residual, s = smoothed;
    r.grid_t = s.grid_t = run.pre.residual.grid_t;
    r.grid_f = s.grid_f = run.pre.residual.grid_f;
    const DetectionRun again = detect_preprocessed(r, s, f.scenario.pipeline);
    EXPECT_EQ(Json(again.result).dump(), Json(run.detection.result).dump());
}

TEST(Pipeline, ThreadCountInvariant) {
    const Scenario s = testsupport::fixture();
    const Synthesis syn = synthesize(s.analytes, s.solvent, s.noise, s.grid_t, s.grid_f, 12);
    PipelineConfig one = s.pipeline, many = s.pipeline;
    one.threads = 1;
    many.threads = 4;
    EXPECT_EQ(Json(detect(syn.measurement, s.solvent.spectrum, one)).dump(),
              Json(detect(syn.measurement, s.solvent.spectrum, many)).dump());
}

TEST(Pipeline, ConfigValidation) {
    PipelineConfig cfg;
    cfg.sg_window = 8;
    EXPECT_THROW(cfg.validate(), UsageError);
    cfg.sg_window = 9;
    cfg.sg_order = 9;
    EXPECT_THROW(cfg.validate(), UsageError);
    cfg.sg_order = 3;
    cfg.gamma = -1.0;
    EXPECT_THROW(cfg.validate(), UsageError);
}
