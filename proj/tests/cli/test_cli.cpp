#include <gtest/gtest.h>

#include "support.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace specdetect;

namespace {

const fs::path scratch = SPECDETECT_SCRATCH;

int run(const std::string& args) {
    const std::string cmd = std::string(SPECDETECT_CLI) + " " + args + " >/dev/null 2>" + (scratch / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string path(const std::string& name) { return (scratch / name).string(); }

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        fs::create_directories(scratch);
        ASSERT_EQ(run("synth --config " SPECDETECT_FIXTURE " --seed 3 --out " + path("fixture.csv")), 0);
    }
};

}  // namespace

TEST_F(Cli, SynthWritesMatrixAndSidecar) {
    const MeasurementMatrix y = read_matrix_csv(path("fixture.csv"));
    EXPECT_EQ(y.rows(), 100);
    EXPECT_EQ(y.cols(), 700);
    const Json side = read_json_file(path("fixture.json"));
    EXPECT_EQ(side["format"], sidecar_format);
    EXPECT_EQ(side["provenance"]["seed"], 3);
    EXPECT_EQ(side["truth"]["analytes"].size(), 4u);
}

TEST_F(Cli, SynthIsByteIdenticalPerSeed) {
    ASSERT_EQ(run("synth --config " SPECDETECT_FIXTURE " --seed 3 --out " + path("again.csv")), 0);
    EXPECT_EQ(slurp(path("again.csv")), slurp(path("fixture.csv")));
    ASSERT_EQ(run("synth --config " SPECDETECT_FIXTURE " --seed 4 --out " + path("other.csv")), 0);
    EXPECT_NE(slurp(path("other.csv")), slurp(path("fixture.csv")));
}

TEST_F(Cli, SynthWithoutAnalytes) {
    Json j = read_json_file(SPECDETECT_FIXTURE);
    j["analytes"] = Json::array();
    write_json_file(path("empty.json.cfg"), j);
    ASSERT_EQ(run("synth --config " + path("empty.json.cfg") + " --out " + path("empty.csv")), 0);
    EXPECT_EQ(read_matrix_csv(path("empty.csv")).cols(), 700);
}

TEST_F(Cli, MalformedConfigFails) {
    std::ofstream(path("broken.cfg")) << "{ not json";
    EXPECT_EQ(run("synth --config " + path("broken.cfg") + " --out " + path("x.csv")), 2);
    EXPECT_NE(slurp(path("stderr.txt")).find("error"), std::string::npos);
    EXPECT_EQ(run("synth --out " + path("x.csv")), 1);
    EXPECT_EQ(run("frobnicate"), 1);
}

TEST_F(Cli, DetectFindsFourAnalytes) {
    ASSERT_EQ(run("detect --input " + path("fixture.csv") + " --out " + path("result.json")), 0);
    const Json r = read_json_file(path("result.json"));
    EXPECT_EQ(r["k_hat"], 4);
    EXPECT_EQ(r["unconverged_fits"], 0);
}

TEST_F(Cli, DetectGammaAboveMaximum) {
    ASSERT_EQ(run("detect --input " + path("fixture.csv") + " --gamma 1e9 --out " + path("none.json")), 0);
    EXPECT_EQ(read_json_file(path("none.json"))["k_hat"], 0);
}

TEST_F(Cli, DetectNeedsSolvent) {
    fs::copy_file(path("fixture.csv"), path("bare.csv"), fs::copy_options::overwrite_existing);
    EXPECT_EQ(run("detect --input " + path("bare.csv") + " --out " + path("bare_result.json")), 2);
    EXPECT_NE(slurp(path("stderr.txt")).find("solvent"), std::string::npos);
    EXPECT_EQ(run("detect --input " + path("bare.csv") + " --config " SPECDETECT_FIXTURE " --out " + path("bare_result.json")), 0);
}

TEST_F(Cli, DetectRejectsGarbageCsv) {
    std::ofstream(path("garbage.csv")) << "t\\f,1,2\n0,1,oops\n";
    EXPECT_EQ(run("detect --input " + path("garbage.csv") + " --solvent " + path("garbage.csv") + " --out " + path("g.json")), 2);
    EXPECT_NE(slurp(path("stderr.txt")).find("line 2"), std::string::npos);
}

TEST_F(Cli, DetectUsageErrors) {
    EXPECT_EQ(run("detect --input " + path("fixture.csv") + " --sg-window 8 --out " + path("u.json")), 1);
    EXPECT_EQ(run("detect --out " + path("u.json")), 1);
}

TEST_F(Cli, ResumeFromDumpIsIdentical) {
    ASSERT_EQ(run("detect --input " + path("fixture.csv") + " --dump-intermediate " + path("dump") + " --out " +
                  path("full.json")),
              0);
    for (const char* f : {"residual.csv", "smoothed.csv", "candidates.csv", "fits.csv", "grids.json"}) {
        EXPECT_TRUE(fs::exists(scratch / "dump" / f)) << f;
    }
    ASSERT_EQ(run("detect --resume-from " + path("dump") + " --out " + path("resumed.json")), 0);
    EXPECT_EQ(slurp(path("resumed.json")), slurp(path("full.json")));
}

TEST_F(Cli, PcaReportsAndRotates) {
    ASSERT_EQ(run("pca --input " + path("fixture.csv") + " --k 5 --truth " + path("fixture.json") + " --out " + path("pca")), 0);
    const Json rep = read_json_file(path("pca_report.json"));
    EXPECT_EQ(rep["rotation"], "oracle");
    ASSERT_EQ(rep["elution_correlation"].size(), 5u);
    for (const auto& c : rep["elution_correlation"]) EXPECT_GE(c.get<double>(), 0.99);
    EXPECT_TRUE(fs::exists(path("pca_T.json")));
    EXPECT_TRUE(fs::exists(path("pca_lambda.csv")));

    ASSERT_EQ(run("pca --input " + path("fixture.csv") + " --k 2 --out " + path("pca_nt")), 0);
    EXPECT_NE(read_json_file(path("pca_nt_report.json"))["rotation"].get<std::string>().find("skipped"), std::string::npos);
    EXPECT_EQ(run("pca --input " + path("fixture.csv") + " --k 0 --out " + path("pca_bad")), 1);
    EXPECT_EQ(run("pca --input " + path("fixture.csv") + " --k 101 --out " + path("pca_bad")), 1);
}

TEST_F(Cli, PcaRankOneExact) {
    const TimeGrid gt{0.2, 10};
    const FrequencyGrid gf{400.0, 2.0, 12};
    MeasurementMatrix y(gt, gf);
    for (Eigen::Index j = 0; j < 10; ++j)
        for (Eigen::Index i = 0; i < 12; ++i) y.values(j, i) = (1.0 + j) * (0.5 + 0.25 * i);
    write_matrix_csv(path("rank1.csv"), y);
    ASSERT_EQ(run("pca --input " + path("rank1.csv") + " --k 1 --out " + path("rank1")), 0);
    EXPECT_LE(read_json_file(path("rank1_report.json"))["reconstruction_error"].get<double>(), 1e-9);
}

TEST_F(Cli, LodThresholdAboveOneNotFound) {
    ASSERT_EQ(run("lod --config " SPECDETECT_FIXTURE " --threshold 1.01 --eta-min 100 --eta-max 160 --eta-steps 2 "
                  "--trials 1 --out " + path("lod_nf")),
              0);
    const Json c = read_json_file(path("lod_nf.json"));
    EXPECT_EQ(c["eta_star"], "not-found");
    EXPECT_EQ(c["rhos"].size(), 2u);
    EXPECT_TRUE(fs::exists(path("lod_nf_plot.csv")));
}

TEST_F(Cli, LodSingleNoiselessEta) {
    ASSERT_EQ(run("lod --config " SPECDETECT_FIXTURE " --sigma 0 --eta-min 160 --eta-max 160 --eta-steps 1 --trials 1 "
                  "--out " + path("lod_one")),
              0);
    const Json c = read_json_file(path("lod_one.json"));
    ASSERT_EQ(c["rhos"].size(), 1u);
    EXPECT_GT(c["rhos"][0].get<double>(), 0.99);
    EXPECT_EQ(c["eta_star"], 160.0);
    const std::string plot = slurp(path("lod_one_plot.csv"));
    EXPECT_EQ(plot.rfind("kind,analyte,x0,x1,y,style\n", 0), 0u);
    EXPECT_NE(plot.find("est_band"), std::string::npos);
}

TEST_F(Cli, LodInvalidGrid) {
    EXPECT_EQ(run("lod --config " SPECDETECT_FIXTURE " --eta-min 10 --eta-max 5 --out " + path("lod_bad")), 1);
    EXPECT_EQ(run("lod --config " SPECDETECT_FIXTURE " --eta-min 0 --out " + path("lod_bad")), 1);
}

TEST_F(Cli, PlotDataFromResult) {
    ASSERT_EQ(run("detect --input " + path("fixture.csv") + " --out " + path("for_plot.json")), 0);
    ASSERT_EQ(run("plot-data --sidecar " + path("fixture.json") + " --result " + path("for_plot.json") + " --out " +
                  path("plot.csv")),
              0);
    const std::string plot = slurp(path("plot.csv"));
    std::size_t bands = 0, pos = 0;
    while ((pos = plot.find("\nband,", pos)) != std::string::npos) {
        ++bands;
        ++pos;
    }
    EXPECT_EQ(bands, 4u);
}
