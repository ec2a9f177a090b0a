// Runs the edd executable as a subprocess and checks exit codes and outputs.

#include "edd/io.hpp"
#include "edd/matrix_io.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace edd;
namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("edd_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& leaf) const { return (dir_ / leaf).string(); }

  int run(const std::string& args) const {
    const std::string cmd = std::string(EDD_CLI_PATH) + " " + args + " > " + path("stdout.txt") + " 2> " +
                            path("stderr.txt");
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string slurp(const std::string& leaf) const {
    std::ifstream is(path(leaf), std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
  }

  std::size_t file_count() const {
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(dir_))
      if (e.path().filename() != "stdout.txt" && e.path().filename() != "stderr.txt") ++n;
    return n;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, CurveWritesCsvSidecarAndManifest) {
  ASSERT_EQ(run("curve --lambda 1 --sigma 4 --t-max 10000 --points 40 --out " + path("c")), 0) << slurp("stderr.txt");
  const LossCurve c = read_loss_curve_csv(path("c.csv"));
  EXPECT_EQ(c.times.front(), 0u);
  EXPECT_NEAR(c.losses.front(), 0.5, 1e-8);
  const json side = read_json(path("c.json"));
  EXPECT_EQ(side.at("lambda"), 1.0);
  EXPECT_TRUE(side.contains("classification"));
  const json m = read_json(path("c.manifest.json"));
  EXPECT_EQ(m.at("command"), "curve");
  EXPECT_EQ(m.at("tool_version"), kToolVersion);
}

TEST_F(Cli, CurveRerunIsByteIdentical) {
  ASSERT_EQ(run("curve --lambda 0.7 --sigma 1.5 --points 30 --out " + path("a")), 0);
  ASSERT_EQ(run("curve --lambda 0.7 --sigma 1.5 --points 30 --out " + path("b")), 0);
  EXPECT_EQ(slurp("a.csv"), slurp("b.csv"));
  EXPECT_EQ(slurp("a.json"), slurp("b.json"));
}

TEST_F(Cli, MissingLambdaIsUsageErrorAndWritesNothing) {
  EXPECT_EQ(run("curve --sigma 1 --out " + path("c")), 2);
  EXPECT_EQ(file_count(), 0u);
  EXPECT_FALSE(slurp("stderr.txt").empty());
}

TEST_F(Cli, UnknownSubcommandAndBadValues) {
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("curve --lambda -1 --out " + path("c")), 2);
  EXPECT_EQ(run("simulate --seeds 5..1 --out-dir " + path("s")), 2);
}

TEST_F(Cli, UnstableRateExitsThreeAndReportsTheBound) {
  EXPECT_EQ(run("curve --lambda 1 --gamma 0.6 --out " + path("c")), 3);
  EXPECT_NE(slurp("stderr.txt").find("gamma_max"), std::string::npos);
  EXPECT_FALSE(fs::exists(path("c.csv")));
}

TEST_F(Cli, PhaseDiagramWritesHeatmaps) {
  ASSERT_EQ(run("phase-diagram --grid-steps 4 --t-max 10000 --points 40 --out-dir " + path("pd")), 0)
      << slurp("stderr.txt");
  for (const char* f : {"phase_cells.json", "loss_final.csv", "loss_early_stop.csv", "es_gap.csv", "axes.json",
                        "manifest.json"})
    EXPECT_TRUE(fs::exists(path(std::string("pd/") + f))) << f;
  EXPECT_EQ(read_json(path("pd/phase_cells.json")).size(), 16u);
}

TEST_F(Cli, SimulateWithTheoryComparison) {
  ASSERT_EQ(run("simulate -N 100 --lambda 0.5 --sigma 1 --seeds 1..5 --t-max 1000 --points 20 --compare-theory "
                "--out-dir " + path("sim")),
            0)
      << slurp("stderr.txt");
  EXPECT_TRUE(fs::exists(path("sim/manifest.json")));
  const json m = read_json(path("sim/manifest.json"));
  EXPECT_EQ(m.at("seeds").size(), 5u);
  std::size_t csvs = 0;
  for (const auto& e : fs::directory_iterator(path("sim"))) csvs += e.path().extension() == ".csv";
  EXPECT_GE(csvs, 2u);
}

TEST_F(Cli, ConvergeHeadOnMalformedFeaturesExitsFour) {
  std::ofstream(path("f.csv")) << "# 2 3\n1,2,3\n4,oops,6\n";
  std::ofstream(path("l.txt")) << "0\n1\n0\n";
  EXPECT_EQ(run("converge-head --features " + path("f.csv") + " --labels " + path("l.txt") + " --out " + path("h")), 4);
  EXPECT_NE(slurp("stderr.txt").find(":3"), std::string::npos);
  EXPECT_FALSE(fs::exists(path("h.weights.csv")));
}

TEST_F(Cli, ConvergeHeadReportsAFixedPoint) {
  write_matrix(path("f.bin"), testutil::random_matrix(6, 20, 1));
  std::vector<Index> labels;
  for (Index j = 0; j < 20; ++j) labels.push_back(j % 3);
  write_labels(path("l.txt"), labels);
  ASSERT_EQ(run("converge-head --features " + path("f.bin") + " --labels " + path("l.txt") + " --format bin --out " +
                path("h")),
            0)
      << slurp("stderr.txt");
  const Matrix w = read_matrix(path("h.weights.bin"));
  EXPECT_EQ(w.rows(), 3);
  EXPECT_EQ(w.cols(), 6);
  EXPECT_LE(read_json(path("h.report.json")).at("fixed_point_residual").get<double>(), 1e-10);
}

TEST_F(Cli, PcaFilterRejectsTooManyComponents) {
  write_matrix(path("x.csv"), testutil::random_matrix(4, 10, 2));
  EXPECT_EQ(run("pca-filter --input " + path("x.csv") + " --k 5 --out " + path("p")), 2);
  ASSERT_EQ(run("pca-filter --input " + path("x.csv") + " --k 2 --out " + path("p")), 0);
  EXPECT_EQ(read_matrix(path("p.filtered.csv")).cols(), 10);
  EXPECT_EQ(read_matrix(path("p.components.csv")).cols(), 2);
}

TEST_F(Cli, MissingInputFileExitsFour) {
  EXPECT_EQ(run("pca-filter --input " + path("nope.csv") + " --k 1 --out " + path("p")), 4);
}

TEST_F(Cli, AblationListsEveryFamily) {
  ASSERT_EQ(run("ablation -N 60 --lambda 1 --sigma 3 --seeds 1..3 --t-max 1000 --points 20 --out-dir " + path("ab")),
            0)
      << slurp("stderr.txt");
  bool found = false;
  for (const auto& e : fs::directory_iterator(path("ab")))
    if (e.path().extension() == ".json" && e.path().filename() != "manifest.json") {
      const json j = read_json(e.path().string());
      if (j.contains("families")) {
        EXPECT_EQ(j.at("families").size(), 3u);
        found = true;
      }
    }
  EXPECT_TRUE(found);
}
