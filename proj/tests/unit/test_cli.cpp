#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "flilab/cli.hpp"
#include "flilab/dataset_io.hpp"
#include "flilab/report.hpp"

using namespace flilab;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("flilab_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    cli::RunConfig c;
    c.simulate.scene = SceneKind::phantom;
    c.simulate.samples = 1;
    c.simulate.image_side = 13;
    c.simulate.axis = TimeAxis{64, 80, -960};
    c.simulate.phantom.peak_counts = {20000, 20000};
    write_config(c);
  }
  void TearDown() override { fs::remove_all(dir); }

  void write_config(const cli::RunConfig& c) { std::ofstream(dir / "run.json") << cli::to_json(c).dump(2); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
  std::string config() const { return path("run.json"); }

  fs::path dir;
};

// Writes a fit-format CSV whose tau_m column is the ground truth.
void write_truth_csv(const FliDataset& ds, const std::string& p, int bump_region_at = -1) {
  std::ofstream os(p);
  os << kFitCsvHeader << '\n';
  int row = 0;
  for (std::size_t px = 0; px < ds.pixels(); ++px) {
    if (!ds.foreground(px)) continue;
    const int region = row++ == bump_region_at ? ds.region(px) + 1 : ds.region(px);
    os << px % ds.width << ',' << px / ds.width << ',' << region << ",,,,," << mean_lifetime(ds.truth_at(px))
       << ",,1\n";
  }
}

}  // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli_run({}).code, cli::kConfig);
  EXPECT_EQ(cli_run({"simulate"}).code, cli::kConfig);
  EXPECT_EQ(cli_run({"simulate", "--out", path("a.fld"), "--bogus"}).code, cli::kConfig);
  EXPECT_EQ(cli_run({"fit", "--data", "x", "--out", "y", "--mode", "mle"}).code, cli::kConfig);
  EXPECT_EQ(cli_run({"--help"}).code, cli::kOk);
}

TEST_F(Cli, InvertedRangeExitsTwoNamingTheField) {
  std::ofstream(path("bad.json")) << R"({"simulate": {"tau1_ns": {"min": 0.8, "max": 0.2}}})";
  const CliResult r = cli_run({"--config", path("bad.json"), "simulate", "--out", path("a.fld")});
  EXPECT_EQ(r.code, cli::kConfig);
  EXPECT_NE(r.err.find("simulate.tau1_ns: min > max"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(path("a.fld")));
}

TEST_F(Cli, MissingFilesExitThree) {
  EXPECT_EQ(cli_run({"--config", path("nope.json"), "simulate", "--out", path("a.fld")}).code, cli::kIo);
  EXPECT_EQ(cli_run({"fit", "--data", path("nope.fld"), "--out", path("f.csv")}).code, cli::kIo);
  EXPECT_EQ(cli_run({"--config", config(), "simulate", "--out", path("no/such/dir/a.fld")}).code, cli::kIo);
  std::ofstream(path("junk.fld")) << "not a dataset";
  EXPECT_EQ(cli_run({"fit", "--data", path("junk.fld"), "--out", path("f.csv")}).code, cli::kIo);
}

TEST_F(Cli, SimulateIsDeterministicAndRecordsProvenance) {
  ASSERT_EQ(cli_run({"--config", config(), "--seed", "5", "simulate", "--out", path("a.fld")}).code, 0);
  const CliResult r = cli_run({"--config", config(), "--seed", "5", "simulate", "--out", path("b.fld")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(path("a.fld")), slurp(path("b.fld")));
  EXPECT_NE(r.out.find("seed"), std::string::npos);
  const FliDataset ds = load_dataset(path("a.fld"));
  EXPECT_EQ(ds.seed, 5u);
  EXPECT_EQ(ds.config.scene, SceneKind::phantom);
  std::set<int> regions;
  for (std::size_t p = 0; p < ds.pixels(); ++p) regions.insert(ds.region(p));
  EXPECT_EQ(regions, (std::set<int>{-1, 0, 1, 2, 3, 4}));
  ASSERT_EQ(cli_run({"--config", config(), "--seed", "6", "simulate", "--out", path("c.fld")}).code, 0);
  EXPECT_NE(slurp(path("a.fld")), slurp(path("c.fld")));
}

TEST_F(Cli, FitModesAndCmmColumns) {
  ASSERT_EQ(cli_run({"--config", config(), "simulate", "--out", path("d.fld")}).code, 0);
  const CliResult r = cli_run({"fit", "--data", path("d.fld"), "--mode", "cmm", "--out", path("cmm.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream is(path("cmm.csv"));
  const auto rows = read_fit_csv(is);
  ASSERT_FALSE(rows.empty());
  for (const auto& row : rows) {
    EXPECT_TRUE(std::isnan(row.tau1));
    EXPECT_TRUE(std::isnan(row.a_r));
    EXPECT_TRUE(std::isfinite(row.tau_m));
  }
  ASSERT_EQ(cli_run({"--threads", "2", "fit", "--data", path("d.fld"), "--offset-correction", "off", "--out",
                     path("off.csv")})
                .code,
            0);
  ASSERT_EQ(cli_run({"--threads", "1", "fit", "--data", path("d.fld"), "--offset-correction", "off", "--out",
                     path("off1.csv")})
                .code,
            0);
  EXPECT_EQ(slurp(path("off.csv")), slurp(path("off1.csv")));
  EXPECT_TRUE(fs::exists(path("off.csv.json")));
}

TEST_F(Cli, EvalTruthAgainstTruth) {
  ASSERT_EQ(cli_run({"--config", config(), "simulate", "--out", path("d.fld")}).code, 0);
  const FliDataset ds = load_dataset(path("d.fld"));
  write_truth_csv(ds, path("truth.csv"));
  const CliResult r = cli_run({"eval", "--truth", path("d.fld"), "--fits", "oracle=" + path("truth.csv"), "--fits",
                         "copy=" + path("truth.csv"), "--report", path("report.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream is(path("report.csv"));
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, kReportCsvHeader);
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    ++rows;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    ASSERT_GE(cells.size(), 9u);
    EXPECT_LT(std::fabs(std::stod(cells[7])), 1e-6) << line;  // mae
    EXPECT_EQ(cells[3], "0");                                 // missing
  }
  EXPECT_EQ(rows, 2u * 5u);
  for (int k = 0; k < 5; ++k) EXPECT_TRUE(fs::exists(path("report_region" + std::to_string(k) + ".svg"))) << k;
}

TEST_F(Cli, EvalRegionMismatchExitsTwo) {
  ASSERT_EQ(cli_run({"--config", config(), "simulate", "--out", path("d.fld")}).code, 0);
  const FliDataset ds = load_dataset(path("d.fld"));
  write_truth_csv(ds, path("bad.csv"), 3);
  const CliResult r =
      cli_run({"eval", "--truth", path("d.fld"), "--fits", "x=" + path("bad.csv"), "--report", path("report.csv")});
  EXPECT_EQ(r.code, cli::kConfig);
  EXPECT_NE(r.err.find("region"), std::string::npos);
}

TEST_F(Cli, TrainWithoutTruthExitsTwo) {
  ASSERT_EQ(cli_run({"--config", config(), "simulate", "--out", path("d.fld")}).code, 0);
  FliDataset ds = load_dataset(path("d.fld"));
  ds.tau1.clear();
  ds.tau2.clear();
  ds.a_r.clear();
  save_dataset(ds, path("bare.fld"));
  EXPECT_EQ(cli_run({"train", "--data", path("bare.fld"), "--model-out", path("w.flw")}).code, cli::kConfig);
}

TEST_F(Cli, GradcheckTable) {
  const CliResult r = cli_run({"gradcheck", "--seeds", "2", "--filter", "matmul"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("name,seeds,coordinates,max_rel_error,tolerance,seconds,result\n", 0), 0u);
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
  EXPECT_EQ(cli_run({"gradcheck", "--filter", "no-such-op"}).code, cli::kConfig);
}
