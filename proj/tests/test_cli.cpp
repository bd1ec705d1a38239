#include "csp/io.hpp"
#include "csp/pipeline.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace csp;
namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("csp_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  static int run(const std::string& args) {
    const std::string cmd = std::string(CSP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string slurp(const std::string& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, HelpAndValidationExitCodes) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("reduce --n 5"), 1);
  ASSERT_EQ(run("generate --case case1 --N 300 --seed 2 --out " + path("d.csv")), 0);
  EXPECT_EQ(run("reduce --input " + path("d.csv") + " --method nearest --n 10 --out " + path("r.csv")), 1);
  EXPECT_EQ(run("reduce --input " + path("d.csv") + " --response nope --n 10 --out " + path("r.csv")), 1);
  EXPECT_EQ(run("reduce --input " + path("d.csv") + " --n 0 --out " + path("r.csv")), 1);
  EXPECT_EQ(run("fit --input " + path("d.csv") + " --domain 1,0 --out " + path("m.json")), 1);
}

TEST_F(Cli, NumericalFailureExitsWithTwo) {
  std::ofstream(path("huge.csv")) << "x,y\n1e308,0\n-1e308,1\n5e307,0.5\n-5e307,0.2\n0,0.1\n";
  EXPECT_EQ(run("fit --input " + path("huge.csv") + " --domain 0,1 --out " + path("m.json")), 2);
}

TEST_F(Cli, ReduceIsDeterministicUnderSeed) {
  ASSERT_EQ(run("generate --case case2 --N 2000 --seed 3 --out " + path("d.csv")), 0);
  for (const char* m : {"uniform", "csp"}) {
    const std::string base = "reduce --input " + path("d.csv") + " --method " + m + " --n 50 --seed 7 --out ";
    ASSERT_EQ(run(base + path("a.csv")), 0);
    ASSERT_EQ(run(base + path("b.csv") + " --threads 3"), 0);
    EXPECT_EQ(slurp(path("a.csv")), slurp(path("b.csv"))) << m;
  }
}

TEST_F(Cli, McspProvenanceSplitsBudget) {
  ASSERT_EQ(run("generate --case case3_6d --N 3000 --seed 4 --out " + path("d.csv")), 0);
  ASSERT_EQ(run("reduce --input " + path("d.csv") + " --covariates x1,x2,x3 --method mcsp --n 500 --seed 1 --out " +
                path("r.csv") + " --provenance " + path("p.json")),
            0);
  const Json p = read_json(path("p.json"));
  EXPECT_EQ(p["reduction"]["n_q"], Json::parse("[167,167,166]"));
  EXPECT_EQ(read_csv_header(path("r.csv")).front(), "x1");
}

TEST_F(Cli, ChainMatchesSimulate) {
  ASSERT_EQ(run("simulate --case case1 --N 5000 --n-grid 200 --reps 1 --seed 11 --quiet --out " + path("sim.csv")), 0);
  const ReplicateSeeds s = replicate_seeds(11, 0, 200);
  ASSERT_EQ(run("generate --case case1 --N 5000 --seed 11 --rep 0 --train " + path("train.csv") + " --test " +
                path("test.csv") + " --meta " + path("meta.json")),
            0);
  ASSERT_EQ(run("reduce --input " + path("train.csv") + " --n 200 --seed " + std::to_string(s.reduce) + " --out " +
                path("red.csv")),
            0);
  ASSERT_EQ(run("fit --input " + path("red.csv") + " --domain-from " + path("meta.json") + " --x-ranges-from " +
                path("meta.json") + " --seed " + std::to_string(s.fit) + " --out " + path("model.json")),
            0);
  ASSERT_EQ(run("eval --model " + path("model.json") + " --input " + path("test.csv") + " --out " + path("eval.json")),
            0);
  const double chained = read_json(path("eval.json"))["mean_crps"].get<double>();

  std::ifstream in(path("sim.csv"));
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  std::vector<std::string> names, values;
  for (auto [src, dst] : {std::pair{&header, &names}, std::pair{&row, &values}}) {
    std::stringstream ss(*src);
    for (std::string f; std::getline(ss, f, ',');) dst->push_back(f);
  }
  const auto col = std::find(names.begin(), names.end(), "crps") - names.begin();
  EXPECT_EQ(std::stod(values[static_cast<std::size_t>(col)]), chained);
}

TEST_F(Cli, GridWritesDensityAndCdf) {
  ASSERT_EQ(run("generate --case case2 --N 1500 --seed 5 --out " + path("d.csv")), 0);
  ASSERT_EQ(run("fit --input " + path("d.csv") + " --lambda 1e-3 --out " + path("m.json")), 0);
  ASSERT_EQ(run("grid --model " + path("m.json") + " --x 3,4,6,7 --points 11 --out " + path("g.csv")), 0);
  std::ifstream in(path("g.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "x_index,x1,x2,y,density,cdf");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 22);
}
