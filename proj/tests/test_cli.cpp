#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "json.hpp"
#include "matchq/dlp.hpp"
#include "matchq/instance.hpp"

namespace fs = std::filesystem;
using namespace matchq;

namespace {

fs::path scratch() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("matchq_cli_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(MATCHQ_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path write(const std::string& name, const std::string& text) {
  const fs::path p = scratch() / name;
  std::ofstream(p) << text;
  return p;
}

const char* kHard =
    R"({"suppliers":[{"rate":4}],"customers":[{"rate":2.4},{"rate":2.4},{"rate":7.2}],"costs":[[0,0,1]]})";
const char* kTwo =
    R"({"suppliers":[{"rate":1},{"rate":2}],"customers":[{"rate":1},{"rate":2}],"costs":[[0.1,1],[1,0.1]]})";
const char* kLocated =
    R"({"suppliers":[{"rate":1},{"rate":1}],"customers":[{"rate":1},{"rate":1}],
        "costs":[[0.0008,0.5008],[0.4992,0.0008]],
        "locations":{"suppliers":[[0.2],[0.7]],"customers":[[0.2008],[0.7008]]}})";

}  // namespace

TEST(Cli, SolveSingleQueueMatchesLibrary) {
  const auto inst = write("hard.json", kHard);
  const auto out = scratch() / "solve_hard";
  ASSERT_EQ(run("solve --instance " + inst.string() + " --tau 3 --cost-cap 1e9 --eps 0.1 --out " + out.string()), 0);
  const auto report = nlohmann::json::parse(slurp(out / "report.json"));
  EXPECT_EQ(report["pipeline"], "dlp");
  EXPECT_EQ(report["config"]["eps"], 0.1);
  const auto direct = solve_dlp(parse_instance(kHard), Target{1e9, 3.0}, Accuracy{0.1});
  EXPECT_NEAR(report["solution"]["objective"].get<double>(), direct.solution.objective, 1e-12);
  EXPECT_EQ(nlohmann::json::parse(slurp(out / "policy.json"))["type"], "dlp_adaptive");
}

TEST(Cli, ExitCodes) {
  const auto inst = write("hard.json", kHard);
  EXPECT_EQ(run("solve --instance " + (scratch() / "missing.json").string() + " --tau 3"), 3);
  EXPECT_EQ(run("solve --instance " + inst.string() + " --tau 20 --out " + (scratch() / "x").string()), 2);
  EXPECT_EQ(run("solve --instance " + inst.string() + " --tau 3 --cost-cap 1e-6 --mu 2"), 3);
  EXPECT_EQ(run("solve --instance " + write("bad.json", "{\"suppliers\": [").string() + " --tau 1"), 3);
  EXPECT_EQ(run("nothing"), 3);
}

TEST(Cli, CostCapViolationIsInfeasible) {
  const auto inst = write("two.json", kTwo);
  const auto out = scratch() / "capped";
  EXPECT_EQ(run("solve --instance " + inst.string() + " --tau 2 --cost-cap 1e-4 --eps 0.5 --out " + out.string()), 2);
  const auto report = nlohmann::json::parse(slurp(out / "report.json"));
  EXPECT_EQ(report["pipeline"], "network");
  EXPECT_FALSE(report["within_cost_cap"].get<bool>());
}

TEST(Cli, SimulateIsDeterministic) {
  const auto inst = write("two.json", kTwo);
  const auto out = scratch() / "solve_two";
  ASSERT_EQ(run("solve --instance " + inst.string() + " --tau 2 --eps 0.5 --out " + out.string()), 0);
  const std::string base = "simulate --instance " + inst.string() + " --policy " + (out / "policy.json").string() +
                           " --horizon 2000 --seed 4 --format csv --out ";
  ASSERT_EQ(run(base + (scratch() / "a.csv").string()), 0);
  ASSERT_EQ(run(base + (scratch() / "b.csv").string() + " --jobs 3"), 0);
  const auto a = slurp(scratch() / "a.csv");
  EXPECT_EQ(a, slurp(scratch() / "b.csv"));
  EXPECT_EQ(a.rfind("metric,row,col,value,stderr\nthroughput_rate", 0), 0u);
  ASSERT_EQ(run("simulate --instance " + inst.string() + " --policy " + (out / "policy.json").string() +
                " --horizon 2000 --out " + (scratch() / "m.json").string()),
            0);
  const auto doc = nlohmann::json::parse(slurp(scratch() / "m.json"));
  EXPECT_GT(doc["metrics"]["throughput_rate"]["value"].get<double>(), 0.0);
  EXPECT_EQ(doc["config"]["seed"], 1);
}

TEST(Cli, SimulateRejectsZeroReplications) {
  const auto inst = write("hard.json", kHard);
  const auto out = scratch() / "solve_hard0";
  ASSERT_EQ(run("solve --instance " + inst.string() + " --tau 2 --out " + out.string()), 0);
  EXPECT_EQ(run("simulate --instance " + inst.string() + " --policy " + (out / "policy.json").string() +
                " --replications 0"),
            3);
}

TEST(Cli, EuclideanSolveAndReplay) {
  const auto inst = write("loc.json", kLocated);
  const auto out = scratch() / "solve_loc";
  ASSERT_EQ(run("solve --instance " + inst.string() + " --tau 0.8 --cost-cap 0.0008 --eps 0.25 --seed 3 --out " +
                out.string()),
            0);
  const auto report = nlohmann::json::parse(slurp(out / "report.json"));
  EXPECT_EQ(report["pipeline"], "euclid");
  EXPECT_EQ(report["config"]["seed"], 3);
  ASSERT_EQ(run("simulate --instance " + inst.string() + " --policy " + (out / "policy.json").string() +
                " --horizon 3000 --out " + (scratch() / "loc.json.out").string()),
            0);
  const auto doc = nlohmann::json::parse(slurp(scratch() / "loc.json.out"));
  EXPECT_EQ(doc["metrics"]["counters"]["cross_cell_matches"], 0.0);
}

TEST(Cli, FigureSinglePoint) {
  const auto out = scratch() / "fig";
  ASSERT_EQ(run("figure1 --panel b --mu-grid 1 --out " + out.string()), 0);
  const auto csv = slurp(out / "figure1b.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
  EXPECT_EQ(csv.rfind("mu,feasible,static_cost,adaptive_cost,gap\n1,1,", 0), 0u);
}

TEST(Cli, FigurePanelAIsReproducible) {
  const auto a = scratch() / "fa1", b = scratch() / "fa2";
  ASSERT_EQ(run("figure1 --panel a --instances 5 --seed 11 --out " + a.string()), 0);
  ASSERT_EQ(run("figure1 --panel a --instances 5 --seed 11 --jobs 2 --out " + b.string()), 0);
  EXPECT_EQ(slurp(a / "figure1a.csv"), slurp(b / "figure1a.csv"));
  EXPECT_FALSE(slurp(a / "figure1a.csv").empty());
}
