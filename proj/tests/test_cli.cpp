// Runs the built CLI binary as a subprocess.

#include "offsetbf/io.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using offsetbf::Json;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("offsetbf_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Outcome run(const std::string& args) const {
    const fs::path out = dir_ / "stdout.txt";
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = std::string(OFFSETBF_CLI) + " " + args + " > " + out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    Outcome r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  static std::string config(const std::string& name) { return std::string(OFFSETBF_CONFIG_DIR) + "/" + name; }
  fs::path path(const std::string& name) const { return dir_ / name; }

  fs::path dir_;
};

int count_lines(const std::string& s) {
  int n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_F(Cli, DesignWritesReportAndCsv) {
  const auto out = path("design.json");
  const Outcome r = run("design --config " + config("design_alg1.json") + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, out.string() + "\n");
  const Json j = offsetbf::io::parse_text(slurp(out), "report");
  EXPECT_EQ(j["algorithm"], "alg1");
  EXPECT_EQ(j["report"]["served"].size(), 3u);
  EXPECT_GT(j["report"]["total_power"].get<double>(), 0.0);
  const std::string csv = slurp(path("design.csv"));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "index,beta,r,mu_f,sigma_f,predicted_outage,dropped");
  EXPECT_EQ(count_lines(csv), 4);
}

TEST_F(Cli, RescheduleOnDuplicateUsers) {
  const auto out = path("maxr.json");
  const Outcome r = run("design --config " + config("maxr_reschedule.json") + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const Json j = offsetbf::io::parse_text(slurp(out), "report");
  EXPECT_FALSE(j["report"]["rescheduled"].empty());
  EXPECT_NE(r.err.find("rescheduled users:"), std::string::npos);
  EXPECT_NEAR(j["report"]["total_power"].get<double>(), 1.0, 1e-9);
}

TEST_F(Cli, MaxrSubcommandUsesTheBudget) {
  const auto out = path("m.json");
  const Outcome r = run("maxr --config " + config("design_alg1.json") + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const Json j = offsetbf::io::parse_text(slurp(out), "report");
  EXPECT_EQ(j["algorithm"], "maxr");
  EXPECT_NEAR(j["report"]["total_power"].get<double>(), 1.0, 1e-9);
}

TEST_F(Cli, MalformedJsonIsAConfigError) {
  const auto bad = path("bad.json");
  std::ofstream(bad) << "{\"algorithm\": \"alg1\",";
  const Outcome r = run("design --config " + bad.string() + " --out " + path("x.json").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("parse"), std::string::npos) << r.err;
  EXPECT_TRUE(r.out.empty());
  EXPECT_FALSE(fs::exists(path("x.json")));
}

TEST_F(Cli, BadArgumentsAndUnknownKeys) {
  EXPECT_EQ(run("design").code, 1);
  EXPECT_EQ(run("frobnicate --out x").code, 1);
  const auto cfg = path("c.json");
  std::ofstream(cfg) << R"({"algorithm": "alg1", "r": 2, "colour": "blue"})";
  const Outcome r = run("design --config " + cfg.string() + " --out " + path("x.json").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("colour"), std::string::npos);
}

TEST_F(Cli, InfeasibleDesignExitsWithTwo) {
  // Every user is dropped by the selection rule.
  const auto cfg = path("c.json");
  std::ofstream(cfg) << R"({"fading": {"reference_gain_db": -250}, "algorithm": "alg1", "r": 2})";
  const Outcome r = run("design --config " + cfg.string() + " --out " + path("x.json").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
}

TEST_F(Cli, SweepShapeAndDeterminism) {
  const auto a = path("a.csv");
  const auto b = path("b.csv");
  const Outcome ra = run("sweep --config " + config("sweep_r.json") + " --out " + a.string());
  ASSERT_EQ(ra.code, 0) << ra.err;
  const Outcome rb = run("sweep --config " + config("sweep_r.json") + " --out " + b.string());
  ASSERT_EQ(rb.code, 0) << rb.err;
  const std::string csv = slurp(a);
  EXPECT_EQ(csv, slurp(b));
  EXPECT_EQ(count_lines(csv), 1 + 3 * 3);
  for (const char* alg : {"alg1,", "const_offset,", "zf,"}) {
    int n = 0;
    std::stringstream ss(csv);
    std::string line;
    while (std::getline(ss, line)) n += line.rfind(alg, 0) == 0;
    EXPECT_EQ(n, 3) << alg;
  }
}

TEST_F(Cli, PerfectCsiSweepHasNoOutage) {
  const auto out = path("p.csv");
  const Outcome r = run("sweep --config " + config("sweep_perfect_csi.json") + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  std::stringstream ss(slurp(out));
  std::string line;
  std::getline(ss, line);
  int rows = 0;
  while (std::getline(ss, line)) {
    std::stringstream fields(line);
    std::string f[6];
    for (auto& x : f) std::getline(fields, x, ',');
    EXPECT_EQ(f[3], "0") << line;
    ++rows;
  }
  EXPECT_EQ(rows, 6);
}

TEST_F(Cli, MonteCarloOverridesFromFlags) {
  const auto out = path("mc.json");
  const Outcome r = run("montecarlo --config " + config("montecarlo_const_offset.json") +
                    " --trials 500 --seed 4 --algorithms zf --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const Json j = offsetbf::io::parse_text(slurp(out), "report");
  EXPECT_EQ(j["montecarlo"]["trials"], 500);
  EXPECT_EQ(j["algorithm"], "zf");
  EXPECT_EQ(j["config"]["seed"], 4);
  EXPECT_EQ(j["montecarlo"]["outage"].size(), j["report"]["served"].size());
}
