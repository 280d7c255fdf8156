#include <devrate/cli.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace devrate;
namespace fs = std::filesystem;

namespace {

struct Run
{
  int code;
  std::string err;
};

Run
invoke(std::vector<std::string> args)
{
  args.insert(args.begin(), "devrate");
  std::vector<const char*> argv;
  for (const auto& a : args)
    argv.push_back(a.c_str());
  std::ostringstream err;
  int code = cli::run(static_cast<int>(argv.size()), argv.data(), err);
  return { code, err.str() };
}

std::string
config(const std::string& name)
{
  return std::string(DEVRATE_CONFIG_DIR) + "/" + name;
}

std::string
slurp(const fs::path& p)
{
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test
{
protected:
  void SetUp() override
  {
    dir_ = fs::temp_directory_path() /
           ("devrate_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& text)
  {
    auto p = dir_ / name;
    std::ofstream(p) << text;
    return p;
  }

  fs::path dir_;
};

//! Rows of a CSV artifact without '#' metadata lines.
std::vector<std::vector<std::string>>
csv_rows(const std::string& text)
{
  std::vector<std::vector<std::string>> rows;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty() || line[0] == '#')
      continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
      cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

} // namespace

TEST_F(CliTest, RateCurveVanishesAtRegression)
{
  auto out = dir_ / "rate";
  auto r = invoke({ "rate", "-c", config("rate_gaussian_uniform.json"), "-o", out.string() });
  ASSERT_EQ(r.code, 0) << r.err;
  auto rows = csv_rows(slurp(out / "rate_curve.csv"));
  ASSERT_EQ(rows.size(), 22u);
  EXPECT_EQ(rows[0][0], "s1");
  // the slice has 21 points from -1 to 1, so tau = 0 is row 11
  EXPECT_NEAR(std::stod(rows[11][1]), 0.0, 1e-15);
  EXPECT_LE(std::stod(rows[11][2]), 1e-8);
  EXPECT_GT(std::stod(rows[1][2]), std::stod(rows[6][2]));
  EXPECT_NE(slurp(out / "rate_curve.csv").find("# "), std::string::npos);
}

TEST_F(CliTest, VerifyKernelPasses)
{
  auto r = invoke({ "verify-kernel", "-c", config("verify_fourth_order.json"), "-o", dir_.string() });
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(slurp(dir_ / "kernel_report.json"));
  EXPECT_TRUE(j["result"]["pass"].get<bool>());
  EXPECT_EQ(j["command"], "verify-kernel");
}

TEST_F(CliTest, VerifyKernelFailureStillReports)
{
  auto cfg = write("k.json", R"({"kernel": {"name": "epanechnikov", "d": 1}, "order": 4})");
  auto r = invoke({ "verify-kernel", "-c", cfg.string(), "-o", dir_.string() });
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(fs::exists(dir_ / "kernel_report.json"));
}

TEST_F(CliTest, ConfigErrorsExitOneWithoutArtifacts)
{
  auto out = dir_ / "out";
  auto missing = invoke({ "rate", "-c", (dir_ / "nope.json").string(), "-o", out.string() });
  EXPECT_EQ(missing.code, 1);
  auto bad = write("bad.json", "{ not json");
  EXPECT_EQ(invoke({ "rate", "-c", bad.string(), "-o", out.string() }).code, 1);
  auto unknown = write("u.json", R"({"kernel": {"name": "uniform"}, "order": 2, "colour": 1})");
  EXPECT_EQ(invoke({ "verify-kernel", "-c", unknown.string(), "-o", out.string() }).code, 1);
  EXPECT_EQ(invoke({ "rate" }).code, 1);
  EXPECT_EQ(invoke({ "frobnicate", "-c", bad.string() }).code, 1);
  EXPECT_FALSE(fs::exists(out) && !fs::is_empty(out));
}

TEST_F(CliTest, NumericFailureExitsTwo)
{
  auto cfg = write("lam.json", R"({
    "model": {"family": "gaussian_noise", "regression": [{"kind": "sin"}]},
    "kernel": {"name": "gaussian", "d": 1}, "x": [0.3], "variant": "nw",
    "quad": {"nodes": 2, "max_refine": 0, "tol": 1e-15},
    "schedule": {"c": 1.0, "a": 0.2, "d": 1},
    "ns": [1000], "points": [[1.0, 0.5]]})");
  auto out = dir_ / "out";
  auto r = invoke({ "lambda", "-c", cfg.string(), "-o", out.string() });
  EXPECT_EQ(r.code, 2) << r.err;
  auto line = nlohmann::json::parse(r.err.substr(0, r.err.find('\n')));
  EXPECT_EQ(line["kind"], "numeric");
  EXPECT_TRUE(line.contains("residual"));
  EXPECT_FALSE(fs::exists(out / "lambda.csv"));
}

TEST_F(CliTest, SimulationIsByteReproducibleAndSeedable)
{
  auto cfg = write("sim.json", R"({
    "model": {"family": "gaussian_noise", "regression": [{"kind": "sin"}]},
    "kernel": {"name": "uniform", "d": 1},
    "schedule": {"c": 1.0, "a": 0.2, "d": 1},
    "variants": ["nw"], "x": [0.0], "ns": [50, 100], "reps": 500, "seed": 3,
    "rate_bound": false, "target": {"kind": "ldp_curve", "delta": 0.4}})");
  auto a = dir_ / "a", b = dir_ / "b", c = dir_ / "c";
  ASSERT_EQ(invoke({ "simulate", "-c", cfg.string(), "-o", a.string() }).code, 0);
  ASSERT_EQ(invoke({ "simulate", "-c", cfg.string(), "-o", b.string() }).code, 0);
  ASSERT_EQ(invoke({ "simulate", "-c", cfg.string(), "-o", c.string(), "--seed", "4" }).code, 0);
  for (const char* f : { "report.json", "deviation_curve.csv" }) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
    EXPECT_NE(slurp(a / f), slurp(c / f)) << f;
  }
  auto rep = nlohmann::json::parse(slurp(c / "report.json"));
  EXPECT_EQ(rep["seed"], 4);
  EXPECT_TRUE(rep.contains("config"));
}

TEST_F(CliTest, VerboseLogsAreJsonLines)
{
  auto r = invoke({ "bias", "-c", config("bias_fourth_order.json"), "-o", dir_.string(), "-v" });
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream is(r.err);
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("level"));
    ++n;
  }
  EXPECT_GE(n, 1);
  EXPECT_TRUE(fs::exists(dir_ / "bias.csv"));
}

TEST_F(CliTest, ConditionCAndMdpCommands)
{
  ASSERT_EQ(invoke({ "condition-c", "-c", config("condition_c_example3.json"), "-o", dir_.string() }).code, 0);
  auto j = nlohmann::json::parse(slurp(dir_ / "condition_c.json"));
  EXPECT_EQ(j["result"]["status"], "pass");
  ASSERT_EQ(invoke({ "mdp", "-c", config("mdp_gaussian_uniform.json"), "-o", dir_.string() }).code, 0);
  auto rows = csv_rows(slurp(dir_ / "mdp_rate.csv"));
  ASSERT_GT(rows.size(), 2u);
  for (size_t i = 1; i < rows.size(); ++i)
    EXPECT_GE(std::stod(rows[i][2]), 0.0);
}
