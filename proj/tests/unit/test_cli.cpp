#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "photonloop/cli.hpp"
#include "photonloop/io.hpp"

namespace fs = std::filesystem;
using namespace photonloop;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "photonloop");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("photonloop_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir_);
    write_config("loop.json", R"({"mode":"passive","R":0.5,"eta":0.9,"nu":0.001,"n_bins":20})");
    write_config("ref.json",
                 R"({"mode":"passive","R":0.9137,"eta":0.8615,"nu":1.2e-7,"n_bins":130,
                     "sigma_R":5e-5,"sigma_eta":3e-4,"sigma_nu":2e-9})");
  }
  void TearDown() override { fs::remove_all(dir_); }

  void write_config(const std::string& name, const std::string& text) { std::ofstream(dir_ / name) << text; }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, SimulateIsDeterministic) {
  const std::vector<std::string> base = {"simulate", "--config", path("loop.json"), "--source", "coherent:3",
                                         "--pulses", "20000", "--seed", "7"};
  auto a = base;
  a.insert(a.end(), {"-o", path("a.csv")});
  auto b = base;
  b.insert(b.end(), {"-o", path("b.csv"), "--threads", "3"});
  ASSERT_EQ(run(a).code, cli::kExitOk);
  ASSERT_EQ(run(b).code, cli::kExitOk);
  EXPECT_EQ(slurp(dir_ / "a.csv"), slurp(dir_ / "b.csv"));
  EXPECT_EQ(io::read_histogram_csv(path("a.csv")).n_bins(), 20u);
}

TEST_F(CliTest, SimulateWritesTimeTagsOnRequest) {
  const auto r = run({"simulate", "--config", path("loop.json"), "--source", "thermal:2", "--pulses", "100", "-o",
                      path("h.csv"), "--emit-tags", path("tags.csv")});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "tags.csv"));
  EXPECT_EQ(io::read_time_tags_csv(path("tags.csv")).records.front().channel, 0);
}

TEST_F(CliTest, InvalidReflectivityIsAValidationError) {
  write_config("bad.json", R"({"mode":"passive","R":1.2,"eta":0.9,"nu":0.0})");
  const auto r = run({"simulate", "--config", path("bad.json"), "--source", "coherent:3", "-o", path("h.csv")});
  EXPECT_EQ(r.code, cli::kExitValidation);
  EXPECT_NE(r.err.find("R"), std::string::npos) << r.err;
}

TEST_F(CliTest, BadArgumentsAreValidationErrors) {
  EXPECT_EQ(run({}).code, cli::kExitValidation);
  EXPECT_EQ(run({"simulate", "--config", path("loop.json")}).code, cli::kExitValidation);
  const auto r = run({"simulate", "--config", path("loop.json"), "--source", "laser:3", "-o", path("h.csv")});
  EXPECT_EQ(r.code, cli::kExitValidation);
  EXPECT_NE(r.err.find("source"), std::string::npos);
}

TEST_F(CliTest, EnvironmentSuppliesDefaults) {
  ::setenv("PHOTONLOOP_SEED", "11", 1);
  ASSERT_EQ(run({"simulate", "--config", path("loop.json"), "--source", "coherent:1", "--pulses", "5000", "-o",
                 path("env.csv")})
                .code,
            cli::kExitOk);
  ::unsetenv("PHOTONLOOP_SEED");
  ASSERT_EQ(run({"simulate", "--config", path("loop.json"), "--source", "coherent:1", "--pulses", "5000", "--seed",
                 "11", "-o", path("flag.csv")})
                .code,
            cli::kExitOk);
  EXPECT_EQ(slurp(dir_ / "env.csv"), slurp(dir_ / "flag.csv"));
}

TEST_F(CliTest, AnalyzeRoundTripsSimulation) {
  ASSERT_EQ(run({"simulate", "--config", path("loop.json"), "--source", "coherent:3", "--pulses", "20000", "--seed",
                 "3", "-o", path("sim.csv"), "--emit-tags", path("tags.csv")})
                .code,
            cli::kExitOk);
  const auto r = run({"analyze", "--tags", path("tags.csv"), "--config", path("loop.json"), "-o", path("report.json"),
                      "--hist-out", path("ana.csv"), "--bootstrap-iterations", "200"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_EQ(slurp(dir_ / "sim.csv"), slurp(dir_ / "ana.csv"));
  const json report = json::parse(slurp(dir_ / "report.json"));
  EXPECT_EQ(report.at("schema_version"), io::kSchemaVersion);
  EXPECT_EQ(report.at("config").at("R"), 0.5);
  for (const char* key : {"qpb", "qb", "sigma_qpb", "sigma_qb"}) {
    ASSERT_TRUE(report.at(key).is_number()) << key;
    EXPECT_TRUE(std::isfinite(report.at(key).get<double>())) << key;
  }
  EXPECT_EQ(report.at("histogram").at("p_hat").size(), 20u);
  EXPECT_EQ(report.at("pattern_stats").at("c").size(), 21u);
}

TEST_F(CliTest, AnalyzeRejectsUnsortedTags) {
  std::ofstream(dir_ / "unsorted.csv") << "channel,time_ps\n0,0\n1,156000\n1,100\n";
  const auto r = run({"analyze", "--tags", path("unsorted.csv"), "--config", path("loop.json")});
  EXPECT_EQ(r.code, cli::kExitValidation);
  EXPECT_NE(r.err.find("2"), std::string::npos) << r.err;
}

TEST_F(CliTest, FitAndCalibrateOnSimulatedPair) {
  const double n_in = 220'400;
  ASSERT_EQ(run({"simulate", "--config", path("ref.json"), "--source", "coherent:" + std::to_string(n_in), "--pulses",
                 "20000", "--seed", "1", "-o", path("bright.csv")})
                .code,
            cli::kExitOk);
  ASSERT_EQ(run({"simulate", "--config", path("ref.json"), "--source", "coherent:2.5", "--pulses", "100000", "--seed",
                 "2", "-o", path("att.csv")})
                .code,
            cli::kExitOk);

  const auto f = run({"fit", "--hist", path("att.csv"), "--config", path("ref.json")});
  ASSERT_EQ(f.code, cli::kExitOk) << f.err;
  const json fit = json::parse(f.out);
  EXPECT_NEAR(fit.at("fit").at("R_hat").get<double>(), 0.9137, 0.01);

  const auto c = run({"calibrate", "--bright", path("bright.csv"), "--attenuated", path("att.csv"), "--config",
                      path("ref.json"), "--power", "1.61e-9", "--power-sigma", "8e-11", "--rep-rate", "50000", "-o",
                      path("cal.json")});
  ASSERT_EQ(c.code, cli::kExitOk) << c.err;
  const json cal = json::parse(slurp(dir_ / "cal.json"));
  const auto& res = cal.at("calibration");
  EXPECT_NEAR(res.at("sde").get<double>(), 0.828, 0.05);
  EXPECT_NEAR(res.at("dynamic_range_db").get<double>(), 123.2, 0.1);
  EXPECT_GT(res.at("bins").size(), 100u);
  EXPECT_TRUE(cal.at("fit").contains("R_hat"));

  const auto no_power = run({"calibrate", "--bright", path("bright.csv"), "--attenuated", path("att.csv"), "--config",
                             path("ref.json")});
  ASSERT_EQ(no_power.code, cli::kExitOk) << no_power.err;
  const json np = json::parse(no_power.out.substr(0, no_power.out.rfind("}\n") + 1));
  EXPECT_TRUE(!np.at("calibration").contains("sde") || np.at("calibration").at("sde").is_null());
  EXPECT_TRUE(np.at("calibration").at("n_measured").is_number());
}

TEST_F(CliTest, SaturatedAttenuatedHistogramIsExplained) {
  ASSERT_EQ(run({"simulate", "--config", path("ref.json"), "--source", "coherent:200", "--pulses", "2000", "-o",
                 path("sat.csv")})
                .code,
            cli::kExitOk);
  const auto r = run({"calibrate", "--bright", path("sat.csv"), "--attenuated", path("sat.csv"), "--config",
                      path("ref.json")});
  EXPECT_EQ(r.code, cli::kExitRuntime);
  EXPECT_NE(r.err.find("SaturatedFirstBin"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("attenuat"), std::string::npos) << r.err;
}
