#include <gtest/gtest.h>

#include <cstdio>
#include <sys/wait.h>

#include "cdi/cli.hpp"

using namespace cdi;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "cdi");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = std::filesystem::temp_directory_path() /
          ("cdi-cli-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    state = (dir / "composition.json").string();
  }
  void TearDown() override { std::filesystem::remove_all(dir); }

  std::filesystem::path dir;
  std::string state;
};

int lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_F(CliTest, ApplyThenValidate) {
  auto a = run({"--config", state, "compose", "apply", "--label", "falconGPUs"});
  ASSERT_EQ(a.code, 0) << a.err;
  auto v = run({"--config", state, "compose", "validate"});
  EXPECT_EQ(v.code, 0) << v.out;
  EXPECT_EQ(v.out, "valid\n");
  auto exported = run({"--config", state, "compose", "export"});
  EXPECT_EQ(exported.out, read_text_file(state));
}

TEST_F(CliTest, ModeChangeAndViolations) {
  ASSERT_EQ(run({"--config", state, "compose", "attach", "--host", "host0", "--device", "falcon0/d1/gpu3"}).code, 0);
  auto bad = run({"--config", state, "compose", "mode", "--drawer", "falcon0/d1", "--mode", "STANDARD_2HOST"});
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("MODE_CONFLICT"), std::string::npos) << bad.err;
  EXPECT_EQ(run({"--config", state, "compose", "mode", "--drawer", "falcon0/d1", "--mode", "STANDARD_1HOST"}).code, 0);

  // A document that breaks the drawer rules imports nowhere.
  auto doc = load_json_file(state);
  doc["drawers"]["falcon0/d1"] = "STANDARD_2HOST";
  write_text_file(dir / "bad.json", doc.dump());
  auto imp = run({"--config", state, "compose", "import", (dir / "bad.json").string()});
  EXPECT_EQ(imp.code, 2);
  write_text_file(state, doc.dump());
  auto v = run({"--config", state, "compose", "validate"});
  EXPECT_EQ(v.code, 2);
  EXPECT_NE(v.out.find("MODE_CONFLICT"), std::string::npos) << v.out;

  EXPECT_EQ(run({"--config", state, "compose", "detach", "--device", "falcon0/d1/gpu3"}).code, 0);
  auto again = run({"--config", state, "compose", "detach", "--device", "falcon0/d1/gpu3"});
  EXPECT_EQ(again.code, 2);
  EXPECT_NE(again.err.find("NOT_OWNED"), std::string::npos);
}

TEST_F(CliTest, SweepIsDeterministic) {
  auto a = run({"sweep"});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(lines(a.out), 16);
  EXPECT_EQ(a.out.rfind("workload,config,strategy,", 0), 0u);
  EXPECT_EQ(run({"sweep"}).out, a.out);
  auto file = (dir / "sweep.csv").string();
  ASSERT_EQ(run({"--out", file, "sweep"}).code, 0);
  EXPECT_EQ(read_text_file(file), a.out);
  auto one = run({"sweep", "--workloads", "BERT-L", "--configs", "localGPUs,localNVMe,falconNVMe", "--pipeline",
                  "sequential", "--precision", "fp32"});
  EXPECT_EQ(lines(one.out), 4);
  EXPECT_NE(one.out.find("DDP+FP32"), std::string::npos);
}

TEST_F(CliTest, SimulateMatchesLibrary) {
  auto r = run({"simulate", "--workload", "ResNet-50", "--label", "hybridGPUs", "--strategy", "dp"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = json::parse(r.out);
  auto t = std::make_shared<const Topology>(build_reference_topology());
  ReferenceConfigs cfg(t);
  auto ws = calibrated_workloads(cfg);
  auto e = training_time(find_workload(ws, "ResNet-50"), cfg.at("hybridGPUs"), {Parallelism::dp, Precision::fp16_mixed});
  EXPECT_EQ(j.at("estimate"), to_json(e));
  EXPECT_EQ(run({"simulate", "--workload", "GPT", "--label", "localGPUs"}).code, 2);
}

TEST_F(CliTest, AnchorsAndCalibration) {
  auto csv = (dir / "anchors.csv").string();
  auto v = run({"--out", csv, "validate-anchors"});
  EXPECT_EQ(v.code, 0) << v.out;
  EXPECT_NE(v.out.find("all anchors pass"), std::string::npos);
  EXPECT_EQ(lines(read_text_file(csv)), 20);

  auto syn = run({"calibrate", "--synthesize"});
  ASSERT_EQ(syn.code, 0) << syn.err;
  auto regenerated = baselines_from_json(json::parse(syn.out));
  auto shipped = load_baselines();
  ASSERT_EQ(regenerated.size(), shipped.size());
  for (std::size_t i = 0; i < shipped.size(); ++i)
    EXPECT_NEAR(regenerated[i].step_s, shipped[i].step_s, 1e-9 * shipped[i].step_s);
  auto cal = run({"calibrate"});
  EXPECT_EQ(json::parse(cal.out).at("calibration").size(), 5u);

  // A deliberately wrong anchor turns the run red with its own exit code.
  auto doc = load_json_file(data_dir() / "anchors.json");
  doc["anchors"][0]["expected"] = 5.0;
  write_text_file(dir / "wrong.json", doc.dump());
  auto bad = run({"validate-anchors", "--anchors", (dir / "wrong.json").string()});
  EXPECT_EQ(bad.code, 3);
  EXPECT_NE(bad.out.find("FAIL A1-bertl-falcon-slowdown"), std::string::npos);
}

TEST_F(CliTest, TopologyCommands) {
  auto b = run({"topology", "build"});
  ASSERT_EQ(b.code, 0);
  EXPECT_EQ(build_topology(json::parse(b.out)), build_reference_topology());
  auto s = run({"topology", "show"});
  EXPECT_NE(s.out.find("link F-F  PCIE-GEN4  24.47 GB/s  2.08 us"), std::string::npos) << s.out;
  write_text_file(dir / "broken.json", R"({"hosts": 1})");
  EXPECT_EQ(run({"--topology", (dir / "broken.json").string(), "topology", "build"}).code, 2);
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"compose", "apply"}).code, 1);
  auto h = run({"--help"});
  EXPECT_EQ(h.code, 0);
  EXPECT_NE(h.out.find("simulate"), std::string::npos);
}

TEST_F(CliTest, InstalledBinaryBehavesTheSame) {
  auto cmd = std::string(CDI_CLI_PATH) + " sweep --workloads MobileNetV2 --configs localGPUs 2>&1";
  std::string out;
  FILE* p = popen(cmd.c_str(), "r");
  ASSERT_NE(p, nullptr);
  char buf[4096];
  while (auto n = fread(buf, 1, sizeof buf, p)) out.append(buf, n);
  int status = pclose(p);
  EXPECT_EQ(WEXITSTATUS(status), 0) << out;
  EXPECT_EQ(out, run({"sweep", "--workloads", "MobileNetV2", "--configs", "localGPUs"}).out);
  EXPECT_EQ(WEXITSTATUS(std::system((std::string(CDI_CLI_PATH) + " bogus >/dev/null 2>&1").c_str())), 1);
}
