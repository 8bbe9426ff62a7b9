#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>

#include "slt_lab/cli.hpp"

using namespace slt;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root_ = fs::temp_directory_path() / ("slt_cli_" + std::string(info->name()) + "_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  Result cli(const std::string& args, const std::string& env = "") const {
    const fs::path out = root_ / "stdout.txt", err = root_ / "stderr.txt";
    const std::string cmd = env + " " SLT_LAB_BINARY " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(out), read_file(err)};
  }

  fs::path write_config(const std::string& name, const ExperimentConfig& c) const {
    const fs::path p = root_ / name;
    write_file_atomic(p, to_json(c).dump(2));
    return p;
  }

  std::string reg() const { return " --registry-root " + (root_ / "registry").string(); }

  fs::path root_;
};

ExperimentConfig small_lowrank() {
  auto c = default_config(ExperimentId::Q2E2, Scale::Desk);
  c.d = 8;
  c.grid = {2, 5, 8};
  c.runs_per_point = 1;
  c.n_samples = 200;
  c.optimizer.max_steps = 3000;
  c.sgld.steps = 200;
  return c;
}

}  // namespace

TEST_F(CliTest, InvalidExperimentIdNamesField) {
  auto doc = to_json(small_lowrank());
  doc["experiment_id"] = "Q7E7";
  write_file_atomic(root_ / "bad.json", doc.dump());
  const auto r = cli("run --config " + (root_ / "bad.json").string() + reg());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("experiment_id"), std::string::npos) << r.err;

  const auto j = cli("run --json --config " + (root_ / "bad.json").string() + reg());
  EXPECT_EQ(j.code, 1);
  const auto err = nlohmann::json::parse(j.err);
  EXPECT_EQ(err["error"], "InvalidConfig");
  EXPECT_NE(err["message"].get<std::string>().find("experiment_id"), std::string::npos);

  EXPECT_EQ(cli("run --config " + (root_ / "absent.json").string() + reg()).code, 1);
  EXPECT_EQ(cli("frobnicate").code, 1);
}

TEST_F(CliTest, RunListDetectReport) {
  const auto cfg = write_config("q2e2.json", small_lowrank());
  const auto r = cli("run --json --config " + cfg.string() + reg());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["failed"], 0);
  ASSERT_EQ(j["run_ids"].size(), 3u);
  EXPECT_TRUE(fs::exists(j["summary"].get<std::string>()));

  const auto list = cli("list --json --experiment Q2E2" + reg());
  ASSERT_EQ(list.code, 0);
  auto ids = j["run_ids"].get<std::vector<std::string>>();
  std::sort(ids.begin(), ids.end());
  EXPECT_EQ(nlohmann::json::parse(list.out).get<std::vector<std::string>>(), ids);
  EXPECT_EQ(cli("list --experiment Q0E0" + reg()).code, 1);

  const auto det = cli("detect --json --detector raw --run " + ids[0] + reg());
  ASSERT_EQ(det.code, 0) << det.err;
  EXPECT_EQ(nlohmann::json::parse(det.out)["detector"], "raw");

  const auto rep = cli("report --json --experiment Q2E2 --out " + (root_ / "report").string() + reg());
  ASSERT_EQ(rep.code, 0) << rep.err;
  EXPECT_TRUE(fs::exists(root_ / "report" / "lambda_vs_rank.svg"));
  EXPECT_TRUE(fs::exists(root_ / "report" / "summary.json"));
}

TEST_F(CliTest, InjectedFailureExitsTwo) {
  auto c = small_lowrank();
  c.inject_failure_task = 1;
  const auto r = cli("run --json --config " + write_config("fail.json", c).string() + reg());
  EXPECT_EQ(r.code, 2) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["failed"], 1);
  const auto summary = read_json(j["summary"].get<std::string>());
  EXPECT_EQ(summary["tasks_failed"], 1);
  EXPECT_EQ(summary["points"].size() + summary["flagged_points"].size(), 2u);
}

TEST_F(CliTest, RegistryFromEnvironment) {
  const auto cfg = write_config("q2e2.json", small_lowrank());
  const std::string env = "SLT_LAB_REGISTRY=" + (root_ / "env_registry").string();
  ASSERT_EQ(cli("run --config " + cfg.string(), env).code, 0);
  EXPECT_TRUE(fs::exists(root_ / "env_registry" / "runs" / "Q2E2" / "summary.json"));
  const auto list = cli("list", env);
  EXPECT_EQ(std::count(list.out.begin(), list.out.end(), '\n'), 3);
}

TEST_F(CliTest, EmptyRegistryReportFails) {
  const auto r = cli("report --experiment Q2E1 --out " + (root_ / "empty").string() + reg());
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(fs::exists(root_ / "empty"));
}

TEST_F(CliTest, LlcDeterministicAndLocalized) {
  auto c = small_lowrank();
  c.grid = {4};
  const auto run = cli("run --json --config " + write_config("one.json", c).string() + reg());
  ASSERT_EQ(run.code, 0) << run.err;
  const std::string id = nlohmann::json::parse(run.out)["run_ids"][0];
  const Registry registry(root_ / "registry");
  const auto steps = registry.load_run(id).checkpoint_steps;
  ASSERT_EQ(steps.size(), 1u);
  const std::string base = "llc --json --run " + id + " --step " + std::to_string(steps[0]) + reg();

  const auto a = cli(base + " --seed 5");
  const auto b = cli(base + " --seed 5");
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(cli(base + " --seed 6").out, a.out);

  const auto pinned = cli(base + " --gamma 1e9 --epsilon 1e-8");
  ASSERT_EQ(pinned.code, 0) << pinned.err;
  EXPECT_LT(std::abs(nlohmann::json::parse(pinned.out)["lambda_hat"].get<double>()), 0.1);
  EXPECT_EQ(registry.load_run(id).llc.size(), 5u);

  const auto missing = cli("llc --json --run " + id + " --step 999999" + reg());
  EXPECT_EQ(missing.code, 1);
  EXPECT_EQ(nlohmann::json::parse(missing.err)["error"], "MissingCheckpoint");
}

TEST_F(CliTest, FullRankLowRankCheckpoint) {
  auto c = default_config(ExperimentId::Q2E2, Scale::Desk);
  c.grid = {100};
  c.runs_per_point = 1;
  c.sgld.steps = 2000;
  const auto run = cli("run --json --config " + write_config("r100.json", c).string() + reg());
  ASSERT_EQ(run.code, 0) << run.err;
  const std::string id = nlohmann::json::parse(run.out)["run_ids"][0];
  const auto steps = Registry(root_ / "registry").load_run(id).checkpoint_steps;
  ASSERT_EQ(steps.size(), 1u);
  const auto r = cli("llc --json --run " + id + " --step " + std::to_string(steps[0]) + reg());
  ASSERT_EQ(r.code, 0) << r.err;
  const double lambda = nlohmann::json::parse(r.out)["lambda_hat"];
  EXPECT_GE(lambda, 3000.0);
  EXPECT_LE(lambda, 5500.0);
}

TEST(CliInProcess, HelpAndParseErrors) {
  std::ostringstream out, err;
  const char* help[] = {"slt-lab", "--help"};
  EXPECT_EQ(run_cli(2, help, out, err), 0);
  EXPECT_NE(out.str().find("llc"), std::string::npos);
  const char* bad[] = {"slt-lab", "run", "--config", "x.json", "--scale", "huge"};
  EXPECT_EQ(run_cli(6, bad, out, err), 1);
}
