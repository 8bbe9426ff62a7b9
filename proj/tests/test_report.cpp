#include <gtest/gtest.h>

#include <regex>
#include <set>

#include "slt_lab/report.hpp"

using namespace slt;

namespace {

class ReportTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root_ = fs::temp_directory_path() / ("slt_report_" + std::string(info->name()) + "_" + std::to_string(::getpid()));
    fs::remove_all(root_);
  }
  void TearDown() override { fs::remove_all(root_); }
  fs::path root_;
};

ExperimentConfig small_lowrank() {
  auto c = default_config(ExperimentId::Q2E2, Scale::Desk);
  c.d = 8;
  c.grid = {1, 3, 5, 8};
  c.runs_per_point = 2;
  c.n_samples = 200;
  c.optimizer.max_steps = 3000;
  c.sgld.steps = 200;
  c.sgld.epsilon = 1e-4;
  return c;
}

ExperimentConfig small_poly() {
  auto c = default_config(ExperimentId::Q2E1, Scale::Desk);
  c.grid = {1, 4};
  c.intervals = {1.0, 0.5};
  c.runs_per_point = 1;
  c.n_samples = 100;
  c.optimizer.max_steps = 2000;
  c.sgld.steps = 100;
  return c;
}

std::set<std::string> numeric_tokens(const std::string& text) {
  static const std::regex num(R"(-?[0-9]+(\.[0-9]+)?(e[-+][0-9]+)?)");
  std::set<std::string> out;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), num); it != std::sregex_iterator(); ++it) out.insert(it->str());
  return out;
}

std::string svg_text(const std::string& svg) {
  static const std::regex text(R"(<text[^>]*>([^<]*)</text>)");
  std::string out;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), text); it != std::sregex_iterator(); ++it) out += (*it)[1].str() + "\n";
  return out;
}

void expect_labels_backed_by_csv(const fs::path& svg_path) {
  fs::path csv_path = svg_path;
  csv_path.replace_extension(".csv");
  const auto labels = numeric_tokens(svg_text(read_file(svg_path)));
  const auto table = numeric_tokens(read_file(csv_path));
  for (const auto& t : labels) EXPECT_TRUE(table.count(t)) << t << " in " << svg_path.filename();
}

}  // namespace

TEST(Format, Numbers) {
  EXPECT_EQ(fmt_num(0.0), "0");
  EXPECT_EQ(fmt_num(-0.0), "0");
  EXPECT_EQ(fmt_num(2.5), "2.5");
  EXPECT_EQ(fmt_num(1.0 / 3.0), "0.333333");
  EXPECT_EQ(fmt_num(1e-9), "1e-09");
}

TEST(Figures, SvgLabelsAppearInCsv) {
  Figure f{"t", "x", "y", false, {}, {{"slope", -0.4321}}};
  f.series.push_back(Series{"a", Series::Style::Points, {1, 2, 3}, {0.5, 1.5, 2.25}, {0.1, 0.2, 0.3}, {}, "#000"});
  const std::string svg = render_svg(f);
  const std::string csv = figure_csv(f);
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(csv.find("annotation,slope,,-0.4321"), std::string::npos);
  const auto table = numeric_tokens(csv);
  for (const auto& t : numeric_tokens(svg_text(svg))) EXPECT_TRUE(table.count(t)) << t;
  EXPECT_EQ(render_svg(f), svg);
}

TEST(Figures, EmptyFigureIsNoData) {
  try {
    render_svg(Figure{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoData);
  }
}

TEST_F(ReportTest, EmptyRegistryWritesNothing) {
  const Registry reg(root_ / "registry");
  const fs::path out = root_ / "out";
  try {
    write_report(reg, ExperimentId::Q2E2, out);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoData);
  }
  EXPECT_FALSE(fs::exists(out));
}

TEST_F(ReportTest, LowRankReportMatchesSummaryAndIsStable) {
  const Registry reg(root_ / "registry");
  const auto res = run_experiment(small_lowrank(), reg);
  ASSERT_EQ(res.failures(), 0u);

  const auto first = write_report(reg, ExperimentId::Q2E2, root_ / "a");
  EXPECT_EQ(first.summary["fit"], res.summary["fit"]);
  EXPECT_EQ(first.summary["points"], res.summary["points"]);
  const auto second = write_report(reg, ExperimentId::Q2E2, root_ / "b");
  ASSERT_EQ(first.files.size(), second.files.size());
  for (std::size_t k = 0; k < first.files.size(); ++k) {
    EXPECT_EQ(first.files[k].filename(), second.files[k].filename());
    EXPECT_EQ(read_file(first.files[k]), read_file(second.files[k])) << first.files[k].filename();
  }

  const fs::path svg = root_ / "a" / "lambda_vs_rank.svg";
  ASSERT_TRUE(fs::exists(svg));
  EXPECT_TRUE(fs::exists(root_ / "a" / "fit.csv"));
  EXPECT_TRUE(fs::exists(root_ / "a" / "repeats.csv"));
  const std::string csv = read_file(root_ / "a" / "lambda_vs_rank.csv");
  EXPECT_NE(csv.find("line,theory r(2d-r)/2,"), std::string::npos);
  EXPECT_NE(csv.find("line,OLS fit,"), std::string::npos);
  expect_labels_backed_by_csv(svg);
}

TEST_F(ReportTest, PolynomialReportHasOneSeriesPerInterval) {
  const Registry reg(root_ / "registry");
  ASSERT_EQ(run_experiment(small_poly(), reg).failures(), 0u);
  const auto out = write_report(reg, ExperimentId::Q2E1);
  EXPECT_EQ(out.directory, root_ / "registry" / "reports" / "Q2E1");
  const std::string csv = read_file(out.directory / "lambda_vs_degree.csv");
  std::set<std::string> series;
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  while (std::getline(lines, line)) {
    if (line.rfind("point,", 0) == 0 || line.rfind("line,", 0) == 0) series.insert(line.substr(0, line.find(',', line.find(',') + 1)));
  }
  EXPECT_EQ(series, (std::set<std::string>{"line,theory d/2", "point,X=[-0.5", "point,X=[-1"}));
  expect_labels_backed_by_csv(out.directory / "lambda_vs_degree.svg");
  EXPECT_FALSE(fs::exists(out.directory / "fit.csv"));
}

TEST_F(ReportTest, HealedFailureCountsOnce) {
  const Registry reg(root_ / "registry");
  auto c = small_lowrank();
  c.grid = {2, 4, 6};
  c.runs_per_point = 1;
  c.inject_failure_task = 1;
  const auto broken = run_experiment(c, reg);
  EXPECT_EQ(broken.failures(), 1u);
  c.inject_failure_task.reset();
  const auto healed = run_experiment(c, reg);
  ASSERT_EQ(healed.failures(), 0u);
  const auto out = write_report(reg, ExperimentId::Q2E2, root_ / "out");
  EXPECT_EQ(out.summary["tasks_failed"], 0);
  EXPECT_EQ(out.summary["fit"], healed.summary["fit"]);
  const std::string repeats = read_file(root_ / "out" / "repeats.csv");
  EXPECT_EQ(std::count(repeats.begin(), repeats.end(), '\n'), 4);
}
