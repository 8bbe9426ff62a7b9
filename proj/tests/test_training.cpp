#include <gtest/gtest.h>

#include <set>
#include <vector>

#include "oracles.hpp"
#include "slt_lab/training.hpp"

using namespace slt;

namespace {

std::set<std::size_t> as_set(const std::vector<std::size_t>& v) { return {v.begin(), v.end()}; }

OptimizerConfig adam(double lr, std::size_t steps, std::size_t batch = 0) {
  OptimizerConfig o;
  o.learning_rate = lr;
  o.max_steps = steps;
  o.batch_size = batch;
  return o;
}

}  // namespace

TEST(Schedule, LinearAndLogExamples) {
  EXPECT_EQ(checkpoint_steps({Spacing::Linear, 10, 100}),
            (std::vector<std::size_t>{10, 20, 30, 40, 50, 60, 70, 80, 90, 100}));
  EXPECT_EQ(checkpoint_steps({Spacing::Logarithmic, 3, 100}), (std::vector<std::size_t>{1, 10, 100}));
}

TEST(Schedule, MatchesSetOracle) {
  for (std::size_t total : {7u, 100u, 4500u, 60000u}) {
    for (std::size_t count : {1u, 3u, 7u, 50u, 100u}) {
      if (count > total) continue;
      EXPECT_EQ(as_set(checkpoint_steps({Spacing::Linear, count, total})), oracle::linear_set(count, total));
      if (count > 1) {
        EXPECT_EQ(as_set(checkpoint_steps({Spacing::Logarithmic, count, total})), oracle::log_set(count, total));
      }
    }
  }
  auto mixed = oracle::linear_set(50, 4500);
  mixed.merge(oracle::log_set(50, 4500));
  const auto got = checkpoint_steps({Spacing::Mixed, 100, 4500});
  EXPECT_EQ(as_set(got), mixed);
  EXPECT_EQ(got.back(), 4500u);
  for (std::size_t i = 1; i < got.size(); ++i) EXPECT_LT(got[i - 1], got[i]);
}

TEST(Schedule, CountExceedsSteps) {
  try {
    checkpoint_steps({Spacing::Linear, 11, 10});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CountExceedsSteps);
  }
}

TEST(Train, RealizablePolynomialFits) {
  const ModelSpec spec(PolynomialSpec{2});
  const auto data = generate_dataset(spec, TaskParams{100, 0.4, 1.0, {}}, RngStream(1));
  const auto trace = train(spec, data, adam(1e-2, 5000), {Spacing::Linear, 10, 5000}, RngStream(2));
  ASSERT_FALSE(trace.diverged);
  ASSERT_EQ(trace.records.size(), 10u);
  EXPECT_EQ(trace.records.back().step, 5000u);
  EXPECT_LT(trace.records.back().train_loss, 1e-6);
  EXPECT_EQ(trace.checkpoints.size(), 10u);
}

TEST(Train, MixedScheduleEndsAtMaxSteps) {
  const ModelSpec spec(TmsSpec{6, 2, 0.9, {}});
  const auto data = generate_dataset(spec, TaskParams{256, 0.4, 1.0, {}}, RngStream(3));
  const auto trace = train(spec, data, adam(1e-2, 4500, 64), {Spacing::Mixed, 100, 4500}, RngStream(4));
  ASSERT_FALSE(trace.diverged);
  EXPECT_EQ(trace.records.back().step, 4500u);
  EXPECT_EQ(trace.checkpoints.back().step, 4500u);
}

TEST(Train, LowRankFullRankReachesTeacher) {
  const ModelSpec spec(LowRankSpec{10, 10});
  const auto data = generate_dataset(spec, TaskParams{200, 0.4, 1.0, {}}, RngStream(5));
  const auto res = train_until_converged(spec, data.train, adam(1e-2, 20000), RngStream(6));
  const double variance = forward_loss(spec, zero_params(spec).values, data.train);
  EXPECT_LT(res.final_loss, 1e-6 * variance);
}

TEST(Train, DeterministicGivenSeed) {
  const ModelSpec spec(ModularAdditionSpec{7, 4, 8});
  const auto data = generate_dataset(spec, TaskParams{0, 0.5, 1.0, {}}, RngStream(1));
  auto opt = adam(1e-2, 50);
  opt.weight_decay = 1e-2;
  const auto a = train(spec, data, opt, {Spacing::Linear, 5, 50}, RngStream(9));
  const auto b = train(spec, data, opt, {Spacing::Linear, 5, 50}, RngStream(9));
  EXPECT_EQ(a.records, b.records);
  EXPECT_EQ(a.checkpoints.back().params.values, b.checkpoints.back().params.values);
  EXPECT_TRUE(a.has_validation());
}

TEST(Train, DivergenceIsFlagged) {
  const ModelSpec spec(PolynomialSpec{6});
  const auto data = generate_dataset(spec, TaskParams{50, 0.4, 5.0, {}}, RngStream(1));
  OptimizerConfig sgd;
  sgd.kind = OptimizerKind::SGD;
  sgd.learning_rate = 10.0;
  sgd.max_steps = 200;
  const auto trace = train(spec, data, sgd, {Spacing::Linear, 10, 200}, RngStream(2));
  EXPECT_TRUE(trace.diverged);
  EXPECT_GT(trace.diverged_at, 0u);
  try {
    train_until_converged(spec, data.train, sgd, RngStream(3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Diverged);
  }
}

TEST(Train, StopWhenEndsEarly) {
  const ModelSpec spec(PolynomialSpec{1});
  const auto data = generate_dataset(spec, TaskParams{20, 0.4, 1.0, {}}, RngStream(1));
  TrainOptions options;
  options.stop_when = [](const MetricRecord& r) { return r.step >= 30; };
  std::vector<std::size_t> sink;
  options.on_metrics = [&](const MetricRecord& r) { sink.push_back(r.step); };
  const auto trace = train(spec, data, adam(1e-2, 100), {Spacing::Linear, 10, 100}, RngStream(2), options);
  EXPECT_EQ(trace.records.back().step, 30u);
  EXPECT_EQ(sink, (std::vector<std::size_t>{10, 20, 30}));
}

TEST(Train, LossCurveRecordsEveryStep) {
  const ModelSpec spec(PolynomialSpec{1});
  const auto data = generate_dataset(spec, TaskParams{20, 0.4, 1.0, {}}, RngStream(1));
  TrainOptions options;
  options.record_loss_curve = true;
  const auto trace = train(spec, data, adam(1e-2, 40), {Spacing::Linear, 4, 40}, RngStream(2), options);
  EXPECT_EQ(trace.loss_curve.size(), 40u);
}

TEST(Converge, ConstantDataDegreeZero) {
  const ModelSpec spec(PolynomialSpec{0});
  const auto data = generate_dataset(spec, TaskParams{30, 0.4, 1.0, {0.7}}, RngStream(1));
  OptimizerConfig sgd;
  sgd.kind = OptimizerKind::SGD;
  sgd.learning_rate = 0.25;
  sgd.max_steps = 5000;
  const auto res = train_until_converged(spec, data.train, sgd, RngStream(2));
  EXPECT_TRUE(res.converged);
  EXPECT_LE(res.steps, 500u);
  EXPECT_LT(res.final_loss, 1e-10);
}

TEST(Converge, TeacherInitStopsImmediately) {
  const ModelSpec spec(PolynomialSpec{3});
  const auto data = generate_dataset(spec, TaskParams{40, 0.4, 1.0, {}}, RngStream(1));
  ParamVector init = zero_params(spec);
  init.values = data.teacher;
  const auto res = train_until_converged(spec, data.train, init, adam(1e-3, 1000), RngStream(2));
  EXPECT_TRUE(res.converged);
  EXPECT_EQ(res.steps, 1u);
  EXPECT_LT(res.final_loss, 1e-20);
}

TEST(Converge, BestParamsNoWorseThanHistory) {
  const ModelSpec spec(PolynomialSpec{5});
  const auto data = generate_dataset(spec, TaskParams{60, 0.4, 1.0, {}}, RngStream(4));
  const auto res = train_until_converged(spec, data.train, adam(3e-2, 3000), RngStream(5));
  const double at_best = forward_loss(spec, res.params.values, data.train);
  for (double l : res.loss_history) EXPECT_LE(at_best, l);
}

TEST(Converge, HighDegreeExplainsVariance) {
  const ModelSpec spec(PolynomialSpec{100});
  const auto data = generate_dataset(spec, TaskParams{300, 0.4, 1.0, {}}, RngStream(7));
  double m = 0, v = 0;
  for (double y : data.train.targets.data()) m += y / 300.0;
  for (double y : data.train.targets.data()) v += (y - m) * (y - m) / 300.0;
  const auto res = train_until_converged(spec, data.train, adam(1e-3, 20000), RngStream(8));
  EXPECT_LT(res.final_loss, v / 1e3);
}
