#include "stagehand/environment.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "stagehand/reward.hpp"
#include "stagehand/scores.hpp"

namespace stagehand {
namespace {

EnvironmentConfig calm() {
  EnvironmentConfig c;
  c.command_lin_vel_x_range = {-0.5, 0.5};
  c.command_lin_vel_y_range = {-0.2, 0.2};
  c.command_ang_vel_yaw_range = {-0.3, 0.3};
  return c;
}

const std::array<double, kActionDim> kZeroAction{};

TEST(Walker, ExportsEveryBindingKey) {
  const WalkerEnv env(calm(), 100);
  EnvState s = env.reset(1);
  env.step(s, kZeroAction);
  Bindings b;
  env.export_bindings(s, b);
  for (const auto& key : binding_keys()) EXPECT_TRUE(b.count(key)) << key;
  EXPECT_EQ(b.at("qfrc_actuator").shape(), (Tensor::Shape{24}));
  EXPECT_EQ(b.at("xd.vel").shape(), (Tensor::Shape{1, 3}));
  EXPECT_EQ(b.at("feet_site_linvel").shape(), (Tensor::Shape{2, 3}));
  EXPECT_TRUE(b.at("done").is_boolean());
}

TEST(Walker, StandProbabilityOneGivesZeroCommand) {
  EnvironmentConfig c = calm();
  c.command_stand_prob = 1.0;
  const WalkerEnv env(c, 100);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const EnvState s = env.reset(seed);
    EXPECT_EQ(s.command, (std::array<double, 3>{0, 0, 0}));
  }
}

TEST(Walker, ZeroLateralRangeGivesZeroLateralCommand) {
  EnvironmentConfig c = calm();
  c.command_lin_vel_y_range = {0.0, 0.0};
  const WalkerEnv env(c, 100);
  for (std::uint64_t seed = 0; seed < 50; ++seed) EXPECT_EQ(env.reset(seed).command[1], 0.0);
}

TEST(Walker, ResetIsDeterministic) {
  const WalkerEnv env(calm(), 100);
  const EnvState a = env.reset(17), b = env.reset(17);
  EXPECT_EQ(a.command, b.command);
  EXPECT_EQ(a.q, b.q);
  EXPECT_EQ(a.phase0, b.phase0);
}

TEST(Walker, RestsWithoutCommandOrKicks) {
  EnvironmentConfig c;
  const long length = 500;
  const WalkerEnv env(c, length);
  EnvState s = env.reset(3);
  ASSERT_EQ(s.command, (std::array<double, 3>{0, 0, 0}));
  for (long t = 0; t < length; ++t) {
    env.step(s, kZeroAction);
    EXPECT_LT(std::hypot(s.vx, s.vy), 1e-12);
    EXPECT_LT(std::hypot(s.tilt[0], s.tilt[1]), 1e-9);
    if (t + 1 < length) ASSERT_FALSE(s.done) << "step " << t;
  }
  EXPECT_TRUE(s.done);
  EXPECT_TRUE(s.truncated);
}

TEST(Walker, BigKickAtItsInterval) {
  EnvironmentConfig c;
  c.big_min_kick_vel = c.big_max_kick_vel = 0.12;
  c.big_kick_interval = 80;
  const WalkerEnv env(c, 200);
  EnvState s = env.reset(5);
  for (long t = 1; t < 80; ++t) {
    env.step(s, kZeroAction);
    ASSERT_EQ(std::hypot(s.vx, s.vy), 0.0) << t;
  }
  env.step(s, kZeroAction);
  EXPECT_EQ(s.step, 80);
  EXPECT_NEAR(std::hypot(s.vx, s.vy), 0.12, 1e-15);
}

TEST(Walker, GaitPeriodIsRateOverFrequency) {
  const WalkerEnv env(calm(), 400);
  EnvState s = env.reset(11);
  ASSERT_EQ(s.gait_frequency, 2.0);
  std::vector<long> touchdowns[2];
  std::vector<std::array<bool, 2>> contact;
  for (long t = 0; t < 300; ++t) {
    env.step(s, kZeroAction);
    contact.push_back(s.contact);
    for (int f = 0; f < 2; ++f) {
      if (s.first_contact[f]) touchdowns[f].push_back(s.step);
    }
  }
  for (int f = 0; f < 2; ++f) {
    ASSERT_GE(touchdowns[f].size(), 10u);
    for (std::size_t i = 1; i < touchdowns[f].size(); ++i) EXPECT_EQ(touchdowns[f][i] - touchdowns[f][i - 1], 25);
  }
  for (std::size_t t = 0; t + 25 < contact.size(); ++t) EXPECT_EQ(contact[t], contact[t + 25]);
  // Walk gait: the feet are half a cycle apart.
  EXPECT_NE(touchdowns[0].front() % 25, touchdowns[1].front() % 25);
}

TEST(Walker, FirstContactCountsTouchdowns) {
  const WalkerEnv env(calm(), 300);
  EnvState s = env.reset(2);
  double flagged = 0.0;
  long touchdowns = 0;
  std::array<bool, 2> prev = s.contact;
  Bindings b;
  while (!s.done) {
    std::array<double, kActionDim> a{};
    command_following_action(s, a);
    env.step(s, a);
    env.export_bindings(s, b);
    flagged += b.at("first_foot_contact")[0] + b.at("first_foot_contact")[1];
    for (int f = 0; f < 2; ++f) touchdowns += (s.contact[f] && !prev[f]) ? 1 : 0;
    prev = s.contact;
  }
  EXPECT_GT(touchdowns, 0);
  EXPECT_EQ(flagged, static_cast<double>(touchdowns));
}

TEST(Walker, ActionDimensionChecked) {
  const WalkerEnv env(calm(), 10);
  EnvState s = env.reset(0);
  const std::vector<double> short_action(3, 0.0);
  try {
    env.step(s, short_action);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ActionDimMismatch);
  }
}

TEST(Trace, RecordsOneBindingMapPerStep) {
  const WalkerEnv env(calm(), 40);
  const auto trace = record_walker(env, 3, 9);
  EXPECT_EQ(trace.size(), 120u);
  std::stringstream io;
  for (const auto& step : trace) io << trace_line(step) << "\n";
  ReplayEnv replay = ReplayEnv::from_stream(io);
  EXPECT_EQ(replay.size(), trace.size());
  std::size_t n = 0;
  while (const TraceStep* step = replay.next()) {
    EXPECT_EQ(step->bindings, trace[n].bindings);
    ++n;
  }
  EXPECT_EQ(n, trace.size());
  EXPECT_EQ(score(eval_batch_from_trace(replay.steps(), 40)), score(eval_batch_from_trace(trace, 40)));
}

TEST(Trace, MissingKeyFallsBackToDefault) {
  const WalkerEnv env(calm(), 5);
  auto trace = record_walker(env, 1, 1);
  const RewardProgram p = compile_reward_text(R"(reward:
  slip:
    inputs:
      c: "foot_contact"
    evaluations:
      - type: "sum_square"
        parameters:
          vector: "c"
    scale: 1.0
    default_reward: -3.0
)");
  trace[2].bindings.erase("foot_contact");
  std::stringstream io;
  for (const auto& step : trace) io << trace_line(step) << "\n";
  ReplayEnv replay = ReplayEnv::from_stream(io);
  replay.next();
  replay.next();
  EXPECT_EQ(eval_total(p, replay.next()->bindings).total, -3.0);
}

TEST(Trace, MalformedLineRejected) {
  std::stringstream io("{\"episode\":0,\"step\":0}\nnot json\n");
  try {
    ReplayEnv::from_stream(io);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TraceFormatError);
  }
}

}  // namespace
}  // namespace stagehand
