#include "stagehand/scores.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles.hpp"

namespace stagehand {
namespace {

EvalEpisode episode(long length, double err = 0.0) {
  EvalEpisode ep;
  ep.steps.resize(static_cast<std::size_t>(length));
  for (auto& s : ep.steps) {
    s.command_xy = {0.3, 0.0};
    s.local_vel_xy = {0.3 - err, 0.0};
    s.air_time = {0.0, 0.0};
    s.swing = {0.0, 0.0};
  }
  return ep;
}

TEST(Scores, SurvivalExamples) {
  EvalBatch b{{episode(1500), episode(3000)}, 3000};
  EXPECT_EQ(survival_score(b), 0.75);
  EvalBatch full{{episode(10), episode(10)}, 10};
  EXPECT_EQ(survival_score(full), 1.0);
  EvalBatch one{{episode(1), episode(1)}, 400};
  EXPECT_EQ(survival_score(one), 1.0 / 400.0);
}

TEST(Scores, TrackingExamples) {
  EvalBatch perfect{{episode(20), episode(20)}, 20};
  EXPECT_EQ(lin_vel_tracking_score(perfect), 1.0);
  EvalBatch half{{episode(10)}, 20};
  EXPECT_EQ(lin_vel_tracking_score(half), 0.5);
  EvalBatch noisy{{episode(50, std::sqrt(0.02))}, 50};
  EXPECT_NEAR(lin_vel_tracking_score(noisy), std::exp(-1.0), 1e-15);
}

TEST(Scores, AirTimeExamples) {
  EvalBatch idle{{episode(5)}, 5};
  for (auto& s : idle.episodes[0].steps) {
    s.air_time = {0.5, 0.5};
    s.swing = {1, 1};
    s.command_norm = 0.05;
  }
  EXPECT_EQ(feet_air_time_score(idle), 0.0);

  EvalEpisode single = episode(1);
  single.steps[0].command_norm = 0.2;
  single.steps[0].air_time = {0.5, 0.9};
  single.steps[0].swing = {1, 0};
  EXPECT_DOUBLE_EQ(feet_air_time_score({{single}, 1}), 0.3);

  EvalBatch margin{{episode(4)}, 4};
  for (auto& s : margin.episodes[0].steps) {
    s.air_time = {0.2, 0.2};
    s.swing = {1, 1};
    s.command_norm = 1.0;
  }
  EXPECT_EQ(feet_air_time_score(margin), 0.0);
}

TEST(Scores, MatchBruteForceOracle) {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 500; ++i) {
    const EvalBatch b = oracle::random_eval_batch(rng);
    EXPECT_TRUE(oracle::near_rel(survival_score(b), oracle::survival(b), 1e-12));
    EXPECT_TRUE(oracle::near_rel(lin_vel_tracking_score(b), oracle::lin_vel(b, 0.1), 1e-12));
    EXPECT_TRUE(oracle::near_rel(feet_air_time_score(b), oracle::air_time(b, 0.2, 0.05), 1e-12));
    const ScoreTriple t = score(b);
    EXPECT_EQ(t.survival, survival_score(b));
    EXPECT_EQ(t.lin_vel, lin_vel_tracking_score(b));
    EXPECT_EQ(t.air_time, feet_air_time_score(b));
  }
}

TEST(Scores, TrackingMonotoneInError) {
  std::mt19937_64 rng(32);
  for (int i = 0; i < 200; ++i) {
    EvalBatch b = oracle::random_eval_batch(rng);
    const double before = lin_vel_tracking_score(b);
    auto& s = b.episodes[0].steps[rng() % b.episodes[0].steps.size()];
    const double dx = s.local_vel_xy[0] - s.command_xy[0];
    s.local_vel_xy[0] += (dx >= 0 ? 1.0 : -1.0) * 0.05;
    EXPECT_LE(lin_vel_tracking_score(b), before);
  }
}

TEST(Scores, PermutationInvariantOverEpisodes) {
  std::mt19937_64 rng(33);
  for (int i = 0; i < 100; ++i) {
    EvalBatch b = oracle::random_eval_batch(rng);
    const ScoreTriple before = score(b);
    std::shuffle(b.episodes.begin(), b.episodes.end(), rng);
    const ScoreTriple after = score(b);
    EXPECT_TRUE(oracle::near_rel(after.survival, before.survival, 1e-12));
    EXPECT_TRUE(oracle::near_rel(after.lin_vel, before.lin_vel, 1e-12));
    EXPECT_TRUE(oracle::near_rel(after.air_time, before.air_time, 1e-12));
  }
}

TEST(Scores, InvalidBatches) {
  EXPECT_THROW(score(EvalBatch{{}, 10}), Error);
  EXPECT_THROW(score(EvalBatch{{episode(11)}, 10}), Error);
  EXPECT_THROW(score(EvalBatch{{EvalEpisode{}}, 10}), Error);
}

TEST(Scores, ZscoreExamples) {
  const std::vector<double> s = {0.0, 2.0};
  EXPECT_EQ(zscore_normalize(s), (std::vector<double>{-1.0, 1.0}));
  const std::vector<double> flat = {3.0, 3.0, 3.0};
  try {
    zscore_normalize(flat);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroVariance);
  }
  std::mt19937_64 rng(34);
  std::normal_distribution<double> g(5.0, 3.0);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> x(2 + rng() % 100);
    for (double& v : x) v = g(rng);
    const auto z = zscore_normalize(x);
    double m = 0.0, var = 0.0;
    for (double v : z) m += v;
    m /= static_cast<double>(z.size());
    for (double v : z) var += (v - m) * (v - m);
    var /= static_cast<double>(z.size());
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(std::sqrt(var), 1.0, 1e-12);
  }
}

TEST(Scores, JsonRoundTrip) {
  const ScoreTriple t{0.75, 0.3678794411714423, -0.125};
  EXPECT_EQ(scores_from_json(scores_to_json(t)), t);
}

}  // namespace
}  // namespace stagehand
