#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stagehand/config.hpp"
#include "stagehand/ppo.hpp"
#include "stagehand/schema.hpp"
#include "stagehand/scores.hpp"

namespace stagehand {

/// Hyperparameters actually used for a run, after the scale profile.
struct TrainSettings {
  EnvironmentConfig environment;
  TrainerConfig trainer;
  NetworkConfig network;
};

constexpr long kDeskEnvs = 64;
constexpr long long kDeskTimesteps = 200'000;
constexpr long kDeskEpisodeLength = 1000;
constexpr long kDeskBatchSize = 32;
constexpr long kDeskMinibatches = 8;

/// Desk profile (paper_scale = false): at most 64 envs, 2e5 steps, 1000-step
/// episodes, batch 32 x 8 minibatches, and [64, 64] hidden layers for both
/// networks. With paper_scale the config is used unchanged.
TrainSettings resolve_settings(const ConfigSpec& config, bool paper_scale);

/// One evaluation: `step` plus eval/episode_reward, eval/episode_length,
/// eval/<term> per reward term, loss/policy, loss/value, loss/entropy.
struct EvalRecord {
  long long step = 0;
  std::map<std::string, double> values;

  double at(const std::string& key) const;
};

std::string metrics_line(const EvalRecord& record);
EvalRecord parse_metrics_line(const std::string& line);
std::vector<EvalRecord> read_metrics(const std::filesystem::path& path);

struct StageResult {
  long stage = 0;
  std::vector<EvalRecord> metrics;
  Checkpoint checkpoint;
  /// Deterministic rollouts of the final policy, as used for the scores.
  EvalBatch final_eval;
  ScoreTriple scores;
  long long env_steps = 0;
  long long timestep_budget = 0;
};

/// Caps applied after the scale profile; used to shorten runs in tests.
struct TrainOverrides {
  std::optional<long long> num_timesteps;
  std::optional<long> num_evals;
  std::optional<long> num_envs;
  std::optional<long> episode_length;
};

void apply_overrides(TrainSettings& settings, const TrainOverrides& overrides);

struct TrainOptions {
  bool paper_scale = false;
  TrainOverrides overrides;
  /// Required iff the stage resumes from a checkpoint.
  const Checkpoint* resume = nullptr;
  std::optional<std::uint64_t> seed;
  /// Called after each evaluation, in order.
  std::function<void(const EvalRecord&)> on_eval;
};

/// Fixed-seed episodes of `params` (deterministic actions) under `settings`.
/// `totals` receives the eval/... entries of an EvalRecord.
EvalBatch evaluate_policy(const PolicyParams& params, const TrainSettings& settings, const RewardProgram& reward,
                          const RandomizeSpec* randomize, std::uint64_t seed, std::map<std::string, double>* totals);

/// PPO on the walker under the stage's reward, randomization and config.
/// Throws INVALID_ARGUMENT when a checkpoint is passed to a fresh stage or
/// withheld from a resuming one, CHECKPOINT_SHAPE_MISMATCH when the resumed
/// network differs from the config, NON_FINITE_LOSS.
StageResult train_stage(const StagePlan& stage, const TrainOptions& options = {});
StageResult train_settings(const TrainSettings& settings, const RewardProgram& reward,
                           const RandomizeSpec* randomize, long stage_index, const TrainOptions& options = {});

}  // namespace stagehand
