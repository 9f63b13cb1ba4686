#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace stagehand {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct EnvironmentConfig {
  std::string scene_file;
  std::string reward_config_path;
  double obs_noise = 0.0;
  bool imu_disturbs = false;
  bool init_rand = false;
  double big_min_kick_vel = 0.0;
  double big_max_kick_vel = 0.0;
  long big_kick_interval = 1;
  double small_min_kick_vel = 0.0;
  double small_max_kick_vel = 0.0;
  long small_kick_interval = 1;
  bool fixed_command = false;
  Range command_lin_vel_x_range;
  Range command_lin_vel_y_range;
  Range command_ang_vel_yaw_range;
  double command_stand_prob = 0.0;
  double cutoff_freq = 3.0;
  double deadband_size = 0.0;
  std::optional<double> low_cmd_boost_scale;
  Range gait_frequency{2.0, 2.0};
  std::vector<std::string> gaits{"walk"};
  Range foot_height_range{0.04, 0.04};
  std::optional<double> max_foot_height;
};

struct TrainerConfig {
  long long num_timesteps = 0;
  long num_evals = 1;
  double reward_scaling = 1.0;
  long episode_length = 1000;
  bool normalize_observations = true;
  long action_repeat = 1;
  long unroll_length = 20;
  long num_minibatches = 32;
  long num_updates_per_batch = 4;
  double discounting = 0.97;
  double learning_rate = 3e-4;
  double entropy_cost = 1e-2;
  long num_envs = 64;
  long batch_size = 64;
  std::uint64_t seed = 0;
  double clipping_epsilon = 0.2;
  double gae_lambda = 0.95;
  double value_loss_coef = 0.5;
  std::optional<double> max_grad_norm;
};

struct NetworkConfig {
  std::vector<long> policy_hidden_layer_sizes;
  std::vector<long> value_hidden_layer_sizes;
  std::string activation = "swish";
  std::string policy_obs_key = "state";
  std::string value_obs_key = "state";
};

struct RandomizationRef {
  bool randomize = false;
  std::string randomize_config_path;
};

struct ArtifactConfig {
  bool resume_from_checkpoint = false;
};

/// Typed view of one stage's config file. `render:` and the artifact folder
/// layout are carried through untouched and not represented here.
struct ConfigSpec {
  EnvironmentConfig environment;
  TrainerConfig trainer;
  NetworkConfig network;
  RandomizationRef randomization;
  ArtifactConfig artifact;
};

const std::vector<std::string>& known_activations();
const std::vector<std::string>& known_gaits();

}  // namespace stagehand
