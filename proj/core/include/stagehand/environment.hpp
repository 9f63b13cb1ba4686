#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "stagehand/config.hpp"
#include "stagehand/randomizer.hpp"
#include "stagehand/reward.hpp"

namespace stagehand {

/// Every key the walker exports per step. Shapes:
///   command (3,)            local_vel (3,)          base_ang_vel ()
///   xd.vel (1,3)            xd.ang (1,3)            rot_up (3,)
///   qfrc_actuator (24,)     action (24,)            last_act (24,)
///   joint_angles (24,)      default_pose (24,)      feet_air_time (2,)
///   first_foot_contact (2,) first_site_contact (2,) foot_contact (2,)
///   command_norm ()         commands_norm ()        done () bool
///   step ()                 feet_pos (2,3)          feet_site_pos (2,3)
///   feet_site_linvel (2,3)  feet_site_angvel (2,3)  rz (2,)
///   swing_peak (2,)         max_foot_height ()
const std::set<std::string>& binding_keys();

constexpr std::size_t kJoints = 24;
constexpr std::size_t kActionDim = kJoints;
constexpr std::size_t kObservationDim = 3 + 2 + 1 + 2 + 2 + kJoints;
constexpr double kControlDt = 0.02;

struct EnvState {
  std::uint64_t seed = 0;
  long step = 0;
  bool done = false;
  /// done because the episode hit episode_length rather than failing.
  bool truncated = false;

  std::array<double, 3> command{};
  double vx = 0.0, vy = 0.0, yaw_rate = 0.0, vz = 0.0;
  double heading = 0.0;
  std::array<double, 2> position{};
  std::array<double, 2> tilt{};
  std::array<double, 2> tilt_rate{};

  std::array<double, kJoints> q{};
  std::array<double, kJoints> q_target{};
  std::array<double, kJoints> torque{};
  std::array<double, kJoints> action{};
  std::array<double, kJoints> last_action{};

  double phase0 = 0.0;
  double gait_frequency = 2.0;
  double foot_height = 0.04;
  bool jump_gait = false;

  std::array<double, 2> foot_z{};
  std::array<double, 2> foot_z_vel{};
  std::array<double, 2> rz{};
  std::array<bool, 2> contact{};
  std::array<bool, 2> first_contact{};
  std::array<double, 2> air_time{};
  std::array<double, 2> air_time_export{};
  std::array<double, 2> swing_peak{};
  std::array<double, 2> swing_peak_export{};
};

/// Kinematic stand-in for a humanoid: planar base velocity follows the action
/// through a first-order lag, feet follow a gait oscillator, and a tilt proxy
/// accumulates from accelerations and kicks.
///
/// Action layout: mean(a[0:8]) sets the forward target, mean(a[8:16]) lateral,
/// mean(a[16:24]) yaw rate. Each joint also tracks default_pose + 0.5 a.
/// Entries 7 and 15 stretch the left and right swing heights.
class WalkerEnv {
 public:
  WalkerEnv(EnvironmentConfig config, long episode_length, SceneParameters scene = desk_nominal_scene());

  EnvState reset(std::uint64_t seed) const;
  /// Advances one control step. Throws ACTION_DIM_MISMATCH; entries are clamped to [-1, 1].
  void step(EnvState& state, std::span<const double> action) const;

  /// Writes the binding map for the current state into `out`.
  void export_bindings(const EnvState& state, Bindings& out) const;
  /// Policy observation (noisy when obs_noise > 0).
  void observe(const EnvState& state, std::span<double> out) const;

  static const std::array<double, kJoints>& default_pose();
  double max_foot_height() const;
  const EnvironmentConfig& config() const { return config_; }
  long episode_length() const { return episode_length_; }
  const SceneParameters& scene() const { return scene_; }

 private:
  EnvironmentConfig config_;
  long episode_length_;
  SceneParameters scene_;
  double response_ = 0.2;
  std::array<double, 2> com_offset_{};
  std::array<std::array<double, 3>, 2> foot_offset_{};
};

/// One recorded step of a binding trace.
struct TraceStep {
  long episode = 0;
  long step = 0;
  Bindings bindings;
};

/// JSON-lines trace: {"episode":i,"step":t,"bindings":{name:{"shape":[..],"kind":"numeric"|"boolean","value":..}}}
std::string trace_line(const TraceStep& step);
TraceStep parse_trace_line(const std::string& line);

/// Serves recorded bindings step by step. Throws TRACE_FORMAT_ERROR on load.
class ReplayEnv {
 public:
  static ReplayEnv from_file(const std::filesystem::path& path);
  static ReplayEnv from_stream(std::istream& in);

  std::size_t size() const { return steps_.size(); }
  const std::vector<TraceStep>& steps() const { return steps_; }
  /// Next recorded step, or nullptr once exhausted.
  const TraceStep* next();
  void rewind() { cursor_ = 0; }

 private:
  std::vector<TraceStep> steps_;
  std::size_t cursor_ = 0;
};

using ActionFn = std::function<void(const EnvState&, std::span<double>)>;

/// Action that asks the walker for exactly its commanded velocities.
void command_following_action(const EnvState& state, std::span<double> action);

/// Runs whole episodes (until done) and records every step's bindings. Episode e
/// resets with seed hash(seed, e). Without a policy, command_following_action drives.
std::vector<TraceStep> record_walker(const WalkerEnv& env, std::size_t episodes, std::uint64_t seed,
                                     const ActionFn& policy = {});

}  // namespace stagehand
