#include "stagehand/environment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "stagehand/random.hpp"

namespace stagehand {
namespace {

using json = nlohmann::json;

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kResponseRate = 10.0;
constexpr double kTiltDecay = 0.9;
constexpr double kTiltPerAccel = 0.002;
constexpr double kTiltPerKick = 0.1;
constexpr double kTiltLimit = 0.7;
constexpr double kSpeedLimit = 2.5;
constexpr double kMaxLinVel = 1.0;
constexpr double kMaxYawRate = 1.0;
constexpr double kInitJointNoise = 0.05;
constexpr double kNominalMass = 8.0;

// Draw purposes for the counter-based generator.
enum Purpose : std::uint64_t {
  kStand = 1,
  kCommand,
  kPhase,
  kFrequency,
  kHeight,
  kGait,
  kJoint,
  kBigKickMag,
  kBigKickDir,
  kSmallKickMag,
  kSmallKickDir,
  kObsNoise,
  kImuNoise,
};

double uniform(const EnvState& s, Purpose p, std::uint64_t index, double lo, double hi) {
  return lo + (hi - lo) * unit_draw({s.seed, static_cast<std::uint64_t>(s.step), p, index});
}

double mean_of(std::span<const double> a, std::size_t begin, std::size_t end) {
  double sum = 0.0;
  for (std::size_t i = begin; i < end; ++i) sum += a[i];
  return sum / static_cast<double>(end - begin);
}

void put(Bindings& out, const char* key, Tensor::Shape shape, std::vector<double> values,
         DType dtype = DType::numeric) {
  out.insert_or_assign(key, Tensor(std::move(shape), std::move(values), dtype));
}

void update_feet(EnvState& s, bool track_touchdown) {
  const double phase = s.phase0 + kTwoPi * s.gait_frequency * kControlDt * static_cast<double>(s.step);
  for (int i = 0; i < 2; ++i) {
    const double phi = phase + ((i == 1 && !s.jump_gait) ? std::numbers::pi : 0.0);
    const double sn = std::sin(phi);
    s.rz[i] = sn > 0.0 ? s.foot_height * sn : 0.0;
    const double stretch = 1.0 + 0.5 * s.action[i == 0 ? 7 : 15];
    const double z = s.rz[i] * stretch;
    s.foot_z_vel[i] = track_touchdown ? (z - s.foot_z[i]) / kControlDt : 0.0;
    s.foot_z[i] = z;
    const bool was_contact = s.contact[i];
    s.contact[i] = z <= 0.0;
    s.first_contact[i] = track_touchdown && s.contact[i] && !was_contact;
    if (!s.contact[i]) {
      s.air_time[i] += kControlDt;
      s.swing_peak[i] = std::max(s.swing_peak[i], z);
    }
    s.air_time_export[i] = s.air_time[i];
    s.swing_peak_export[i] = s.swing_peak[i];
    if (s.contact[i]) {
      s.air_time[i] = 0.0;
      s.swing_peak[i] = 0.0;
    }
  }
}

void kick(EnvState& s, Purpose mag_purpose, Purpose dir_purpose, double lo, double hi) {
  const double m = uniform(s, mag_purpose, 0, lo, hi);
  const double theta = uniform(s, dir_purpose, 0, 0.0, kTwoPi);
  s.vx += m * std::cos(theta);
  s.vy += m * std::sin(theta);
  s.tilt[0] += kTiltPerKick * m * std::cos(theta);
  s.tilt[1] += kTiltPerKick * m * std::sin(theta);
}

}  // namespace

const std::set<std::string>& binding_keys() {
  static const std::set<std::string> keys = {
      "command",         "local_vel",          "base_ang_vel",     "xd.vel",           "xd.ang",
      "rot_up",          "qfrc_actuator",      "action",           "last_act",         "feet_air_time",
      "first_foot_contact", "command_norm",    "commands_norm",    "joint_angles",     "default_pose",
      "done",            "step",               "foot_contact",     "first_site_contact", "feet_pos",
      "feet_site_pos",   "feet_site_linvel",   "feet_site_angvel", "rz",               "swing_peak",
      "max_foot_height"};
  return keys;
}

const std::array<double, kJoints>& WalkerEnv::default_pose() {
  // Hip yaw/roll/pitch, knee, ankle pitch/roll per leg, mirrored halves.
  static const std::array<double, kJoints> pose = [] {
    std::array<double, kJoints> p{};
    const std::array<double, 12> half = {0.0, 0.0, -0.35, 0.7, -0.35, 0.0, 0.0, 0.1, 0.0, -0.2, 0.0, 0.0};
    for (std::size_t i = 0; i < 12; ++i) {
      p[i] = half[i];
      p[i + 12] = half[i];
    }
    return p;
  }();
  return pose;
}

WalkerEnv::WalkerEnv(EnvironmentConfig config, long episode_length, SceneParameters scene)
    : config_(std::move(config)), episode_length_(episode_length), scene_(std::move(scene)) {
  const SceneParameters& nominal = desk_nominal_scene();
  auto get = [&](const char* key) -> const Tensor& {
    auto it = scene_.find(key);
    return it != scene_.end() ? it->second : nominal.at(key);
  };
  const Tensor& friction = get("geom_friction");
  const double foot_friction =
      friction.shape()[0] >= 4 ? 0.5 * (friction[2 * 3] + friction[3 * 3]) : friction[0];
  const Tensor& mass = get("body_mass");
  double total_mass = get("body_mass/random_mass").item();
  for (double m : mass.values()) total_mass += m;
  const Tensor& gain = get("actuator_gainprm");
  double kp = 0.0;
  for (std::size_t i = 0; i < gain.shape()[0]; ++i) kp += gain[i * gain.shape()[1]];
  kp /= static_cast<double>(gain.shape()[0]);

  const double friction_ratio = std::max(foot_friction, 0.05);
  const double mass_ratio = std::max(total_mass / kNominalMass, 0.1);
  const double kp_ratio = std::max(kp / kDeskKp, 0.05);
  response_ = std::clamp(kControlDt * kResponseRate * kp_ratio * friction_ratio / mass_ratio, 0.02, 1.0);

  const Tensor& extra_pos = get("body_ipos/random_mass");
  const double extra_share = get("body_mass/random_mass").item() / std::max(total_mass, 1e-6);
  com_offset_ = {extra_pos[0] * extra_share, extra_pos[1] * extra_share};

  const char* feet[2] = {"geom_pos/foot_contact_l", "geom_pos/foot_contact_r"};
  for (int i = 0; i < 2; ++i) {
    const Tensor& actual = get(feet[i]);
    const Tensor& base = nominal.at(feet[i]);
    for (int k = 0; k < 3; ++k) foot_offset_[i][k] = k < 2 ? actual[k] : actual[k] - base[k];
  }
}

double WalkerEnv::max_foot_height() const {
  return config_.max_foot_height.value_or(config_.foot_height_range.hi);
}

EnvState WalkerEnv::reset(std::uint64_t seed) const {
  EnvState s;
  s.seed = seed;
  s.step = 0;

  const bool stand = uniform(s, kStand, 0, 0.0, 1.0) < config_.command_stand_prob;
  const Range ranges[3] = {config_.command_lin_vel_x_range, config_.command_lin_vel_y_range,
                           config_.command_ang_vel_yaw_range};
  for (int i = 0; i < 3; ++i) {
    double c = 0.0;
    if (config_.fixed_command) {
      c = 0.5 * (ranges[i].lo + ranges[i].hi);
    } else if (!stand) {
      c = uniform(s, kCommand, i, ranges[i].lo, ranges[i].hi);
    }
    if (std::fabs(c) < config_.deadband_size) c = 0.0;
    s.command[i] = c;
  }

  s.phase0 = uniform(s, kPhase, 0, 0.0, kTwoPi);
  s.gait_frequency = uniform(s, kFrequency, 0, config_.gait_frequency.lo, config_.gait_frequency.hi);
  s.foot_height = uniform(s, kHeight, 0, config_.foot_height_range.lo, config_.foot_height_range.hi);
  if (!config_.gaits.empty()) {
    const auto n = config_.gaits.size();
    const auto pick = std::min<std::size_t>(static_cast<std::size_t>(uniform(s, kGait, 0, 0.0, 1.0) * n), n - 1);
    s.jump_gait = config_.gaits[pick] == "jump";
  }

  const auto& pose = default_pose();
  for (std::size_t j = 0; j < kJoints; ++j) {
    const double noise = config_.init_rand ? uniform(s, kJoint, j, -kInitJointNoise, kInitJointNoise) : 0.0;
    s.q[j] = pose[j] + noise;
    s.q_target[j] = s.q[j];
  }
  s.tilt = {com_offset_[0], com_offset_[1]};

  // Settle contact flags without reporting a touchdown at reset.
  for (int i = 0; i < 2; ++i) s.contact[i] = true;
  update_feet(s, false);
  return s;
}

void WalkerEnv::step(EnvState& s, std::span<const double> action) const {
  if (action.size() != kActionDim) {
    throw Error(ErrorCode::ActionDimMismatch,
                "expected " + std::to_string(kActionDim) + " actions, got " + std::to_string(action.size()));
  }
  s.last_action = s.action;
  for (std::size_t j = 0; j < kActionDim; ++j) {
    const double a = action[j];
    s.action[j] = std::isnan(a) ? 0.0 : std::clamp(a, -1.0, 1.0);
  }
  const std::span<const double> a(s.action);

  const double vx_target = kMaxLinVel * mean_of(a, 0, 8);
  const double vy_target = kMaxLinVel * mean_of(a, 8, 16);
  const double yaw_target = kMaxYawRate * mean_of(a, 16, 24);

  const double vx_old = s.vx, vy_old = s.vy;
  s.vx += response_ * (vx_target - s.vx);
  s.vy += response_ * (vy_target - s.vy);
  s.yaw_rate += response_ * (yaw_target - s.yaw_rate);
  const double ax = (s.vx - vx_old) / kControlDt;
  const double ay = (s.vy - vy_old) / kControlDt;

  const std::array<double, 2> tilt_old = s.tilt;
  s.tilt[0] = com_offset_[0] + kTiltDecay * (s.tilt[0] - com_offset_[0]) + kTiltPerAccel * ax;
  s.tilt[1] = com_offset_[1] + kTiltDecay * (s.tilt[1] - com_offset_[1]) + kTiltPerAccel * ay;

  s.heading += s.yaw_rate * kControlDt;
  const double c = std::cos(s.heading), sn = std::sin(s.heading);
  s.position[0] += (c * s.vx - sn * s.vy) * kControlDt;
  s.position[1] += (sn * s.vx + c * s.vy) * kControlDt;

  const auto& pose = default_pose();
  const double beta = 1.0 - std::exp(-kTwoPi * config_.cutoff_freq * kControlDt);
  const Tensor& gain = scene_.count("actuator_gainprm") ? scene_.at("actuator_gainprm")
                                                        : desk_nominal_scene().at("actuator_gainprm");
  const Tensor& bias = scene_.count("actuator_biasprm") ? scene_.at("actuator_biasprm")
                                                        : desk_nominal_scene().at("actuator_biasprm");
  const std::size_t cols = gain.shape()[1];
  for (std::size_t j = 0; j < kJoints; ++j) {
    s.q_target[j] += beta * (pose[j] + 0.5 * a[j] - s.q_target[j]);
    const double q_old = s.q[j];
    s.q[j] += 0.5 * (s.q_target[j] - s.q[j]);
    const double kp = gain[j * cols];
    const double kd = -bias[j * cols + 2];
    s.torque[j] = kp * (s.q_target[j] - s.q[j]) - kd * (s.q[j] - q_old) / kControlDt;
  }

  s.step += 1;
  if (config_.big_kick_interval > 0 && s.step % config_.big_kick_interval == 0) {
    kick(s, kBigKickMag, kBigKickDir, config_.big_min_kick_vel, config_.big_max_kick_vel);
  }
  if (config_.small_kick_interval > 0 && s.step % config_.small_kick_interval == 0) {
    kick(s, kSmallKickMag, kSmallKickDir, config_.small_min_kick_vel, config_.small_max_kick_vel);
  }
  for (int k = 0; k < 2; ++k) s.tilt_rate[k] = (s.tilt[k] - tilt_old[k]) / kControlDt;

  update_feet(s, true);
  s.vz = 0.05 * (s.foot_z_vel[0] + s.foot_z_vel[1]);

  const double tilt = std::hypot(s.tilt[0], s.tilt[1]);
  const double speed = std::hypot(s.vx, s.vy);
  const bool failed = tilt > kTiltLimit || speed > kSpeedLimit;
  s.truncated = !failed && s.step >= episode_length_;
  s.done = failed || s.truncated;
}

void WalkerEnv::observe(const EnvState& s, std::span<double> out) const {
  if (out.size() != kObservationDim) {
    throw Error(ErrorCode::InvalidArgument, "observation buffer has wrong size");
  }
  const double phase = s.phase0 + kTwoPi * s.gait_frequency * kControlDt * static_cast<double>(s.step);
  std::size_t k = 0;
  for (double c : s.command) out[k++] = c;
  out[k++] = s.vx;
  out[k++] = s.vy;
  out[k++] = s.yaw_rate;
  out[k++] = s.tilt[0];
  out[k++] = s.tilt[1];
  out[k++] = std::sin(phase);
  out[k++] = std::cos(phase);
  const auto& pose = default_pose();
  for (std::size_t j = 0; j < kJoints; ++j) out[k++] = s.q[j] - pose[j];

  if (config_.obs_noise > 0.0) {
    // Commands are exact; sensed quantities are noisy.
    for (std::size_t i = 3; i < kObservationDim; ++i) {
      out[i] += uniform(s, kObsNoise, i, -config_.obs_noise, config_.obs_noise);
    }
  }
  if (config_.imu_disturbs && config_.obs_noise > 0.0) {
    for (std::size_t i = 5; i < 8; ++i) out[i] += uniform(s, kImuNoise, i, -config_.obs_noise, config_.obs_noise);
  }
}

void WalkerEnv::export_bindings(const EnvState& s, Bindings& out) const {
  const std::vector<double> command(s.command.begin(), s.command.end());
  const double cmd_norm = std::sqrt(s.command[0] * s.command[0] + s.command[1] * s.command[1] +
                                    s.command[2] * s.command[2]);
  const double c = std::cos(s.heading), sn = std::sin(s.heading);
  const double tilt = std::hypot(s.tilt[0], s.tilt[1]);

  put(out, "command", {3}, command);
  put(out, "local_vel", {3}, {s.vx, s.vy, s.vz});
  put(out, "base_ang_vel", {}, {s.yaw_rate});
  put(out, "xd.vel", {1, 3}, {c * s.vx - sn * s.vy, sn * s.vx + c * s.vy, s.vz});
  put(out, "xd.ang", {1, 3}, {s.tilt_rate[0], s.tilt_rate[1], s.yaw_rate});
  put(out, "rot_up", {3}, {std::sin(s.tilt[0]), std::sin(s.tilt[1]), std::cos(tilt)});
  put(out, "qfrc_actuator", {kJoints}, {s.torque.begin(), s.torque.end()});
  put(out, "action", {kJoints}, {s.action.begin(), s.action.end()});
  put(out, "last_act", {kJoints}, {s.last_action.begin(), s.last_action.end()});
  put(out, "joint_angles", {kJoints}, {s.q.begin(), s.q.end()});
  put(out, "default_pose", {kJoints}, {default_pose().begin(), default_pose().end()});
  put(out, "feet_air_time", {2}, {s.air_time_export[0], s.air_time_export[1]});
  put(out, "swing_peak", {2}, {s.swing_peak_export[0], s.swing_peak_export[1]});
  put(out, "first_foot_contact", {2}, {double(s.first_contact[0]), double(s.first_contact[1])}, DType::boolean);
  put(out, "first_site_contact", {2}, {double(s.first_contact[0]), double(s.first_contact[1])}, DType::boolean);
  put(out, "foot_contact", {2}, {double(s.contact[0]), double(s.contact[1])}, DType::boolean);
  put(out, "command_norm", {}, {cmd_norm});
  put(out, "commands_norm", {}, {cmd_norm});
  put(out, "done", {}, {double(s.done)}, DType::boolean);
  put(out, "step", {}, {static_cast<double>(s.step)});
  put(out, "rz", {2}, {s.rz[0], s.rz[1]});
  put(out, "max_foot_height", {}, {max_foot_height()});

  std::vector<double> feet(6), linvel(6), angvel(6);
  const double vx_target = kMaxLinVel * mean_of(s.action, 0, 8);
  const double vy_target = kMaxLinVel * mean_of(s.action, 8, 16);
  for (int i = 0; i < 2; ++i) {
    const double ox = foot_offset_[i][0], oy = foot_offset_[i][1];
    feet[i * 3 + 0] = s.position[0] + c * ox - sn * oy;
    feet[i * 3 + 1] = s.position[1] + sn * ox + c * oy;
    feet[i * 3 + 2] = s.foot_z[i] + foot_offset_[i][2];
    if (s.contact[i]) {
      linvel[i * 3 + 0] = 0.05 * (s.vx - vx_target);
      linvel[i * 3 + 1] = 0.05 * (s.vy - vy_target);
      linvel[i * 3 + 2] = 0.0;
      angvel[i * 3 + 2] = 0.2 * s.yaw_rate;
    } else {
      linvel[i * 3 + 0] = 2.0 * s.vx;
      linvel[i * 3 + 1] = 2.0 * s.vy;
      linvel[i * 3 + 2] = s.foot_z_vel[i];
      angvel[i * 3 + 2] = s.yaw_rate;
    }
  }
  put(out, "feet_pos", {2, 3}, feet);
  put(out, "feet_site_pos", {2, 3}, feet);
  put(out, "feet_site_linvel", {2, 3}, linvel);
  put(out, "feet_site_angvel", {2, 3}, angvel);
}

namespace {

json tensor_value(const Tensor& t) {
  auto scalar = [&](double v) -> json { return t.is_boolean() ? json(v != 0.0) : json(v); };
  const auto& shape = t.shape();
  if (shape.empty()) return scalar(t[0]);
  if (shape.size() == 1) {
    json arr = json::array();
    for (std::size_t i = 0; i < shape[0]; ++i) arr.push_back(scalar(t[i]));
    return arr;
  }
  std::size_t stride = 1;
  for (std::size_t d = 1; d < shape.size(); ++d) stride *= shape[d];
  json arr = json::array();
  for (std::size_t i = 0; i < shape[0]; ++i) {
    Tensor::Shape sub(shape.begin() + 1, shape.end());
    std::vector<double> vals(t.values().begin() + i * stride, t.values().begin() + (i + 1) * stride);
    arr.push_back(tensor_value(Tensor(sub, std::move(vals), t.dtype())));
  }
  return arr;
}

void flatten(const json& v, std::vector<double>& out, const std::string& key) {
  if (v.is_array()) {
    for (const auto& e : v) flatten(e, out, key);
  } else if (v.is_boolean()) {
    out.push_back(v.get<bool>() ? 1.0 : 0.0);
  } else if (v.is_number()) {
    out.push_back(v.get<double>());
  } else {
    throw Error(ErrorCode::TraceFormatError, "binding '" + key + "' has a non-numeric element");
  }
}

}  // namespace

std::string trace_line(const TraceStep& step) {
  json bindings = json::object();
  for (const auto& [key, t] : step.bindings) {
    json entry = json::object();
    entry["shape"] = t.shape();
    entry["kind"] = t.is_boolean() ? "boolean" : "numeric";
    entry["value"] = tensor_value(t);
    bindings[key] = std::move(entry);
  }
  json line = json::object();
  line["episode"] = step.episode;
  line["step"] = step.step;
  line["bindings"] = std::move(bindings);
  return line.dump();
}

TraceStep parse_trace_line(const std::string& text) {
  json line;
  try {
    line = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::TraceFormatError, std::string("not valid JSON: ") + e.what());
  }
  if (!line.is_object() || !line.contains("episode") || !line.contains("step") || !line.contains("bindings") ||
      !line["episode"].is_number_integer() || !line["step"].is_number_integer() || !line["bindings"].is_object()) {
    throw Error(ErrorCode::TraceFormatError, "each line needs integer 'episode', 'step' and a 'bindings' object");
  }
  TraceStep step;
  step.episode = line["episode"].get<long>();
  step.step = line["step"].get<long>();
  for (const auto& [key, entry] : line["bindings"].items()) {
    if (!entry.is_object() || !entry.contains("shape") || !entry.contains("value") || !entry["shape"].is_array()) {
      throw Error(ErrorCode::TraceFormatError, "binding '" + key + "' needs 'shape' and 'value'");
    }
    Tensor::Shape shape;
    for (const auto& d : entry["shape"]) {
      if (!d.is_number_unsigned() && !(d.is_number_integer() && d.get<long>() >= 0)) {
        throw Error(ErrorCode::TraceFormatError, "binding '" + key + "' has a bad shape");
      }
      shape.push_back(d.get<std::size_t>());
    }
    DType dtype = DType::numeric;
    if (entry.contains("kind")) {
      const auto kind = entry["kind"].is_string() ? entry["kind"].get<std::string>() : "";
      if (kind == "boolean") {
        dtype = DType::boolean;
      } else if (kind != "numeric") {
        throw Error(ErrorCode::TraceFormatError, "binding '" + key + "' has unknown kind");
      }
    }
    std::vector<double> values;
    flatten(entry["value"], values, key);
    try {
      step.bindings.insert_or_assign(key, Tensor(shape, std::move(values), dtype));
    } catch (const Error& e) {
      throw Error(ErrorCode::TraceFormatError, "binding '" + key + "': " + e.message());
    }
  }
  return step;
}

ReplayEnv ReplayEnv::from_stream(std::istream& in) {
  ReplayEnv env;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      env.steps_.push_back(parse_trace_line(line));
    } catch (const Error& e) {
      throw Error(ErrorCode::TraceFormatError, "line " + std::to_string(number) + ": " + e.message());
    }
  }
  return env;
}

ReplayEnv ReplayEnv::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open trace " + path.string());
  return from_stream(in);
}

const TraceStep* ReplayEnv::next() {
  if (cursor_ >= steps_.size()) return nullptr;
  return &steps_[cursor_++];
}

void command_following_action(const EnvState& state, std::span<double> action) {
  for (std::size_t j = 0; j < action.size(); ++j) {
    const std::size_t group = std::min<std::size_t>(j / 8, 2);
    const double scale = group == 2 ? kMaxYawRate : kMaxLinVel;
    action[j] = std::clamp(state.command[group] / scale, -1.0, 1.0);
  }
}

std::vector<TraceStep> record_walker(const WalkerEnv& env, std::size_t episodes, std::uint64_t seed,
                                     const ActionFn& policy) {
  std::vector<TraceStep> trace;
  std::vector<double> action(kActionDim, 0.0);
  for (std::size_t e = 0; e < episodes; ++e) {
    EnvState state = env.reset(hash_words({seed, e}));
    while (!state.done) {
      if (policy) {
        policy(state, action);
      } else {
        command_following_action(state, action);
      }
      env.step(state, action);
      TraceStep step;
      step.episode = static_cast<long>(e);
      step.step = state.step;
      env.export_bindings(state, step.bindings);
      trace.push_back(std::move(step));
    }
  }
  return trace;
}

}  // namespace stagehand
