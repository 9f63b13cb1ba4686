#include "stagehand/schema.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>

#include "stagehand/environment.hpp"
#include "yaml_util.hpp"

namespace stagehand {
namespace fs = std::filesystem;

namespace {

using detail::yaml_bool;
using detail::yaml_integer;
using detail::yaml_kind;
using detail::yaml_number;

std::vector<std::string> split(const std::string& path) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : path) {
    if (c == '/' || c == '\\') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  return parts;
}

std::optional<std::string> normalize(const std::vector<std::string>& parts) {
  std::vector<std::string> out;
  for (const auto& p : parts) {
    if (p.empty() || p == ".") continue;
    if (p == "..") {
      if (out.empty()) return std::nullopt;
      out.pop_back();
      continue;
    }
    out.push_back(p);
  }
  std::string joined;
  for (const auto& p : out) joined += (joined.empty() ? "" : "/") + p;
  return joined;
}

bool is_yaml_name(const std::string& name) {
  return name.ends_with(".yaml") || name.ends_with(".yml");
}

std::string where(const YAML::Mark& mark) {
  return std::to_string(mark.line + 1) + ":" + std::to_string(mark.column + 1);
}

std::shared_ptr<const YAML::Node> load_yaml(const std::string& path, const std::string& text) {
  try {
    return std::make_shared<const YAML::Node>(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::ParseError, path + ":" + where(e.mark) + ": " + e.msg);
  }
}

std::optional<PromotionMode> mode_from_name(const std::string& name) {
  for (auto mode : {PromotionMode::timesteps_exhausted, PromotionMode::reward_threshold, PromotionMode::either}) {
    if (mode_name(mode) == name) return mode;
  }
  return std::nullopt;
}

bool is_power_of_two(long long v) { return v > 0 && (v & (v - 1)) == 0; }

std::string severity_name(Severity s) { return s == Severity::error ? "error" : "warning"; }

// Collects findings for one file.
class Sink {
 public:
  Sink(std::vector<Finding>& out, std::string file) : out_(out), file_(std::move(file)) {}

  void error(std::string code, std::string path, std::string message) {
    out_.push_back({Severity::error, std::move(code), file_, std::move(path), std::move(message)});
    failed_ = true;
  }
  void warn(std::string code, std::string path, std::string message) {
    out_.push_back({Severity::warning, std::move(code), file_, std::move(path), std::move(message)});
  }
  bool failed() const { return failed_; }
  const std::string& file() const { return file_; }

 private:
  std::vector<Finding>& out_;
  std::string file_;
  bool failed_ = false;
};

// Typed reads of one config section. Every accessor records its own finding and
// returns nullopt when the value is unusable.
class Section {
 public:
  Section(Sink& sink, YAML::Node node, std::string name) : sink_(sink), node_(std::move(node)), name_(std::move(name)) {}

  std::string path(const std::string& key) const { return name_ + "." + key; }

  void known(std::initializer_list<const char*> keys) {
    if (!node_.IsMap()) return;
    for (const auto& entry : node_) {
      const std::string key = entry.first.Scalar();
      if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return key == k; })) {
        sink_.warn("UNKNOWN_KEY", path(key), "unknown key ignored");
      }
    }
  }

  YAML::Node get(const std::string& key, bool required) {
    const YAML::Node& node = node_;
    const YAML::Node value = node.IsMap() ? node[key] : YAML::Node();
    if (!value && required) sink_.error("MISSING_KEY", path(key), "required key is missing");
    return value;
  }

  std::optional<double> number(const std::string& key, bool required = true) {
    const YAML::Node n = get(key, required);
    if (!n) return std::nullopt;
    const auto v = yaml_number(n);
    if (!v) {
      sink_.error("TYPE_MISMATCH", path(key), "expected a number, found " + yaml_kind(n));
      return std::nullopt;
    }
    if (!std::isfinite(*v)) {
      sink_.error("NON_FINITE", path(key), "value must be finite");
      return std::nullopt;
    }
    return v;
  }

  std::optional<long long> integer(const std::string& key, bool required = true) {
    const YAML::Node n = get(key, required);
    if (!n) return std::nullopt;
    const auto v = yaml_integer(n);
    if (!v) {
      sink_.error("TYPE_MISMATCH", path(key), "expected an integer, found " + yaml_kind(n));
      return std::nullopt;
    }
    return v;
  }

  std::optional<bool> boolean(const std::string& key, bool required = true) {
    const YAML::Node n = get(key, required);
    if (!n) return std::nullopt;
    const auto v = yaml_bool(n);
    if (!v) sink_.error("TYPE_MISMATCH", path(key), "expected true or false, found " + yaml_kind(n));
    return v;
  }

  std::optional<std::string> string(const std::string& key, bool required = true) {
    const YAML::Node n = get(key, required);
    if (!n) return std::nullopt;
    if (!n.IsScalar()) {
      sink_.error("TYPE_MISMATCH", path(key), "expected a string, found " + yaml_kind(n));
      return std::nullopt;
    }
    return n.Scalar();
  }

  std::optional<Range> range(const std::string& key, bool required = true) {
    const YAML::Node n = get(key, required);
    if (!n) return std::nullopt;
    if (!n.IsSequence() || n.size() != 2) {
      sink_.error("TYPE_MISMATCH", path(key), "expected [lo, hi], found " + yaml_kind(n));
      return std::nullopt;
    }
    const auto lo = yaml_number(n[0]);
    const auto hi = yaml_number(n[1]);
    if (!lo || !hi) {
      sink_.error("TYPE_MISMATCH", path(key), "range bounds must be numbers");
      return std::nullopt;
    }
    if (!std::isfinite(*lo) || !std::isfinite(*hi)) {
      sink_.error("NON_FINITE", path(key), "range bounds must be finite");
      return std::nullopt;
    }
    if (*lo > *hi) {
      sink_.error("RANGE_INVERTED", path(key), "lower bound exceeds upper bound");
      return std::nullopt;
    }
    return Range{*lo, *hi};
  }

  std::optional<std::vector<std::string>> strings(const std::string& key, bool required = true) {
    const YAML::Node n = get(key, required);
    if (!n) return std::nullopt;
    if (!n.IsSequence()) {
      sink_.error("TYPE_MISMATCH", path(key), "expected a list of strings, found " + yaml_kind(n));
      return std::nullopt;
    }
    std::vector<std::string> out;
    for (const auto& item : n) {
      if (!item.IsScalar()) {
        sink_.error("TYPE_MISMATCH", path(key), "expected a list of strings");
        return std::nullopt;
      }
      out.push_back(item.Scalar());
    }
    return out;
  }

  std::optional<std::vector<long>> sizes(const std::string& key) {
    const YAML::Node n = get(key, true);
    if (!n) return std::nullopt;
    if (!n.IsSequence() || n.size() == 0) {
      sink_.error("TYPE_MISMATCH", path(key), "expected a non-empty list of layer sizes, found " + yaml_kind(n));
      return std::nullopt;
    }
    std::vector<long> out;
    for (std::size_t i = 0; i < n.size(); ++i) {
      const auto v = yaml_integer(n[i]);
      if (!v) {
        sink_.error("TYPE_MISMATCH", path(key) + "[" + std::to_string(i) + "]", "layer size must be an integer");
        return std::nullopt;
      }
      if (*v <= 0) {
        sink_.error("OUT_OF_RANGE", path(key) + "[" + std::to_string(i) + "]", "layer size must be positive");
        return std::nullopt;
      }
      out.push_back(static_cast<long>(*v));
    }
    return out;
  }

  template <class T>
  void require(const std::string& key, const std::optional<T>& v, bool ok, const std::string& what) {
    if (v && !ok) sink_.error("OUT_OF_RANGE", path(key), "must be " + what);
  }

 private:
  Sink& sink_;
  YAML::Node node_;
  std::string name_;
};

template <class T, class U>
void assign(T& dst, const std::optional<U>& v) {
  if (v) dst = static_cast<T>(*v);
}

std::optional<ConfigSpec> check_config(const YAML::Node& root, Sink& sink) {
  if (!root.IsMap()) {
    sink.error("TYPE_MISMATCH", "", "config must be a mapping");
    return std::nullopt;
  }
  for (const auto& entry : root) {
    const std::string key = entry.first.Scalar();
    static const std::set<std::string> top = {"environment", "render",   "trainer",
                                              "randomization", "artifact", "ppo_network"};
    if (!top.count(key)) sink.warn("UNKNOWN_KEY", key, "unknown top-level key ignored");
  }
  auto section = [&](const char* name) {
    YAML::Node node = root[name];
    if (!node) {
      sink.error("MISSING_KEY", name, "required section is missing");
    } else if (!node.IsMap()) {
      sink.error("TYPE_MISMATCH", name, "section must be a mapping");
    }
    return Section(sink, node, name);
  };

  ConfigSpec spec;

  Section env = section("environment");
  env.known({"scene_file", "reward_config_path", "obs_noise", "imu_disturbs", "init_rand", "big_min_kick_vel",
             "big_max_kick_vel", "big_kick_interval", "small_min_kick_vel", "small_max_kick_vel",
             "small_kick_interval", "fixed_command", "command_lin_vel_x_range", "command_lin_vel_y_range",
             "command_ang_vel_yaw_range", "command_stand_prob", "cutoff_freq", "deadband_size",
             "low_cmd_boost_scale", "gait_frequency", "gaits", "foot_height_range", "max_foot_height"});
  {
    auto& e = spec.environment;
    assign(e.scene_file, env.string("scene_file"));
    assign(e.reward_config_path, env.string("reward_config_path"));
    const auto obs_noise = env.number("obs_noise");
    env.require("obs_noise", obs_noise, obs_noise && *obs_noise >= 0, "non-negative");
    assign(e.obs_noise, obs_noise);
    assign(e.imu_disturbs, env.boolean("imu_disturbs"));
    assign(e.init_rand, env.boolean("init_rand"));
    for (const char* size : {"big", "small"}) {
      const std::string lo_key = std::string(size) + "_min_kick_vel";
      const std::string hi_key = std::string(size) + "_max_kick_vel";
      const std::string iv_key = std::string(size) + "_kick_interval";
      const auto lo = env.number(lo_key);
      const auto hi = env.number(hi_key);
      const auto interval = env.integer(iv_key);
      env.require(lo_key, lo, lo && *lo >= 0, "non-negative");
      if (lo && hi && *lo > *hi) {
        sink.error("RANGE_INVERTED", env.path(lo_key), "minimum kick exceeds " + hi_key);
      }
      env.require(iv_key, interval, interval && *interval >= 1, "at least 1");
      const bool big = size[0] == 'b';
      assign(big ? e.big_min_kick_vel : e.small_min_kick_vel, lo);
      assign(big ? e.big_max_kick_vel : e.small_max_kick_vel, hi);
      assign(big ? e.big_kick_interval : e.small_kick_interval, interval);
    }
    assign(e.fixed_command, env.boolean("fixed_command"));
    assign(e.command_lin_vel_x_range, env.range("command_lin_vel_x_range"));
    assign(e.command_lin_vel_y_range, env.range("command_lin_vel_y_range"));
    assign(e.command_ang_vel_yaw_range, env.range("command_ang_vel_yaw_range"));
    const auto stand = env.number("command_stand_prob");
    env.require("command_stand_prob", stand, stand && *stand >= 0 && *stand <= 1, "a probability in [0, 1]");
    assign(e.command_stand_prob, stand);
    const auto cutoff = env.number("cutoff_freq");
    env.require("cutoff_freq", cutoff, cutoff && *cutoff > 0, "positive");
    assign(e.cutoff_freq, cutoff);
    const auto deadband = env.number("deadband_size");
    env.require("deadband_size", deadband, deadband && *deadband >= 0, "non-negative");
    assign(e.deadband_size, deadband);
    if (const auto boost = env.number("low_cmd_boost_scale", false)) e.low_cmd_boost_scale = *boost;
    const auto freq = env.range("gait_frequency");
    env.require("gait_frequency", freq, freq && freq->lo > 0, "positive");
    assign(e.gait_frequency, freq);
    if (const auto gaits = env.strings("gaits")) {
      if (gaits->empty()) sink.error("OUT_OF_RANGE", env.path("gaits"), "at least one gait is required");
      for (const auto& g : *gaits) {
        const auto& known = known_gaits();
        if (std::find(known.begin(), known.end(), g) == known.end()) {
          sink.error("UNKNOWN_GAIT", env.path("gaits"), "'" + g + "' is not a known gait");
        }
      }
      e.gaits = *gaits;
    }
    const auto feet = env.range("foot_height_range");
    env.require("foot_height_range", feet, feet && feet->lo >= 0 && feet->hi > 0, "non-negative with hi > 0");
    assign(e.foot_height_range, feet);
    if (const auto mfh = env.number("max_foot_height", false)) {
      env.require("max_foot_height", mfh, *mfh > 0, "positive");
      e.max_foot_height = *mfh;
    }
  }

  Section tr = section("trainer");
  tr.known({"num_timesteps", "num_evals", "reward_scaling", "episode_length", "normalize_observations",
            "action_repeat", "unroll_length", "num_minibatches", "num_updates_per_batch", "discounting",
            "learning_rate", "entropy_cost", "num_envs", "batch_size", "seed", "clipping_epsilon", "gae_lambda",
            "value_loss_coef", "max_grad_norm"});
  {
    auto& t = spec.trainer;
    auto positive_int = [&](const char* key, auto& dst) {
      const auto v = tr.integer(key);
      tr.require(key, v, v && *v >= 1, "at least 1");
      assign(dst, v);
      return v;
    };
    positive_int("num_timesteps", t.num_timesteps);
    positive_int("num_evals", t.num_evals);
    positive_int("episode_length", t.episode_length);
    positive_int("action_repeat", t.action_repeat);
    positive_int("unroll_length", t.unroll_length);
    const auto minibatches = positive_int("num_minibatches", t.num_minibatches);
    positive_int("num_updates_per_batch", t.num_updates_per_batch);
    const auto envs = positive_int("num_envs", t.num_envs);
    const auto batch = positive_int("batch_size", t.batch_size);
    if (envs && *envs >= 1 && !is_power_of_two(*envs)) {
      sink.error("POWER_OF_TWO", tr.path("num_envs"), std::to_string(*envs) + " is not a power of two");
    }
    if (batch && *batch >= 1 && !is_power_of_two(*batch)) {
      sink.error("POWER_OF_TWO", tr.path("batch_size"), std::to_string(*batch) + " is not a power of two");
    }
    if (envs && batch && minibatches && *envs >= 1 && *batch >= 1 && *minibatches >= 1 &&
        (*batch * *minibatches) % *envs != 0) {
      sink.error("BATCH_DIVISIBILITY", tr.path("batch_size"),
                 "batch_size * num_minibatches must be a multiple of num_envs");
    }
    const auto scaling = tr.number("reward_scaling");
    tr.require("reward_scaling", scaling, scaling && *scaling > 0, "positive");
    assign(t.reward_scaling, scaling);
    assign(t.normalize_observations, tr.boolean("normalize_observations"));
    const auto gamma = tr.number("discounting");
    tr.require("discounting", gamma, gamma && *gamma > 0 && *gamma < 1, "in (0, 1)");
    assign(t.discounting, gamma);
    const auto lr = tr.number("learning_rate");
    tr.require("learning_rate", lr, lr && *lr > 0, "positive");
    assign(t.learning_rate, lr);
    const auto entropy = tr.number("entropy_cost");
    tr.require("entropy_cost", entropy, entropy && *entropy >= 0, "non-negative");
    assign(t.entropy_cost, entropy);
    const auto seed = tr.integer("seed");
    tr.require("seed", seed, seed && *seed >= 0, "non-negative");
    assign(t.seed, seed);
    const auto eps = tr.number("clipping_epsilon");
    tr.require("clipping_epsilon", eps, eps && *eps > 0, "positive");
    assign(t.clipping_epsilon, eps);
    if (const auto lambda = tr.number("gae_lambda", false)) {
      tr.require("gae_lambda", lambda, *lambda >= 0 && *lambda <= 1, "in [0, 1]");
      t.gae_lambda = *lambda;
    }
    if (const auto vc = tr.number("value_loss_coef", false)) {
      tr.require("value_loss_coef", vc, *vc >= 0, "non-negative");
      t.value_loss_coef = *vc;
    }
    if (const auto clip = tr.number("max_grad_norm", false)) {
      tr.require("max_grad_norm", clip, *clip > 0, "positive");
      t.max_grad_norm = *clip;
    }
  }

  Section rnd = section("randomization");
  rnd.known({"randomize", "randomize_config_path"});
  assign(spec.randomization.randomize, rnd.boolean("randomize"));
  assign(spec.randomization.randomize_config_path, rnd.string("randomize_config_path"));

  Section art = section("artifact");
  art.known({"resume_from_checkpoint", "master_path", "checkpoint"});
  assign(spec.artifact.resume_from_checkpoint, art.boolean("resume_from_checkpoint"));

  Section net = section("ppo_network");
  net.known({"policy_hidden_layer_sizes", "value_hidden_layer_sizes", "activation", "policy_obs_key", "value_obs_key"});
  assign(spec.network.policy_hidden_layer_sizes, net.sizes("policy_hidden_layer_sizes"));
  assign(spec.network.value_hidden_layer_sizes, net.sizes("value_hidden_layer_sizes"));
  if (const auto act = net.string("activation")) {
    const auto& known = known_activations();
    if (std::find(known.begin(), known.end(), *act) == known.end()) {
      sink.error("UNKNOWN_ACTIVATION", net.path("activation"), "'" + *act + "' is not a known activation");
    }
    spec.network.activation = *act;
  }
  assign(spec.network.policy_obs_key, net.string("policy_obs_key"));
  assign(spec.network.value_obs_key, net.string("value_obs_key"));

  if (sink.failed()) return std::nullopt;
  return spec;
}

std::optional<RewardProgram> check_reward(const YAML::Node& root, Sink& sink) {
  if (!root.IsMap() || !root["reward"]) {
    sink.error("BAD_TOP_LEVEL_KEY", "", "the top-level key must be reward:");
    return std::nullopt;
  }
  for (const auto& entry : root) {
    if (entry.first.Scalar() != "reward") sink.warn("UNKNOWN_KEY", entry.first.Scalar(), "unknown top-level key ignored");
  }
  std::vector<RewardIssue> issues;
  CompileOptions options;
  options.known_variables = &binding_keys();
  auto program = compile_reward(root["reward"], options, issues);
  for (const auto& issue : issues) {
    const std::string code(code_name(issue.code));
    if (issue.warning) {
      sink.warn(code, issue.path, issue.message);
    } else {
      sink.error(code, issue.path, issue.message);
    }
  }
  return program;
}

std::optional<RandomizeSpec> check_randomize(const YAML::Node& root, Sink& sink) {
  if (!root.IsMap() || !root["randomization"]) {
    sink.error("BAD_TOP_LEVEL_KEY", "", "the top-level key must be randomization:");
    return std::nullopt;
  }
  for (const auto& entry : root) {
    if (entry.first.Scalar() != "randomization") {
      sink.warn("UNKNOWN_KEY", entry.first.Scalar(), "unknown top-level key ignored");
    }
  }
  std::vector<RandomizeIssue> issues;
  auto spec = parse_randomize(root["randomization"], issues);
  for (const auto& issue : issues) {
    const std::string code(code_name(issue.code));
    if (issue.warning) {
      sink.warn(code, issue.path, issue.message);
    } else {
      sink.error(code, issue.path, issue.message);
    }
  }
  if (!spec) return std::nullopt;
  // Rules must also apply to the walker's actual parameter set.
  try {
    (void)resample_per_env(*spec, desk_nominal_scene(), 0, 0);
  } catch (const Error& e) {
    sink.error(std::string(code_name(e.code())), "randomization", e.message());
    return std::nullopt;
  }
  return spec;
}

// One step of the walker under the stage's config, with the reward evaluated on
// the exported bindings. Catches shape and domain errors no static rule sees.
void dry_run(const ConfigSpec& config, const RewardProgram& program, const RandomizeSpec* randomize,
             Sink& reward_sink) {
  try {
    SceneParameters scene = randomize ? sample(*randomize, desk_nominal_scene(), 0) : desk_nominal_scene();
    WalkerEnv env(config.environment, config.trainer.episode_length, std::move(scene));
    EnvState state = env.reset(0);
    std::vector<double> action(kActionDim, 0.0);
    env.step(state, action);
    Bindings bindings;
    env.export_bindings(state, bindings);
    for (const auto& term : program.terms) {
      try {
        const double value = eval_term(term, bindings);
        if (!std::isfinite(value)) {
          reward_sink.error("NON_FINITE", "reward." + term.name, "term evaluates to a non-finite value");
        }
      } catch (const Error& e) {
        reward_sink.error(std::string(code_name(e.code())), "reward." + term.name, e.message());
      }
    }
  } catch (const Error& e) {
    reward_sink.error(std::string(code_name(e.code())), "", "environment dry run failed: " + e.message());
  }
}

struct Analysis {
  ValidationReport report;
  WorkflowSpec workflow;
  std::vector<StagePlan> plans;
};

Analysis analyze(const CurriculumBundle& bundle) {
  Analysis out;
  std::vector<Finding>& findings = out.report.findings;
  Sink wf(findings, bundle.workflow.path);
  const YAML::Node& root = *bundle.workflow.root;

  for (const auto& entry : root) {
    if (entry.first.Scalar() != "workflow") wf.warn("UNKNOWN_KEY", entry.first.Scalar(), "unknown top-level key ignored");
  }
  const YAML::Node workflow = root["workflow"];
  for (const auto& entry : workflow) {
    const std::string key = entry.first.Scalar();
    if (key != "name" && key != "task_prompt_digest" && key != "stages") {
      wf.warn("UNKNOWN_KEY", "workflow." + key, "unknown key ignored");
    }
  }
  if (workflow["name"] && workflow["name"].IsScalar()) out.workflow.name = workflow["name"].Scalar();
  if (workflow["task_prompt_digest"] && workflow["task_prompt_digest"].IsScalar()) {
    out.workflow.task_prompt_digest = workflow["task_prompt_digest"].Scalar();
  }
  const YAML::Node stages = workflow["stages"];
  if (stages.size() == 0) wf.error("MISSING_KEY", "workflow.stages", "at least one stage is required");

  for (std::size_t i = 0; i < stages.size(); ++i) {
    const YAML::Node s = stages[i];
    const std::string base = "workflow.stages[" + std::to_string(i) + "]";
    Section sec(wf, s, base);
    sec.known({"index", "reward", "config", "randomize", "resume_from_checkpoint", "feedback", "promotion"});
    const auto index = sec.integer("index");
    if (index && *index != static_cast<long long>(i + 1)) {
      wf.error("STAGE_INDEX", sec.path("index"),
               "stage indices must run 1..K in order; expected " + std::to_string(i + 1));
    }
    const auto resume = sec.boolean("resume_from_checkpoint");
    if (i == 0 && resume && *resume) {
      wf.error("RESUME_FIRST_STAGE", sec.path("resume_from_checkpoint"), "the first stage cannot resume");
    }
    sec.boolean("feedback");
    if (const YAML::Node promo = s["promotion"]) {
      Section p(wf, promo, base + ".promotion");
      p.known({"mode", "threshold"});
      if (const auto mode = p.string("mode")) {
        if (!mode_from_name(*mode)) {
          wf.error("UNKNOWN_PROMOTION_MODE", p.path("mode"),
                   "'" + *mode + "' is not one of timesteps_exhausted, reward_threshold, either");
        }
      }
      p.number("threshold");
    }
  }
  for (const auto& ref : bundle.stages) out.workflow.stages.push_back(ref);

  std::optional<NetworkConfig> first_network;
  std::string first_network_file;
  for (const StageRef& ref : bundle.stages) {
    StagePlan plan;
    plan.ref = ref;
    const SourceDocument& cfg_doc = bundle.documents.at(ref.config_path);
    const SourceDocument& rew_doc = bundle.documents.at(ref.reward_path);
    const SourceDocument& rnd_doc = bundle.documents.at(ref.randomize_path);
    plan.config_text = cfg_doc.text;
    plan.reward_text = rew_doc.text;
    plan.randomize_text = rnd_doc.text;

    Sink cfg_sink(findings, cfg_doc.path);
    Sink rew_sink(findings, rew_doc.path);
    Sink rnd_sink(findings, rnd_doc.path);
    const auto config = check_config(*cfg_doc.root, cfg_sink);
    const auto reward = check_reward(*rew_doc.root, rew_sink);
    const auto randomize = check_randomize(*rnd_doc.root, rnd_sink);

    const YAML::Node env_node = (*cfg_doc.root)["environment"];
    const YAML::Node rnd_node = (*cfg_doc.root)["randomization"];
    auto check_ref = [&](const YAML::Node& section, const char* key, const std::string& expected,
                         const std::string& path) {
      if (!section.IsMap() || !section[key] || !section[key].IsScalar()) return;
      const auto resolved = resolve_path(cfg_doc.path, section[key].Scalar());
      if (!resolved || *resolved != expected) {
        cfg_sink.error("PATH_MISMATCH", path,
                       "'" + section[key].Scalar() + "' does not point at the stage's file " + expected);
      }
    };
    check_ref(env_node, "reward_config_path", ref.reward_path, "environment.reward_config_path");
    check_ref(rnd_node, "randomize_config_path", ref.randomize_path, "randomization.randomize_config_path");

    if (config) {
      if (config->artifact.resume_from_checkpoint != ref.resume_from_checkpoint) {
        cfg_sink.error("RESUME_MISMATCH", "artifact.resume_from_checkpoint",
                       "disagrees with the workflow's resume_from_checkpoint for stage " + std::to_string(ref.index));
      }
      if (!first_network) {
        first_network = config->network;
        first_network_file = cfg_doc.path;
      } else if (config->network.policy_hidden_layer_sizes != first_network->policy_hidden_layer_sizes ||
                 config->network.value_hidden_layer_sizes != first_network->value_hidden_layer_sizes ||
                 config->network.activation != first_network->activation) {
        cfg_sink.error("NETWORK_INCONSISTENT", "ppo_network",
                       "network shape differs from " + first_network_file + "; it must match across stages");
      }
    }
    if (config && reward) {
      dry_run(*config, *reward, randomize && config->randomization.randomize ? &*randomize : nullptr, rew_sink);
    }
    if (config && reward && randomize && !cfg_sink.failed() && !rew_sink.failed() && !rnd_sink.failed()) {
      plan.config = *config;
      plan.reward = *reward;
      plan.randomize = *randomize;
      out.plans.push_back(std::move(plan));
    }
  }

  out.report.ok = std::none_of(findings.begin(), findings.end(),
                               [](const Finding& f) { return f.severity == Severity::error; });
  return out;
}

}  // namespace

std::string_view mode_name(PromotionMode mode) noexcept {
  switch (mode) {
    case PromotionMode::timesteps_exhausted: return "timesteps_exhausted";
    case PromotionMode::reward_threshold: return "reward_threshold";
    case PromotionMode::either: return "either";
  }
  return "timesteps_exhausted";
}

std::optional<std::string> resolve_path(const std::string& from, const std::string& reference) {
  if (reference.empty() || reference.front() == '/' || reference.front() == '\\') return std::nullopt;
  auto parts = split(from);
  parts.pop_back();
  for (auto& p : split(reference)) parts.push_back(std::move(p));
  auto out = normalize(parts);
  if (!out || out->empty()) return std::nullopt;
  return out;
}

BundleSources load_sources(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw Error(ErrorCode::MissingFile, dir.string() + " is not a directory");
  BundleSources sources;
  for (auto it = fs::recursive_directory_iterator(dir, ec); !ec && it != fs::recursive_directory_iterator();
       it.increment(ec)) {
    if (!it->is_regular_file()) continue;
    const std::string rel = fs::relative(it->path(), dir).generic_string();
    if (!is_yaml_name(rel)) continue;
    std::ifstream in(it->path(), std::ios::binary);
    std::ostringstream text;
    text << in.rdbuf();
    sources.files[rel] = text.str();
  }
  if (sources.files.count("workflow.yaml")) {
    sources.workflow_path = "workflow.yaml";
  } else {
    for (const auto& [path, text] : sources.files) {
      if (path.starts_with("workflows/") && path.find('/', 10) == std::string::npos) {
        sources.workflow_path = path;
        break;
      }
    }
  }
  if (sources.workflow_path.empty()) {
    throw Error(ErrorCode::MissingFile, "no workflow.yaml or workflows/*.yaml in " + dir.string());
  }
  return sources;
}

CurriculumBundle parse_sources(const BundleSources& sources, const ParseOptions& options) {
  CurriculumBundle bundle;
  bundle.sources = sources;
  bundle.up_to_stage = options.up_to_stage;

  const auto wf_text = sources.files.find(sources.workflow_path);
  if (wf_text == sources.files.end()) {
    throw Error(ErrorCode::MissingFile, "workflow file '" + sources.workflow_path + "' is missing");
  }
  bundle.workflow = {sources.workflow_path, wf_text->second, load_yaml(sources.workflow_path, wf_text->second)};
  const YAML::Node& root = *bundle.workflow.root;
  const std::string& wf_path = sources.workflow_path;
  if (!root.IsMap() || !root["workflow"] || !root["workflow"].IsMap()) {
    throw Error(ErrorCode::ParseError, wf_path + ": the top-level key must be workflow:");
  }
  const YAML::Node stages = root["workflow"]["stages"];
  if (stages && !stages.IsSequence()) {
    throw Error(ErrorCode::ParseError, wf_path + ":" + where(stages.Mark()) + ": workflow.stages must be a list");
  }

  for (std::size_t i = 0; i < stages.size(); ++i) {
    const YAML::Node s = stages[i];
    if (!s.IsMap()) {
      throw Error(ErrorCode::ParseError, wf_path + ":" + where(s.Mark()) + ": stage entry must be a mapping");
    }
    StageRef ref;
    ref.index = static_cast<long>(yaml_integer(s["index"]).value_or(static_cast<long long>(i + 1)));
    if (options.up_to_stage && static_cast<long>(i + 1) > *options.up_to_stage) break;
    ref.resume_from_checkpoint = yaml_bool(s["resume_from_checkpoint"]).value_or(false);
    ref.feedback = yaml_bool(s["feedback"]).value_or(false);
    if (const YAML::Node promo = s["promotion"]; promo && promo.IsMap()) {
      if (promo["mode"] && promo["mode"].IsScalar()) {
        ref.promotion.mode = mode_from_name(promo["mode"].Scalar()).value_or(PromotionMode::timesteps_exhausted);
      }
      ref.promotion.threshold = yaml_number(promo["threshold"]).value_or(0.0);
    }

    auto locate = [&](const char* kind, std::string& written, std::string& resolved) {
      const YAML::Node n = s[kind];
      if (!n || !n.IsScalar()) {
        throw Error(ErrorCode::ParseError, wf_path + ":" + where(s.Mark()) + ": stage " + std::to_string(i + 1) +
                                               " needs a '" + kind + "' file path");
      }
      written = n.Scalar();
      const auto path = resolve_path(wf_path, written);
      if (!path || !sources.files.count(*path)) {
        throw Error(ErrorCode::MissingFile, "stage " + std::to_string(i + 1) + " " + kind + " file '" + written +
                                                "' not found in the bundle");
      }
      resolved = *path;
      if (!bundle.documents.count(resolved)) {
        const std::string& text = sources.files.at(resolved);
        bundle.documents[resolved] = {resolved, text, load_yaml(resolved, text)};
      }
    };
    locate("reward", ref.reward_ref, ref.reward_path);
    locate("config", ref.config_ref, ref.config_path);
    locate("randomize", ref.randomize_ref, ref.randomize_path);

    const YAML::Node& reward_root = *bundle.documents.at(ref.reward_path).root;
    if (!reward_root.IsMap() || !reward_root["reward"]) {
      std::string found = reward_root.IsMap() && reward_root.size() > 0 ? reward_root.begin()->first.Scalar() : "";
      throw Error(ErrorCode::ParseError, ref.reward_path + ":1:1: the top-level key must be reward:" +
                                             (found.empty() ? std::string() : " (found " + found + ":)"));
    }
    bundle.stages.push_back(std::move(ref));
  }
  return bundle;
}

CurriculumBundle parse_bundle(const fs::path& dir, const ParseOptions& options) {
  return parse_sources(load_sources(dir), options);
}

bool ValidationReport::has(std::string_view code) const {
  return std::any_of(findings.begin(), findings.end(), [&](const Finding& f) { return f.code == code; });
}

std::size_t ValidationReport::error_count() const {
  return static_cast<std::size_t>(
      std::count_if(findings.begin(), findings.end(), [](const Finding& f) { return f.severity == Severity::error; }));
}

ValidationReport validate(const CurriculumBundle& bundle) { return analyze(bundle).report; }

ValidationReport check_sources(const BundleSources& sources, const ParseOptions& options) {
  try {
    return validate(parse_sources(sources, options));
  } catch (const Error& e) {
    ValidationReport report;
    report.ok = false;
    report.findings.push_back({Severity::error, std::string(code_name(e.code())), sources.workflow_path, "", e.message()});
    return report;
  }
}

std::string format_report(const ValidationReport& report) {
  std::ostringstream out;
  std::size_t warnings = 0;
  for (const auto& f : report.findings) {
    if (f.severity == Severity::warning) ++warnings;
    out << severity_name(f.severity) << " " << f.code << " " << f.file;
    if (!f.path.empty()) out << ":" << f.path;
    out << ": " << f.message << "\n";
  }
  out << (report.ok ? "ok" : "invalid") << ": " << report.error_count() << " error(s), " << warnings
      << " warning(s)\n";
  return out.str();
}

std::string report_to_json(const ValidationReport& report) {
  nlohmann::json j;
  j["ok"] = report.ok;
  j["findings"] = nlohmann::json::array();
  for (const auto& f : report.findings) {
    j["findings"].push_back({{"severity", severity_name(f.severity)},
                             {"code", f.code},
                             {"file", f.file},
                             {"path", f.path},
                             {"message", f.message}});
  }
  return j.dump(2);
}

ValidationReport report_from_json(const std::string& text) {
  ValidationReport report;
  try {
    const auto j = nlohmann::json::parse(text);
    report.ok = j.at("ok").get<bool>();
    for (const auto& f : j.at("findings")) {
      report.findings.push_back({f.at("severity").get<std::string>() == "error" ? Severity::error : Severity::warning,
                                 f.at("code").get<std::string>(), f.at("file").get<std::string>(),
                                 f.at("path").get<std::string>(), f.at("message").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("validation report: ") + e.what());
  }
  return report;
}

const StagePlan& CompiledBundle::stage(long index) const {
  for (const auto& s : stages_) {
    if (s.ref.index == index) return s;
  }
  throw Error(ErrorCode::InvalidArgument, "no stage " + std::to_string(index));
}

CompiledBundle compile_bundle(const CurriculumBundle& bundle) {
  Analysis a = analyze(bundle);
  if (!a.report.ok) {
    std::string message = "bundle has " + std::to_string(a.report.error_count()) + " error(s)";
    for (const auto& f : a.report.findings) {
      if (f.severity == Severity::error) message += "\n  " + f.code + " " + f.file + ":" + f.path + ": " + f.message;
    }
    throw Error(ErrorCode::ValidationFailed, message);
  }
  CompiledBundle out;
  out.workflow_ = std::move(a.workflow);
  out.stages_ = std::move(a.plans);
  out.report_ = std::move(a.report);
  return out;
}

// ---------------------------------------------------------------------------
// Mutation corpus

namespace {

using Rng = std::mt19937_64;

std::string num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::size_t pick(Rng& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

template <class T>
const T& choose(Rng& rng, const std::vector<T>& items) {
  return items[pick(rng, items.size())];
}

YAML::Node rename_key(const YAML::Node& map, const std::string& from, const std::string& to) {
  YAML::Node out(YAML::NodeType::Map);
  for (const auto& entry : map) {
    const std::string key = entry.first.Scalar();
    out[key == from ? to : key] = entry.second;
  }
  return out;
}

std::vector<std::string> keys_of(const YAML::Node& map) {
  std::vector<std::string> keys;
  if (map.IsMap()) {
    for (const auto& entry : map) keys.push_back(entry.first.Scalar());
  }
  return keys;
}

std::string emit(const YAML::Node& node) {
  YAML::Emitter out;
  out << node;
  return std::string(out.c_str()) + "\n";
}

struct Recipe {
  std::string code;
  std::string kind;  // workflow, config, reward, randomize
  // Edits the cloned document and returns a short description, or nullopt if
  // the recipe has nothing to act on in this bundle.
  std::function<std::optional<std::string>(YAML::Node&, Rng&)> apply;
};

std::vector<Recipe> recipes(const StageRef& stage) {
  std::vector<Recipe> r;
  auto cfg = [&](std::string code, auto fn) { r.push_back({std::move(code), "config", fn}); };
  auto rew = [&](std::string code, auto fn) { r.push_back({std::move(code), "reward", fn}); };
  auto rnd = [&](std::string code, auto fn) { r.push_back({std::move(code), "randomize", fn}); };
  auto wfl = [&](std::string code, auto fn) { r.push_back({std::move(code), "workflow", fn}); };
  using Out = std::optional<std::string>;

  cfg("POWER_OF_TWO", [](YAML::Node& d, Rng& g) -> Out {
    const long v = choose(g, std::vector<long>{500, 384, 768, 100, 1000});
    d["trainer"]["batch_size"] = v;
    return "trainer.batch_size=" + num(static_cast<double>(v));
  });
  cfg("POWER_OF_TWO", [](YAML::Node& d, Rng& g) -> Out {
    const long v = choose(g, std::vector<long>{1000, 3000, 6000, 96});
    d["trainer"]["num_envs"] = v;
    return "trainer.num_envs=" + num(static_cast<double>(v));
  });
  cfg("RANGE_INVERTED", [](YAML::Node& d, Rng& g) -> Out {
    std::vector<std::string> open;
    for (const char* key : {"command_lin_vel_x_range", "command_lin_vel_y_range", "command_ang_vel_yaw_range"}) {
      const YAML::Node n = d["environment"][key];
      if (yaml_number(n[0]).value_or(0) < yaml_number(n[1]).value_or(0)) open.push_back(key);
    }
    if (open.empty()) return std::nullopt;
    const std::string key = choose(g, open);
    YAML::Node n = d["environment"][key];
    const std::string lo = n[0].Scalar(), hi = n[1].Scalar();
    n[0] = hi;
    n[1] = lo;
    return "environment." + key + " swapped";
  });
  cfg("RANGE_INVERTED", [](YAML::Node& d, Rng&) -> Out {
    YAML::Node n = d["environment"]["gait_frequency"];
    const double lo = yaml_number(n[0]).value_or(0), hi = yaml_number(n[1]).value_or(0);
    n[0] = hi + 0.5;
    n[1] = lo;
    return std::string("environment.gait_frequency inverted");
  });
  cfg("OUT_OF_RANGE", [](YAML::Node& d, Rng& g) -> Out {
    const double v = choose(g, std::vector<double>{1.5, -0.2, 2.0});
    d["environment"]["command_stand_prob"] = v;
    return "environment.command_stand_prob=" + num(static_cast<double>(v));
  });
  cfg("OUT_OF_RANGE", [](YAML::Node& d, Rng& g) -> Out {
    const double v = choose(g, std::vector<double>{1.5, 0.0, -0.3, 1.0});
    d["trainer"]["discounting"] = v;
    return "trainer.discounting=" + num(static_cast<double>(v));
  });
  cfg("OUT_OF_RANGE", [](YAML::Node& d, Rng& g) -> Out {
    const double v = choose(g, std::vector<double>{-0.2, 0.0});
    d["trainer"]["clipping_epsilon"] = v;
    return "trainer.clipping_epsilon=" + num(static_cast<double>(v));
  });
  cfg("OUT_OF_RANGE", [](YAML::Node& d, Rng& g) -> Out {
    const double v = choose(g, std::vector<double>{0.0, -1e-4});
    d["trainer"]["learning_rate"] = v;
    return "trainer.learning_rate=" + num(static_cast<double>(v));
  });
  cfg("OUT_OF_RANGE", [](YAML::Node& d, Rng& g) -> Out {
    const char* key = pick(g, 2) ? "big_kick_interval" : "small_kick_interval";
    d["environment"][key] = 0;
    return std::string("environment.") + key + "=0";
  });
  cfg("OUT_OF_RANGE", [](YAML::Node& d, Rng& g) -> Out {
    YAML::Node sizes = d["ppo_network"]["policy_hidden_layer_sizes"];
    if (!sizes.IsSequence() || sizes.size() == 0) return std::nullopt;
    const std::size_t i = pick(g, sizes.size());
    sizes[i] = -64;
    return "ppo_network.policy_hidden_layer_sizes[" + std::to_string(i) + "]=-64";
  });
  cfg("TYPE_MISMATCH", [](YAML::Node& d, Rng&) -> Out {
    d["trainer"]["num_envs"] = "many";
    return std::string("trainer.num_envs=many");
  });
  cfg("TYPE_MISMATCH", [](YAML::Node& d, Rng&) -> Out {
    d["environment"]["init_rand"] = "maybe";
    return std::string("environment.init_rand=maybe");
  });
  cfg("MISSING_KEY", [](YAML::Node& d, Rng& g) -> Out {
    static const std::vector<std::string> required = {
        "num_timesteps", "num_evals",    "episode_length", "unroll_length", "num_minibatches",
        "discounting",   "learning_rate", "entropy_cost",  "num_envs",      "batch_size",
        "seed",          "clipping_epsilon"};
    const std::string key = choose(g, required);
    d["trainer"] = rename_key(d["trainer"], key, key + "s");
    return "trainer." + key + " renamed to " + key + "s";
  });
  cfg("MISSING_KEY", [](YAML::Node& d, Rng&) -> Out {
    d["environment"].remove("scene_file");
    return std::string("environment.scene_file deleted");
  });
  cfg("UNKNOWN_ACTIVATION", [](YAML::Node& d, Rng& g) -> Out {
    const std::string v = choose(g, std::vector<std::string>{"sigmoidish", "gelu", "Swish"});
    d["ppo_network"]["activation"] = v;
    return "ppo_network.activation=" + v;
  });
  cfg("UNKNOWN_GAIT", [](YAML::Node& d, Rng&) -> Out {
    YAML::Node gaits(YAML::NodeType::Sequence);
    gaits.push_back("crawl");
    d["environment"]["gaits"] = gaits;
    return std::string("environment.gaits=[crawl]");
  });
  cfg("PATH_MISMATCH", [](YAML::Node& d, Rng&) -> Out {
    d["randomization"]["randomize_config_path"] = "../randomize/nonexistent.yaml";
    return std::string("randomization.randomize_config_path dangling");
  });
  cfg("PATH_MISMATCH", [](YAML::Node& d, Rng&) -> Out {
    d["environment"]["reward_config_path"] = "../rewards/other_reward.yaml";
    return std::string("environment.reward_config_path dangling");
  });
  cfg("RESUME_MISMATCH", [](YAML::Node& d, Rng&) -> Out {
    d["artifact"]["resume_from_checkpoint"] = !yaml_bool(d["artifact"]["resume_from_checkpoint"]).value_or(false);
    return std::string("artifact.resume_from_checkpoint flipped");
  });

  auto term_names = [](YAML::Node& d) { return keys_of(d["reward"]); };
  rew("UNKNOWN_EVALUATION", [=](YAML::Node& d, Rng& g) -> Out {
    const auto terms = term_names(d);
    if (terms.empty()) return std::nullopt;
    const std::string t = choose(g, terms);
    YAML::Node evals = d["reward"][t]["evaluations"];
    if (!evals.IsSequence() || evals.size() == 0) return std::nullopt;
    const std::size_t i = pick(g, evals.size());
    evals[i]["type"] = "cubic";
    return "reward." + t + ".evaluations[" + std::to_string(i) + "].type=cubic";
  });
  rew("UNBOUND_VARIABLE", [=](YAML::Node& d, Rng& g) -> Out {
    const auto terms = term_names(d);
    const std::string t = choose(g, terms);
    YAML::Node evals = d["reward"][t]["evaluations"];
    const std::size_t i = pick(g, evals.size());
    const auto params = keys_of(evals[i]["parameters"]);
    if (params.empty()) return std::nullopt;
    const std::string p = choose(g, params);
    evals[i]["parameters"][p] = "foo * 2.0";
    return "reward." + t + ".evaluations[" + std::to_string(i) + "].parameters." + p + " reads foo";
  });
  rew("TYPE_ARITY", [=](YAML::Node& d, Rng& g) -> Out {
    const auto terms = term_names(d);
    const std::string t = choose(g, terms);
    YAML::Node evals = d["reward"][t]["evaluations"];
    const std::size_t i = pick(g, evals.size());
    const auto params = keys_of(evals[i]["parameters"]);
    if (params.empty()) return std::nullopt;
    const std::string p = choose(g, params);
    evals[i]["parameters"] = rename_key(evals[i]["parameters"], p, p + "_x");
    return "reward." + t + ".evaluations[" + std::to_string(i) + "].parameters." + p + " renamed";
  });
  rew("SYNTAX_ERROR", [=](YAML::Node& d, Rng& g) -> Out {
    std::vector<std::pair<std::string, std::string>> inputs;
    for (const auto& t : term_names(d)) {
      for (const auto& in : keys_of(d["reward"][t]["inputs"])) inputs.emplace_back(t, in);
    }
    if (inputs.empty()) return std::nullopt;
    const auto [t, in] = choose(g, inputs);
    const std::string broken = choose(g, std::vector<std::string>{"command[0:2", "(local_vel[0] - ", "* rz"});
    d["reward"][t]["inputs"][in] = broken;
    return "reward." + t + ".inputs." + in + "='" + broken + "'";
  });
  rew("UNKNOWN_VARIABLE", [=](YAML::Node& d, Rng& g) -> Out {
    std::vector<std::pair<std::string, std::string>> inputs;
    for (const auto& t : term_names(d)) {
      for (const auto& in : keys_of(d["reward"][t]["inputs"])) inputs.emplace_back(t, in);
    }
    if (inputs.empty()) return std::nullopt;
    const auto [t, in] = choose(g, inputs);
    d["reward"][t]["inputs"][in] = "imaginary_sensor";
    return "reward." + t + ".inputs." + in + " reads imaginary_sensor";
  });
  rew("NON_FINITE", [=](YAML::Node& d, Rng& g) -> Out {
    const std::string t = choose(g, term_names(d));
    d["reward"][t]["scale"] = ".inf";
    return "reward." + t + ".scale=.inf";
  });
  rew("UNKNOWN_COMBINATION", [=](YAML::Node& d, Rng& g) -> Out {
    const std::string t = choose(g, term_names(d));
    YAML::Node combination(YAML::NodeType::Map);
    combination["type"] = "product";
    d["reward"][t]["combination"] = combination;
    return "reward." + t + ".combination=product";
  });
  rew("EMPTY_EVALUATIONS", [=](YAML::Node& d, Rng& g) -> Out {
    const std::string t = choose(g, term_names(d));
    d["reward"][t]["evaluations"] = YAML::Node(YAML::NodeType::Sequence);
    return "reward." + t + ".evaluations=[]";
  });
  rew("MISSING_KEY", [=](YAML::Node& d, Rng& g) -> Out {
    const std::string t = choose(g, term_names(d));
    const std::string key = choose(g, std::vector<std::string>{"scale", "default_reward"});
    d["reward"][t].remove(key);
    return "reward." + t + "." + key + " deleted";
  });
  rew("NEGATIVE_SIGMA", [=](YAML::Node& d, Rng& g) -> Out {
    std::vector<std::pair<std::string, std::size_t>> decays;
    for (const auto& t : term_names(d)) {
      const YAML::Node evals = d["reward"][t]["evaluations"];
      for (std::size_t i = 0; i < evals.size(); ++i) {
        if (evals[i]["type"].IsScalar() && evals[i]["type"].Scalar() == "exponential_decay") decays.emplace_back(t, i);
      }
    }
    if (decays.empty()) return std::nullopt;
    const auto [t, i] = choose(g, decays);
    d["reward"][t]["evaluations"][i]["parameters"]["sigma"] = -0.1;
    return "reward." + t + ".evaluations[" + std::to_string(i) + "] sigma=-0.1";
  });
  rew("SHAPE_MISMATCH", [=](YAML::Node& d, Rng&) -> Out {
    // Widen a two-component slice so it no longer lines up with its partner.
    for (const auto& t : term_names(d)) {
      for (const auto& in : keys_of(d["reward"][t]["inputs"])) {
        YAML::Node n = d["reward"][t]["inputs"][in];
        if (n.IsScalar() && n.Scalar() == "command[0:2]") {
          n = "command[0:3]";
          return "reward." + t + ".inputs." + in + "=command[0:3]";
        }
      }
    }
    return std::nullopt;
  });
  rew("PARSE_ERROR", [](YAML::Node& d, Rng&) -> Out {
    d = rename_key(d, "reward", "rewards");
    return std::string("reward: renamed to rewards:");
  });

  auto fields = [](YAML::Node& d) { return keys_of(d["randomization"]); };
  rnd("BAD_TOP_LEVEL_KEY", [](YAML::Node& d, Rng& g) -> Out {
    const std::string to = choose(g, std::vector<std::string>{"randomize", "randomizations", "domain_randomization"});
    d = rename_key(d, "randomization", to);
    return "randomization: renamed to " + to + ":";
  });
  rnd("UNKNOWN_FIELD", [=](YAML::Node& d, Rng& g) -> Out {
    const auto names = fields(d);
    if (names.empty()) return std::nullopt;
    const std::string f = choose(g, names);
    d["randomization"] = rename_key(d["randomization"], f, f + "s");
    return "randomization." + f + " renamed to " + f + "s";
  });
  rnd("UNKNOWN_OPERATION", [=](YAML::Node& d, Rng& g) -> Out {
    const auto names = fields(d);
    if (names.empty()) return std::nullopt;
    const std::string f = choose(g, names);
    d["randomization"][f][0]["operation"] = "multiply";
    return "randomization." + f + "[0].operation=multiply";
  });
  rnd("RANGE_INVERTED", [=](YAML::Node& d, Rng& g) -> Out {
    std::vector<std::pair<std::string, std::size_t>> open;
    for (const auto& f : fields(d)) {
      const YAML::Node rules = d["randomization"][f];
      for (std::size_t i = 0; i < rules.size(); ++i) {
        const YAML::Node u = rules[i]["distribution"]["uniform"];
        const auto lo = detail::yaml_tensor(u["minval"]);
        const auto hi = detail::yaml_tensor(u["maxval"]);
        if (!lo || !hi || lo->size() != hi->size()) continue;
        for (std::size_t k = 0; k < lo->size(); ++k) {
          if ((*lo)[k] < (*hi)[k]) {
            open.emplace_back(f, i);
            break;
          }
        }
      }
    }
    if (open.empty()) return std::nullopt;
    const auto [f, i] = choose(g, open);
    YAML::Node u = d["randomization"][f][i]["distribution"]["uniform"];
    const YAML::Node lo = YAML::Clone(u["minval"]);
    u["minval"] = YAML::Clone(u["maxval"]);
    u["maxval"] = lo;
    return "randomization." + f + "[" + std::to_string(i) + "] min/max swapped";
  });
  rnd("SHAPE_MISMATCH", [=](YAML::Node& d, Rng& g) -> Out {
    const auto names = fields(d);
    if (names.empty()) return std::nullopt;
    const std::string f = choose(g, names);
    YAML::Node u = d["randomization"][f][0]["distribution"]["uniform"];
    YAML::Node hi = u["maxval"];
    if (hi.IsScalar()) {
      YAML::Node list(YAML::NodeType::Sequence);
      list.push_back(hi.Scalar());
      list.push_back(hi.Scalar());
      u["maxval"] = list;
    } else {
      hi.push_back(1.0);
    }
    return "randomization." + f + "[0].maxval gained an element";
  });

  wfl("MISSING_FILE", [](YAML::Node& d, Rng&) -> Out {
    d["workflow"]["stages"][0]["reward"] = "../rewards/missing_reward_stage1.yaml";
    return std::string("stage 1 reward path dangling");
  });
  wfl("RESUME_FIRST_STAGE", [](YAML::Node& d, Rng&) -> Out {
    d["workflow"]["stages"][0]["resume_from_checkpoint"] = true;
    return std::string("stage 1 resume_from_checkpoint=true");
  });
  wfl("STAGE_INDEX", [](YAML::Node& d, Rng& g) -> Out {
    const long v = choose(g, std::vector<long>{0, 2, 7});
    d["workflow"]["stages"][0]["index"] = v;
    return "stage 1 index=" + num(static_cast<double>(v));
  });
  wfl("UNKNOWN_PROMOTION_MODE", [](YAML::Node& d, Rng&) -> Out {
    d["workflow"]["stages"][0]["promotion"]["mode"] = "when_ready";
    return std::string("stage 1 promotion.mode=when_ready");
  });
  (void)stage;
  return r;
}

}  // namespace

std::vector<Mutant> mutate_corpus(const BundleSources& sources, std::uint64_t seed) {
  if (!check_sources(sources).ok) throw Error(ErrorCode::InvalidArgument, "mutate_corpus needs a valid bundle");
  const CurriculumBundle bundle = parse_sources(sources);
  const StageRef& stage = bundle.stages.front();

  Rng rng(seed);
  std::vector<Mutant> corpus;
  for (const Recipe& recipe : recipes(stage)) {
    std::string file;
    if (recipe.kind == "workflow") file = sources.workflow_path;
    if (recipe.kind == "config") file = stage.config_path;
    if (recipe.kind == "reward") file = stage.reward_path;
    if (recipe.kind == "randomize") file = stage.randomize_path;
    const YAML::Node& original =
        file == sources.workflow_path ? *bundle.workflow.root : *bundle.documents.at(file).root;
    YAML::Node doc = YAML::Clone(original);
    const auto name = recipe.apply(doc, rng);
    if (!name) continue;
    Mutant m;
    m.name = *name;
    m.expected_code = recipe.code;
    m.file = file;
    m.sources = sources;
    m.sources.files[file] = emit(doc);
    corpus.push_back(std::move(m));
  }
  // Seed-dependent order.
  for (std::size_t i = corpus.size(); i > 1; --i) std::swap(corpus[i - 1], corpus[pick(rng, i)]);
  return corpus;
}

}  // namespace stagehand
