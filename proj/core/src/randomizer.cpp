#include "stagehand/randomizer.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>

#include "stagehand/random.hpp"
#include "yaml_util.hpp"

namespace stagehand {
namespace {

Tensor actuator_params(bool gain) {
  std::vector<double> v(kDeskActuators * 10, 0.0);
  for (std::size_t i = 0; i < kDeskActuators; ++i) {
    if (gain) {
      v[i * 10 + 0] = kDeskKp;
    } else {
      v[i * 10 + 1] = -kDeskKp;
      v[i * 10 + 2] = -kDeskKd;
    }
  }
  return Tensor({kDeskActuators, 10}, std::move(v));
}

std::string join_targets(const std::vector<std::string>& targets) {
  if (targets.empty()) return "ALL";
  std::string out;
  for (const auto& t : targets) out += (out.empty() ? "" : ",") + t;
  return out;
}

double draw(double lo, double hi, std::uint64_t seed, std::uint64_t field, std::uint64_t target,
            std::uint64_t occurrence, std::uint64_t env, std::uint64_t element) {
  const double u = unit_draw({seed, field, target, occurrence, env, element});
  return lo + (hi - lo) * u;
}

double combine(RandOp op, double nominal, double u) {
  switch (op) {
    case RandOp::add: return nominal + u;
    case RandOp::scale: return nominal * u;
    case RandOp::set: return u;
  }
  return u;
}

Tensor expand(const Tensor& bound, const Tensor::Shape& shape, const std::string& what) {
  if (broadcast_shape(bound.shape(), shape) != shape) {
    throw Error(ErrorCode::ShapeMismatch,
                what + ": bounds of shape " + to_string(bound.shape()) + " do not fit parameter shape " + to_string(shape));
  }
  return elementwise(BinaryOp::add, Tensor::filled(shape, 0.0), bound);
}

void apply_rule(const RandomizationRule& rule, std::size_t occurrence, SceneParameters& scene, std::uint64_t seed,
                std::uint64_t env) {
  const std::uint64_t field_hash = fnv1a64(rule.field);

  if (rule.field == "actuator_kp_kd") {
    // Per-actuator (kp, kd) pair mapped onto gain[:,0], bias[:,1] = -kp, bias[:,2] = -kd.
    if (!rule.targets.empty()) {
      throw Error(ErrorCode::UnknownField, "actuator_kp_kd only supports target ALL");
    }
    auto gain_it = scene.find("actuator_gainprm");
    auto bias_it = scene.find("actuator_biasprm");
    if (gain_it == scene.end() || bias_it == scene.end()) {
      throw Error(ErrorCode::UnknownField, "scene has no actuator parameters");
    }
    const std::size_t n = gain_it->second.shape()[0];
    const Tensor lo = expand(rule.minval, {2}, "actuator_kp_kd");
    const Tensor hi = expand(rule.maxval, {2}, "actuator_kp_kd");
    std::vector<double> gain(gain_it->second.values().begin(), gain_it->second.values().end());
    std::vector<double> bias(bias_it->second.values().begin(), bias_it->second.values().end());
    const std::size_t cols = gain_it->second.shape()[1];
    const std::uint64_t target_hash = fnv1a64("ALL");
    for (std::size_t i = 0; i < n; ++i) {
      const double ukp = draw(lo[0], hi[0], seed, field_hash, target_hash, occurrence, env, i * 2);
      const double ukd = draw(lo[1], hi[1], seed, field_hash, target_hash, occurrence, env, i * 2 + 1);
      const double kp = gain[i * cols];
      const double kd = -bias[i * cols + 2];
      const double new_kp = combine(rule.op, kp, ukp);
      const double new_kd = combine(rule.op, kd, ukd);
      gain[i * cols] = new_kp;
      bias[i * cols + 1] = -new_kp;
      bias[i * cols + 2] = -new_kd;
    }
    gain_it->second = Tensor(gain_it->second.shape(), std::move(gain));
    bias_it->second = Tensor(bias_it->second.shape(), std::move(bias));
    return;
  }

  std::vector<std::string> keys;
  std::vector<std::string> target_names;
  if (rule.targets.empty()) {
    if (scene.count(rule.field)) {
      keys.push_back(rule.field);
      target_names.push_back("ALL");
    } else {
      const std::string prefix = rule.field + "/";
      for (const auto& [key, value] : scene) {
        if (key.rfind(prefix, 0) == 0) {
          keys.push_back(key);
          target_names.push_back("ALL/" + key.substr(prefix.size()));
        }
      }
    }
    if (keys.empty()) throw Error(ErrorCode::UnknownField, "scene has no parameter group '" + rule.field + "'");
  } else {
    for (const auto& target : rule.targets) {
      const std::string key = rule.field + "/" + target;
      if (!scene.count(key)) {
        throw Error(ErrorCode::UnknownField, "scene has no target '" + target + "' in '" + rule.field + "'");
      }
      keys.push_back(key);
      target_names.push_back(target);
    }
  }

  for (std::size_t k = 0; k < keys.size(); ++k) {
    Tensor& param = scene.at(keys[k]);
    const std::string what = rule.field + "[" + target_names[k] + "]";
    const Tensor lo = expand(rule.minval, param.shape(), what);
    const Tensor hi = expand(rule.maxval, param.shape(), what);
    const std::uint64_t target_hash = fnv1a64(target_names[k]);
    std::vector<double> out(param.size());
    for (std::size_t e = 0; e < param.size(); ++e) {
      out[e] = combine(rule.op, param[e], draw(lo[e], hi[e], seed, field_hash, target_hash, occurrence, env, e));
    }
    param = Tensor(param.shape(), std::move(out));
  }
}

}  // namespace

const SceneParameters& desk_nominal_scene() {
  static const SceneParameters scene = [] {
    SceneParameters s;
    s["geom_friction"] = Tensor({4, 3}, {1.0, 0.005, 0.0001, 1.0, 0.005, 0.0001, 1.0, 0.005, 0.0001, 1.0, 0.005, 0.0001});
    s["geom_pos/foot_contact_l"] = Tensor::vector({0.0, 0.06, -0.02});
    s["geom_pos/foot_contact_r"] = Tensor::vector({0.0, -0.06, -0.02});
    s["body_mass"] = Tensor::vector({4.0, 1.2, 0.8, 1.2, 0.8});
    s["body_mass/random_mass"] = Tensor::scalar(0.0);
    s["body_ipos"] = Tensor::filled({5, 3}, 0.0);
    s["body_ipos/random_mass"] = Tensor::filled({3}, 0.0);
    s["actuator_gainprm"] = actuator_params(true);
    s["actuator_biasprm"] = actuator_params(false);
    s["hfield_data"] = Tensor::scalar(0.0);
    return s;
  }();
  return scene;
}

const std::vector<std::string>& known_randomization_fields() {
  static const std::vector<std::string> fields = {"geom_friction",    "geom_pos",         "body_mass",
                                                  "body_ipos",        "actuator_gainprm", "actuator_biasprm",
                                                  "actuator_kp_kd",   "hfield_data"};
  return fields;
}

std::optional<RandomizeSpec> parse_randomize(const YAML::Node& randomization_map,
                                             std::vector<RandomizeIssue>& issues) {
  bool failed = false;
  auto error = [&](ErrorCode code, std::string path, std::string message) {
    issues.push_back({code, std::move(path), std::move(message), false});
    failed = true;
  };
  auto warn = [&](ErrorCode code, std::string path, std::string message) {
    issues.push_back({code, std::move(path), std::move(message), true});
  };

  RandomizeSpec spec;
  if (!randomization_map.IsMap()) {
    error(ErrorCode::TypeMismatch, "randomization", "randomization must be a mapping of field names to rule lists");
    return std::nullopt;
  }
  const auto& fields = known_randomization_fields();
  for (const auto& entry : randomization_map) {
    const std::string field = entry.first.Scalar();
    const std::string base = "randomization." + field;
    if (std::find(fields.begin(), fields.end(), field) == fields.end()) {
      error(ErrorCode::UnknownField, base, "'" + field + "' is not a randomizable parameter group");
      continue;
    }
    if (!entry.second.IsSequence()) {
      error(ErrorCode::TypeMismatch, base, "expected a list of rules");
      continue;
    }
    for (std::size_t i = 0; i < entry.second.size(); ++i) {
      const YAML::Node node = entry.second[i];
      const std::string path = base + "[" + std::to_string(i) + "]";
      if (!node.IsMap()) {
        error(ErrorCode::TypeMismatch, path, "rule must be a mapping");
        continue;
      }
      for (const auto& kv : node) {
        const std::string key = kv.first.Scalar();
        if (key != "target" && key != "distribution" && key != "operation") {
          warn(ErrorCode::UnknownKey, path + "." + key, "unknown key ignored");
        }
      }
      RandomizationRule rule;
      rule.field = field;
      const YAML::Node target = node["target"];
      if (!target) {
        error(ErrorCode::MissingKey, path + ".target", "target is required");
      } else if (target.IsScalar()) {
        if (target.Scalar() != "ALL") rule.targets.push_back(target.Scalar());
      } else if (target.IsSequence() && target.size() > 0) {
        for (const auto& t : target) {
          if (!t.IsScalar()) {
            error(ErrorCode::TypeMismatch, path + ".target", "targets must be names");
          } else {
            rule.targets.push_back(t.Scalar());
          }
        }
      } else {
        error(ErrorCode::TypeMismatch, path + ".target", "target must be ALL, a name, or a list of names");
      }

      const YAML::Node dist = node["distribution"];
      if (!dist || !dist.IsMap()) {
        error(ErrorCode::MissingKey, path + ".distribution", "distribution mapping is required");
        continue;
      }
      bool has_uniform = false;
      for (const auto& kv : dist) {
        if (kv.first.Scalar() == "uniform") {
          has_uniform = true;
        } else {
          error(ErrorCode::UnknownDistribution, path + ".distribution." + kv.first.Scalar(),
                "only uniform distributions are supported");
        }
      }
      if (!has_uniform) {
        if (dist.size() == 0) error(ErrorCode::MissingKey, path + ".distribution.uniform", "uniform is required");
        continue;
      }
      const YAML::Node uniform = dist["uniform"];
      const auto lo = detail::yaml_tensor(uniform["minval"]);
      const auto hi = detail::yaml_tensor(uniform["maxval"]);
      const std::string upath = path + ".distribution.uniform";
      if (!uniform["minval"] || !uniform["maxval"]) {
        error(ErrorCode::MissingKey, upath, "minval and maxval are required");
        continue;
      }
      if (!lo) error(ErrorCode::TypeMismatch, upath + ".minval", "minval must be a number or list of numbers");
      if (!hi) error(ErrorCode::TypeMismatch, upath + ".maxval", "maxval must be a number or list of numbers");
      if (!lo || !hi) continue;
      if (lo->shape() != hi->shape()) {
        error(ErrorCode::ShapeMismatch, upath,
              "minval shape " + to_string(lo->shape()) + " differs from maxval shape " + to_string(hi->shape()));
        continue;
      }
      bool finite = true;
      for (std::size_t e = 0; e < lo->size(); ++e) {
        if (!std::isfinite((*lo)[e]) || !std::isfinite((*hi)[e])) finite = false;
      }
      if (!finite) {
        error(ErrorCode::NonFinite, upath, "bounds must be finite");
        continue;
      }
      for (std::size_t e = 0; e < lo->size(); ++e) {
        if ((*lo)[e] > (*hi)[e]) {
          error(ErrorCode::RangeInverted, upath,
                "minval exceeds maxval at element " + std::to_string(e) + " (" + std::to_string((*lo)[e]) + " > " +
                    std::to_string((*hi)[e]) + ")");
          break;
        }
      }
      rule.minval = *lo;
      rule.maxval = *hi;

      if (const YAML::Node op = node["operation"]) {
        const std::string name = op.IsScalar() ? op.Scalar() : "";
        if (name == "add") {
          rule.op = RandOp::add;
        } else if (name == "scale") {
          rule.op = RandOp::scale;
        } else if (name == "set") {
          rule.op = RandOp::set;
        } else {
          error(ErrorCode::UnknownOperation, path + ".operation",
                detail::yaml_kind(op) + " is not an operation (add, scale, set)");
        }
      }
      spec.rules.push_back(std::move(rule));
    }
  }
  if (failed) return std::nullopt;
  return spec;
}

RandomizeSpec parse_randomize(const YAML::Node& randomization_map) {
  std::vector<RandomizeIssue> issues;
  auto spec = parse_randomize(randomization_map, issues);
  if (!spec) {
    for (const auto& issue : issues) {
      if (!issue.warning) throw Error(issue.code, issue.path + ": " + issue.message);
    }
  }
  return std::move(*spec);
}

SceneParameters sample(const RandomizeSpec& spec, const SceneParameters& nominal, std::uint64_t seed) {
  return resample_per_env(spec, nominal, seed, 0);
}

SceneParameters resample_per_env(const RandomizeSpec& spec, const SceneParameters& nominal, std::uint64_t base_seed,
                                 std::uint64_t env_index) {
  SceneParameters scene = nominal;
  std::map<std::string, std::size_t> seen;
  for (const auto& rule : spec.rules) {
    const std::size_t occurrence = seen[rule.field + "|" + join_targets(rule.targets)]++;
    apply_rule(rule, occurrence, scene, base_seed, env_index);
  }
  return scene;
}

}  // namespace stagehand
