#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stagehand/error.hpp"
#include "stagehand/tensor.hpp"

namespace YAML {
class Node;
}

namespace stagehand {

enum class RandOp { add, scale, set };

struct RandomizationRule {
  std::string field;
  /// Empty means ALL.
  std::vector<std::string> targets;
  Tensor minval;
  Tensor maxval;
  RandOp op = RandOp::set;
};

struct RandomizeSpec {
  std::vector<RandomizationRule> rules;
};

/// Nominal physical parameters keyed by field name. Named sub-groups use
/// "field/target", e.g. "geom_pos/foot_contact_l" or "body_mass/random_mass".
using SceneParameters = std::map<std::string, Tensor>;

/// Parameters of the desk walker: 4 friction geoms, 5 bodies, 24 actuators.
const SceneParameters& desk_nominal_scene();
constexpr std::size_t kDeskActuators = 24;
constexpr double kDeskKp = 50.0;
constexpr double kDeskKd = 1.0;

/// Fields a randomize file may name.
const std::vector<std::string>& known_randomization_fields();

struct RandomizeIssue {
  ErrorCode code;
  std::string path;
  std::string message;
  bool warning = false;
};

/// Reads the mapping under the top-level `randomization:` key, recording issues.
std::optional<RandomizeSpec> parse_randomize(const YAML::Node& randomization_map, std::vector<RandomizeIssue>& issues);
RandomizeSpec parse_randomize(const YAML::Node& randomization_map);

/// One draw of every rule applied to `nominal`; equals resample_per_env(..., 0).
SceneParameters sample(const RandomizeSpec& spec, const SceneParameters& nominal, std::uint64_t seed);

/// Independent draw for one environment. Each element's uniform variate is keyed
/// by (seed, field, target, rule occurrence, env_index, element), so editing one
/// rule leaves the others' draws untouched.
/// Throws UNKNOWN_FIELD for a field or target the scene lacks and SHAPE_MISMATCH
/// when bounds do not broadcast onto the parameter.
SceneParameters resample_per_env(const RandomizeSpec& spec, const SceneParameters& nominal, std::uint64_t base_seed,
                                 std::uint64_t env_index);

}  // namespace stagehand
