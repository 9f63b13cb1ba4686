#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "stagehand/error.hpp"
#include "stagehand/expression.hpp"
#include "stagehand/tensor.hpp"

namespace YAML {
class Node;
}

namespace stagehand {

enum class EvalType {
  sum_square,
  exponential_decay,
  norm_L2,
  norm_L1,
  quadratic,
  weighted_sum,
  binary,
  absolute_difference,
};

std::string_view type_name(EvalType type) noexcept;
std::optional<EvalType> eval_type_from_name(std::string_view name) noexcept;
/// Exact parameter names each evaluation type takes, in canonical order.
const std::vector<std::string>& parameter_names(EvalType type);
const std::vector<EvalType>& all_eval_types();

struct EvaluationStep {
  EvalType type;
  std::map<std::string, ExprPtr> parameters;
  std::optional<std::string> output;
};

enum class CombinationKind { last, sum, weighted_sum };

struct Combination {
  CombinationKind kind = CombinationKind::last;
  std::vector<ExprPtr> vectors;
  std::vector<ExprPtr> weights;
};

struct RewardTerm {
  std::string name;
  std::vector<std::pair<std::string, ExprPtr>> inputs;
  std::vector<EvaluationStep> steps;
  Combination combination;
  double scale = 1.0;
  double default_reward = 0.0;
  /// Environment binding keys the inputs read.
  std::set<std::string> required;
};

struct RewardProgram {
  std::vector<RewardTerm> terms;
  std::set<std::string> required_variables;

  std::vector<std::string> term_names() const;
};

using Bindings = std::unordered_map<std::string, Tensor>;

struct CompileOptions {
  /// When set, inputs may only read these environment keys (UNKNOWN_VARIABLE otherwise).
  const std::set<std::string>* known_variables = nullptr;
};

/// A compile-time problem located inside the reward document, e.g. path
/// "reward.feet_air_time.evaluations[1].parameters.condition".
struct RewardIssue {
  ErrorCode code;
  std::string path;
  std::string message;
  bool warning = false;
};

/// Compiles the mapping found under the top-level `reward:` key, recording every
/// problem. Returns nullopt if any non-warning issue was found.
std::optional<RewardProgram> compile_reward(const YAML::Node& reward_map, const CompileOptions& options,
                                            std::vector<RewardIssue>& issues);

/// Throwing variant: the first error becomes an Error with the issue's code.
RewardProgram compile_reward(const YAML::Node& reward_map, const CompileOptions& options = {});

/// Parses a whole reward document (top-level `reward:`) and compiles it.
RewardProgram compile_reward_text(std::string_view yaml_text, const CompileOptions& options = {});

using Scope = std::unordered_map<std::string, Tensor>;

/// Evaluates one primitive with its parameters resolved in `scope`.
Tensor eval_step(const EvaluationStep& step, const Scope& scope);

/// Scaled scalar contribution of one term, or default_reward (unscaled) when a
/// required binding is absent.
double eval_term(const RewardTerm& term, const Bindings& bindings);

struct RewardValues {
  double total = 0.0;
  /// Aligned with RewardProgram::terms.
  std::vector<double> per_term;
};

RewardValues eval_total(const RewardProgram& program, const Bindings& bindings);

/// per_term keyed by term name.
std::map<std::string, double> per_term_map(const RewardProgram& program, const RewardValues& values);

}  // namespace stagehand
