#include "stagehand/reward.hpp"

#include <yaml-cpp/yaml.h>

#include <cmath>

#include "yaml_util.hpp"

namespace stagehand {
namespace {

struct TypeInfo {
  EvalType type;
  std::string_view name;
  std::vector<std::string> params;
};

const std::vector<TypeInfo>& type_table() {
  static const std::vector<TypeInfo> table = {
      {EvalType::sum_square, "sum_square", {"vector"}},
      {EvalType::exponential_decay, "exponential_decay", {"error", "sigma"}},
      {EvalType::norm_L2, "norm_L2", {"vector"}},
      {EvalType::norm_L1, "norm_L1", {"vector"}},
      {EvalType::quadratic, "quadratic", {"value", "weight"}},
      {EvalType::weighted_sum, "weighted_sum", {"values", "weights"}},
      {EvalType::binary, "binary", {"condition", "reward_value", "else_value"}},
      {EvalType::absolute_difference, "absolute_difference", {"value1", "value2"}},
  };
  return table;
}

std::string join(const std::set<std::string>& names) {
  std::string out;
  for (const auto& n : names) out += (out.empty() ? "" : ", ") + n;
  return out;
}

class Compiler {
 public:
  Compiler(const CompileOptions& options, std::vector<RewardIssue>& issues) : options_(options), issues_(issues) {}

  std::optional<RewardProgram> run(const YAML::Node& reward_map) {
    RewardProgram program;
    if (!reward_map.IsMap()) {
      error(ErrorCode::TypeMismatch, "reward", "reward must be a mapping of term names to term definitions");
      return std::nullopt;
    }
    for (const auto& entry : reward_map) {
      const std::string name = entry.first.Scalar();
      if (auto term = compile_term(name, entry.second)) {
        program.required_variables.insert(term->required.begin(), term->required.end());
        program.terms.push_back(std::move(*term));
      }
    }
    if (failed_) return std::nullopt;
    return program;
  }

 private:
  void error(ErrorCode code, std::string path, std::string message) {
    issues_.push_back({code, std::move(path), std::move(message), false});
    failed_ = true;
  }
  void warn(ErrorCode code, std::string path, std::string message) {
    issues_.push_back({code, std::move(path), std::move(message), true});
  }

  ExprPtr parse(const YAML::Node& node, const std::string& path) {
    if (!node.IsScalar()) {
      error(ErrorCode::TypeMismatch, path, "expected an expression string");
      return nullptr;
    }
    try {
      return parse_expression(node.Scalar());
    } catch (const Error& e) {
      error(e.code(), path, "'" + node.Scalar() + "': " + e.message());
      return nullptr;
    }
  }

  std::optional<double> number(const YAML::Node& node, const std::string& path) {
    if (!node.IsScalar()) {
      error(ErrorCode::TypeMismatch, path, "expected a number");
      return std::nullopt;
    }
    const auto parsed = detail::yaml_number(node);
    if (!parsed) {
      error(ErrorCode::TypeMismatch, path, "'" + node.Scalar() + "' is not a number");
      return std::nullopt;
    }
    const double value = *parsed;
    if (!std::isfinite(value)) {
      error(ErrorCode::NonFinite, path, "value must be finite");
      return std::nullopt;
    }
    return value;
  }

  void check_refs(const ExprPtr& expr, const std::set<std::string>& visible, const std::string& term,
                  const std::string& path) {
    if (!expr) return;
    for (const auto& var : variables_of(*expr)) {
      if (!visible.count(var)) {
        error(ErrorCode::UnboundVariable, path,
              "term '" + term + "' references '" + var + "', which is neither an input nor an earlier output");
      }
    }
  }

  std::optional<RewardTerm> compile_term(const std::string& name, const YAML::Node& node) {
    const std::string base = "reward." + name;
    if (!node.IsMap()) {
      error(ErrorCode::TypeMismatch, base, "term must be a mapping");
      return std::nullopt;
    }
    const bool failed_before = failed_;
    failed_ = false;

    RewardTerm term;
    term.name = name;
    static const std::set<std::string> known_keys = {"inputs", "evaluations", "combination", "scale",
                                                     "default_reward"};
    for (const auto& entry : node) {
      const std::string key = entry.first.Scalar();
      if (!known_keys.count(key)) warn(ErrorCode::UnknownKey, base + "." + key, "unknown key ignored");
    }
    for (const char* key : {"inputs", "evaluations", "scale", "default_reward"}) {
      if (!node[key]) error(ErrorCode::MissingKey, base + "." + key, "required key is missing");
    }

    std::set<std::string> visible;
    if (const YAML::Node inputs = node["inputs"]) {
      if (!inputs.IsMap() && !inputs.IsNull()) {
        error(ErrorCode::TypeMismatch, base + ".inputs", "inputs must be a mapping");
      } else if (inputs.IsMap()) {
        for (const auto& entry : inputs) {
          const std::string input = entry.first.Scalar();
          const std::string path = base + ".inputs." + input;
          ExprPtr expr = parse(entry.second, path);
          if (!expr) continue;
          for (const auto& var : variables_of(*expr)) {
            if (options_.known_variables && !options_.known_variables->count(var)) {
              error(ErrorCode::UnknownVariable, path,
                    "term '" + name + "' reads '" + var + "', which the environment does not provide");
            }
            term.required.insert(var);
          }
          term.inputs.emplace_back(input, std::move(expr));
          visible.insert(input);
        }
      }
    }

    const YAML::Node evaluations = node["evaluations"];
    if (evaluations && !evaluations.IsSequence()) {
      error(ErrorCode::TypeMismatch, base + ".evaluations", "evaluations must be a list");
    } else if (evaluations && evaluations.size() == 0) {
      error(ErrorCode::EmptyEvaluations, base + ".evaluations", "at least one evaluation is required");
    } else if (evaluations) {
      for (std::size_t i = 0; i < evaluations.size(); ++i) {
        const std::string path = base + ".evaluations[" + std::to_string(i) + "]";
        auto step = compile_step(evaluations[i], path, name, visible);
        if (step) term.steps.push_back(std::move(*step));
        // Keep later steps checkable even when this one failed.
        const YAML::Node output = evaluations[i].IsMap() ? evaluations[i]["output"] : YAML::Node();
        if (output && output.IsScalar()) visible.insert(output.Scalar());
      }
    }

    if (const YAML::Node combination = node["combination"]) {
      compile_combination(combination, base + ".combination", name, visible, term.combination);
    }
    if (node["scale"]) {
      if (auto v = number(node["scale"], base + ".scale")) term.scale = *v;
    }
    if (node["default_reward"]) {
      if (auto v = number(node["default_reward"], base + ".default_reward")) term.default_reward = *v;
    }

    const bool term_failed = failed_;
    failed_ = failed_before || term_failed;
    if (term_failed) return std::nullopt;
    return term;
  }

  std::optional<EvaluationStep> compile_step(const YAML::Node& node, const std::string& path, const std::string& term,
                                             const std::set<std::string>& visible) {
    if (!node.IsMap()) {
      error(ErrorCode::TypeMismatch, path, "evaluation must be a mapping");
      return std::nullopt;
    }
    for (const auto& entry : node) {
      const std::string key = entry.first.Scalar();
      if (key != "type" && key != "parameters" && key != "output") {
        warn(ErrorCode::UnknownKey, path + "." + key, "unknown key ignored");
      }
    }
    const YAML::Node type_node = node["type"];
    if (!type_node || !type_node.IsScalar()) {
      error(ErrorCode::MissingKey, path + ".type", "evaluation type is missing");
      return std::nullopt;
    }
    const auto type = eval_type_from_name(type_node.Scalar());
    if (!type) {
      std::string allowed;
      for (const auto& info : type_table()) allowed += (allowed.empty() ? "" : ", ") + std::string(info.name);
      error(ErrorCode::UnknownEvaluation, path + ".type",
            "'" + type_node.Scalar() + "' is not an allowed evaluation type (" + allowed + ")");
      return std::nullopt;
    }

    EvaluationStep step{*type, {}, std::nullopt};
    const YAML::Node params = node["parameters"];
    if (!params || !params.IsMap()) {
      error(ErrorCode::TypeArity, path + ".parameters", std::string(type_name(*type)) + " needs a parameters mapping");
      return std::nullopt;
    }
    const auto& expected = parameter_names(*type);
    std::set<std::string> given;
    for (const auto& entry : params) given.insert(entry.first.Scalar());
    const std::set<std::string> wanted(expected.begin(), expected.end());
    if (given != wanted) {
      std::set<std::string> missing, extra;
      for (const auto& w : wanted) {
        if (!given.count(w)) missing.insert(w);
      }
      for (const auto& g : given) {
        if (!wanted.count(g)) extra.insert(g);
      }
      std::string msg = std::string(type_name(*type)) + " takes {" + join(wanted) + "}";
      if (!missing.empty()) msg += "; missing {" + join(missing) + "}";
      if (!extra.empty()) msg += "; unexpected {" + join(extra) + "}";
      error(ErrorCode::TypeArity, path + ".parameters", msg);
      return std::nullopt;
    }
    for (const auto& pname : expected) {
      const std::string ppath = path + ".parameters." + pname;
      ExprPtr expr = parse(params[pname], ppath);
      check_refs(expr, visible, term, ppath);
      step.parameters[pname] = std::move(expr);
    }
    if (const YAML::Node output = node["output"]) {
      if (!output.IsScalar() || output.Scalar().empty()) {
        error(ErrorCode::TypeMismatch, path + ".output", "output must be a name");
      } else {
        step.output = output.Scalar();
      }
    }
    return step;
  }

  void compile_combination(const YAML::Node& node, const std::string& path, const std::string& term,
                           const std::set<std::string>& visible, Combination& out) {
    if (!node.IsMap()) {
      error(ErrorCode::TypeMismatch, path, "combination must be a mapping");
      return;
    }
    const YAML::Node type = node["type"];
    const std::string kind = type && type.IsScalar() ? type.Scalar() : "last";
    if (kind == "last") {
      out.kind = CombinationKind::last;
    } else if (kind == "sum") {
      out.kind = CombinationKind::sum;
    } else if (kind == "weighted_sum") {
      out.kind = CombinationKind::weighted_sum;
      const YAML::Node params = node["parameters"];
      const YAML::Node vectors = params ? params["vectors"] : YAML::Node();
      const YAML::Node weights = params ? params["weights"] : YAML::Node();
      if (!vectors || !weights || !vectors.IsSequence() || !weights.IsSequence() ||
          vectors.size() != weights.size() || vectors.size() == 0) {
        error(ErrorCode::TypeArity, path + ".parameters",
              "weighted_sum combination takes equal-length, non-empty 'vectors' and 'weights' lists");
        return;
      }
      for (std::size_t i = 0; i < vectors.size(); ++i) {
        const std::string vpath = path + ".parameters.vectors[" + std::to_string(i) + "]";
        const std::string wpath = path + ".parameters.weights[" + std::to_string(i) + "]";
        ExprPtr v = parse(vectors[i], vpath);
        ExprPtr w = parse(weights[i], wpath);
        check_refs(v, visible, term, vpath);
        check_refs(w, visible, term, wpath);
        out.vectors.push_back(std::move(v));
        out.weights.push_back(std::move(w));
      }
    } else {
      error(ErrorCode::UnknownCombination, path + ".type",
            "'" + kind + "' is not a combination type (last, sum, weighted_sum)");
    }
  }

  const CompileOptions& options_;
  std::vector<RewardIssue>& issues_;
  bool failed_ = false;
};

const Tensor& param(const EvaluationStep& step, const std::string& name, const Scope& scope, Tensor& storage) {
  const Lookup lookup = [&](const std::string& var) -> const Tensor* {
    auto it = scope.find(var);
    return it == scope.end() ? nullptr : &it->second;
  };
  storage = evaluate(*step.parameters.at(name), lookup);
  return storage;
}

}  // namespace

std::string_view type_name(EvalType type) noexcept {
  for (const auto& info : type_table()) {
    if (info.type == type) return info.name;
  }
  return "unknown";
}

std::optional<EvalType> eval_type_from_name(std::string_view name) noexcept {
  for (const auto& info : type_table()) {
    if (info.name == name) return info.type;
  }
  return std::nullopt;
}

const std::vector<std::string>& parameter_names(EvalType type) {
  for (const auto& info : type_table()) {
    if (info.type == type) return info.params;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown evaluation type");
}

const std::vector<EvalType>& all_eval_types() {
  static const std::vector<EvalType> types = [] {
    std::vector<EvalType> out;
    for (const auto& info : type_table()) out.push_back(info.type);
    return out;
  }();
  return types;
}

std::vector<std::string> RewardProgram::term_names() const {
  std::vector<std::string> out;
  out.reserve(terms.size());
  for (const auto& t : terms) out.push_back(t.name);
  return out;
}

std::optional<RewardProgram> compile_reward(const YAML::Node& reward_map, const CompileOptions& options,
                                            std::vector<RewardIssue>& issues) {
  return Compiler(options, issues).run(reward_map);
}

RewardProgram compile_reward(const YAML::Node& reward_map, const CompileOptions& options) {
  std::vector<RewardIssue> issues;
  auto program = compile_reward(reward_map, options, issues);
  if (!program) {
    for (const auto& issue : issues) {
      if (!issue.warning) throw Error(issue.code, issue.path + ": " + issue.message);
    }
  }
  return std::move(*program);
}

RewardProgram compile_reward_text(std::string_view yaml_text, const CompileOptions& options) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml_text));
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  if (!root.IsMap() || !root["reward"]) {
    throw Error(ErrorCode::ParseError, "reward document must have the top-level key 'reward:'");
  }
  return compile_reward(root["reward"], options);
}

Tensor eval_step(const EvaluationStep& step, const Scope& scope) {
  Tensor a, b, c;
  switch (step.type) {
    case EvalType::sum_square:
      return reduce(param(step, "vector", scope, a), Reduction::sum_of_squares);
    case EvalType::exponential_decay: {
      const Tensor& error = param(step, "error", scope, a);
      const Tensor& sigma = param(step, "sigma", scope, b);
      for (double s : sigma.values()) {
        if (s < 0.0) throw Error(ErrorCode::NegativeSigma, "exponential_decay sigma must be non-negative");
      }
      const Tensor denom = elementwise(BinaryOp::mul, Tensor::scalar(2.0), elementwise(BinaryOp::mul, sigma, sigma));
      return apply(elementwise(BinaryOp::div, error, denom), [](double x) { return std::exp(-x); });
    }
    case EvalType::norm_L2:
      return reduce(param(step, "vector", scope, a), Reduction::l2_last_axis);
    case EvalType::norm_L1:
      return reduce(param(step, "vector", scope, a), Reduction::l1_last_axis);
    case EvalType::quadratic: {
      const Tensor& value = param(step, "value", scope, a);
      const Tensor& weight = param(step, "weight", scope, b);
      return elementwise(BinaryOp::mul, weight, elementwise(BinaryOp::mul, value, value));
    }
    case EvalType::weighted_sum: {
      const Tensor& values = param(step, "values", scope, a);
      const Tensor& weights = param(step, "weights", scope, b);
      return reduce(elementwise(BinaryOp::mul, values, weights), Reduction::sum);
    }
    case EvalType::binary: {
      const Tensor& cond = param(step, "condition", scope, a);
      const Tensor& yes = param(step, "reward_value", scope, b);
      const Tensor& no = param(step, "else_value", scope, c);
      return select(cond, yes, no);
    }
    case EvalType::absolute_difference: {
      const Tensor& v1 = param(step, "value1", scope, a);
      const Tensor& v2 = param(step, "value2", scope, b);
      return reduce(elementwise(BinaryOp::sub, v1, v2), Reduction::abs);
    }
  }
  throw Error(ErrorCode::InvalidArgument, "unknown evaluation type");
}

double eval_term(const RewardTerm& term, const Bindings& bindings) {
  for (const auto& key : term.required) {
    if (!bindings.count(key)) return term.default_reward;
  }
  const Lookup env = [&](const std::string& var) -> const Tensor* {
    auto it = bindings.find(var);
    return it == bindings.end() ? nullptr : &it->second;
  };
  Scope scope;
  for (const auto& [name, expr] : term.inputs) scope[name] = evaluate(*expr, env);

  Tensor last;
  double summed = 0.0;
  for (const auto& step : term.steps) {
    last = eval_step(step, scope);
    if (term.combination.kind == CombinationKind::sum) summed += reduce(last, Reduction::sum).item();
    if (step.output) scope[*step.output] = last;
  }

  double value = 0.0;
  switch (term.combination.kind) {
    case CombinationKind::last:
      value = reduce(last, Reduction::sum).item();
      break;
    case CombinationKind::sum:
      value = summed;
      break;
    case CombinationKind::weighted_sum: {
      const Lookup local = [&](const std::string& var) -> const Tensor* {
        auto it = scope.find(var);
        return it == scope.end() ? nullptr : &it->second;
      };
      for (std::size_t i = 0; i < term.combination.vectors.size(); ++i) {
        const double w = evaluate(*term.combination.weights[i], local).item();
        value += w * reduce(evaluate(*term.combination.vectors[i], local), Reduction::sum).item();
      }
      break;
    }
  }
  return value * term.scale;
}

RewardValues eval_total(const RewardProgram& program, const Bindings& bindings) {
  RewardValues out;
  out.per_term.reserve(program.terms.size());
  for (const auto& term : program.terms) {
    const double v = eval_term(term, bindings);
    out.per_term.push_back(v);
    out.total += v;
  }
  return out;
}

std::map<std::string, double> per_term_map(const RewardProgram& program, const RewardValues& values) {
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < program.terms.size(); ++i) out[program.terms[i].name] = values.per_term.at(i);
  return out;
}

}  // namespace stagehand
