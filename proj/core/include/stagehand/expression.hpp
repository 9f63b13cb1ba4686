#pragma once

#include <functional>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "stagehand/tensor.hpp"

namespace stagehand {

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

namespace ast {
struct Literal {
  Tensor value;
};
/// Dotted names such as `xd.vel` are a single binding key.
struct Variable {
  std::string name;
};
struct Negate {
  ExprPtr operand;
};
struct Binary {
  BinaryOp op;
  ExprPtr lhs;
  ExprPtr rhs;
};
struct Indexed {
  ExprPtr target;
  std::vector<IndexItem> items;
};
}  // namespace ast

struct Expr {
  std::variant<ast::Literal, ast::Variable, ast::Negate, ast::Binary, ast::Indexed> node;
  std::size_t offset = 0;
};

/// Parses a reward expression.
///
/// Grammar, loosest binding first:
///   logical    := comparison (('&' | '|') comparison)*
///   comparison := additive (('<'|'>'|'<='|'>='|'=='|'!=') additive)?
///   additive   := term (('+'|'-') term)*
///   term       := unary (('*'|'/') unary)*
///   unary      := '-' unary | postfix
///   postfix    := primary ('[' index (',' index)* ']')*
///   primary    := number | True | False | name | '(' logical ')'
///   index      := integer | [integer] ':' [integer] | '...'
///
/// Throws SYNTAX_ERROR or UNKNOWN_TOKEN; the message carries the byte offset.
ExprPtr parse_expression(std::string_view text);

/// Debug rendering, e.g. `Slice(Var(command), [0:2])`, `And(Var(done), Lt(Var(step), 500))`.
std::string to_debug_string(const Expr& expr);

void collect_variables(const Expr& expr, std::set<std::string>& out);
std::set<std::string> variables_of(const Expr& expr);

/// Resolves a variable name to a tensor, or nullptr when unbound.
using Lookup = std::function<const Tensor*(const std::string&)>;

/// Evaluates an expression. Unbound variables throw MISSING_BINDING naming the
/// variable; tensor errors propagate unchanged.
Tensor evaluate(const Expr& expr, const Lookup& lookup);

}  // namespace stagehand
