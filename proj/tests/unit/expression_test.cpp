#include "stagehand/expression.hpp"

#include <gtest/gtest.h>

#include "stagehand/error.hpp"

namespace stagehand {
namespace {

Tensor eval_with(const std::string& text, const std::unordered_map<std::string, Tensor>& vars) {
  const ExprPtr e = parse_expression(text);
  return evaluate(*e, [&](const std::string& name) -> const Tensor* {
    auto it = vars.find(name);
    return it == vars.end() ? nullptr : &it->second;
  });
}

TEST(Expression, DebugStrings) {
  EXPECT_EQ(to_debug_string(*parse_expression("command[0:2]")), "Slice(Var(command), [0:2])");
  EXPECT_EQ(to_debug_string(*parse_expression("done & (step < 500)")), "And(Var(done), Lt(Var(step), 500))");
}

TEST(Expression, TrueIsBooleanLiteral) {
  const Tensor t = eval_with("True", {});
  EXPECT_TRUE(t.is_boolean());
  EXPECT_EQ(t.item(), 1.0);
  EXPECT_EQ(eval_with("False", {}).item(), 0.0);
}

TEST(Expression, DottedNamesAreOneVariable) {
  const auto vars = variables_of(*parse_expression("xd.vel[0, 2] + rot_up[0:2]"));
  EXPECT_EQ(vars, (std::set<std::string>{"xd.vel", "rot_up"}));
}

TEST(Expression, Precedence) {
  EXPECT_EQ(eval_with("1 + 2 * 3", {}).item(), 7.0);
  EXPECT_EQ(eval_with("-(1 - 4) / 3", {}).item(), 1.0);
  EXPECT_EQ(eval_with("2 < 3 & 3 < 2", {}).item(), 0.0);
  EXPECT_EQ(eval_with("2 < 3 | 3 < 2", {}).item(), 1.0);
}

TEST(Expression, IndexingForms) {
  const std::unordered_map<std::string, Tensor> vars = {
      {"m", Tensor({2, 3}, {0, 1, 2, 3, 4, 5})},
  };
  EXPECT_EQ(eval_with("m[:, 2]", vars), Tensor::vector({2, 5}));
  EXPECT_EQ(eval_with("m[..., :2]", vars), Tensor({2, 2}, {0, 1, 3, 4}));
  EXPECT_EQ(eval_with("m[1][0]", vars).item(), 3.0);
  EXPECT_EQ(eval_with("m[-1, -1]", vars).item(), 5.0);
}

TEST(Expression, MissingBindingNamesVariable) {
  try {
    eval_with("a + b", {{"a", Tensor::scalar(1)}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingBinding);
    EXPECT_NE(e.message().find("b"), std::string::npos);
  }
}

TEST(Expression, SyntaxErrors) {
  for (const char* bad : {"1 +", "(a", "a[", "a ** 2", "f(x)", "a[1:2:3]", ""}) {
    EXPECT_THROW(parse_expression(bad), Error) << bad;
  }
  try {
    parse_expression("a $ b");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownToken);
  }
}

}  // namespace
}  // namespace stagehand
