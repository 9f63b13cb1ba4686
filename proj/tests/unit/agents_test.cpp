#include "stagehand/agents.hpp"

#include <gtest/gtest.h>

#include "paths.hpp"
#include "stagehand/data.hpp"
#include "stagehand/digest.hpp"

namespace stagehand {
namespace {

using testing::fixture_dir;
using testing::slurp;

std::map<std::string, std::string> all_values(const PromptTemplate& t, const std::string& fill = "value") {
  std::map<std::string, std::string> v;
  for (const auto& k : t.required) v[k] = fill + " for " + k;
  return v;
}

TEST(Templates, VdbQueryContainsTaskVerbatim) {
  const std::string task = "Teach the walker to climb stairs: 3 stages, resume each from the last.";
  const std::string out = render(builtin_template(AgentRole::vdb_query), {{"TASK_PROMPT", task}});
  EXPECT_NE(out.find(task), std::string::npos);
  EXPECT_EQ(out.find("<INSERT_"), std::string::npos);
}

TEST(Templates, MissingValueNamesPlaceholder) {
  const PromptTemplate& t = builtin_template(AgentRole::curriculum);
  auto values = all_values(t);
  values.erase("EVALUATION");
  try {
    render(t, values);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingPlaceholder);
    EXPECT_NE(e.message().find("EVALUATION"), std::string::npos);
  }
}

TEST(Templates, StageNumberReplacesEveryX) {
  const PromptTemplate& t = builtin_template(AgentRole::per_stage);
  ASSERT_NE(t.text.find("{X}"), std::string::npos);
  const std::string out = render(t, all_values(t), 2);
  EXPECT_EQ(out.find("{X}"), std::string::npos);
  EXPECT_NE(out.find("Stage 2"), std::string::npos);
  EXPECT_THROW(render(t, all_values(t)), Error);
}

TEST(Templates, NoRenderedPromptKeepsInsertMarker) {
  for (AgentRole role :
       {AgentRole::vdb_query, AgentRole::selector, AgentRole::curriculum, AgentRole::per_stage, AgentRole::feedback}) {
    const PromptTemplate& t = builtin_template(role);
    EXPECT_FALSE(t.required.empty()) << role_name(role);
    const std::string out = render(t, all_values(t), 1);
    EXPECT_EQ(out.find("<INSERT_"), std::string::npos) << role_name(role);
  }
  // Values are inserted once and never rescanned, and a value that smuggles a marker is refused.
  const PromptTemplate t = make_template(AgentRole::vdb_query, "a <INSERT_A_HERE> b <INSERT_B_HERE>");
  EXPECT_EQ(render(t, {{"A", "<B>"}, {"B", "x"}}), "a <B> b x");
  EXPECT_THROW(render(t, {{"A", "<INSERT_B_HERE>"}, {"B", "x"}}), Error);
}

TEST(Templates, ContextBlocksMatchGrammar) {
  const std::string fns = reward_functions_text();
  for (const char* name : {"sum_square", "exponential_decay", "norm_L2", "norm_L1", "quadratic", "weighted_sum",
                           "binary", "absolute_difference"}) {
    EXPECT_NE(fns.find(name), std::string::npos) << name;
  }
  EXPECT_FALSE(reward_variables_text().empty());
  EXPECT_FALSE(robot_description_text().empty());
  EXPECT_FALSE(workflow_format_text().empty());
}

TEST(FileBlocks, PerStageResponseHasTrio) {
  const auto blocks = parse_file_blocks(slurp(fixture_dir("walk_two_stage") / "authored" / "per_stage_1.txt"));
  ASSERT_EQ(blocks.size(), 3u);
  EXPECT_EQ(blocks[0].sandbox_path, "rewards/generated_reward_stage1.yaml");
  EXPECT_EQ(blocks[1].sandbox_path, "configs/generated_config_stage1.yaml");
  EXPECT_EQ(blocks[2].sandbox_path, "randomize/generated_randomize_stage1.yaml");
  EXPECT_EQ(blocks[0].content.rfind("reward:\n", 0), 0u);
  EXPECT_TRUE(blocks[0].content.ends_with("\n"));
  EXPECT_FALSE(blocks[0].content.ends_with("\n\n"));
}

TEST(FileBlocks, Errors) {
  auto code_of = [](const std::string& text) {
    try {
      parse_file_blocks(text);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  EXPECT_EQ(code_of(""), ErrorCode::NoBlocks);
  EXPECT_EQ(code_of("```\n```\n"), ErrorCode::NoBlocks);
  EXPECT_EQ(code_of("file_name: \"x\"\nfile_path: \"../../etc/x\"\ncontent: |\n  a\n"), ErrorCode::PathEscape);
  EXPECT_EQ(code_of("file_name: \"x\"\nfile_path: \"/etc/x\"\ncontent: |\n  a\n"), ErrorCode::PathEscape);
  EXPECT_EQ(code_of("file_name: \"y\"\nfile_path: \"../a/x\"\ncontent: |\n  a\n"), ErrorCode::MalformedBlock);
  EXPECT_EQ(code_of("Here are the files:\nfile_name: \"x\"\nfile_path: \"../a/x\"\ncontent: |\n  a\n"),
            ErrorCode::MalformedBlock);
  EXPECT_EQ(code_of("file_name: \"x\"\ncontent: |\n  a\n"), ErrorCode::MalformedBlock);
}

TEST(FileBlocks, FencesAroundBlocksAreIgnored) {
  const auto blocks = parse_file_blocks("```yaml\nfile_name: \"x.yaml\"\nfile_path: \"../d/x.yaml\"\ncontent: |\n"
                                        "  a: 1\n  b:\n    - 2\n\n```\n");
  ASSERT_EQ(blocks.size(), 1u);
  EXPECT_EQ(blocks[0].content, "a: 1\nb:\n  - 2\n");
  EXPECT_EQ(blocks[0].sandbox_path, "d/x.yaml");
  EXPECT_EQ(sandbox_path("../../x"), std::nullopt);
  EXPECT_EQ(sandbox_path("x.yaml"), "prompts/x.yaml");
}

TEST(FileBlocks, SerializeThenParseIsIdentity) {
  const std::vector<GeneratedFileBlock> blocks = {
      {"a.yaml", "../rewards/a.yaml", "rewards/a.yaml", "reward:\n  t:\n    scale: 1.0\n"},
      {"b.txt", "../prompts/tmp/b.txt", "prompts/tmp/b.txt", "line one\n\n  indented after a blank\nlast\n"},
      {"c.yaml", "../configs/c.yaml", "configs/c.yaml", "x: \"quoted: value\"\n"},
  };
  EXPECT_EQ(parse_file_blocks(serialize_file_blocks(blocks)), blocks);
  // And the other way for the shipped replies.
  for (const char* f : {"curriculum.txt", "per_stage_1.txt", "per_stage_2.txt"}) {
    const auto parsed = parse_file_blocks(slurp(fixture_dir("walk_two_stage") / "authored" / f));
    EXPECT_EQ(parse_file_blocks(serialize_file_blocks(parsed)), parsed) << f;
  }
}

const std::vector<std::string> kCandidates = {"run123_workflow.yaml", "run123_reward_stage1.yaml",
                                              "run123_config_stage1.yaml", "run123_randomize_stage1.yaml",
                                              "run9_reward_stage1.yaml"};

TEST(Selector, FourEntryMap) {
  const std::string reply = "Picked the closest run.\n```json\n{\n  \"workflow\": \"run123_workflow.yaml\",\n"
                            "  \"reward_stage1\": \"run9_reward_stage1.yaml\",\n"
                            "  \"config_stage1\": \"run123_config_stage1.yaml\",\n"
                            "  \"randomize_stage1\": \"run123_randomize_stage1.yaml\",\n}\n```\n";
  const auto m = parse_selector_json(reply, kCandidates);
  EXPECT_EQ(m.size(), 4u);
  EXPECT_EQ(m.at("reward_stage1"), "run9_reward_stage1.yaml");
}

TEST(Selector, Errors) {
  auto code_of = [](const std::string& text) {
    try {
      parse_selector_json(text, kCandidates);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  const std::string one = "```json\n{\"workflow\": \"run123_workflow.yaml\"}\n```\n";
  EXPECT_EQ(code_of(one + one), ErrorCode::NoJson);
  EXPECT_EQ(code_of("no json here"), ErrorCode::NoJson);
  EXPECT_EQ(code_of("```json\n[1, 2]\n```\n"), ErrorCode::NoJson);
  EXPECT_EQ(code_of("```json\n{\"workflow\": \"run123_workflow.yaml\", \"reward_stage1\": \"gone.yaml\","
                    " \"config_stage1\": \"run123_config_stage1.yaml\","
                    " \"randomize_stage1\": \"run123_randomize_stage1.yaml\"}\n```\n"),
            ErrorCode::UnknownFile);
  EXPECT_EQ(code_of("```json\n{\"workflow\": \"run123_workflow.yaml\", \"reward_stage1\": "
                    "\"run123_reward_stage1.yaml\"}\n```\n"),
            ErrorCode::BadKey);
  EXPECT_EQ(code_of("```json\n{\"reward_stage1\": \"run123_reward_stage1.yaml\"}\n```\n"), ErrorCode::BadKey);
  EXPECT_EQ(code_of("```json\n{\"workflow\": \"run123_workflow.yaml\", \"notes\": \"x\"}\n```\n"), ErrorCode::BadKey);
}

TEST(Feedback, Decisions) {
  const FeedbackDecision keep = parse_feedback("decision: proceed_unchanged\nrationale: fine\n");
  EXPECT_EQ(keep.action, FeedbackAction::proceed_unchanged);
  EXPECT_EQ(keep.rationale, "fine");
  EXPECT_TRUE(keep.revised.empty());

  const FeedbackDecision revise = parse_feedback(slurp(fixture_dir("walk_two_stage") / "authored" / "feedback_1.txt"));
  EXPECT_EQ(revise.action, FeedbackAction::proceed_with_revised_files);
  ASSERT_EQ(revise.revised.size(), 1u);
  EXPECT_EQ(revise.revised[0].sandbox_path, "configs/generated_config_stage2.yaml");

  EXPECT_EQ(parse_feedback("decision: terminate\nrationale: falls over\n").action, FeedbackAction::terminate);
  EXPECT_THROW(parse_feedback("decision: maybe\nrationale: x\n"), Error);
  EXPECT_THROW(parse_feedback("decision: proceed_with_revised_files\nrationale: x\n"), Error);
}

ResponseCheck accept_if_ok() {
  return [](const std::string& r) {
    std::vector<Finding> f;
    if (r != "ok") f.push_back({Severity::error, "BAD_REPLY", "<response>", "", "expected ok, got " + r});
    return f;
  };
}

TEST(Retry, ValidFirstTimeIsOneCall) {
  ScriptedTransport t(std::vector<std::string>{"ok"});
  const AgentReply r = invoke_with_retry(t, AgentRole::curriculum, "prompt", accept_if_ok());
  EXPECT_EQ(t.calls(), 1u);
  EXPECT_EQ(r.response, "ok");
  ASSERT_EQ(r.attempts.size(), 1u);
  EXPECT_EQ(r.attempts[0].prompt_digest, request_digest(AgentRole::curriculum, "prompt"));
}

TEST(Retry, InvalidThenValidIsTwoCalls) {
  ScriptedTransport t(std::vector<std::string>{"garbage", "ok"});
  std::vector<AgentAttempt> log;
  const AgentReply r = invoke_with_retry(t, AgentRole::per_stage, "prompt", accept_if_ok(), 2, &log);
  EXPECT_EQ(t.calls(), 2u);
  EXPECT_EQ(r.response, "ok");
  EXPECT_EQ(log.size(), 2u);
  EXPECT_EQ(log[0].findings.size(), 1u);
  EXPECT_TRUE(log[1].findings.empty());
  // The retry carries the original prompt plus the findings.
  const std::string& second = t.requests()[1].prompt;
  EXPECT_EQ(second.rfind("prompt", 0), 0u);
  EXPECT_NE(second.find("expected ok, got garbage"), std::string::npos);
}

TEST(Retry, AlwaysInvalidExhaustsAfterMaxRetriesPlusOne) {
  ScriptedTransport t([](const ChatRequest&, std::size_t call) { return "bad" + std::to_string(call); });
  try {
    invoke_with_retry(t, AgentRole::feedback, "prompt", accept_if_ok(), 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RetriesExhausted);
    for (const char* seen : {"got bad0", "got bad1", "got bad2"}) {
      EXPECT_NE(e.message().find(seen), std::string::npos) << seen << "\n" << e.message();
    }
  }
  EXPECT_EQ(t.calls(), 3u);
}

TEST(Retry, ParserExceptionsBecomeFindings) {
  ScriptedTransport t(std::vector<std::string>{"", "file_name: \"a\"\nfile_path: \"../x/a\"\ncontent: |\n  v\n"});
  const ResponseCheck check = [](const std::string& r) {
    parse_file_blocks(r);
    return std::vector<Finding>{};
  };
  std::vector<AgentAttempt> log;
  invoke_with_retry(t, AgentRole::per_stage, "p", check, 2, &log);
  ASSERT_EQ(log.size(), 2u);
  ASSERT_EQ(log[0].findings.size(), 1u);
  EXPECT_EQ(log[0].findings[0].code, "NO_BLOCKS");
}

TEST(Replay, ServesRecordedFixtures) {
  testing::TempDir dir;
  ScriptedTransport inner(std::vector<std::string>{"recorded answer"});
  RecordingTransport rec(inner, dir.path());
  const ChatRequest req{AgentRole::selector, "which run?", 0.0};
  EXPECT_EQ(rec.complete(req), "recorded answer");
  ReplayTransport replay(dir.path());
  EXPECT_EQ(replay.complete(req), "recorded answer");
  try {
    replay.complete({AgentRole::selector, "another prompt", 0.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FixtureMissing);
  }
  EXPECT_EQ(request_digest(AgentRole::selector, "which run?"), sha256_hex("selector\nwhich run?"));
}

TEST(Roles, NamesRoundTrip) {
  for (AgentRole role :
       {AgentRole::vdb_query, AgentRole::selector, AgentRole::curriculum, AgentRole::per_stage, AgentRole::feedback}) {
    EXPECT_EQ(role_from_name(role_name(role)), role);
  }
  EXPECT_EQ(role_from_name("oracle"), std::nullopt);
}

}  // namespace
}  // namespace stagehand
