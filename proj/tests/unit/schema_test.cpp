#include "stagehand/schema.hpp"

#include <gtest/gtest.h>

#include <algorithm>

#include "paths.hpp"

namespace stagehand {
namespace {

using testing::bundle_dir;

constexpr const char* kConfig = "configs/generated_config_stage1.yaml";
constexpr const char* kReward = "rewards/generated_reward_stage1.yaml";
constexpr const char* kRandomize = "randomize/generated_randomize_stage1.yaml";
constexpr const char* kWorkflow = "workflows/generated_workflow.yaml";

// The tune bundle with one textual edit applied.
BundleSources edited(const char* file, const std::string& from, const std::string& to) {
  BundleSources s = load_sources(bundle_dir("tune"));
  std::string& text = s.files.at(file);
  const auto at = text.find(from);
  EXPECT_NE(at, std::string::npos) << from;
  if (at != std::string::npos) text.replace(at, from.size(), to);
  return s;
}

const Finding* find_code(const ValidationReport& r, const std::string& code) {
  const auto it = std::find_if(r.findings.begin(), r.findings.end(), [&](const Finding& f) { return f.code == code; });
  return it == r.findings.end() ? nullptr : &*it;
}

TEST(Schema, SeedBundlesValidate) {
  for (const char* name : {"tune", "blind", "desk"}) {
    const auto report = validate(parse_bundle(bundle_dir(name)));
    EXPECT_TRUE(report.ok) << name << "\n" << format_report(report);
    EXPECT_EQ(report.error_count(), 0u);
  }
}

TEST(Schema, TuneCompilesWithExpectedShape) {
  const CompiledBundle b = compile_bundle(parse_bundle(bundle_dir("tune")));
  ASSERT_EQ(b.stages().size(), 1u);
  const StagePlan& s = b.stage(1);
  EXPECT_EQ(s.reward.terms.size(), 13u);
  EXPECT_EQ(s.randomize.rules.size(), 7u);
  EXPECT_EQ(s.config.trainer.batch_size, 512);
  EXPECT_EQ(s.config.trainer.num_envs, 8192);
  EXPECT_EQ(s.config.network.policy_hidden_layer_sizes, (std::vector<long>{512, 256, 128}));
  EXPECT_THROW(b.stage(2), Error);
}

TEST(Schema, SingleEditsRaiseTheirCode) {
  struct Case {
    const char* file;
    std::string from, to, code, path;
  };
  const std::vector<Case> cases = {
      {kConfig, "num_envs: 8192", "num_envs: 8000", "POWER_OF_TWO", "trainer.num_envs"},
      {kConfig, "batch_size: 512", "batch_size: 500", "POWER_OF_TWO", "trainer.batch_size"},
      {kConfig, "num_minibatches: 32", "num_minibatches: 1", "BATCH_DIVISIBILITY", "trainer.batch_size"},
      {kConfig, "learning_rate: 8.0e-5", "learning_rate: fast", "TYPE_MISMATCH", "trainer.learning_rate"},
      {kConfig, "  num_evals: 13\n", "", "MISSING_KEY", "trainer.num_evals"},
      {kConfig, "command_lin_vel_x_range: [-0.5, 0.5]", "command_lin_vel_x_range: [0.5, -0.5]", "RANGE_INVERTED",
       "environment.command_lin_vel_x_range"},
      {kConfig, "gaits: [\"walk\"]", "gaits: [\"moonwalk\"]", "UNKNOWN_GAIT", "environment.gaits"},
      {kConfig, "activation: \"swish\"", "activation: \"gelu\"", "UNKNOWN_ACTIVATION", "ppo_network.activation"},
      {kConfig, "reward_config_path: \"../rewards/generated_reward_stage1.yaml\"",
       "reward_config_path: \"../rewards/other.yaml\"", "PATH_MISMATCH", "environment.reward_config_path"},
      {kConfig, "artifact:\n  resume_from_checkpoint: false", "artifact:\n  resume_from_checkpoint: true",
       "RESUME_MISMATCH", "artifact.resume_from_checkpoint"},
      {kReward, "type: \"exponential_decay\"", "type: \"cubic\"", "UNKNOWN_EVALUATION", ""},
      {kReward, "command_xy: \"command[0:2]\"", "command_xy: \"commnad[0:2]\"", "UNKNOWN_VARIABLE",
       "reward.tracking_lin_vel.inputs.command_xy"},
      {kReward, "vector: \"command_xy-local_vel_xy\"", "vector: \"command_xy-local_vel_yz\"", "UNBOUND_VARIABLE", ""},
      {kRandomize, "geom_friction:", "nose_friction:", "UNKNOWN_FIELD", ""},
      {kWorkflow, "mode: \"timesteps_exhausted\"", "mode: \"vibes\"", "UNKNOWN_PROMOTION_MODE",
       "workflow.stages[0].promotion.mode"},
      {kWorkflow, "resume_from_checkpoint: false", "resume_from_checkpoint: true", "RESUME_FIRST_STAGE", ""},
  };
  for (const auto& c : cases) {
    const ValidationReport r = check_sources(edited(c.file, c.from, c.to));
    EXPECT_FALSE(r.ok) << c.code;
    const Finding* f = find_code(r, c.code);
    ASSERT_NE(f, nullptr) << c.code << "\n" << format_report(r);
    EXPECT_EQ(f->severity, Severity::error);
    if (!c.path.empty()) EXPECT_EQ(f->path, c.path) << c.code;
  }
}

TEST(Schema, UnknownKeysAreWarningsOnly) {
  const ValidationReport r =
      check_sources(edited(kConfig, "  seed: 7\n", "  seed: 7\n  warp_drive: true\n"));
  EXPECT_TRUE(r.ok) << format_report(r);
  const Finding* f = find_code(r, "UNKNOWN_KEY");
  ASSERT_NE(f, nullptr);
  EXPECT_EQ(f->severity, Severity::warning);
  EXPECT_EQ(r.error_count(), 0u);
}

TEST(Schema, ReportsEveryViolationNotJustTheFirst) {
  BundleSources s = edited(kConfig, "num_envs: 8192", "num_envs: 8000");
  std::string& cfg = s.files.at(kConfig);
  cfg.replace(cfg.find("activation: \"swish\""), 19, "activation: \"gelu\"");
  const ValidationReport r = check_sources(s);
  EXPECT_TRUE(r.has("POWER_OF_TWO"));
  EXPECT_TRUE(r.has("UNKNOWN_ACTIVATION"));
  EXPECT_GE(r.error_count(), 2u);
}

TEST(Schema, MissingFileAndBadYamlAreFindings) {
  BundleSources s = load_sources(bundle_dir("tune"));
  s.files.erase(kReward);
  EXPECT_TRUE(check_sources(s).has("MISSING_FILE"));

  const ValidationReport bad = check_sources(edited(kConfig, "trainer:", "trainer: [unclosed"));
  EXPECT_FALSE(bad.ok);
  EXPECT_TRUE(bad.has("PARSE_ERROR")) << format_report(bad);

  try {
    compile_bundle(parse_sources(edited(kConfig, "batch_size: 512", "batch_size: 500")));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ValidationFailed);
    EXPECT_NE(e.message().find("POWER_OF_TWO"), std::string::npos);
  }
}

TEST(Schema, ResolvePath) {
  EXPECT_EQ(resolve_path("configs/a.yaml", "../rewards/r.yaml"), "rewards/r.yaml");
  EXPECT_EQ(resolve_path("configs/a.yaml", "b.yaml"), "configs/b.yaml");
  EXPECT_EQ(resolve_path("configs/a.yaml", "../../x.yaml"), std::nullopt);
}

TEST(Schema, ReportJsonRoundTrip) {
  const ValidationReport r = check_sources(edited(kConfig, "batch_size: 512", "batch_size: 500"));
  const ValidationReport back = report_from_json(report_to_json(r));
  EXPECT_EQ(back.ok, r.ok);
  EXPECT_EQ(back.findings, r.findings);
  EXPECT_THROW(report_from_json("{not json"), Error);
}

TEST(Schema, MutationCorpusRejected) {
  for (const char* name : {"tune", "blind"}) {
    const auto sources = load_sources(bundle_dir(name));
    const auto corpus = mutate_corpus(sources, 0);
    EXPECT_GE(corpus.size(), 20u);
    for (const auto& m : corpus) {
      const auto report = check_sources(m.sources);
      EXPECT_FALSE(report.ok) << m.name;
      EXPECT_TRUE(report.has(m.expected_code)) << m.name << " expected " << m.expected_code << "\n"
                                               << format_report(report);
    }
  }
}

TEST(Schema, MutationCorpusIsDeterministic) {
  const auto sources = load_sources(bundle_dir("tune"));
  const auto a = mutate_corpus(sources, 5), b = mutate_corpus(sources, 5);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].sources.files, b[i].sources.files);
  }
  BundleSources broken = sources;
  broken.files.erase(kReward);
  EXPECT_THROW(mutate_corpus(broken, 0), Error);
}

}  // namespace
}  // namespace stagehand
