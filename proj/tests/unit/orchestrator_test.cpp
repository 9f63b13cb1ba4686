#include "stagehand/orchestrator.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "paths.hpp"
#include "stagehand/data.hpp"

namespace stagehand {
namespace {

namespace fs = std::filesystem;
using testing::fixture_dir;
using testing::slurp;
using testing::TempDir;

const std::string kPrompt = "Two stages: learn to walk on flat ground, then keep walking under stronger pushes.";

std::string authored(const std::string& name) { return slurp(fixture_dir("walk_two_stage") / "authored" / name); }

PipelineOptions quick(const fs::path& root) {
  PipelineOptions o;
  o.runs_root = root;
  o.overrides.num_timesteps = 5120;
  o.overrides.num_evals = 2;
  o.overrides.num_envs = 16;
  o.overrides.episode_length = 30;
  return o;
}

/// Serves the shipped replies by role; `feedback` replaces the feedback reply.
ScriptedTransport authored_transport(std::string feedback = authored("feedback_1.txt")) {
  auto per_stage_count = std::make_shared<int>(0);
  return ScriptedTransport([=](const ChatRequest& r, std::size_t) -> std::string {
    switch (r.role) {
      case AgentRole::curriculum: return authored("curriculum.txt");
      case AgentRole::per_stage: return authored("per_stage_" + std::to_string(++*per_stage_count) + ".txt");
      case AgentRole::feedback: return feedback;
      default: return "unexpected role";
    }
  });
}

std::size_t count_role(const ScriptedTransport& t, AgentRole role) {
  std::size_t n = 0;
  for (const auto& r : t.requests()) n += r.role == role ? 1 : 0;
  return n;
}

TEST(Promote, Examples) {
  StageResult r;
  r.timestep_budget = 1000;
  r.env_steps = 1000;
  EXPECT_TRUE(promote(r, {PromotionMode::timesteps_exhausted, 0.0}));
  r.env_steps = 999;
  EXPECT_FALSE(promote(r, {PromotionMode::timesteps_exhausted, 0.0}));

  EXPECT_FALSE(promote(r, {PromotionMode::reward_threshold, 0.5}));  // no evaluation yet
  EvalRecord last;
  last.values["eval/episode_reward"] = 0.6;
  r.metrics.push_back(last);
  EXPECT_TRUE(promote(r, {PromotionMode::reward_threshold, 0.5}));
  EXPECT_FALSE(promote(r, {PromotionMode::reward_threshold, 0.7}));
  EXPECT_FALSE(promote(r, {PromotionMode::reward_threshold, std::numeric_limits<double>::infinity()}));
  EXPECT_TRUE(promote(r, {PromotionMode::either, 0.5}));
  EXPECT_FALSE(promote(r, {PromotionMode::either, 0.7}));
  r.env_steps = 1000;
  EXPECT_TRUE(promote(r, {PromotionMode::either, 0.7}));
}

TEST(Pipeline, ColdStartSkipsRetrievalAndCompletes) {
  TempDir dir;
  VectorStore store = VectorStore::open(dir / "vdb");
  ScriptedTransport t = authored_transport();
  std::vector<long> trained;
  PipelineOptions o = quick(dir / "runs");
  o.on_stage_start = [&](const StagePlan& p) { trained.push_back(p.ref.index); };
  const CurriculumRun run = run_pipeline(kPrompt, store, t, o);

  ASSERT_EQ(run.status, RunStatus::completed) << run.failed_at << " " << run.reason << " " << run.message;
  EXPECT_EQ(count_role(t, AgentRole::vdb_query), 0u);
  EXPECT_EQ(count_role(t, AgentRole::selector), 0u);
  EXPECT_EQ(count_role(t, AgentRole::curriculum), 1u);
  EXPECT_EQ(count_role(t, AgentRole::per_stage), 2u);
  EXPECT_EQ(count_role(t, AgentRole::feedback), 1u);
  EXPECT_TRUE(run.query.empty());
  EXPECT_TRUE(run.selection.empty());
  EXPECT_EQ(trained, (std::vector<long>{1, 2}));
  ASSERT_EQ(run.stages.size(), 2u);
  ASSERT_TRUE(run.scores.has_value());
  EXPECT_EQ(*run.scores, run.stages.back().scores);

  // The curriculum prompt carries the shipped example instead of retrieved runs.
  const std::string& curriculum_prompt = t.requests()[0].prompt;
  EXPECT_NE(curriculum_prompt.find(seed_bundle("tune").files.at("rewards/generated_reward_stage1.yaml")),
            std::string::npos);

  for (const char* f : {"prompt.txt", "workflow.yaml", "run.json", "scores.json", "agent_log.jsonl",
                        "timestamps.json", "stage1/metrics.jsonl", "stage1/checkpoint.bin", "stage2/scores.json",
                        "generated/workflows/generated_workflow.yaml", "generated/prompts/tmp/generated_stage2_details.txt"}) {
    EXPECT_TRUE(fs::exists(run.dir / f)) << f;
  }
  EXPECT_EQ(scores_from_json(slurp(run.dir / "scores.json")), *run.scores);

  ASSERT_FALSE(run.stored_id.empty());
  EXPECT_EQ(store.size(), 1u);
  const RunArtifact stored = store.load_run(run.stored_id);
  EXPECT_EQ(stored.prompt, kPrompt);
  EXPECT_EQ(stored.stage_metrics.size(), 2u);
}

TEST(Pipeline, StoredRunIsRankOneForItsPrompt) {
  TempDir dir;
  VectorStore store = VectorStore::open(dir / "vdb");
  RunArtifact other;
  other.prompt = "balance on one foot while the torso twists";
  other.evaluation = "unrelated";
  other.bundle = seed_bundle("tune");
  other.stage_metrics = {""};
  const std::string other_id = store.add_run(other);

  auto per_stage = std::make_shared<int>(0);
  ScriptedTransport t([&, per_stage](const ChatRequest& r, std::size_t) -> std::string {
    switch (r.role) {
      case AgentRole::vdb_query: return "walking";
      case AgentRole::selector:
        return "```json\n{\"workflow\": \"" + other_id + "_workflow.yaml\", \"reward_stage1\": \"" + other_id +
               "_reward_stage1.yaml\", \"config_stage1\": \"" + other_id + "_config_stage1.yaml\", " +
               "\"randomize_stage1\": \"" + other_id + "_randomize_stage1.yaml\"}\n```\n";
      case AgentRole::curriculum: return authored("curriculum.txt");
      case AgentRole::per_stage: return authored("per_stage_" + std::to_string(++*per_stage) + ".txt");
      case AgentRole::feedback: return "decision: proceed_unchanged\nrationale: fine\n";
    }
    return "";
  });
  const CurriculumRun run = run_pipeline(kPrompt, store, t, quick(dir / "runs"));
  ASSERT_EQ(run.status, RunStatus::completed) << run.failed_at << " " << run.reason << " " << run.message;
  EXPECT_EQ(run.selection.size(), 4u);
  const auto hits = store.query_topk(kPrompt, 2);
  ASSERT_EQ(hits.size(), 2u);
  EXPECT_EQ(hits[0].id, run.stored_id);
  EXPECT_GT(hits[0].score, hits[1].score);
}

TEST(Pipeline, WarmStartUsesSelectorChoice) {
  TempDir dir;
  VectorStore store = VectorStore::open(dir / "vdb");
  {
    ScriptedTransport cold = authored_transport();
    ASSERT_EQ(run_pipeline(kPrompt, store, cold, quick(dir / "runs")).status, RunStatus::completed);
  }
  const std::string id = store.ids().front();
  auto per_stage = std::make_shared<int>(0);
  ScriptedTransport t([&, per_stage](const ChatRequest& r, std::size_t) -> std::string {
    switch (r.role) {
      case AgentRole::vdb_query: return "two stage flat walking with pushes\n";
      case AgentRole::selector:
        return "```json\n{\"workflow\": \"" + id + "_workflow.yaml\", \"reward_stage1\": \"" + id +
               "_reward_stage2.yaml\", \"config_stage1\": \"" + id + "_config_stage1.yaml\", \"randomize_stage1\": \"" +
               id + "_randomize_stage1.yaml\"}\n```\n";
      case AgentRole::curriculum: return authored("curriculum.txt");
      case AgentRole::per_stage: return authored("per_stage_" + std::to_string(++*per_stage) + ".txt");
      case AgentRole::feedback: return "decision: proceed_unchanged\nrationale: fine\n";
    }
    return "";
  });
  const CurriculumRun run = run_pipeline(kPrompt, store, t, quick(dir / "runs"));
  ASSERT_EQ(run.status, RunStatus::completed) << run.failed_at << " " << run.reason << " " << run.message;
  EXPECT_EQ(run.query, "two stage flat walking with pushes");
  ASSERT_EQ(run.retrieved.size(), 1u);
  EXPECT_EQ(run.retrieved[0].id, id);
  EXPECT_EQ(run.selection.size(), 4u);
  EXPECT_EQ(count_role(t, AgentRole::vdb_query), 1u);
  EXPECT_EQ(count_role(t, AgentRole::selector), 1u);

  // The selected stage-2 reward of the stored run is the stage-1 example in the curriculum prompt.
  const RunArtifact source = store.load_run(id);
  const std::string& chosen = source.bundle.files.at("rewards/generated_reward_stage2.yaml");
  std::string curriculum_prompt;
  for (const auto& r : t.requests()) {
    if (r.role == AgentRole::curriculum) curriculum_prompt = r.prompt;
  }
  EXPECT_NE(curriculum_prompt.find(chosen), std::string::npos);
  EXPECT_NE(curriculum_prompt.find(source.evaluation), std::string::npos);
  EXPECT_EQ(store.size(), 2u);
  EXPECT_NE(run.stored_id, id);
}

TEST(Pipeline, AlwaysInvalidTransportFailsGeneration) {
  TempDir dir;
  VectorStore store = VectorStore::open(dir / "vdb");
  ScriptedTransport t(std::vector<std::string>{"I cannot produce files today."});
  bool trained = false;
  PipelineOptions o = quick(dir / "runs");
  o.on_stage_start = [&](const StagePlan&) { trained = true; };
  const CurriculumRun run = run_pipeline(kPrompt, store, t, o);
  EXPECT_EQ(run.status, RunStatus::failed);
  EXPECT_EQ(run.failed_at, "generation");
  EXPECT_EQ(run.reason, "RETRIES_EXHAUSTED");
  EXPECT_EQ(t.calls(), 3u);
  EXPECT_TRUE(run.stages.empty());
  EXPECT_FALSE(trained);
  EXPECT_EQ(store.size(), 0u);
  EXPECT_TRUE(fs::exists(run.dir / "run.json"));
}

TEST(Pipeline, InvalidStageFilesNeverTrain) {
  TempDir dir;
  VectorStore store = VectorStore::open(dir / "vdb");
  std::string bad = authored("per_stage_1.txt");
  const auto at = bad.find("batch_size: 32");
  ASSERT_NE(at, std::string::npos);
  bad.replace(at, 14, "batch_size: 500");
  ScriptedTransport t([&](const ChatRequest& r, std::size_t) -> std::string {
    return r.role == AgentRole::curriculum ? authored("curriculum.txt") : bad;
  });
  bool trained = false;
  PipelineOptions o = quick(dir / "runs");
  o.on_stage_start = [&](const StagePlan&) { trained = true; };
  const CurriculumRun run = run_pipeline(kPrompt, store, t, o);
  EXPECT_EQ(run.status, RunStatus::failed);
  EXPECT_EQ(run.failed_at, "generation");
  EXPECT_FALSE(trained);
  EXPECT_NE(run.message.find("POWER_OF_TWO"), std::string::npos) << run.message;
}

TEST(Pipeline, InvalidThenValidPerStageReplyRecovers) {
  TempDir dir;
  VectorStore store = VectorStore::open(dir / "vdb");
  auto per_stage = std::make_shared<int>(0);
  ScriptedTransport t([&, per_stage](const ChatRequest& r, std::size_t) -> std::string {
    switch (r.role) {
      case AgentRole::curriculum: return authored("curriculum.txt");
      case AgentRole::per_stage: {
        const int n = ++*per_stage;
        if (n == 1) return "file_name: \"oops.yaml\"\nfile_path: \"../rewards/oops.yaml\"\ncontent: |\n  x: 1\n";
        return authored("per_stage_" + std::to_string(n - 1) + ".txt");
      }
      default: return "decision: proceed_unchanged\nrationale: fine\n";
    }
  });
  const CurriculumRun run = run_pipeline(kPrompt, store, t, quick(dir / "runs"));
  ASSERT_EQ(run.status, RunStatus::completed) << run.reason << " " << run.message;
  EXPECT_EQ(count_role(t, AgentRole::per_stage), 3u);
  EXPECT_NE(t.requests()[2].prompt.find("UNEXPECTED_FILE"), std::string::npos);
}

TEST(StageLoop, ProceedUnchangedKeepsFiles) {
  TempDir dir;
  VectorStore store = VectorStore::open(dir / "vdb");
  ScriptedTransport t = authored_transport("decision: proceed_unchanged\nrationale: steady losses\n");
  const CurriculumRun run = run_pipeline(kPrompt, store, t, quick(dir / "runs"));
  ASSERT_EQ(run.status, RunStatus::completed);
  EXPECT_EQ(slurp(run.dir / "stage2" / "config.yaml"),
            slurp(run.dir / "generated" / "configs" / "generated_config_stage2.yaml"));
  EXPECT_EQ(slurp(run.dir / "stage2" / "reward.yaml"),
            slurp(run.dir / "generated" / "rewards" / "generated_reward_stage2.yaml"));
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

TEST(StageLoop, LearningRateRevisionChangesOnlyThatField) {
  TempDir dir;
  VectorStore store = VectorStore::open(dir / "vdb");
  ScriptedTransport t = authored_transport();
  std::vector<StagePlan> plans;
  PipelineOptions o = quick(dir / "runs");
  o.on_stage_start = [&](const StagePlan& p) { plans.push_back(p); };
  const CurriculumRun run = run_pipeline(kPrompt, store, t, o);
  ASSERT_EQ(run.status, RunStatus::completed);
  ASSERT_EQ(plans.size(), 2u);
  EXPECT_EQ(plans[1].config.trainer.learning_rate, 5.0e-4);

  const auto used = lines_of(slurp(run.dir / "stage2" / "config.yaml"));
  const auto original = lines_of(slurp(run.dir / "generated" / "configs" / "generated_config_stage2.yaml"));
  ASSERT_EQ(used.size(), original.size());
  std::vector<std::string> changed;
  for (std::size_t i = 0; i < used.size(); ++i) {
    if (used[i] != original[i]) changed.push_back(used[i]);
  }
  ASSERT_EQ(changed.size(), 1u);
  EXPECT_NE(changed[0].find("learning_rate: 5.0e-4"), std::string::npos);

  // The feedback prompt shows the stage 1 metrics and the stage 2 files to revise.
  std::string feedback_prompt;
  for (const auto& r : t.requests()) {
    if (r.role == AgentRole::feedback) feedback_prompt = r.prompt;
  }
  EXPECT_NE(feedback_prompt.find("eval/episode_reward"), std::string::npos);
  EXPECT_NE(feedback_prompt.find("learning_rate: 1.0e-3"), std::string::npos);
}

TEST(StageLoop, RevisionOutsideNextStageIsRejected) {
  TempDir dir;
  VectorStore store = VectorStore::open(dir / "vdb");
  std::string wrong = authored("feedback_1.txt");
  for (const char* from : {"generated_config_stage2.yaml", "generated_config_stage2.yaml"}) {
    wrong.replace(wrong.find(from), std::string(from).size(), "generated_config_stage1.yaml");
  }
  ScriptedTransport t = authored_transport(wrong);
  const CurriculumRun run = run_pipeline(kPrompt, store, t, quick(dir / "runs"));
  EXPECT_EQ(run.status, RunStatus::failed);
  EXPECT_EQ(run.failed_at, "feedback1");
  EXPECT_EQ(run.reason, "RETRIES_EXHAUSTED");
  EXPECT_NE(run.message.find("REVISION_SCOPE"), std::string::npos);
  EXPECT_EQ(run.stages.size(), 1u);
}

BundleSources three_stage_bundle() {
  BundleSources b = seed_bundle("desk");
  std::string wf = "workflow:\n  name: \"three\"\n  stages:\n";
  for (int k = 1; k <= 3; ++k) {
    wf += "    - index: " + std::to_string(k) +
          "\n      reward: \"../rewards/generated_reward_stage1.yaml\""
          "\n      config: \"../configs/generated_config_stage1.yaml\""
          "\n      randomize: \"../randomize/generated_randomize_stage1.yaml\""
          "\n      resume_from_checkpoint: false"
          "\n      feedback: true"
          "\n      promotion:\n        mode: \"timesteps_exhausted\"\n        threshold: 0.0\n";
  }
  b.files[b.workflow_path] = wf;
  return b;
}

TEST(StageLoop, TerminateAfterFirstOfThree) {
  TempDir dir;
  const BundleSources bundle = three_stage_bundle();
  ASSERT_TRUE(check_sources(bundle).ok) << format_report(check_sources(bundle));
  CurriculumRun run;
  run.bundle = bundle;
  run.dir = dir / "run";
  ScriptedTransport t(std::vector<std::string>{"decision: terminate\nrationale: the walker keeps falling\n"});
  run_stage_loop(run, kPrompt, t, quick(dir.path()));
  EXPECT_EQ(run.status, RunStatus::terminated_by_feedback);
  EXPECT_EQ(run.stages.size(), 1u);
  EXPECT_EQ(run.message, "the walker keeps falling");
  EXPECT_TRUE(run.scores.has_value());
  EXPECT_EQ(t.calls(), 1u);
  EXPECT_FALSE(fs::exists(run.dir / "stage2"));
}

TEST(StageLoop, UnmetPromotionStopsBeforeNextStage) {
  TempDir dir;
  BundleSources bundle = three_stage_bundle();
  std::string& wf = bundle.files[bundle.workflow_path];
  const auto at = wf.find("mode: \"timesteps_exhausted\"\n        threshold: 0.0");
  wf.replace(at, std::string("mode: \"timesteps_exhausted\"\n        threshold: 0.0").size(),
             "mode: \"reward_threshold\"\n        threshold: 1.0e9");
  CurriculumRun run;
  run.bundle = bundle;
  ScriptedTransport t(std::vector<std::string>{"decision: proceed_unchanged\nrationale: x\n"});
  run_stage_loop(run, kPrompt, t, quick(dir.path()));
  EXPECT_EQ(run.status, RunStatus::failed);
  EXPECT_EQ(run.reason, "NOT_PROMOTED");
  EXPECT_EQ(run.failed_at, "stage1");
  EXPECT_EQ(run.stages.size(), 1u);
  EXPECT_EQ(t.calls(), 0u);
}

TEST(TrainBundle, InvalidBundleNeverTrains) {
  TempDir dir;
  BundleSources bundle = seed_bundle("desk");
  std::string& cfg = bundle.files.at("configs/generated_config_stage1.yaml");
  cfg.replace(cfg.find("batch_size: 32"), 14, "batch_size: 500");
  bool trained = false;
  PipelineOptions o = quick(dir.path());
  o.on_stage_start = [&](const StagePlan&) { trained = true; };
  const CurriculumRun run = train_bundle(bundle, dir / "out", o);
  EXPECT_EQ(run.status, RunStatus::failed);
  EXPECT_EQ(run.failed_at, "validation");
  EXPECT_EQ(run.reason, "VALIDATION_FAILED");
  EXPECT_FALSE(trained);
  EXPECT_TRUE(run.stages.empty());
}

TEST(TrainBundle, DeskBundleTrainsOneStage) {
  TempDir dir;
  const CurriculumRun run = train_bundle(seed_bundle("desk"), dir / "out", quick(dir.path()));
  ASSERT_EQ(run.status, RunStatus::completed) << run.reason << " " << run.message;
  EXPECT_EQ(run.stages.size(), 1u);
  EXPECT_TRUE(fs::exists(dir / "out" / "stage1" / "metrics.jsonl"));
  const auto j = run_to_json(run);
  EXPECT_NE(j.find("\"status\": \"completed\""), std::string::npos) << j;
}

}  // namespace
}  // namespace stagehand
