#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stagehand/agents.hpp"
#include "stagehand/schema.hpp"
#include "stagehand/scores.hpp"
#include "stagehand/trainer.hpp"
#include "stagehand/vdb.hpp"

namespace stagehand {

/// timesteps_exhausted: the stage used its whole budget. reward_threshold:
/// the last evaluation's eval/episode_reward >= threshold. either: one of the two.
/// False when the result has no evaluation and the mode needs one.
bool promote(const StageResult& result, const PromotionCriterion& criterion);

enum class RunStatus { completed, failed, terminated_by_feedback };
std::string_view status_name(RunStatus status) noexcept;

struct PipelineOptions {
  /// Run directories are created below this.
  std::filesystem::path runs_root = "runs";
  /// Fixed run id; by default derived from the prompt and seed, with a
  /// numeric suffix when that directory already exists.
  std::string run_id;
  /// Replaces every stage config's trainer seed when set.
  std::optional<std::uint64_t> seed;
  bool paper_scale = false;
  TrainOverrides overrides;
  int max_retries = 2;
  std::size_t top_k = 3;
  /// Seed bundle offered as the example on a cold start.
  std::string seed_bundle = "tune";
  /// Operator evaluation stored with the run; empty means an automatic summary.
  std::string evaluation;
  bool store_run = true;
  /// Called right before a stage trains, with the plan that passed validation.
  std::function<void(const StagePlan&)> on_stage_start;
  std::function<void(const std::string&)> progress;
};

struct CurriculumRun {
  std::string id;
  std::filesystem::path dir;
  std::string prompt;
  /// Query line and hits; empty on a cold start.
  std::string query;
  std::vector<QueryHit> retrieved;
  /// Selector output (role key -> candidate file); empty on a cold start.
  std::map<std::string, std::string> selection;
  /// Bundle as last used (feedback revisions applied).
  BundleSources bundle;
  std::vector<StageResult> stages;
  std::optional<ScoreTriple> scores;
  RunStatus status = RunStatus::completed;
  /// For failures: "generation", "stage2", ... and the error code name.
  std::string failed_at;
  std::string reason;
  std::string message;
  /// Id in the vector store when the run was stored.
  std::string stored_id;
};

/// Prompt -> retrieval -> curriculum and per-stage generation -> validation ->
/// stage loop with feedback -> scores -> store. Failures are reported in the
/// returned run rather than thrown; everything produced so far stays in the
/// run directory:
///   prompt.txt  workflow.yaml  generated/...  stage<k>/{reward,config,randomize}.yaml
///   stage<k>/metrics.jsonl  stage<k>/checkpoint.bin  stage<k>/scores.json
///   scores.json  run.json  agent_log.jsonl  agents/<n>_<role>.{prompt,response}.txt
///   timestamps.json (the only file that varies between identical runs)
CurriculumRun run_pipeline(const std::string& task_prompt, VectorStore& store, ChatTransport& transport,
                           const PipelineOptions& options = {});

/// Trains stages 1..K of a validated bundle in order. After a stage with
/// `feedback: true` (and k < K) the feedback agent decides whether the next
/// stage runs as is, with revised files (re-validated first) or not at all.
/// `run` receives the results and status; `run.dir`, when non-empty, gets the
/// per-stage files.
void run_stage_loop(CurriculumRun& run, const std::string& task_prompt, ChatTransport& transport,
                    const PipelineOptions& options, std::vector<AgentAttempt>* log = nullptr);

/// Trains a bundle without agents (feedback stages proceed unchanged). The
/// bundle is copied to `out_dir`/generated so the run can be stored later.
CurriculumRun train_bundle(const BundleSources& sources, const std::filesystem::path& out_dir,
                           const PipelineOptions& options = {});

/// The selector's candidate list for stored runs: "<id>_workflow.yaml",
/// "<id>_reward_stage<k>.yaml", ... mapped to file text.
std::map<std::string, std::string> candidate_files(const VectorStore& store, const std::vector<QueryHit>& hits);

std::string run_to_json(const CurriculumRun& run);

}  // namespace stagehand
