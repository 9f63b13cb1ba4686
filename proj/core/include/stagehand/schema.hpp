#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stagehand/config.hpp"
#include "stagehand/randomizer.hpp"
#include "stagehand/reward.hpp"

namespace YAML {
class Node;
}

namespace stagehand {

/// In-memory view of a bundle directory. Paths are relative to the bundle root,
/// '/'-separated and lexically normalized ("workflows/generated_workflow.yaml").
struct BundleSources {
  std::string workflow_path;
  std::map<std::string, std::string> files;
};

/// Reads every regular file below `dir`. The workflow is `workflow.yaml`, or the
/// first `*.yaml` under `workflows/`. Throws MISSING_FILE when there is none.
BundleSources load_sources(const std::filesystem::path& dir);

/// Resolves `reference` against the directory of `from`; ".." segments are folded.
/// Returns nullopt if the result leaves the bundle root.
std::optional<std::string> resolve_path(const std::string& from, const std::string& reference);

enum class PromotionMode { timesteps_exhausted, reward_threshold, either };

struct PromotionCriterion {
  PromotionMode mode = PromotionMode::timesteps_exhausted;
  double threshold = 0.0;
};

std::string_view mode_name(PromotionMode mode) noexcept;

struct StageRef {
  long index = 0;
  /// As written in the workflow.
  std::string reward_ref, config_ref, randomize_ref;
  /// Resolved bundle-relative paths.
  std::string reward_path, config_path, randomize_path;
  bool resume_from_checkpoint = false;
  bool feedback = false;
  PromotionCriterion promotion;
};

struct WorkflowSpec {
  std::string name;
  std::string task_prompt_digest;
  std::vector<StageRef> stages;
};

struct SourceDocument {
  std::string path;
  std::string text;
  std::shared_ptr<const YAML::Node> root;
};

/// A parsed but unchecked bundle: every referenced document is loaded and
/// syntactically valid YAML.
struct CurriculumBundle {
  BundleSources sources;
  SourceDocument workflow;
  /// Stage entries as found; typed fields are best-effort (validate re-checks).
  std::vector<StageRef> stages;
  std::map<std::string, SourceDocument> documents;
  /// Stages beyond this index were not loaded (partial bundles during generation).
  std::optional<long> up_to_stage;
};

struct ParseOptions {
  std::optional<long> up_to_stage;
};

/// Throws PARSE_ERROR (with line/column) for malformed YAML, a reward document
/// whose top-level key is not `reward:`, or an unusable workflow; MISSING_FILE
/// for a referenced file absent from the sources.
CurriculumBundle parse_sources(const BundleSources& sources, const ParseOptions& options = {});
CurriculumBundle parse_bundle(const std::filesystem::path& dir, const ParseOptions& options = {});

enum class Severity { warning, error };

struct Finding {
  Severity severity = Severity::error;
  std::string code;
  std::string file;
  std::string path;
  std::string message;

  friend bool operator==(const Finding&, const Finding&) = default;
};

struct ValidationReport {
  bool ok = true;
  std::vector<Finding> findings;

  bool has(std::string_view code) const;
  std::size_t error_count() const;
};

/// Every violation in the bundle; never stops at the first and never throws.
ValidationReport validate(const CurriculumBundle& bundle);

/// parse_sources + validate, with parse failures reported as findings.
ValidationReport check_sources(const BundleSources& sources, const ParseOptions& options = {});

std::string format_report(const ValidationReport& report);
std::string report_to_json(const ValidationReport& report);
ValidationReport report_from_json(const std::string& text);

/// One stage that passed validation, fully typed and compiled.
struct StagePlan {
  StageRef ref;
  ConfigSpec config;
  RewardProgram reward;
  RandomizeSpec randomize;
  std::string reward_text, config_text, randomize_text;
};

/// A bundle that passed validation. Only compile_bundle can create one, so the
/// trainer cannot be handed unchecked files.
class CompiledBundle {
 public:
  const WorkflowSpec& workflow() const { return workflow_; }
  const std::vector<StagePlan>& stages() const { return stages_; }
  const StagePlan& stage(long index) const;
  const ValidationReport& report() const { return report_; }

 private:
  friend CompiledBundle compile_bundle(const CurriculumBundle& bundle);
  CompiledBundle() = default;
  WorkflowSpec workflow_;
  std::vector<StagePlan> stages_;
  ValidationReport report_;
};

/// Throws VALIDATION_FAILED (message lists the error findings) if validate fails.
CompiledBundle compile_bundle(const CurriculumBundle& bundle);

/// A single-field corruption of a valid bundle, labeled with the finding code
/// validation must raise for it.
struct Mutant {
  std::string name;
  std::string expected_code;
  std::string file;
  BundleSources sources;
};

/// Deterministic corpus of at least 20 invalid variants (order and chosen
/// values depend on `seed`). Throws INVALID_ARGUMENT if `sources` is not valid.
std::vector<Mutant> mutate_corpus(const BundleSources& sources, std::uint64_t seed);

}  // namespace stagehand
