#include "stagehand/orchestrator.hpp"

#include <yaml-cpp/yaml.h>

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "stagehand/data.hpp"
#include "stagehand/digest.hpp"
#include "stagehand/error.hpp"

namespace stagehand {
namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

std::string basename_of(const std::string& path) {
  const auto slash = path.find_last_of('/');
  return slash == std::string::npos ? path : path.substr(slash + 1);
}

Finding make_finding(std::string code, std::string file, std::string message) {
  Finding f;
  f.code = std::move(code);
  f.file = std::move(file);
  f.message = std::move(message);
  return f;
}

std::vector<Finding> errors_of(const ValidationReport& report) {
  std::vector<Finding> out;
  for (const auto& f : report.findings) {
    if (f.severity == Severity::error) out.push_back(f);
  }
  return out;
}

// Writes each prompt and response under agents/ with a running number.
class LoggingTransport : public ChatTransport {
 public:
  LoggingTransport(ChatTransport& inner, fs::path dir) : inner_(inner), dir_(std::move(dir)) {}

  std::string complete(const ChatRequest& request) override {
    std::ostringstream stem;
    stem << std::setw(3) << std::setfill('0') << ++count_ << "_" << role_name(request.role);
    if (!dir_.empty()) write_file(dir_ / (stem.str() + ".prompt.txt"), request.prompt);
    std::string response = inner_.complete(request);
    if (!dir_.empty()) write_file(dir_ / (stem.str() + ".response.txt"), response);
    return response;
  }
  std::string_view mode() const noexcept override { return inner_.mode(); }

 private:
  ChatTransport& inner_;
  fs::path dir_;
  int count_ = 0;
};

struct StageFiles {
  std::string reward, config, randomize;
};

// Example files handed to the generating agents.
struct Examples {
  std::string workflow;
  std::vector<StageFiles> stages;
  std::string evaluation;

  const StageFiles& for_stage(long k) const {
    return stages.at(static_cast<std::size_t>(std::min<long>(k, static_cast<long>(stages.size())) - 1));
  }
};

Examples examples_from_bundle(const BundleSources& sources, std::string evaluation) {
  const CurriculumBundle bundle = parse_sources(sources);
  Examples ex;
  ex.workflow = bundle.workflow.text;
  for (const auto& s : bundle.stages) {
    ex.stages.push_back({sources.files.at(s.reward_path), sources.files.at(s.config_path),
                         sources.files.at(s.randomize_path)});
  }
  if (ex.stages.empty()) throw Error(ErrorCode::InvalidArgument, "example bundle has no stages");
  ex.evaluation = std::move(evaluation);
  return ex;
}

struct WorkflowStageRefs {
  std::string reward, config, randomize;
};

// Stage file paths a workflow text asks for, resolved inside the sandbox.
std::vector<WorkflowStageRefs> workflow_refs(const std::string& workflow_path, const std::string& text,
                                             std::vector<Finding>& findings) {
  std::vector<WorkflowStageRefs> refs;
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    findings.push_back(make_finding("PARSE_ERROR", workflow_path, e.what()));
    return refs;
  }
  const YAML::Node stages = root.IsMap() && root["workflow"] ? root["workflow"]["stages"] : YAML::Node();
  if (!stages || !stages.IsSequence() || stages.size() == 0) {
    findings.push_back(make_finding("MISSING_KEY", workflow_path, "workflow.stages must list at least one stage"));
    return refs;
  }
  for (std::size_t i = 0; i < stages.size(); ++i) {
    WorkflowStageRefs r;
    auto get = [&](const char* kind, std::string& out) {
      const YAML::Node n = stages[i].IsMap() ? stages[i][kind] : YAML::Node();
      if (!n || !n.IsScalar()) {
        findings.push_back(make_finding("MISSING_KEY", workflow_path,
                                        "stage " + std::to_string(i + 1) + " has no " + kind + " path"));
        return;
      }
      auto resolved = resolve_path(workflow_path, n.Scalar());
      if (!resolved) {
        findings.push_back(make_finding("PATH_ESCAPE", workflow_path, "stage " + std::to_string(i + 1) + " " + kind +
                                                                          " path leaves the run sandbox"));
        return;
      }
      out = *resolved;
    };
    get("reward", r.reward);
    get("config", r.config);
    get("randomize", r.randomize);
    refs.push_back(r);
  }
  return refs;
}

std::string details_name(long k) { return "generated_stage" + std::to_string(k) + "_details.txt"; }

std::string round_for_prompt(const EvalRecord& record) {
  nlohmann::json j = nlohmann::json::object();
  j["step"] = record.step;
  for (const auto& [k, v] : record.values) {
    std::ostringstream s;
    s << std::setprecision(6) << v;
    j[k] = std::stod(s.str());
  }
  return j.dump();
}

struct StageLoopContext {
  ChatTransport* transport = nullptr;
  std::vector<AgentAttempt>* log = nullptr;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

nlohmann::json scores_json(const ScoreTriple& s) {
  return nlohmann::json::parse(scores_to_json(s));
}

void write_agent_log(const CurriculumRun& run, const std::vector<AgentAttempt>& log) {
  if (run.dir.empty()) return;
  std::string out;
  for (const auto& a : log) {
    nlohmann::json j = {{"role", role_name(a.role)},
                        {"attempt", a.attempt},
                        {"prompt_sha256", a.prompt_digest},
                        {"response_sha256", a.response_digest}};
    j["findings"] = nlohmann::json::array();
    for (const auto& f : a.findings) {
      j["findings"].push_back({{"severity", f.severity == Severity::error ? "error" : "warning"},
                               {"code", f.code},
                               {"file", f.file},
                               {"path", f.path},
                               {"message", f.message}});
    }
    out += j.dump() + "\n";
  }
  write_file(run.dir / "agent_log.jsonl", out);
}

void fail(CurriculumRun& run, std::string where, const std::exception& e) {
  run.status = RunStatus::failed;
  run.failed_at = std::move(where);
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    run.reason = std::string(code_name(err->code()));
    run.message = err->message();
  } else {
    run.reason = "INTERNAL";
    run.message = e.what();
  }
}

void stage_loop(CurriculumRun& run, const std::string& task_prompt, const PipelineOptions& options,
                const StageLoopContext& ctx) {
  long stage_count = 0;
  for (long k = 1;; ++k) {
    CompiledBundle compiled = compile_bundle(parse_sources(run.bundle));
    stage_count = static_cast<long>(compiled.stages().size());
    if (k > stage_count) break;
    const StagePlan& plan = compiled.stage(k);
    const std::string label = "stage" + std::to_string(k);
    if (options.progress) options.progress("training " + label);
    if (!run.dir.empty()) {
      write_file(run.dir / label / "reward.yaml", plan.reward_text);
      write_file(run.dir / label / "config.yaml", plan.config_text);
      write_file(run.dir / label / "randomize.yaml", plan.randomize_text);
    }
    if (options.on_stage_start) options.on_stage_start(plan);

    TrainOptions topts;
    topts.paper_scale = options.paper_scale;
    topts.overrides = options.overrides;
    topts.seed = options.seed;
    topts.resume = plan.ref.resume_from_checkpoint && !run.stages.empty() ? &run.stages.back().checkpoint : nullptr;
    try {
      run.stages.push_back(train_stage(plan, topts));
    } catch (const std::exception& e) {
      fail(run, label, e);
      return;
    }
    const StageResult& result = run.stages.back();
    run.scores = result.scores;
    if (!run.dir.empty()) {
      std::string metrics;
      for (const auto& r : result.metrics) metrics += metrics_line(r) + "\n";
      write_file(run.dir / label / "metrics.jsonl", metrics);
      save_checkpoint(result.checkpoint, run.dir / label / "checkpoint.bin");
      write_file(run.dir / label / "scores.json", scores_to_json(result.scores) + "\n");
    }
    if (k == stage_count) break;
    if (!promote(result, plan.ref.promotion)) {
      run.status = RunStatus::failed;
      run.failed_at = label;
      run.reason = std::string(code_name(ErrorCode::NotPromoted));
      run.message = "stage " + std::to_string(k) + " did not meet its " + std::string(mode_name(plan.ref.promotion.mode)) +
                    " promotion criterion";
      return;
    }
    if (!plan.ref.feedback || !ctx.transport) continue;

    // Feedback on stage k, then the per-stage prompt for stage k+1 built from its current files.
    const StagePlan& next = compiled.stage(k + 1);
    std::string metrics_text;
    for (const auto& r : result.metrics) metrics_text += round_for_prompt(r) + "\n";
    auto details = run.bundle.files.find("prompts/tmp/" + details_name(k + 1));
    const std::string next_description =
        details != run.bundle.files.end() ? details->second : "Stage " + std::to_string(k + 1) + " as listed in the workflow.";
    const std::string prompt =
        render(builtin_template(AgentRole::feedback), {{"METRICS", metrics_text}}, k) + "\n" +
        render(builtin_template(AgentRole::per_stage),
               {{"WORKFLOW_YAML", run.bundle.files.at(run.bundle.workflow_path)},
                {"TASK_PROMPT", task_prompt},
                {"STAGE_DESCRIPTION", next_description},
                {"REWARD_YAML", next.reward_text},
                {"CONFIG_YAML", next.config_text},
                {"RANDOMIZE_YAML", next.randomize_text},
                {"SCHEMA_REWARD_EXPRESSIONS", reward_functions_text()},
                {"REWARD_VARS", reward_variables_text()},
                {"REWARD_EXAMPLE", reward_example_text()}},
               k + 1);
    const std::set<std::string> allowed = {next.ref.reward_path, next.ref.config_path, next.ref.randomize_path};
    auto check = [&](const std::string& response) {
      std::vector<Finding> findings;
      const FeedbackDecision d = parse_feedback(response);
      BundleSources revised = run.bundle;
      for (const auto& b : d.revised) {
        if (!allowed.count(b.sandbox_path)) {
          findings.push_back(make_finding("REVISION_SCOPE", b.file_path,
                                          "only stage " + std::to_string(k + 1) + " reward, config and randomize files may be revised"));
        }
        revised.files[b.sandbox_path] = b.content;
      }
      if (!findings.empty()) return findings;
      if (!d.revised.empty()) findings = errors_of(check_sources(revised));
      return findings;
    };
    if (options.progress) options.progress("feedback after " + label);
    FeedbackDecision decision;
    try {
      const AgentReply reply =
          invoke_with_retry(*ctx.transport, AgentRole::feedback, prompt, check, options.max_retries, ctx.log);
      decision = parse_feedback(reply.response);
    } catch (const std::exception& e) {
      fail(run, "feedback" + std::to_string(k), e);
      return;
    }
    if (decision.action == FeedbackAction::terminate) {
      run.status = RunStatus::terminated_by_feedback;
      run.failed_at = label;
      run.message = decision.rationale;
      return;
    }
    for (const auto& b : decision.revised) run.bundle.files[b.sandbox_path] = b.content;
  }
}

std::string automatic_evaluation(const CurriculumRun& run) {
  std::string out = "Automatic summary: status " + std::string(status_name(run.status)) + " after " +
                    std::to_string(run.stages.size()) + " trained stage(s).";
  if (!run.stages.empty() && !run.stages.back().metrics.empty()) {
    const auto& last = run.stages.back().metrics.back();
    out += " Final eval episode reward " + fmt(last.at("eval/episode_reward"), 2) + ", episode length " +
           fmt(last.at("eval/episode_length"), 1) + ".";
  }
  if (run.scores) {
    out += " Scores: survival " + fmt(run.scores->survival) + ", linear velocity tracking " +
           fmt(run.scores->lin_vel) + ", feet air time " + fmt(run.scores->air_time) + ".";
  }
  return out;
}

std::string pick_run_id(const std::string& prompt, const PipelineOptions& options, const VectorStore* store) {
  if (!options.run_id.empty()) return options.run_id;
  const std::string base =
      "run-" + sha256_hex(prompt + "\n" + std::to_string(options.seed.value_or(0))).substr(0, 12);
  std::set<std::string> taken;
  if (store) {
    for (const auto& id : store->ids()) taken.insert(id);
  }
  std::string id = base;
  for (int n = 2; taken.count(id) || fs::exists(options.runs_root / id); ++n) id = base + "-" + std::to_string(n);
  return id;
}

void write_run_summary(const CurriculumRun& run) {
  if (run.dir.empty()) return;
  write_file(run.dir / "run.json", run_to_json(run) + "\n");
  if (run.scores) write_file(run.dir / "scores.json", scores_to_json(*run.scores) + "\n");
}

}  // namespace

bool promote(const StageResult& result, const PromotionCriterion& criterion) {
  const bool exhausted = result.env_steps >= result.timestep_budget;
  auto reached = [&] {
    if (result.metrics.empty()) return false;
    const auto& values = result.metrics.back().values;
    const auto it = values.find("eval/episode_reward");
    return it != values.end() && std::isfinite(criterion.threshold) && it->second >= criterion.threshold;
  };
  switch (criterion.mode) {
    case PromotionMode::timesteps_exhausted: return exhausted;
    case PromotionMode::reward_threshold: return reached();
    case PromotionMode::either: return exhausted || reached();
  }
  return false;
}

std::string_view status_name(RunStatus status) noexcept {
  switch (status) {
    case RunStatus::completed: return "completed";
    case RunStatus::failed: return "failed";
    case RunStatus::terminated_by_feedback: return "terminated_by_feedback";
  }
  return "failed";
}

std::map<std::string, std::string> candidate_files(const VectorStore& store, const std::vector<QueryHit>& hits) {
  std::map<std::string, std::string> out;
  for (const auto& hit : hits) {
    const RunArtifact a = store.load_run(hit.id);
    CurriculumBundle bundle;
    try {
      bundle = parse_sources(a.bundle);
    } catch (const Error&) {
      continue;
    }
    out[hit.id + "_workflow.yaml"] = bundle.workflow.text;
    for (const auto& s : bundle.stages) {
      const std::string k = std::to_string(s.index);
      out[hit.id + "_reward_stage" + k + ".yaml"] = a.bundle.files.at(s.reward_path);
      out[hit.id + "_config_stage" + k + ".yaml"] = a.bundle.files.at(s.config_path);
      out[hit.id + "_randomize_stage" + k + ".yaml"] = a.bundle.files.at(s.randomize_path);
    }
  }
  return out;
}

std::string run_to_json(const CurriculumRun& run) {
  nlohmann::json j;
  j["id"] = run.id;
  j["prompt_sha256"] = sha256_hex(run.prompt);
  j["status"] = status_name(run.status);
  j["failed_at"] = run.failed_at;
  j["reason"] = run.reason;
  j["message"] = run.message;
  j["query"] = run.query;
  j["retrieved"] = nlohmann::json::array();
  for (const auto& h : run.retrieved) j["retrieved"].push_back({{"id", h.id}, {"score", h.score}});
  j["selection"] = run.selection;
  j["stages"] = nlohmann::json::array();
  for (const auto& s : run.stages) {
    nlohmann::json st = {{"stage", s.stage},
                         {"env_steps", s.env_steps},
                         {"timestep_budget", s.timestep_budget},
                         {"evaluations", s.metrics.size()},
                         {"scores", scores_json(s.scores)}};
    if (!s.metrics.empty()) st["final_episode_reward"] = s.metrics.back().values.at("eval/episode_reward");
    j["stages"].push_back(st);
  }
  j["scores"] = run.scores ? scores_json(*run.scores) : nlohmann::json();
  j["stored_id"] = run.stored_id;
  return j.dump(2);
}

void run_stage_loop(CurriculumRun& run, const std::string& task_prompt, ChatTransport& transport,
                    const PipelineOptions& options, std::vector<AgentAttempt>* log) {
  stage_loop(run, task_prompt, options, {&transport, log});
}

CurriculumRun train_bundle(const BundleSources& sources, const fs::path& out_dir, const PipelineOptions& options) {
  CurriculumRun run;
  run.id = out_dir.filename().string();
  run.dir = out_dir;
  run.bundle = sources;
  const ValidationReport report = check_sources(sources);
  if (!report.ok) {
    run.status = RunStatus::failed;
    run.failed_at = "validation";
    run.reason = std::string(code_name(ErrorCode::ValidationFailed));
    run.message = format_report(report);
    write_run_summary(run);
    return run;
  }
  if (!out_dir.empty()) {
    write_file(out_dir / "workflow.yaml", sources.files.at(sources.workflow_path));
    for (const auto& [path, text] : sources.files) write_file(out_dir / "generated" / path, text);
  }
  try {
    stage_loop(run, "", options, {});
  } catch (const std::exception& e) {
    fail(run, "training", e);
  }
  write_run_summary(run);
  return run;
}

CurriculumRun run_pipeline(const std::string& task_prompt, VectorStore& store, ChatTransport& transport,
                           const PipelineOptions& options) {
  CurriculumRun run;
  run.prompt = task_prompt;
  run.id = pick_run_id(task_prompt, options, &store);
  run.dir = options.runs_root / run.id;
  if (fs::exists(run.dir)) throw Error(ErrorCode::DuplicateId, "run directory " + run.dir.string() + " already exists");
  fs::create_directories(run.dir);
  const std::string started = utc_now();
  write_file(run.dir / "prompt.txt", task_prompt);
  write_file(run.dir / "timestamps.json", nlohmann::json({{"started_at", started}}).dump(2) + "\n");

  std::vector<AgentAttempt> log;
  LoggingTransport agents(transport, run.dir / "agents");
  auto say = [&](const std::string& msg) {
    if (options.progress) options.progress(msg);
  };

  // Retrieval, or the shipped example on a cold start.
  Examples examples;
  try {
    if (store.size() == 0) {
      say("empty store: using seed bundle " + options.seed_bundle);
      examples = examples_from_bundle(seed_bundle(options.seed_bundle),
                                      "None. No earlier run is stored; these files are a shipped reference bundle.");
    } else {
      say("querying the vector store");
      const std::string qprompt = render(builtin_template(AgentRole::vdb_query), {{"TASK_PROMPT", task_prompt}});
      auto first_line = [](const std::string& text) {
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
          const auto b = line.find_first_not_of(" \t\r`");
          if (b != std::string::npos) {
            const auto e = line.find_last_not_of(" \t\r`");
            return line.substr(b, e - b + 1);
          }
        }
        return std::string();
      };
      auto qcheck = [&](const std::string& response) {
        std::vector<Finding> findings;
        if (tokenize(first_line(response)).empty()) {
          findings.push_back(make_finding("BAD_QUERY", "<response>", "the reply has no query line"));
        }
        return findings;
      };
      const AgentReply q = invoke_with_retry(agents, AgentRole::vdb_query, qprompt, qcheck, options.max_retries, &log);
      run.query = first_line(q.response);
      run.retrieved = store.query_topk(run.query, options.top_k);
      const auto candidates = candidate_files(store, run.retrieved);
      std::vector<std::string> names;
      std::string previews;
      for (const auto& [name, text] : candidates) {
        names.push_back(name);
        std::istringstream in(text);
        std::string line, head;
        for (int n = 0; n < 15 && std::getline(in, line); ++n) head += line + "\n";
        previews += "### " + name + "\n" + head + "...\n\n";
      }
      std::string evaluations;
      for (const auto& hit : run.retrieved) {
        const RunArtifact a = store.load_run(hit.id);
        evaluations += "- " + hit.id + " (similarity " + fmt(hit.score) + "): " + a.evaluation + " [survival " +
                       fmt(a.scores.survival) + ", lin_vel_tracking " + fmt(a.scores.lin_vel) + ", feet_air_time " +
                       fmt(a.scores.air_time) + "]\n";
      }
      const std::string sprompt =
          render(builtin_template(AgentRole::selector),
                 {{"TASK_PROMPT", task_prompt}, {"EVALUATIONS", evaluations}, {"EXAMPLES", previews}});
      auto scheck = [&](const std::string& response) {
        parse_selector_json(response, names);
        return std::vector<Finding>{};
      };
      say("selecting reference files");
      const AgentReply s = invoke_with_retry(agents, AgentRole::selector, sprompt, scheck, options.max_retries, &log);
      run.selection = parse_selector_json(s.response, names);
      examples.workflow = candidates.at(run.selection.at("workflow"));
      for (long k = 1; run.selection.count("reward_stage" + std::to_string(k)); ++k) {
        const std::string n = std::to_string(k);
        examples.stages.push_back({candidates.at(run.selection.at("reward_stage" + n)),
                                   candidates.at(run.selection.at("config_stage" + n)),
                                   candidates.at(run.selection.at("randomize_stage" + n))});
      }
      const std::string& wf = run.selection.at("workflow");
      const std::string source_id = wf.substr(0, wf.size() - std::string("_workflow.yaml").size());
      examples.evaluation = store.load_run(source_id).evaluation;
    }
  } catch (const std::exception& e) {
    fail(run, "retrieval", e);
    write_agent_log(run, log);
    write_run_summary(run);
    return run;
  }

  // Curriculum, then the three files of every stage, each checked before it is accepted.
  BundleSources generated;
  generated.workflow_path = "workflows/generated_workflow.yaml";
  try {
    say("generating the curriculum");
    const StageFiles& first = examples.for_stage(1);
    const std::string cprompt = render(builtin_template(AgentRole::curriculum),
                                       {{"TASK_PROMPT", task_prompt},
                                        {"EVALUATION", examples.evaluation},
                                        {"WORKFLOW_YAML", examples.workflow},
                                        {"REWARD_YAML", first.reward},
                                        {"CONFIG_YAML", first.config},
                                        {"RANDOMIZE_YAML", first.randomize},
                                        {"ROBOT_DESCRIPTION", robot_description_text()},
                                        {"WORKFLOW_FORMAT", workflow_format_text()}});
    std::vector<WorkflowStageRefs> refs;
    auto ccheck = [&](const std::string& response) {
      std::vector<Finding> findings;
      const auto blocks = parse_file_blocks(response);
      const GeneratedFileBlock* wf = nullptr;
      for (const auto& b : blocks) {
        if (b.sandbox_path == generated.workflow_path) wf = &b;
      }
      if (!wf) {
        findings.push_back(make_finding("MISSING_OUTPUT", generated.workflow_path, "no generated_workflow.yaml block"));
        return findings;
      }
      refs = workflow_refs(generated.workflow_path, wf->content, findings);
      if (!findings.empty()) return findings;
      BundleSources only;
      only.workflow_path = generated.workflow_path;
      only.files[only.workflow_path] = wf->content;
      for (const auto& f : errors_of(check_sources(only, {0}))) findings.push_back(f);
      std::set<std::string> expected = {basename_of(generated.workflow_path)};
      for (long k = 1; k <= static_cast<long>(refs.size()); ++k) expected.insert(details_name(k));
      std::set<std::string> seen;
      for (const auto& b : blocks) {
        if (!expected.count(b.file_name)) {
          findings.push_back(make_finding("UNEXPECTED_FILE", b.file_path, "block is not part of the curriculum output"));
        } else if (!seen.insert(b.file_name).second) {
          findings.push_back(make_finding("UNEXPECTED_FILE", b.file_path, "file appears twice"));
        }
      }
      for (const auto& name : expected) {
        if (!seen.count(name)) findings.push_back(make_finding("MISSING_OUTPUT", name, "no block for this file"));
      }
      return findings;
    };
    const AgentReply c = invoke_with_retry(agents, AgentRole::curriculum, cprompt, ccheck, options.max_retries, &log);
    std::vector<Finding> ignored;
    std::map<long, std::string> details;
    for (const auto& b : parse_file_blocks(c.response)) {
      generated.files[b.sandbox_path] = b.content;
      for (long k = 1; k <= static_cast<long>(refs.size()); ++k) {
        if (b.file_name == details_name(k)) details[k] = b.content;
      }
    }
    refs = workflow_refs(generated.workflow_path, generated.files.at(generated.workflow_path), ignored);

    for (long k = 1; k <= static_cast<long>(refs.size()); ++k) {
      say("generating stage " + std::to_string(k) + " files");
      const StageFiles& ex = examples.for_stage(k);
      const std::string pprompt = render(builtin_template(AgentRole::per_stage),
                                         {{"WORKFLOW_YAML", generated.files.at(generated.workflow_path)},
                                          {"TASK_PROMPT", task_prompt},
                                          {"STAGE_DESCRIPTION", details.at(k)},
                                          {"REWARD_YAML", ex.reward},
                                          {"CONFIG_YAML", ex.config},
                                          {"RANDOMIZE_YAML", ex.randomize},
                                          {"SCHEMA_REWARD_EXPRESSIONS", reward_functions_text()},
                                          {"REWARD_VARS", reward_variables_text()},
                                          {"REWARD_EXAMPLE", reward_example_text()}},
                                         k);
      const auto& r = refs[static_cast<std::size_t>(k - 1)];
      const std::set<std::string> wanted = {r.reward, r.config, r.randomize};
      auto pcheck = [&](const std::string& response) {
        std::vector<Finding> findings;
        BundleSources trial = generated;
        std::set<std::string> seen;
        for (const auto& b : parse_file_blocks(response)) {
          if (!wanted.count(b.sandbox_path)) {
            findings.push_back(make_finding("UNEXPECTED_FILE", b.file_path,
                                            "stage " + std::to_string(k) + " only produces the files its workflow entry names"));
          }
          seen.insert(b.sandbox_path);
          trial.files[b.sandbox_path] = b.content;
        }
        for (const auto& w : wanted) {
          if (!seen.count(w)) findings.push_back(make_finding("MISSING_OUTPUT", w, "no block for this file"));
        }
        if (!findings.empty()) return findings;
        return errors_of(check_sources(trial, {k}));
      };
      const AgentReply p = invoke_with_retry(agents, AgentRole::per_stage, pprompt, pcheck, options.max_retries, &log);
      for (const auto& b : parse_file_blocks(p.response)) generated.files[b.sandbox_path] = b.content;
    }
    for (const auto& [path, text] : generated.files) write_file(run.dir / "generated" / path, text);
    write_file(run.dir / "workflow.yaml", generated.files.at(generated.workflow_path));
    // The whole bundle has to pass before anything trains.
    compile_bundle(parse_sources(generated));
  } catch (const std::exception& e) {
    for (const auto& [path, text] : generated.files) write_file(run.dir / "generated" / path, text);
    fail(run, "generation", e);
    write_agent_log(run, log);
    write_run_summary(run);
    return run;
  }

  run.bundle = generated;
  try {
    stage_loop(run, task_prompt, options, {&agents, &log});
  } catch (const std::exception& e) {
    fail(run, "training", e);
  }
  write_agent_log(run, log);

  if (run.status == RunStatus::completed && options.store_run) {
    RunArtifact artifact;
    artifact.id = run.id;
    artifact.prompt = task_prompt;
    artifact.evaluation = options.evaluation.empty() ? automatic_evaluation(run) : options.evaluation;
    artifact.bundle = run.bundle;
    for (const auto& s : run.stages) {
      std::string m;
      for (const auto& r : s.metrics) m += metrics_line(r) + "\n";
      artifact.stage_metrics.push_back(m);
    }
    artifact.scores = run.scores.value_or(ScoreTriple{});
    artifact.created_at = started;
    try {
      run.stored_id = store.add_run(artifact);
    } catch (const std::exception& e) {
      fail(run, "store", e);
    }
  }
  write_run_summary(run);
  write_file(run.dir / "timestamps.json",
             nlohmann::json({{"started_at", started}, {"finished_at", utc_now()}}).dump(2) + "\n");
  return run;
}

}  // namespace stagehand
