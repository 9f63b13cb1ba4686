#include "stagehand/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <nlohmann/json.hpp>
#include <sstream>

#include "stagehand/agents.hpp"
#include "stagehand/environment.hpp"
#include "stagehand/error.hpp"
#include "stagehand/orchestrator.hpp"
#include "stagehand/schema.hpp"
#include "stagehand/scores.hpp"
#include "stagehand/vdb.hpp"

namespace stagehand::cli {
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kDefaultSeed = 7;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
}

// Printed for every failure so scripts can match on the code.
int report_error(std::string_view code, const std::string& message, bool json, std::ostream& out,
                 std::ostream& err, int exit_code) {
  if (json) {
    out << nlohmann::json({{"error", {{"code", code}, {"message", message}}}}).dump(2) << "\n";
  } else {
    err << "error " << code << ": " << message << "\n";
  }
  return exit_code;
}

// A bundle root for a workflow file: the directory above workflows/, or its own directory.
BundleSources sources_for_workflow(const fs::path& workflow) {
  if (!fs::is_regular_file(workflow)) throw Error(ErrorCode::MissingFile, workflow.string() + " is not a file");
  const fs::path abs = fs::absolute(workflow).lexically_normal();
  fs::path root = abs.parent_path();
  if (root.filename() == "workflows") root = root.parent_path();
  BundleSources sources = load_sources(root);
  sources.workflow_path = fs::relative(abs, root).generic_string();
  sources.files[sources.workflow_path] = read_text(abs);
  return sources;
}

ValidationReport report_for_exception(const Error& e, const std::string& file) {
  ValidationReport r;
  r.ok = false;
  Finding f;
  f.code = std::string(code_name(e.code()));
  f.file = file;
  f.message = e.message();
  r.findings.push_back(f);
  return r;
}

std::string scores_text(const ScoreTriple& s) {
  std::ostringstream out;
  out << std::setprecision(6) << "survival " << s.survival << "\nlin_vel_tracking " << s.lin_vel << "\nfeet_air_time "
      << s.air_time << "\n";
  return out.str();
}

int exit_for_run(const CurriculumRun& run) {
  if (run.status != RunStatus::failed) return kOk;
  if (run.reason == code_name(ErrorCode::ValidationFailed) || run.reason == code_name(ErrorCode::RetriesExhausted)) {
    return kFindings;
  }
  return kRuntime;
}

void print_run(const CurriculumRun& run, bool json, std::ostream& out, std::ostream& err) {
  if (json) {
    out << run_to_json(run) << "\n";
    return;
  }
  out << "run " << run.id << " " << status_name(run.status) << "\n";
  out << "directory " << run.dir.string() << "\n";
  for (const auto& s : run.stages) {
    out << "stage " << s.stage << ": " << s.env_steps << " steps";
    if (!s.metrics.empty()) out << ", eval/episode_reward " << s.metrics.back().values.at("eval/episode_reward");
    out << "\n";
  }
  if (run.scores) out << scores_text(*run.scores);
  if (!run.stored_id.empty()) out << "stored as " << run.stored_id << "\n";
  if (run.status == RunStatus::failed) {
    err << "error " << run.reason << ": " << run.failed_at << ": " << run.message << "\n";
  } else if (run.status == RunStatus::terminated_by_feedback) {
    out << "terminated by feedback after " << run.failed_at << ": " << run.message << "\n";
  }
}

// Reads what `run` or `train` left in a run directory.
RunArtifact artifact_from_run_dir(const fs::path& dir, const std::string& prompt_override,
                                  const std::string& evaluation_override) {
  RunArtifact a;
  if (!fs::is_directory(dir / "generated")) {
    throw Error(ErrorCode::InvalidArtifact, dir.string() + " has no generated/ bundle");
  }
  a.bundle = load_sources(dir / "generated");
  if (fs::exists(dir / "generated" / "prompts")) {
    for (const auto& e : fs::recursive_directory_iterator(dir / "generated" / "prompts")) {
      if (e.is_regular_file()) {
        a.bundle.files[fs::relative(e.path(), dir / "generated").generic_string()] = read_text(e.path());
      }
    }
  }
  // Later stages may have trained with revised files; those are what the run used.
  const CurriculumBundle parsed = parse_sources(a.bundle);
  for (const auto& s : parsed.stages) {
    const fs::path sd = dir / ("stage" + std::to_string(s.index));
    if (fs::exists(sd / "reward.yaml")) a.bundle.files[s.reward_path] = read_text(sd / "reward.yaml");
    if (fs::exists(sd / "config.yaml")) a.bundle.files[s.config_path] = read_text(sd / "config.yaml");
    if (fs::exists(sd / "randomize.yaml")) a.bundle.files[s.randomize_path] = read_text(sd / "randomize.yaml");
    if (fs::exists(sd / "metrics.jsonl")) a.stage_metrics.push_back(read_text(sd / "metrics.jsonl"));
  }
  if (!prompt_override.empty()) {
    a.prompt = prompt_override;
  } else if (fs::exists(dir / "prompt.txt")) {
    a.prompt = read_text(dir / "prompt.txt");
  } else {
    throw Error(ErrorCode::InvalidArtifact, dir.string() + " has no prompt.txt; pass --prompt");
  }
  if (!evaluation_override.empty()) {
    a.evaluation = evaluation_override;
  } else if (fs::exists(dir / "evaluation.txt")) {
    a.evaluation = read_text(dir / "evaluation.txt");
  }
  if (!fs::exists(dir / "scores.json")) throw Error(ErrorCode::InvalidArtifact, dir.string() + " has no scores.json");
  a.scores = scores_from_json(read_text(dir / "scores.json"));
  if (fs::exists(dir / "timestamps.json")) {
    const auto t = nlohmann::json::parse(read_text(dir / "timestamps.json"));
    a.created_at = t.value("started_at", "");
  }
  return a;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Curriculum bundle compiler, trainer and agent pipeline"};
  app.name("stagehand");
  app.require_subcommand(1);
  std::string workdir;
  bool json = false;
  app.add_option("--workdir", workdir, "Resolve relative paths against this directory");
  app.add_flag("--json", json, "Machine-readable output on stdout");

  auto* validate = app.add_subcommand("validate", "Check a bundle directory");
  std::string bundle_dir;
  validate->add_option("dir", bundle_dir, "Bundle directory")->required();

  auto* runc = app.add_subcommand("run", "Run the agent pipeline for a task prompt");
  std::string prompt_file, vdb_dir, transport_mode = "replay", fixtures, runs_root = "runs", evaluation, seed_bundle = "tune";
  std::optional<std::uint64_t> seed;
  bool paper_scale = false;
  int max_retries = 2;
  runc->add_option("--prompt", prompt_file, "Task prompt file")->required();
  runc->add_option("--vdb", vdb_dir, "Vector store directory")->required();
  runc->add_option("--transport", transport_mode, "live or replay")->check(CLI::IsMember({"live", "replay"}));
  runc->add_option("--fixtures", fixtures, "Replay fixture directory (or its parent holding replay/)");
  runc->add_option("--out", runs_root, "Directory that receives run directories");
  runc->add_option("--seed", seed, "Trainer seed for every stage (default: the configs' own seeds)");
  runc->add_option("--evaluation", evaluation, "Operator evaluation stored with the run");
  runc->add_option("--seed-bundle", seed_bundle, "Example bundle used when the store is empty");
  runc->add_option("--max-retries", max_retries, "Retries per agent call")->check(CLI::NonNegativeNumber);
  runc->add_flag("--paper-scale", paper_scale, "Use the config budgets unchanged");

  auto* train = app.add_subcommand("train", "Train an existing bundle without agents");
  std::string workflow_file, train_out;
  train->add_option("--workflow", workflow_file, "Workflow file of the bundle")->required();
  train->add_option("--out", train_out, "Run directory to create")->required();
  train->add_option("--seed", seed, "Trainer seed for every stage (default: the configs' own seeds)");
  train->add_flag("--paper-scale", paper_scale, "Use the config budgets unchanged");

  auto* scorec = app.add_subcommand("score", "Score an evaluation trace (JSON lines)");
  std::string trace_file;
  long t_max = 0;
  scorec->add_option("--trace", trace_file, "Trace file")->required();
  scorec->add_option("--t-max", t_max, "Episode length limit (default: longest episode)")->check(CLI::NonNegativeNumber);

  auto* vdb = app.add_subcommand("vdb", "Manage the vector store of past runs");
  vdb->require_subcommand(1);
  auto* vdb_add = vdb->add_subcommand("add", "Store a finished run directory");
  std::string run_dir, add_prompt, add_id;
  vdb_add->add_option("run_dir", run_dir, "Run directory")->required();
  vdb_add->add_option("--vdb", vdb_dir, "Vector store directory")->required();
  vdb_add->add_option("--evaluation", evaluation, "Operator evaluation (default: evaluation.txt in the run)");
  vdb_add->add_option("--prompt", add_prompt, "Task prompt (default: prompt.txt in the run)");
  vdb_add->add_option("--id", add_id, "Run id (default: derived from the contents)");
  auto* vdb_query = vdb->add_subcommand("query", "Nearest stored runs for a text");
  std::string query_text;
  std::size_t k = 3;
  vdb_query->add_option("text", query_text, "Query text")->required();
  vdb_query->add_option("-k", k, "Number of hits")->check(CLI::PositiveNumber);
  vdb_query->add_option("--vdb", vdb_dir, "Vector store directory")->required();

  auto* mutate = app.add_subcommand("mutate", "Write the validator mutation corpus for a bundle");
  std::string mutate_out;
  std::uint64_t mutate_seed = kDefaultSeed;
  mutate->add_option("--bundle", bundle_dir, "Valid bundle directory")->required();
  mutate->add_option("--seed", mutate_seed, "Corpus seed");
  mutate->add_option("--out", mutate_out, "Write each mutant bundle below this directory");

  for (auto* sub : {validate, runc, train, scorec, vdb_add, vdb_query, mutate}) {
    sub->add_flag("--json", json, "Machine-readable output on stdout");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    return report_error("USAGE", e.what(), json, out, err, kUsage);
  }

  try {
    if (!workdir.empty()) fs::current_path(workdir);

    if (*validate) {
      ValidationReport report;
      try {
        report = check_sources(load_sources(bundle_dir));
      } catch (const Error& e) {
        report = report_for_exception(e, bundle_dir);
      }
      if (json) {
        out << report_to_json(report) << "\n";
      } else {
        out << format_report(report);
      }
      return report.ok ? kOk : kFindings;
    }

    if (*runc) {
      const std::string prompt = read_text(prompt_file);
      std::unique_ptr<ChatTransport> transport;
      if (transport_mode == "live") {
        transport = std::make_unique<LiveTransport>(live_settings_from_env());
      } else {
        if (fixtures.empty()) throw Error(ErrorCode::InvalidArgument, "--transport replay needs --fixtures");
        if (!fs::is_directory(fixtures)) throw Error(ErrorCode::MissingFile, fixtures + " is not a directory");
        // A fixture root (prompt.txt, authored/, replay/) is accepted as well as replay/ itself.
        if (fs::is_directory(fs::path(fixtures) / "replay")) fixtures = (fs::path(fixtures) / "replay").string();
        transport = std::make_unique<ReplayTransport>(fixtures);
      }
      VectorStore store = VectorStore::open(vdb_dir);
      PipelineOptions options;
      options.runs_root = runs_root;
      options.seed = seed;
      options.paper_scale = paper_scale;
      options.max_retries = max_retries;
      options.seed_bundle = seed_bundle;
      options.evaluation = evaluation;
      if (!json) options.progress = [&](const std::string& msg) { err << "[stagehand] " << msg << "\n"; };
      const CurriculumRun result = run_pipeline(prompt, store, *transport, options);
      print_run(result, json, out, err);
      return exit_for_run(result);
    }

    if (*train) {
      const BundleSources sources = sources_for_workflow(workflow_file);
      const ValidationReport report = check_sources(sources);
      if (!report.ok) {
        if (json) {
          out << report_to_json(report) << "\n";
        } else {
          err << format_report(report);
        }
        return kFindings;
      }
      if (fs::exists(train_out) && !fs::is_empty(train_out)) {
        throw Error(ErrorCode::DuplicateId, train_out + " already exists and is not empty");
      }
      PipelineOptions options;
      options.seed = seed;
      options.paper_scale = paper_scale;
      if (!json) options.progress = [&](const std::string& msg) { err << "[stagehand] " << msg << "\n"; };
      const CurriculumRun result = train_bundle(sources, train_out, options);
      print_run(result, json, out, err);
      return exit_for_run(result);
    }

    if (*scorec) {
      const ReplayEnv trace = ReplayEnv::from_file(trace_file);
      const ScoreTriple s = score(eval_batch_from_trace(trace.steps(), t_max));
      out << (json ? scores_to_json(s) + "\n" : scores_text(s));
      return kOk;
    }

    if (*vdb_add) {
      RunArtifact artifact = artifact_from_run_dir(run_dir, add_prompt, evaluation);
      artifact.id = add_id;
      VectorStore store = VectorStore::open(vdb_dir);
      const std::string id = store.add_run(artifact);
      if (json) {
        out << nlohmann::json({{"id", id}, {"size", store.size()}}).dump(2) << "\n";
      } else {
        out << "stored " << id << " (" << store.size() << " runs)\n";
      }
      return kOk;
    }

    if (*vdb_query) {
      if (!fs::exists(fs::path(vdb_dir) / "index.json")) {
        throw Error(ErrorCode::EmptyStore, "no vector store at " + vdb_dir);
      }
      const VectorStore store = VectorStore::open(vdb_dir);
      const auto hits = store.query_topk(query_text, k);
      if (json) {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& h : hits) j.push_back({{"id", h.id}, {"score", h.score}});
        out << j.dump(2) << "\n";
      } else {
        for (std::size_t i = 0; i < hits.size(); ++i) {
          out << i + 1 << " " << hits[i].id << " " << std::fixed << std::setprecision(4) << hits[i].score << "\n";
        }
      }
      return kOk;
    }

    if (*mutate) {
      const auto corpus = mutate_corpus(load_sources(bundle_dir), mutate_seed);
      nlohmann::json j = nlohmann::json::array();
      for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& m = corpus[i];
        nlohmann::json entry = {{"name", m.name}, {"expected_code", m.expected_code}, {"file", m.file}};
        if (!mutate_out.empty()) {
          // Mutant names hold key paths and values; directories get "NN_<code>".
          std::ostringstream dir;
          dir << std::setw(2) << std::setfill('0') << i << "_" << m.expected_code;
          for (const auto& [path, text] : m.sources.files) write_text(fs::path(mutate_out) / dir.str() / path, text);
          entry["dir"] = dir.str();
        }
        j.push_back(std::move(entry));
      }
      if (json) {
        out << j.dump(2) << "\n";
      } else {
        for (const auto& e : j) {
          if (e.contains("dir")) out << e["dir"].get<std::string>() << " ";
          out << e["expected_code"].get<std::string>() << " " << e["file"].get<std::string>() << " "
              << e["name"].get<std::string>() << "\n";
        }
        out << corpus.size() << " mutants\n";
      }
      return kOk;
    }
  } catch (const Error& e) {
    return report_error(code_name(e.code()), e.message(), json, out, err, kRuntime);
  } catch (const std::exception& e) {
    return report_error("INTERNAL", e.what(), json, out, err, kRuntime);
  }
  return kUsage;
}

}  // namespace stagehand::cli
