// Regenerates replay fixtures from hand-written agent replies.
//
// usage: stagehand_record_fixtures <fixture-dir>
//
// <fixture-dir>/prompt.txt is the task prompt. <fixture-dir>/authored/ holds
// curriculum.txt, per_stage_<k>.txt and feedback_<k>.txt. The pipeline runs
// once on an empty store with those replies and every request is written to
// <fixture-dir>/replay/<digest>.txt. Rerun it whenever a template, the
// trainer or the authored replies change.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "stagehand/agents.hpp"
#include "stagehand/error.hpp"
#include "stagehand/orchestrator.hpp"
#include "stagehand/vdb.hpp"

namespace fs = std::filesystem;
using namespace stagehand;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: stagehand_record_fixtures <fixture-dir>\n";
    return 2;
  }
  const fs::path dir = argv[1];
  try {
    const std::string prompt = read_text(dir / "prompt.txt");
    std::map<AgentRole, int> counts;
    ScriptedTransport authored([&](const ChatRequest& request, std::size_t) {
      const int n = ++counts[request.role];
      switch (request.role) {
        case AgentRole::curriculum: return read_text(dir / "authored" / "curriculum.txt");
        case AgentRole::per_stage: return read_text(dir / "authored" / ("per_stage_" + std::to_string(n) + ".txt"));
        case AgentRole::feedback: return read_text(dir / "authored" / ("feedback_" + std::to_string(n) + ".txt"));
        default: throw Error(ErrorCode::FixtureMissing, "no authored reply for " + std::string(role_name(request.role)));
      }
    });
    const fs::path replay = dir / "replay";
    fs::remove_all(replay);
    RecordingTransport recorder(authored, replay);

    const fs::path scratch = fs::temp_directory_path() / "stagehand_record_fixtures";
    fs::remove_all(scratch);
    VectorStore store = VectorStore::open(scratch / "vdb");
    PipelineOptions options;
    options.runs_root = scratch / "runs";
    options.progress = [](const std::string& msg) { std::cerr << "[record] " << msg << "\n"; };
    const CurriculumRun run = run_pipeline(prompt, store, recorder, options);
    std::cout << "status " << status_name(run.status) << ", " << authored.calls() << " agent calls recorded in "
              << replay.string() << "\n";
    if (run.status != RunStatus::completed) {
      std::cerr << run.failed_at << ": " << run.reason << ": " << run.message << "\n";
      return 1;
    }
    fs::remove_all(scratch);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 3;
  }
  return 0;
}
