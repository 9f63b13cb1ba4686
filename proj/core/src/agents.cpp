#include "stagehand/agents.hpp"

#include <httplib.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <regex>
#include <set>
#include <sstream>

#include "stagehand/data.hpp"
#include "stagehand/digest.hpp"
#include "stagehand/environment.hpp"
#include "stagehand/error.hpp"

namespace stagehand {
namespace fs = std::filesystem;

namespace {

constexpr std::string_view kOpen = "<INSERT_";
constexpr std::string_view kClose = "_HERE>";

struct RoleInfo {
  AgentRole role;
  std::string_view name;
  const char* file;
};

constexpr RoleInfo kRoles[] = {
    {AgentRole::vdb_query, "vdb_query", "templates/vdb_query.txt"},
    {AgentRole::selector, "selector", "templates/selector.txt"},
    {AgentRole::curriculum, "curriculum", "templates/curriculum.txt"},
    {AgentRole::per_stage, "per_stage", "templates/per_stage.txt"},
    {AgentRole::feedback, "feedback", "templates/feedback.txt"},
};

bool is_name_char(char c) { return (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_'; }

// Placeholder starting at `pos`, as (name, length of the whole token).
std::optional<std::pair<std::string, std::size_t>> placeholder_at(const std::string& text, std::size_t pos) {
  if (text.compare(pos, kOpen.size(), kOpen) != 0) return std::nullopt;
  const std::size_t start = pos + kOpen.size();
  std::size_t end = start;
  while (end < text.size() && is_name_char(text[end])) ++end;
  // The name may itself contain '_', so the last "_HERE>" inside the run closes it.
  if (end >= text.size() || text[end] != '>') return std::nullopt;
  const std::string run = text.substr(start, end - start + 1);
  if (run.size() <= kClose.size() || run.compare(run.size() - kClose.size(), kClose.size(), kClose) != 0) {
    return std::nullopt;
  }
  return std::make_pair(run.substr(0, run.size() - kClose.size()), end + 1 - pos);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    if (nl == std::string::npos) {
      if (start < text.size()) lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  for (auto& line : lines) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
  }
  return lines;
}

bool is_blank(const std::string& line) { return line.find_first_not_of(" \t") == std::string::npos; }
bool is_fence(const std::string& line) { return trim(line).rfind("```", 0) == 0; }

std::size_t indent_of(const std::string& line) {
  std::size_t n = 0;
  while (n < line.size() && line[n] == ' ') ++n;
  return n;
}

// Value of `key: value` with optional double or single quotes.
std::optional<std::string> keyed_value(const std::string& line, std::string_view key) {
  const std::string t = trim(line);
  if (t.compare(0, key.size(), key) != 0 || t.size() <= key.size() || t[key.size()] != ':') return std::nullopt;
  std::string v = trim(std::string_view(t).substr(key.size() + 1));
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) v = v.substr(1, v.size() - 2);
  return v;
}

Error malformed(std::size_t line, const std::string& what) {
  return Error(ErrorCode::MalformedBlock, "line " + std::to_string(line + 1) + ": " + what);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

std::string_view role_name(AgentRole role) noexcept {
  for (const auto& info : kRoles) {
    if (info.role == role) return info.name;
  }
  return "unknown";
}

std::optional<AgentRole> role_from_name(std::string_view name) noexcept {
  for (const auto& info : kRoles) {
    if (info.name == name) return info.role;
  }
  return std::nullopt;
}

std::vector<std::string> placeholders_in(const std::string& text) {
  std::vector<std::string> names;
  for (std::size_t pos = text.find(kOpen); pos != std::string::npos; pos = text.find(kOpen, pos + 1)) {
    if (auto ph = placeholder_at(text, pos)) {
      if (std::find(names.begin(), names.end(), ph->first) == names.end()) names.push_back(ph->first);
    }
  }
  return names;
}

PromptTemplate make_template(AgentRole role, std::string text) {
  PromptTemplate t;
  t.role = role;
  t.required = placeholders_in(text);
  t.text = std::move(text);
  return t;
}

const PromptTemplate& builtin_template(AgentRole role) {
  static const std::map<AgentRole, PromptTemplate> templates = [] {
    std::map<AgentRole, PromptTemplate> m;
    for (const auto& info : kRoles) m[info.role] = make_template(info.role, embedded_file(info.file));
    return m;
  }();
  return templates.at(role);
}

std::string render(const PromptTemplate& tmpl, const std::map<std::string, std::string>& values,
                   std::optional<long> stage) {
  std::vector<std::string> missing;
  for (const auto& name : tmpl.required) {
    if (!values.count(name)) missing.push_back(name);
  }
  if (!stage && tmpl.text.find("{X}") != std::string::npos) missing.push_back("X (stage number)");
  if (!missing.empty()) {
    std::string msg = std::string(role_name(tmpl.role)) + " template is missing:";
    for (const auto& m : missing) msg += " " + m;
    throw Error(ErrorCode::MissingPlaceholder, msg);
  }
  const std::string stage_text = stage ? std::to_string(*stage) : std::string();
  std::string out;
  out.reserve(tmpl.text.size());
  const std::string& t = tmpl.text;
  for (std::size_t i = 0; i < t.size();) {
    if (t[i] == '<') {
      if (auto ph = placeholder_at(t, i)) {
        auto it = values.find(ph->first);
        // Placeholders not in `required` (a hand-built template) stay literal and trip the check below.
        if (it != values.end()) {
          out += it->second;
          i += ph->second;
          continue;
        }
      }
    } else if (stage && t.compare(i, 3, "{X}") == 0) {
      out += stage_text;
      i += 3;
      continue;
    }
    out.push_back(t[i]);
    ++i;
  }
  if (out.find(kOpen) != std::string::npos) {
    throw Error(ErrorCode::InvalidArgument, "rendered prompt still contains an <INSERT_ token");
  }
  return out;
}

std::string reward_functions_text() {
  static const std::map<EvalType, std::string> meaning = {
      {EvalType::sum_square, "sum over the last axis of vector**2"},
      {EvalType::exponential_decay, "exp(-error / (2 * sigma**2)), sigma >= 0"},
      {EvalType::norm_L2, "Euclidean norm over the last axis"},
      {EvalType::norm_L1, "sum of absolute values over the last axis"},
      {EvalType::quadratic, "weight * value**2"},
      {EvalType::weighted_sum, "sum(values * weights)"},
      {EvalType::binary, "reward_value where condition holds, else else_value"},
      {EvalType::absolute_difference, "abs(value1 - value2)"},
  };
  std::string out;
  for (EvalType type : all_eval_types()) {
    out += "- " + std::string(type_name(type)) + "(";
    const auto& params = parameter_names(type);
    for (std::size_t i = 0; i < params.size(); ++i) out += (i ? ", " : "") + params[i];
    out += "): " + meaning.at(type) + "\n";
  }
  out +=
      "Parameter expressions: numbers, True/False, variables, unary -, + - * /, "
      "< > <= >= == !=, & |, parentheses, indexing x[i], x[a:b], x[..., i]. "
      "There are no function calls; use the evaluation types above.\n"
      "combination.type: last | sum | weighted_sum (with weights).\n";
  return out;
}

std::string reward_variables_text() { return embedded_file("context/reward_variables.txt"); }
std::string reward_example_text() { return embedded_file("context/reward_example.txt"); }
std::string robot_description_text() { return embedded_file("context/robot.txt"); }
std::string workflow_format_text() { return embedded_file("context/workflow_format.txt"); }

std::optional<std::string> sandbox_path(const std::string& file_path) {
  if (file_path.empty() || file_path.front() == '/' || file_path.find('\\') != std::string::npos) return std::nullopt;
  auto resolved = resolve_path("prompts/agent", file_path);
  if (!resolved || resolved->empty()) return std::nullopt;
  return resolved;
}

std::vector<GeneratedFileBlock> parse_file_blocks(const std::string& response) {
  const auto lines = split_lines(response);
  std::vector<GeneratedFileBlock> blocks;
  std::size_t i = 0;
  auto next_content_line = [&](std::size_t from) {
    while (from < lines.size() && is_blank(lines[from])) ++from;
    return from;
  };
  while (true) {
    // Between blocks only blank lines and fences are allowed.
    while (i < lines.size() && (is_blank(lines[i]) || is_fence(lines[i]))) ++i;
    if (i >= lines.size()) break;
    GeneratedFileBlock block;
    auto name = keyed_value(lines[i], "file_name");
    if (!name) throw malformed(i, "expected file_name, found '" + trim(lines[i]) + "'");
    if (name->empty()) throw malformed(i, "empty file_name");
    block.file_name = *name;
    i = next_content_line(i + 1);
    auto path = i < lines.size() ? keyed_value(lines[i], "file_path") : std::nullopt;
    if (!path) throw malformed(std::min(i, lines.size()), "expected file_path after file_name " + block.file_name);
    block.file_path = *path;
    auto resolved = sandbox_path(block.file_path);
    if (!resolved) throw Error(ErrorCode::PathEscape, "file_path '" + block.file_path + "' leaves the run sandbox");
    block.sandbox_path = *resolved;
    const auto slash = block.sandbox_path.find_last_of('/');
    const std::string base = slash == std::string::npos ? block.sandbox_path : block.sandbox_path.substr(slash + 1);
    if (base != block.file_name) {
      throw malformed(i, "file_name " + block.file_name + " does not match file_path " + block.file_path);
    }
    i = next_content_line(i + 1);
    auto content = i < lines.size() ? keyed_value(lines[i], "content") : std::nullopt;
    if (!content || *content != "|") throw malformed(std::min(i, lines.size()), "expected 'content: |'");
    const std::size_t header = i;
    ++i;
    const std::size_t first = next_content_line(i);
    if (first >= lines.size() || indent_of(lines[first]) == 0) throw malformed(header, "empty content");
    const std::size_t indent = indent_of(lines[first]);
    std::vector<std::string> body;
    while (i < lines.size()) {
      const std::string& line = lines[i];
      if (is_blank(line)) {
        body.emplace_back();
      } else if (indent_of(line) >= indent) {
        body.push_back(line.substr(indent));
      } else {
        break;
      }
      ++i;
    }
    while (!body.empty() && body.back().empty()) body.pop_back();
    for (const auto& line : body) {
      block.content += line;
      block.content.push_back('\n');
    }
    blocks.push_back(std::move(block));
  }
  if (blocks.empty()) throw Error(ErrorCode::NoBlocks, "response contains no file blocks");
  return blocks;
}

std::string serialize_file_blocks(const std::vector<GeneratedFileBlock>& blocks) {
  std::string out;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& block = blocks[b];
    if (b) out += "\n";
    out += "file_name: \"" + block.file_name + "\"\n";
    out += "file_path: \"" + block.file_path + "\"\n";
    out += "content: |\n";
    for (const auto& line : split_lines(block.content)) {
      if (!line.empty()) out += "  " + line;
      out += "\n";
    }
  }
  return out;
}

std::map<std::string, std::string> parse_selector_json(const std::string& response,
                                                       const std::vector<std::string>& candidates) {
  const auto lines = split_lines(response);
  std::vector<std::string> bodies;
  std::optional<std::string> open;
  for (const auto& line : lines) {
    if (is_fence(line)) {
      if (open) {
        bodies.push_back(*open);
        open.reset();
      } else {
        open = std::string();
      }
    } else if (open) {
      *open += line + "\n";
    }
  }
  if (open) throw Error(ErrorCode::NoJson, "unterminated fenced block");
  if (bodies.size() != 1) {
    throw Error(ErrorCode::NoJson, "expected exactly one fenced JSON block, found " + std::to_string(bodies.size()));
  }
  // A trailing comma before '}' is a common slip; JSON itself forbids it.
  const std::string body = std::regex_replace(bodies.front(), std::regex(",(\\s*)\\}"), "$1}");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::NoJson, std::string("fenced block is not JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::NoJson, "fenced JSON is not an object");

  static const std::regex key_re("^(workflow|(reward|config|randomize)_stage([1-9][0-9]*))$");
  const std::set<std::string> known(candidates.begin(), candidates.end());
  std::map<std::string, std::string> out;
  std::map<long, std::set<std::string>> stages;
  for (const auto& [key, value] : j.items()) {
    std::smatch m;
    if (!std::regex_match(key, m, key_re)) throw Error(ErrorCode::BadKey, "unexpected key '" + key + "'");
    if (!value.is_string()) throw Error(ErrorCode::BadKey, "value of '" + key + "' is not a file name");
    const auto file = value.get<std::string>();
    if (!known.count(file)) throw Error(ErrorCode::UnknownFile, "'" + key + "' names unknown file '" + file + "'");
    if (m[2].matched) stages[std::stol(m[3].str())].insert(m[2].str());
    out[key] = file;
  }
  if (!out.count("workflow")) throw Error(ErrorCode::BadKey, "no 'workflow' key");
  long expect = 1;
  for (const auto& [index, kinds] : stages) {
    if (index != expect++) throw Error(ErrorCode::BadKey, "stage numbers are not 1, 2, ... without gaps");
    if (kinds.size() != 3) {
      throw Error(ErrorCode::BadKey, "stage " + std::to_string(index) + " lacks one of reward/config/randomize");
    }
  }
  if (stages.empty()) throw Error(ErrorCode::BadKey, "no stage files selected");
  return out;
}

std::string_view action_name(FeedbackAction action) noexcept {
  switch (action) {
    case FeedbackAction::proceed_unchanged: return "proceed_unchanged";
    case FeedbackAction::proceed_with_revised_files: return "proceed_with_revised_files";
    case FeedbackAction::terminate: return "terminate";
  }
  return "unknown";
}

FeedbackDecision parse_feedback(const std::string& response) {
  const auto lines = split_lines(response);
  std::size_t i = 0;
  auto skip = [&] {
    while (i < lines.size() && (is_blank(lines[i]) || is_fence(lines[i]))) ++i;
  };
  skip();
  auto decision = i < lines.size() ? keyed_value(lines[i], "decision") : std::nullopt;
  if (!decision) throw malformed(i, "expected 'decision:'");
  FeedbackDecision out;
  if (*decision == "proceed_unchanged") {
    out.action = FeedbackAction::proceed_unchanged;
  } else if (*decision == "proceed_with_revised_files") {
    out.action = FeedbackAction::proceed_with_revised_files;
  } else if (*decision == "terminate") {
    out.action = FeedbackAction::terminate;
  } else {
    throw malformed(i, "unknown decision '" + *decision + "'");
  }
  ++i;
  skip();
  if (i < lines.size()) {
    if (auto rationale = keyed_value(lines[i], "rationale")) {
      out.rationale = *rationale;
      ++i;
    }
  }
  std::string rest;
  for (; i < lines.size(); ++i) rest += lines[i] + "\n";
  const bool has_text = std::any_of(rest.begin(), rest.end(), [](char c) { return c != ' ' && c != '\n' && c != '\t'; });
  if (out.action == FeedbackAction::proceed_with_revised_files) {
    if (!has_text) throw Error(ErrorCode::MalformedBlock, "proceed_with_revised_files without file blocks");
    out.revised = parse_file_blocks(rest);
  } else if (has_text) {
    for (const auto& line : split_lines(rest)) {
      if (!is_blank(line) && !is_fence(line)) {
        throw Error(ErrorCode::MalformedBlock, std::string(action_name(out.action)) + " must not carry file blocks or extra text");
      }
    }
  }
  return out;
}

std::string request_digest(AgentRole role, const std::string& prompt) {
  return sha256_hex(std::string(role_name(role)) + "\n" + prompt);
}

LiveSettings live_settings_from_env() {
  auto get = [](const char* name) {
    const char* v = std::getenv(name);
    return v ? std::string(v) : std::string();
  };
  LiveSettings s;
  s.endpoint = get("STAGEHAND_LLM_ENDPOINT");
  s.api_key = get("STAGEHAND_LLM_API_KEY");
  s.model = get("STAGEHAND_LLM_MODEL");
  if (s.endpoint.empty()) throw Error(ErrorCode::InvalidArgument, "STAGEHAND_LLM_ENDPOINT is not set");
  if (s.model.empty()) throw Error(ErrorCode::InvalidArgument, "STAGEHAND_LLM_MODEL is not set");
  return s;
}

LiveTransport::LiveTransport(LiveSettings settings) : settings_(std::move(settings)) {}

std::string LiveTransport::complete(const ChatRequest& request) {
  static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(settings_.endpoint, m, url_re)) {
    throw Error(ErrorCode::Transport, "endpoint '" + settings_.endpoint + "' is not an http(s) URL");
  }
  httplib::Client client(m[1].str());
  const auto timeout = std::chrono::milliseconds(static_cast<long>(settings_.timeout_seconds * 1000.0));
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout));
  httplib::Headers headers;
  if (!settings_.api_key.empty()) headers.emplace("Authorization", "Bearer " + settings_.api_key);
  const nlohmann::json body = {{"model", settings_.model},
                               {"temperature", request.temperature},
                               {"messages", {{{"role", "user"}, {"content", request.prompt}}}}};
  const std::string path = m[2].matched ? m[2].str() : "/v1/chat/completions";
  auto res = client.Post(path, headers, body.dump(), "application/json");
  if (!res) throw Error(ErrorCode::Transport, "request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) {
    throw Error(ErrorCode::Transport, "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 500));
  }
  try {
    const auto reply = nlohmann::json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Transport, std::string("unexpected response body: ") + e.what());
  }
}

ReplayTransport::ReplayTransport(fs::path dir) : dir_(std::move(dir)) {}

std::string ReplayTransport::complete(const ChatRequest& request) {
  const std::string digest = request_digest(request.role, request.prompt);
  const fs::path file = dir_ / (digest + ".txt");
  if (!fs::exists(file)) {
    throw Error(ErrorCode::FixtureMissing,
                "no fixture " + digest + ".txt for the " + std::string(role_name(request.role)) + " request in " + dir_.string());
  }
  return read_text(file);
}

RecordingTransport::RecordingTransport(ChatTransport& inner, fs::path dir) : inner_(inner), dir_(std::move(dir)) {}

std::string RecordingTransport::complete(const ChatRequest& request) {
  std::string response = inner_.complete(request);
  fs::create_directories(dir_);
  const fs::path file = dir_ / (request_digest(request.role, request.prompt) + ".txt");
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + file.string());
  out << response;
  return response;
}

ScriptedTransport::ScriptedTransport(Script script) : script_(std::move(script)) {}

ScriptedTransport::ScriptedTransport(std::vector<std::string> responses)
    : script_([responses = std::move(responses)](const ChatRequest&, std::size_t call) {
        if (responses.empty()) throw Error(ErrorCode::Transport, "scripted transport has no responses");
        return responses[std::min(call, responses.size() - 1)];
      }) {}

std::string ScriptedTransport::complete(const ChatRequest& request) {
  requests_.push_back(request);
  return script_(request, calls_++);
}

std::string retry_feedback(const std::vector<Finding>& findings) {
  std::string out =
      "\n\n== Your previous reply was rejected ==\n"
      "Fix every problem below and send the complete reply again in the required format.\n";
  for (const auto& f : findings) {
    out += "- " + f.code;
    if (!f.file.empty()) out += " " + f.file;
    if (!f.path.empty()) out += ":" + f.path;
    out += ": " + f.message + "\n";
  }
  return out;
}

Finding finding_from_error(const std::exception& e, const std::string& file) {
  Finding f;
  f.file = file;
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    f.code = std::string(code_name(err->code()));
    f.message = err->message();
  } else {
    f.code = "INTERNAL";
    f.message = e.what();
  }
  return f;
}

AgentReply invoke_with_retry(ChatTransport& transport, AgentRole role, const std::string& prompt,
                             const ResponseCheck& check, int max_retries, std::vector<AgentAttempt>* log) {
  if (max_retries < 0) throw Error(ErrorCode::InvalidArgument, "max_retries must be >= 0");
  AgentReply reply;
  std::string current = prompt;
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    ChatRequest request{role, current, 0.0};
    std::string response = transport.complete(request);
    AgentAttempt record;
    record.role = role;
    record.attempt = attempt + 1;
    record.prompt_digest = request_digest(role, current);
    record.response_digest = sha256_hex(response);
    try {
      record.findings = check(response);
    } catch (const std::exception& e) {
      record.findings = {finding_from_error(e)};
    }
    const bool accepted = std::none_of(record.findings.begin(), record.findings.end(),
                                       [](const Finding& f) { return f.severity == Severity::error; });
    reply.attempts.push_back(record);
    if (log) log->push_back(record);
    if (accepted) {
      reply.response = std::move(response);
      return reply;
    }
    current = prompt + retry_feedback(record.findings);
  }
  std::string msg = std::string(role_name(role)) + " reply rejected after " + std::to_string(max_retries + 1) + " attempts";
  for (const auto& a : reply.attempts) {
    msg += "\nattempt " + std::to_string(a.attempt) + ":";
    for (const auto& f : a.findings) msg += "\n  " + f.code + " " + f.file + (f.path.empty() ? "" : ":" + f.path) + ": " + f.message;
  }
  throw Error(ErrorCode::RetriesExhausted, msg);
}

}  // namespace stagehand
