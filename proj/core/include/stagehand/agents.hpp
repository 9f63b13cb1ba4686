#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stagehand/schema.hpp"

namespace stagehand {

enum class AgentRole { vdb_query, selector, curriculum, per_stage, feedback };

std::string_view role_name(AgentRole role) noexcept;
std::optional<AgentRole> role_from_name(std::string_view name) noexcept;

/// Template text with <INSERT_NAME_HERE> placeholders; `required` holds the
/// NAME parts.
struct PromptTemplate {
  AgentRole role = AgentRole::vdb_query;
  std::string text;
  std::vector<std::string> required;
};

/// Placeholder names found in `text`, in first-appearance order.
std::vector<std::string> placeholders_in(const std::string& text);
PromptTemplate make_template(AgentRole role, std::string text);
/// The shipped template for `role`.
const PromptTemplate& builtin_template(AgentRole role);

/// Substitutes every placeholder and, when `stage` is set, every "{X}".
/// Values are inserted verbatim. Throws MISSING_PLACEHOLDER naming all absent
/// keys, INVALID_ARGUMENT if a value would leave an "<INSERT_" in the output.
std::string render(const PromptTemplate& tmpl, const std::map<std::string, std::string>& values,
                   std::optional<long> stage = std::nullopt);

/// Context blocks the templates reference.
std::string reward_functions_text();
std::string reward_variables_text();
std::string reward_example_text();
std::string robot_description_text();
std::string workflow_format_text();

struct GeneratedFileBlock {
  std::string file_name;
  /// As written by the agent ("../rewards/generated_reward_stage1.yaml").
  std::string file_path;
  /// Sandbox-relative path after resolution ("rewards/generated_reward_stage1.yaml").
  std::string sandbox_path;
  std::string content;

  friend bool operator==(const GeneratedFileBlock&, const GeneratedFileBlock&) = default;
};

/// Agent paths are relative to a directory one level below the sandbox root,
/// as in "../rewards/x.yaml".
std::optional<std::string> sandbox_path(const std::string& file_path);

/// Reads `file_name: / file_path: / content: |` triples. Lines that only
/// open or close a ``` fence between blocks are ignored; any other text
/// outside a block is MALFORMED_BLOCK. Content is the literal block with its
/// indentation removed and a single trailing newline. Throws NO_BLOCKS,
/// MALFORMED_BLOCK (with line number), PATH_ESCAPE.
std::vector<GeneratedFileBlock> parse_file_blocks(const std::string& response);
std::string serialize_file_blocks(const std::vector<GeneratedFileBlock>& blocks);

/// Parses the single fenced JSON object of a selector reply. Throws NO_JSON
/// (none, several, or not an object), BAD_KEY (key outside
/// workflow / reward_stageN / config_stageN / randomize_stageN, missing
/// workflow, incomplete stage trio, non-string value), UNKNOWN_FILE.
std::map<std::string, std::string> parse_selector_json(const std::string& response,
                                                       const std::vector<std::string>& candidates);

enum class FeedbackAction { proceed_unchanged, proceed_with_revised_files, terminate };
std::string_view action_name(FeedbackAction action) noexcept;

struct FeedbackDecision {
  FeedbackAction action = FeedbackAction::proceed_unchanged;
  std::string rationale;
  std::vector<GeneratedFileBlock> revised;
};

/// `decision:` and `rationale:` lines, then file blocks only when revising.
/// Throws MALFORMED_BLOCK for an unknown decision, a revision without blocks
/// or blocks with any other decision.
FeedbackDecision parse_feedback(const std::string& response);

struct ChatRequest {
  AgentRole role = AgentRole::vdb_query;
  std::string prompt;
  double temperature = 0.0;
};

class ChatTransport {
 public:
  virtual ~ChatTransport() = default;
  /// Throws TRANSPORT or FIXTURE_MISSING.
  virtual std::string complete(const ChatRequest& request) = 0;
  virtual std::string_view mode() const noexcept = 0;
};

/// Key replay fixtures are stored under: sha256 of role name, newline, prompt.
std::string request_digest(AgentRole role, const std::string& prompt);

struct LiveSettings {
  std::string endpoint;
  std::string api_key;
  std::string model;
  double timeout_seconds = 120.0;
};

/// STAGEHAND_LLM_ENDPOINT, STAGEHAND_LLM_API_KEY, STAGEHAND_LLM_MODEL.
/// Throws INVALID_ARGUMENT when the endpoint or model is unset.
LiveSettings live_settings_from_env();

/// POSTs {model, messages, temperature} to a chat-completion endpoint and
/// returns choices[0].message.content.
class LiveTransport : public ChatTransport {
 public:
  explicit LiveTransport(LiveSettings settings);
  std::string complete(const ChatRequest& request) override;
  std::string_view mode() const noexcept override { return "live"; }

 private:
  LiveSettings settings_;
};

/// Serves <dir>/<request_digest>.txt.
class ReplayTransport : public ChatTransport {
 public:
  explicit ReplayTransport(std::filesystem::path dir);
  std::string complete(const ChatRequest& request) override;
  std::string_view mode() const noexcept override { return "replay"; }

 private:
  std::filesystem::path dir_;
};

/// Forwards to another transport and writes each response as a replay fixture.
class RecordingTransport : public ChatTransport {
 public:
  RecordingTransport(ChatTransport& inner, std::filesystem::path dir);
  std::string complete(const ChatRequest& request) override;
  std::string_view mode() const noexcept override { return inner_.mode(); }

 private:
  ChatTransport& inner_;
  std::filesystem::path dir_;
};

class ScriptedTransport : public ChatTransport {
 public:
  using Script = std::function<std::string(const ChatRequest&, std::size_t call)>;
  explicit ScriptedTransport(Script script);
  /// Replies with `responses` in order, repeating the last one.
  explicit ScriptedTransport(std::vector<std::string> responses);
  std::string complete(const ChatRequest& request) override;
  std::string_view mode() const noexcept override { return "scripted"; }

  std::size_t calls() const noexcept { return calls_; }
  const std::vector<ChatRequest>& requests() const noexcept { return requests_; }

 private:
  Script script_;
  std::size_t calls_ = 0;
  std::vector<ChatRequest> requests_;
};

struct AgentAttempt {
  AgentRole role = AgentRole::vdb_query;
  int attempt = 0;
  std::string prompt_digest;
  std::string response_digest;
  std::vector<Finding> findings;
};

/// Returns the findings for a response; empty means accepted.
using ResponseCheck = std::function<std::vector<Finding>(const std::string& response)>;

struct AgentReply {
  std::string response;
  std::vector<AgentAttempt> attempts;
};

/// Block of text appended to the original prompt on a retry.
std::string retry_feedback(const std::vector<Finding>& findings);

/// Calls the transport, checks the reply and re-prompts with the original
/// prompt plus the findings until it is accepted or `max_retries` retries are
/// used. Every attempt is appended to `log` when given. Throws
/// RETRIES_EXHAUSTED listing the findings of every attempt.
AgentReply invoke_with_retry(ChatTransport& transport, AgentRole role, const std::string& prompt,
                             const ResponseCheck& check, int max_retries = 2,
                             std::vector<AgentAttempt>* log = nullptr);

/// Finding for an exception raised while parsing a reply.
Finding finding_from_error(const std::exception& e, const std::string& file = "<response>");

}  // namespace stagehand
