#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "hymem/config.hpp"
#include "hymem/token_ledger.hpp"

namespace hymem {

struct ChatRequest {
  std::string system_prompt;
  std::string user_prompt;
  double temperature = 0.0;
  ModuleTag tag = ModuleTag::Light;
};

enum class BackendKind { Scripted, Remote };
std::string_view to_string(BackendKind kind);

struct ChatExchange {
  ChatRequest request;
  std::string raw_response;
  TokenUsage usage;
  BackendKind backend_kind = BackendKind::Scripted;
  /// True when usage was approximated as ceil(chars / 4) instead of being
  /// reported by the backend.
  bool usage_estimated = false;
};

/// ceil(chars / 4), the fallback token estimate.
std::int64_t estimate_tokens(std::string_view text);

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual ChatExchange complete(const ChatRequest& request) = 0;
  virtual BackendKind kind() const = 0;
};

/// Issues one chat call and records its usage in `ledger` under
/// request.tag. Throws ContractViolation for an invalid request.
ChatExchange chat(ChatBackend& backend, const ChatRequest& request,
                  TokenLedger& ledger);

/// Returns the first balanced {...} or [...] substring that parses, scanning
/// left to right after removing code-fence marker lines.
/// Throws JsonProtocolError carrying `raw` if nothing parses.
nlohmann::json extract_json(std::string_view raw);

// ---------------------------------------------------------------------------
// Scripted backend

struct ScriptedRule {
  std::string match;  // substring of the user prompt
  std::string response;
  std::optional<TokenUsage> usage;  // estimated from text when absent
};

/// Ordered rules, first match wins. Pure function of (playbook, request).
struct ScriptedPlaybook {
  std::vector<ScriptedRule> rules;
  std::string default_response;
  std::optional<TokenUsage> default_usage;

  /// JSONL: {"match", "response", "prompt_tokens", "completion_tokens"} per
  /// line; a line with a "default" key sets the fallback response.
  static ScriptedPlaybook parse(std::string_view jsonl);
  static ScriptedPlaybook load(const std::filesystem::path& path);
};

class ScriptedBackend final : public ChatBackend {
 public:
  explicit ScriptedBackend(ScriptedPlaybook playbook)
      : playbook_(std::move(playbook)) {}

  ChatExchange complete(const ChatRequest& request) override;
  BackendKind kind() const override { return BackendKind::Scripted; }
  const ScriptedPlaybook& playbook() const { return playbook_; }

 private:
  ScriptedPlaybook playbook_;
};

// ---------------------------------------------------------------------------
// Remote chat-completions backend

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{250};
  std::chrono::seconds timeout{120};
};

class RemoteChatBackend final : public ChatBackend {
 public:
  RemoteChatBackend(std::string base_url, std::string model,
                    std::string api_key, std::size_t max_in_flight = 4,
                    RetryPolicy retry = {});

  ChatExchange complete(const ChatRequest& request) override;
  BackendKind kind() const override { return BackendKind::Remote; }

 private:
  std::string base_url_;
  std::string model_;
  std::string api_key_;
  RetryPolicy retry_;
  std::counting_semaphore<> admission_;
};

/// Builds the chat backend a descriptor names. Fallback is not a chat
/// backend and yields a ConfigError.
std::unique_ptr<ChatBackend> make_chat_backend(const BackendDescriptor& desc,
                                               const Config& config);

}  // namespace hymem
