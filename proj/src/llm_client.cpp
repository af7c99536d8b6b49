#include "hymem/llm_client.hpp"

#include <fstream>
#include <sstream>

#include "hymem/errors.hpp"
#include "http.hpp"

namespace hymem {

using nlohmann::json;

std::string_view to_string(BackendKind kind) {
  return kind == BackendKind::Scripted ? "SCRIPTED" : "REMOTE";
}

std::int64_t estimate_tokens(std::string_view text) {
  return static_cast<std::int64_t>((text.size() + 3) / 4);
}

ChatExchange chat(ChatBackend& backend, const ChatRequest& request,
                  TokenLedger& ledger) {
  if (request.system_prompt.empty() || request.user_prompt.empty()) {
    throw ContractViolation("chat request prompts must be non-empty");
  }
  if (!(request.temperature >= 0.0 && request.temperature <= 2.0)) {
    throw ContractViolation("chat temperature must lie in [0, 2]");
  }
  auto exchange = backend.complete(request);
  ledger.record(request.tag, exchange.usage);
  return exchange;
}

// ---------------------------------------------------------------------------
// JSON extraction

namespace {

std::string strip_fences(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  std::size_t pos = 0;
  while (pos <= raw.size()) {
    auto nl = raw.find('\n', pos);
    if (nl == std::string_view::npos) nl = raw.size();
    auto line = raw.substr(pos, nl - pos);
    const auto first = line.find_first_not_of(" \t");
    const bool fence = first != std::string_view::npos && line.substr(first).starts_with("```");
    if (!fence) {
      out.append(line);
      if (nl < raw.size()) out.push_back('\n');
    } else if (nl < raw.size()) {
      out.push_back('\n');
    }
    pos = nl + 1;
  }
  return out;
}

/// End index (inclusive) of the balanced bracket group opening at `start`,
/// honoring JSON string literals. npos when unbalanced.
std::size_t balanced_end(std::string_view s, std::size_t start) {
  std::string stack;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = start; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    switch (c) {
      case '"': in_string = true; break;
      case '{': stack.push_back('}'); break;
      case '[': stack.push_back(']'); break;
      case '}':
      case ']':
        if (stack.empty() || stack.back() != c) return std::string_view::npos;
        stack.pop_back();
        if (stack.empty()) return i;
        break;
      default: break;
    }
  }
  return std::string_view::npos;
}

}  // namespace

json extract_json(std::string_view raw) {
  const auto text = strip_fences(raw);
  const std::string_view view(text);
  for (std::size_t i = 0; i < view.size(); ++i) {
    if (view[i] != '{' && view[i] != '[') continue;
    const auto end = balanced_end(view, i);
    if (end == std::string_view::npos) continue;
    auto parsed = json::parse(view.substr(i, end - i + 1), nullptr, false);
    if (!parsed.is_discarded()) return parsed;
  }
  throw JsonProtocolError("no parseable JSON in model response", std::string(raw));
}

// ---------------------------------------------------------------------------
// Scripted backend

namespace {

std::optional<TokenUsage> usage_from(const json& line) {
  const bool has_prompt = line.contains("prompt_tokens");
  const bool has_completion = line.contains("completion_tokens");
  if (!has_prompt && !has_completion) return std::nullopt;
  TokenUsage usage;
  usage.prompt_tokens = line.value("prompt_tokens", std::int64_t{0});
  usage.completion_tokens = line.value("completion_tokens", std::int64_t{0});
  if (usage.prompt_tokens < 0 || usage.completion_tokens < 0) {
    throw ContractViolation("playbook usage counts must be non-negative");
  }
  return usage;
}

}  // namespace

ScriptedPlaybook ScriptedPlaybook::parse(std::string_view jsonl) {
  ScriptedPlaybook playbook;
  std::size_t line_no = 0;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto doc = json::parse(line, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
      throw ConfigError("playbook line " + std::to_string(line_no) + " is not a JSON object");
    }
    try {
      if (doc.contains("default")) {
        playbook.default_response = doc.at("default").get<std::string>();
        playbook.default_usage = usage_from(doc);
      } else {
        ScriptedRule rule;
        rule.match = doc.at("match").get<std::string>();
        rule.response = doc.at("response").get<std::string>();
        rule.usage = usage_from(doc);
        playbook.rules.push_back(std::move(rule));
      }
    } catch (const json::exception& e) {
      throw ConfigError("playbook line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return playbook;
}

ScriptedPlaybook ScriptedPlaybook::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read playbook " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

ChatExchange ScriptedBackend::complete(const ChatRequest& request) {
  const std::string* response = &playbook_.default_response;
  const std::optional<TokenUsage>* usage = &playbook_.default_usage;
  for (const auto& rule : playbook_.rules) {
    if (request.user_prompt.find(rule.match) != std::string::npos) {
      response = &rule.response;
      usage = &rule.usage;
      break;
    }
  }
  ChatExchange ex;
  ex.request = request;
  ex.raw_response = *response;
  ex.backend_kind = BackendKind::Scripted;
  if (usage->has_value()) {
    ex.usage = **usage;
  } else {
    ex.usage = {estimate_tokens(request.system_prompt) + estimate_tokens(request.user_prompt),
                estimate_tokens(*response)};
    ex.usage_estimated = true;
  }
  return ex;
}

// ---------------------------------------------------------------------------
// Remote backend

RemoteChatBackend::RemoteChatBackend(std::string base_url, std::string model,
                                     std::string api_key, std::size_t max_in_flight,
                                     RetryPolicy retry)
    : base_url_(std::move(base_url)),
      model_(std::move(model)),
      api_key_(std::move(api_key)),
      retry_(retry),
      admission_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, max_in_flight))) {}

ChatExchange RemoteChatBackend::complete(const ChatRequest& request) {
  json body = {
      {"model", model_},
      {"messages",
       json::array({{{"role", "system"}, {"content", request.system_prompt}},
                    {{"role", "user"}, {"content", request.user_prompt}}})},
      {"temperature", request.temperature},
  };

  json response;
  {
    admission_.acquire();
    struct Release {
      std::counting_semaphore<>& sem;
      ~Release() { sem.release(); }
    } release{admission_};
    try {
      response = detail::post_json(base_url_, "/chat/completions", body, api_key_, retry_);
    } catch (const detail::HttpFailure& f) {
      throw ChatBackendError("chat backend: " + f.message, f.status);
    }
  }

  ChatExchange ex;
  ex.request = request;
  ex.backend_kind = BackendKind::Remote;
  try {
    const auto& content = response.at("choices").at(0).at("message").at("content");
    ex.raw_response = content.is_string() ? content.get<std::string>() : content.dump();
  } catch (const json::exception&) {
    throw ChatBackendError("chat backend: response lacks choices[0].message.content", 200);
  }
  const auto usage = response.find("usage");
  if (usage != response.end() && usage->is_object() && usage->contains("prompt_tokens") &&
      usage->contains("completion_tokens")) {
    ex.usage = {usage->at("prompt_tokens").get<std::int64_t>(),
                usage->at("completion_tokens").get<std::int64_t>()};
  } else {
    ex.usage = {estimate_tokens(request.system_prompt) + estimate_tokens(request.user_prompt),
                estimate_tokens(ex.raw_response)};
    ex.usage_estimated = true;
  }
  return ex;
}

std::unique_ptr<ChatBackend> make_chat_backend(const BackendDescriptor& desc,
                                               const Config& config) {
  switch (desc.kind) {
    case BackendDescriptor::Kind::Scripted:
      if (desc.playbook.empty()) throw ConfigError("no chat backend configured");
      return std::make_unique<ScriptedBackend>(ScriptedPlaybook::load(desc.playbook));
    case BackendDescriptor::Kind::Remote:
      return std::make_unique<RemoteChatBackend>(desc.base_url, desc.model, config.api_key,
                                                 config.max_in_flight);
    case BackendDescriptor::Kind::Fallback:
      break;
  }
  throw ConfigError("'fallback' is an embedding backend, not a chat backend");
}

}  // namespace hymem
