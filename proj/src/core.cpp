#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "hymem/config.hpp"
#include "hymem/errors.hpp"
#include "hymem/memory_pool.hpp"
#include "hymem/token_ledger.hpp"
#include "hymem/types.hpp"

namespace hymem {

void validate(const EventUnit& event) {
  if (event.passage.empty()) {
    throw ContractViolation("event passage must be non-empty");
  }
  if (event.turn_range.start > event.turn_range.end) {
    throw ContractViolation("event turn range start exceeds end");
  }
}

// ---------------------------------------------------------------------------

void MemoryPool::append(std::size_t iteration, std::string query,
                        std::string answer) {
  if (iteration != entries_.size()) {
    throw ContractViolation("memory pool append: iteration " +
                            std::to_string(iteration) + " but pool holds " +
                            std::to_string(entries_.size()) + " entries");
  }
  entries_.push_back({iteration, std::move(query), std::move(answer)});
}

std::string render(const MemoryPool& pool) {
  std::string out;
  for (const auto& e : pool.entries()) {
    if (!out.empty()) out += '\n';
    out += "Previous finding " + std::to_string(e.iteration) + ": Q: " +
           e.query + " A: " + e.answer;
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(ModuleTag tag) {
  switch (tag) {
    case ModuleTag::Light: return "LIGHT";
    case ModuleTag::DeepRetrieve: return "DEEP_RETRIEVE";
    case ModuleTag::DeepGenerate: return "DEEP_GENERATE";
    case ModuleTag::Reflect: return "REFLECT";
    case ModuleTag::Summarize: return "SUMMARIZE";
    case ModuleTag::Judge: return "JUDGE";
  }
  return "UNKNOWN";
}

std::optional<ModuleTag> parse_module_tag(std::string_view name) {
  for (auto tag : kAllModuleTags) {
    if (to_string(tag) == name) return tag;
  }
  return std::nullopt;
}

TokenLedger::TokenLedger(const TokenLedger& other) : entries_(other.entries()) {}

TokenLedger& TokenLedger::operator=(const TokenLedger& other) {
  if (this != &other) {
    auto copy = other.entries();
    std::lock_guard lock(mutex_);
    entries_ = std::move(copy);
  }
  return *this;
}

void TokenLedger::record(ModuleTag tag, TokenUsage usage) {
  if (usage.prompt_tokens < 0 || usage.completion_tokens < 0) {
    throw ContractViolation("token counts must be non-negative");
  }
  std::lock_guard lock(mutex_);
  entries_.push_back({tag, usage});
}

std::vector<TokenLedger::Entry> TokenLedger::entries() const {
  std::lock_guard lock(mutex_);
  return entries_;
}

std::int64_t TokenLedger::total() const {
  std::lock_guard lock(mutex_);
  std::int64_t sum = 0;
  for (const auto& e : entries_) sum += e.usage.total();
  return sum;
}

std::int64_t TokenLedger::subtotal(ModuleTag tag) const {
  std::lock_guard lock(mutex_);
  std::int64_t sum = 0;
  for (const auto& e : entries_) {
    if (e.tag == tag) sum += e.usage.total();
  }
  return sum;
}

std::size_t TokenLedger::count(ModuleTag tag) const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(std::count_if(
      entries_.begin(), entries_.end(), [&](const Entry& e) { return e.tag == tag; }));
}

// ---------------------------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  const auto first = s.find_first_not_of(ws);
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(ws);
  return std::string(s.substr(first, last - first + 1));
}

std::size_t parse_count(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  unsigned long long n = 0;
  try {
    if (!value.empty() && value.front() == '-') throw std::invalid_argument(value);
    n = std::stoull(value, &pos);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" +
                      value + "'");
  }
  if (pos != value.size()) {
    throw ConfigError("config key '" + key + "' expects an integer, got '" + value + "'");
  }
  return static_cast<std::size_t>(n);
}

}  // namespace

BackendDescriptor BackendDescriptor::parse(const std::string& text,
                                           const std::filesystem::path& relative_to) {
  BackendDescriptor d;
  if (text == "fallback") {
    d.kind = Kind::Fallback;
    return d;
  }
  if (text.rfind("scripted:", 0) == 0) {
    d.kind = Kind::Scripted;
    d.playbook = text.substr(9);
    if (d.playbook.empty()) throw ConfigError("scripted backend needs a playbook path");
    if (d.playbook.is_relative() && !relative_to.empty()) {
      d.playbook = relative_to / d.playbook;
    }
    return d;
  }
  if (text.rfind("remote:", 0) == 0) {
    const auto rest = text.substr(7);
    const auto at = rest.find('@');
    if (at == std::string::npos || at == 0 || at + 1 == rest.size()) {
      throw ConfigError("remote backend must look like remote:<model>@<base_url>, got '" +
                        text + "'");
    }
    d.kind = Kind::Remote;
    d.model = rest.substr(0, at);
    d.base_url = rest.substr(at + 1);
    while (!d.base_url.empty() && d.base_url.back() == '/') d.base_url.pop_back();
    return d;
  }
  throw ConfigError("unknown backend descriptor '" + text + "'");
}

std::string BackendDescriptor::to_string() const {
  switch (kind) {
    case Kind::Fallback: return "fallback";
    case Kind::Scripted: return "scripted:" + playbook.string();
    case Kind::Remote: return "remote:" + model + "@" + base_url;
  }
  return {};
}

void Config::validate() const {
  if (k < 1) throw ConfigError("k must be >= 1");
  if (coarse_n < k) throw ConfigError("N must be >= k");
  if (batch_size < 1) throw ConfigError("d must be >= 1");
  if (max_iterations < 1) throw ConfigError("T must be >= 1");
  if (max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
  if (embedding_dim < 1) throw ConfigError("embedding_dim must be >= 1");
}

Config parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  Config config;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto stripped = trim(line);
    if (stripped.empty() || stripped.front() == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(std::string_view(stripped).substr(0, eq));
    const auto value = trim(std::string_view(stripped).substr(eq + 1));
    if (key == "k") {
      config.k = parse_count(key, value);
    } else if (key == "N") {
      config.coarse_n = parse_count(key, value);
    } else if (key == "d") {
      config.batch_size = parse_count(key, value);
    } else if (key == "T") {
      config.max_iterations = parse_count(key, value);
    } else if (key == "embedding_dim") {
      config.embedding_dim = parse_count(key, value);
    } else if (key == "max_in_flight") {
      config.max_in_flight = parse_count(key, value);
    } else if (key == "chat_backend") {
      config.chat_backend = BackendDescriptor::parse(value, base_dir);
    } else if (key == "embedding_backend") {
      config.embedding_backend = BackendDescriptor::parse(value, base_dir);
    } else if (key == "judge_backend") {
      config.judge_backend = BackendDescriptor::parse(value, base_dir);
    } else if (key == "api_key") {
      config.api_key = value;
    } else {
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" +
                        key + "'");
    }
  }
  config.validate();
  return config;
}

void apply_environment(Config& config) {
  if (const char* key = std::getenv("HYMEM_API_KEY"); key != nullptr && *key != '\0') {
    config.api_key = key;
  }
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  auto config = parse_config(buf.str(), path.parent_path());
  apply_environment(config);
  return config;
}

}  // namespace hymem
