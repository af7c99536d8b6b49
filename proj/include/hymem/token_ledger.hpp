#pragma once

#include <array>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string_view>
#include <vector>

namespace hymem {

enum class ModuleTag {
  Light,
  DeepRetrieve,
  DeepGenerate,
  Reflect,
  Summarize,
  Judge,
};

inline constexpr std::array<ModuleTag, 6> kAllModuleTags = {
    ModuleTag::Light,   ModuleTag::DeepRetrieve, ModuleTag::DeepGenerate,
    ModuleTag::Reflect, ModuleTag::Summarize,    ModuleTag::Judge};

std::string_view to_string(ModuleTag tag);
std::optional<ModuleTag> parse_module_tag(std::string_view name);

struct TokenUsage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;

  std::int64_t total() const { return prompt_tokens + completion_tokens; }
  friend bool operator==(const TokenUsage&, const TokenUsage&) = default;
};

/// Per-call token accounting. Appends are atomic so concurrent batch calls
/// inside one session can share a ledger.
class TokenLedger {
 public:
  struct Entry {
    ModuleTag tag;
    TokenUsage usage;
  };

  TokenLedger() = default;
  TokenLedger(const TokenLedger& other);
  TokenLedger& operator=(const TokenLedger& other);

  /// Negative counts are a ContractViolation.
  void record(ModuleTag tag, TokenUsage usage);

  std::vector<Entry> entries() const;
  std::int64_t total() const;
  std::int64_t subtotal(ModuleTag tag) const;
  std::size_t count(ModuleTag tag) const;

 private:
  mutable std::mutex mutex_;
  std::vector<Entry> entries_;
};

}  // namespace hymem
