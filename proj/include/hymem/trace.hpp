#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hymem/llm_client.hpp"
#include "hymem/token_ledger.hpp"
#include "hymem/types.hpp"

namespace hymem {

enum class PathTaken { Light, LightThenDeep };
std::string_view to_string(PathTaken path);

/// Everything one query-loop iteration did.
struct IterationTrace {
  std::size_t index = 0;
  std::string query;
  PathTaken path = PathTaken::Light;

  std::vector<SummaryId> retrieved;    // light top-k, similarity order
  std::vector<SummaryId> coarse;       // deep top-N candidates
  std::vector<SummaryId> selected;     // LLM-selected, batch order
  std::vector<EventId> backtracked;    // Level-2 events fed to the generator
  bool deep_fallback = false;          // nothing selected, used coarse top-k

  std::string answer;
  bool reflection_done = false;
  std::string new_question;

  std::vector<ChatExchange> exchanges;
  std::vector<std::string> notes;      // protocol degradations, dropped ids
};

struct SessionTrace {
  std::string question;
  std::vector<IterationTrace> iterations;
  bool max_iterations_reached = false;
  std::string error;

  bool used_deep_path() const;
};

/// JSON view of a trace. Prompts are redacted unless `full`; responses and
/// usage are always included.
nlohmann::json to_json(const SessionTrace& trace, const TokenLedger& ledger,
                       bool full);
nlohmann::json to_json(const TokenLedger& ledger);

}  // namespace hymem
