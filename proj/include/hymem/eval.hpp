#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "hymem/config.hpp"
#include "hymem/embedding.hpp"
#include "hymem/llm_client.hpp"
#include "hymem/store.hpp"

namespace hymem {

enum class Category { SingleHop, MultiHop, OpenDomain, Temporal, Other };

inline constexpr std::array<Category, 5> kAllCategories = {
    Category::SingleHop, Category::MultiHop, Category::OpenDomain,
    Category::Temporal, Category::Other};

std::string_view to_string(Category category);
/// Accepts the snake_case names; anything unknown maps to Other.
Category parse_category(std::string_view name);

struct EvalCase {
  std::string question;
  std::string gold_answer;
  Category category = Category::Other;
  std::string dialogue_id;
};

/// Case file: one {"question","answer","category","dialogue_id"} per line.
std::vector<EvalCase> parse_cases(std::string_view jsonl);

enum class Verdict { Correct, Wrong };
std::string_view to_string(Verdict verdict);

/// One judge call, label parsed case-insensitively. One protocol retry, then
/// JudgeProtocolError.
Verdict judge(const std::string& question, const std::string& gold,
              const std::string& generated, ChatBackend& backend,
              TokenLedger& ledger);

struct CaseRecord {
  EvalCase eval_case;
  std::string generated;
  /// Empty when the case was unscored (judge failure).
  std::optional<Verdict> verdict;
  std::int64_t tokens = 0;        // answering cost (judge excluded)
  std::int64_t judge_tokens = 0;
  std::size_t iterations = 0;
  bool used_deep = false;
  /// Ledger-derived: any DEEP_RETRIEVE or DEEP_GENERATE entry.
  bool ledger_has_deep = false;
  std::string error;
};

struct CategoryScore {
  std::size_t scored = 0;
  std::size_t correct = 0;
  double accuracy() const {
    return scored == 0 ? 0.0 : 100.0 * static_cast<double>(correct) /
                                   static_cast<double>(scored);
  }
};

struct EvalReport {
  std::string label;
  std::map<Category, CategoryScore> per_category;
  CategoryScore overall;
  double avg_tokens = 0.0;
  double deep_ratio = 0.0;
  std::size_t unscored = 0;
  std::size_t errored = 0;
  std::vector<CaseRecord> cases;
};

/// Fills the aggregate fields of `report` from report.cases.
void aggregate(EvalReport& report);

nlohmann::json to_json(const EvalReport& report, bool include_cases = true);
std::string format_table(const EvalReport& report);

/// The providers an evaluation uses. `judge` may be the same object as
/// `chat`.
struct Backends {
  ChatBackend& chat;
  ChatBackend& judge;
  EmbeddingProvider& embedder;
};

struct EvalOptions {
  /// Cases evaluated concurrently.
  std::size_t jobs = 1;
  /// Restrict retrieval to each case's dialogue.
  bool scope_to_dialogue = true;
};

EvalReport run_eval(const std::vector<EvalCase>& cases, const MemoryDatabase& db,
                    const Config& config, const Backends& backends,
                    const EvalOptions& options = {});

/// Top-k over Level-1, every hit expanded to its Level-2 passage, one
/// generation, no escalation or reflection. Throws ContractViolation for
/// k == 0.
EvalReport run_naive_rag(const std::vector<EvalCase>& cases,
                         const MemoryDatabase& db, std::size_t k,
                         const Backends& backends,
                         const EvalOptions& options = {});

struct SweepRow {
  std::size_t k = 0;
  double overall = 0.0;
  double avg_tokens = 0.0;
  double deep_ratio = 0.0;
  EvalReport report;
};

/// One run_eval per k, rows in input order.
std::vector<SweepRow> sweep_k(const std::vector<EvalCase>& cases,
                              const MemoryDatabase& db, const Config& config,
                              const std::vector<std::size_t>& k_values,
                              const Backends& backends,
                              const EvalOptions& options = {});

nlohmann::json to_json(const std::vector<SweepRow>& rows);
std::string format_table(const std::vector<SweepRow>& rows);

}  // namespace hymem
