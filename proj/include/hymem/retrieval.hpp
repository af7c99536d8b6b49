#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hymem/config.hpp"
#include "hymem/embedding.hpp"
#include "hymem/errors.hpp"
#include "hymem/llm_client.hpp"
#include "hymem/memory_pool.hpp"
#include "hymem/store.hpp"
#include "hymem/token_ledger.hpp"
#include "hymem/trace.hpp"

namespace hymem {

/// Read-only view of the memory plus the providers a session talks to.
struct EngineContext {
  const MemoryStore& store;
  const VectorIndex& index;
  EmbeddingProvider& embedder;
  ChatBackend& backend;
  Config config;
  /// When set, retrieval only considers summaries of this dialogue.
  std::optional<std::string> dialogue_scope;

  std::function<bool(SummaryId)> scope_filter() const;
};

enum class AnswerStatus { Answered, Escalate };

/// Maps the light generator's finished code: 0 -> Answered, 2 -> Escalate.
/// Any other code is a JsonProtocolError.
AnswerStatus status_from_finished(int finished);

struct LightOutcome {
  AnswerStatus status = AnswerStatus::Escalate;
  std::optional<std::string> answer;  // present iff Answered
  std::vector<SummaryId> retrieved;
};

struct DeepOutcome {
  std::vector<SummaryId> coarse;
  std::vector<SummaryId> selected_summary_ids;
  std::vector<EventId> backtracked_event_ids;
  std::string answer;
  bool used_fallback = false;
};

struct ReflectionVerdict {
  bool done = true;
  std::string new_question;  // non-empty iff !done
};

struct FilterCandidate {
  SummaryId summary_id = 0;
  std::string text;        // key sentence without the time stamp
  std::string time_label;
};

/// "id:{summary_id}, {text}" per hit, similarity order, newline-joined.
std::string render_light_context(const MemoryStore& store,
                                 std::span<const SearchHit> hits);

/// "id:{n}, dialogue time:{t}, {text}" per candidate, blank-line separated.
std::string render_indices(std::span<const FilterCandidate> batch);

/// Each event's "dialogue time: {t}" header and passage, in the given order.
std::string render_events(std::span<const EventUnit> events);

/// Contiguous batches of `d` in input order; the last may be shorter.
/// Throws ContractViolation for d == 0.
template <typename T>
std::vector<std::vector<T>> partition_batches(std::span<const T> candidates,
                                              std::size_t d);

LightOutcome light_step(const std::string& query, const std::string& original,
                        const MemoryPool& pool, const EngineContext& ctx,
                        TokenLedger& ledger, IterationTrace& trace);

/// One f_gamma call over a non-empty batch. Returned ids are restricted to
/// the batch; anything else is dropped and noted in `notes`.
std::vector<SummaryId> llm_filter(const std::string& query,
                                  std::span<const FilterCandidate> batch,
                                  ChatBackend& backend, TokenLedger& ledger,
                                  std::vector<ChatExchange>& exchanges,
                                  std::vector<std::string>& notes);

DeepOutcome deep_step(const std::string& query, const std::string& original,
                      const MemoryPool& pool, const EngineContext& ctx,
                      TokenLedger& ledger, IterationTrace& trace);

ReflectionVerdict reflect(const std::string& answer, const std::string& original,
                          ChatBackend& backend, TokenLedger& ledger,
                          IterationTrace& trace);

struct QueryResult {
  std::string answer;
  SessionTrace trace;
  TokenLedger ledger;
};

/// Thrown when the deep generator keeps returning garbage; carries the
/// partial session.
class SessionAborted : public DeepProtocolError {
 public:
  SessionAborted(const DeepProtocolError& cause, QueryResult partial)
      : DeepProtocolError(cause.what(), cause.raw()),
        partial_(std::move(partial)) {}
  const QueryResult& partial() const { return partial_; }

 private:
  QueryResult partial_;
};

/// The light/deep/reflect loop, bounded by config.max_iterations.
QueryResult answer_query(const std::string& question, const EngineContext& ctx);

// ---------------------------------------------------------------------------

template <typename T>
std::vector<std::vector<T>> partition_batches(std::span<const T> candidates,
                                              std::size_t d) {
  if (d == 0) {
    throw ContractViolation("partition_batches: batch size must be >= 1");
  }
  std::vector<std::vector<T>> batches;
  batches.reserve((candidates.size() + d - 1) / d);
  for (std::size_t start = 0; start < candidates.size(); start += d) {
    const auto n = std::min(d, candidates.size() - start);
    auto part = candidates.subspan(start, n);
    batches.emplace_back(part.begin(), part.end());
  }
  return batches;
}

}  // namespace hymem
