#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "hymem/config.hpp"
#include "hymem/embedding.hpp"
#include "hymem/llm_client.hpp"
#include "hymem/store.hpp"
#include "hymem/token_ledger.hpp"
#include "hymem/types.hpp"

namespace hymem {

struct Turn {
  std::size_t turn_index = 0;
  std::string speaker;
  std::string time_label;
  std::string text;
};

struct RawDialogue {
  std::string dialogue_id;
  std::vector<Turn> turns;
};

/// Throws ContractViolation unless turn indices run 0..n-1 and every turn has
/// a speaker and text.
void validate(const RawDialogue& dialogue);

/// Parses one corpus line: {"dialogue_id": str, "turns": [{"speaker", "time",
/// "text"}]}. Turn indices are assigned in array order.
RawDialogue parse_dialogue_line(std::string_view line);

enum class SegmentationMode { Window, Llm };

struct SegmentationPlan {
  std::vector<TurnRange> segments;
  std::size_t overlap_turns = 0;
  /// Set when LLM mode fell back to windows; carries the reason.
  std::string fallback_reason;
};

struct SegmentationOptions {
  SegmentationMode mode = SegmentationMode::Window;
  std::size_t window = 20;
  std::size_t overlap_turns = 2;
};

/// Sliding windows of `window` turns advancing by window - overlap. The last
/// window ends at the final turn.
SegmentationPlan window_segments(std::size_t turn_count, std::size_t window,
                                 std::size_t overlap_turns);

/// Turns topic boundaries (first turn index of each new topic) into
/// segments, prepending `overlap_turns` trailing turns of the previous topic
/// to each following one. Throws ContractViolation for boundaries that are
/// not strictly increasing inside (0, turn_count).
SegmentationPlan boundary_segments(std::size_t turn_count,
                                   const std::vector<std::size_t>& boundaries,
                                   std::size_t overlap_turns);

/// Requires window >= 2 and overlap < window. In LLM mode one chat call
/// proposes boundaries; anything unusable falls back to windows.
SegmentationPlan segment_dialogue(const RawDialogue& dialogue,
                                  const SegmentationOptions& options,
                                  ChatBackend* backend, TokenLedger* ledger);

/// Speaker-labelled passage for turns [range.start, range.end].
std::string render_passage(const RawDialogue& dialogue, TurnRange range);

/// "dialogue time: {time_label}, {sentence}", the stored Level-1 text.
std::string stamp_sentence(std::string_view time_label, std::string_view sentence);
/// Inverse of stamp_sentence for a known time label (labels may contain
/// commas). Returns the input unchanged if it carries no such stamp.
std::string_view unstamp_sentence(std::string_view stored, std::string_view time_label);

/// One Summary-prompt call; returns the "keywords" array in order. One
/// protocol retry, then SummaryProtocolError with the raw response.
std::vector<std::string> summarize_event(const EventUnit& event,
                                         ChatBackend& backend,
                                         TokenLedger& ledger);

struct IngestReport {
  std::string dialogue_id;
  std::size_t events_created = 0;
  std::size_t summaries_created = 0;
  std::int64_t tokens_spent = 0;
  std::vector<EventId> events_without_summaries;
  std::string segmentation_note;
};

/// Full storage pipeline for one dialogue. Nothing is written to `db` until
/// every segment has been summarized and embedded, so a failure leaves no
/// record of the dialogue behind.
IngestReport ingest_dialogue(const RawDialogue& dialogue,
                             const SegmentationOptions& options,
                             MemoryDatabase& db, ChatBackend& backend,
                             EmbeddingProvider& embedder, TokenLedger& ledger);

}  // namespace hymem
