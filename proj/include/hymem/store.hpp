#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "hymem/embedding.hpp"
#include "hymem/types.hpp"

namespace hymem {

/// Dual-granularity memory: Level-2 events, Level-1 summaries and the
/// many-to-one summary -> event links. Ids come from monotonic counters and
/// are never reused, even for records that were rolled back.
///
/// Multi-reader / single-writer: every public member takes the internal
/// lock, so a reader always sees whole records.
class MemoryStore {
 public:
  MemoryStore() = default;
  MemoryStore(const MemoryStore& other);
  MemoryStore& operator=(const MemoryStore& other);

  /// Stores `event` under a fresh id (the incoming event_id is ignored) and
  /// returns that id.
  EventId put_event(EventUnit event);

  /// One SummaryUnit per text, all linked to `event_id`, ids returned in
  /// input order. Throws LinkIntegrityError for an unknown event.
  std::vector<SummaryId> put_summaries(EventId event_id,
                                       std::span<const std::string> texts);

  /// Resolves summaries to their events, deduplicated by first occurrence.
  /// Throws LinkIntegrityError naming the first unknown summary id.
  std::vector<EventUnit> backtrack(std::span<const SummaryId> summary_ids) const;
  std::vector<EventId> backtrack_ids(std::span<const SummaryId> summary_ids) const;

  std::optional<EventUnit> event(EventId id) const;
  std::optional<SummaryUnit> summary(SummaryId id) const;

  std::vector<EventUnit> events() const;
  std::vector<SummaryUnit> summaries() const;
  std::vector<SummaryId> summaries_of(EventId id) const;
  std::vector<SummaryId> summaries_in_dialogue(const std::string& dialogue_id) const;
  bool has_dialogue(const std::string& dialogue_id) const;

  std::size_t event_count() const;
  std::size_t summary_count() const;
  EventId next_event_id() const;
  SummaryId next_summary_id() const;

  /// Used by store_load. Counters must exceed every stored id.
  void restore(std::map<EventId, EventUnit> events,
               std::map<SummaryId, SummaryUnit> summaries, EventId next_event,
               SummaryId next_summary);

  friend bool operator==(const MemoryStore& a, const MemoryStore& b);

 private:
  mutable std::shared_mutex mutex_;
  std::map<EventId, EventUnit> events_;
  std::map<SummaryId, SummaryUnit> summaries_;
  EventId next_event_ = 0;
  SummaryId next_summary_ = 0;
};

inline constexpr int kStoreFormatVersion = 1;

/// Writes events.jsonl, summaries.jsonl and meta.json under `root`.
/// `embedding_dim` is recorded in meta.json.
void store_save(const MemoryStore& store, const std::filesystem::path& root,
                std::size_t embedding_dim);

struct LoadedStore {
  MemoryStore store;
  std::size_t embedding_dim = 0;
};

/// Throws StoreFormatError (file + 1-based line) on a malformed record and
/// LinkIntegrityError when a summary points at a missing event.
LoadedStore store_load(const std::filesystem::path& root);

/// The store plus its Level-1 index, persisted together in one directory:
/// events.jsonl, summaries.jsonl, index.hym1, meta.json.
struct MemoryDatabase {
  MemoryStore store;
  VectorIndex index;

  explicit MemoryDatabase(std::size_t embedding_dim = 0) : index(embedding_dim) {}

  void save(const std::filesystem::path& root) const;
  static MemoryDatabase load(const std::filesystem::path& root);
  static bool exists(const std::filesystem::path& root);
};

}  // namespace hymem
