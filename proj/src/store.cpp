#include "hymem/store.hpp"

#include <fstream>
#include <mutex>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "hymem/errors.hpp"

namespace hymem {

using nlohmann::json;

MemoryStore::MemoryStore(const MemoryStore& other) {
  std::shared_lock lock(other.mutex_);
  events_ = other.events_;
  summaries_ = other.summaries_;
  next_event_ = other.next_event_;
  next_summary_ = other.next_summary_;
}

MemoryStore& MemoryStore::operator=(const MemoryStore& other) {
  if (this == &other) return *this;
  MemoryStore copy(other);
  std::unique_lock lock(mutex_);
  events_ = std::move(copy.events_);
  summaries_ = std::move(copy.summaries_);
  next_event_ = copy.next_event_;
  next_summary_ = copy.next_summary_;
  return *this;
}

EventId MemoryStore::put_event(EventUnit event) {
  validate(event);
  std::unique_lock lock(mutex_);
  for (auto it = events_.rbegin(); it != events_.rend(); ++it) {
    if (it->second.dialogue_id == event.dialogue_id) {
      if (event.turn_range.start < it->second.turn_range.start) {
        throw ContractViolation("event turn ranges must be non-decreasing within dialogue '" +
                                event.dialogue_id + "'");
      }
      break;
    }
  }
  event.event_id = next_event_++;
  const auto id = event.event_id;
  events_.emplace(id, std::move(event));
  return id;
}

std::vector<SummaryId> MemoryStore::put_summaries(EventId event_id,
                                                  std::span<const std::string> texts) {
  for (const auto& t : texts) {
    if (t.empty()) throw ContractViolation("summary text must be non-empty");
  }
  std::unique_lock lock(mutex_);
  if (!events_.contains(event_id)) {
    throw LinkIntegrityError("put_summaries: unknown event id " + std::to_string(event_id));
  }
  std::vector<SummaryId> ids;
  ids.reserve(texts.size());
  for (const auto& t : texts) {
    const auto id = next_summary_++;
    summaries_.emplace(id, SummaryUnit{id, event_id, t});
    ids.push_back(id);
  }
  return ids;
}

std::vector<EventId> MemoryStore::backtrack_ids(std::span<const SummaryId> summary_ids) const {
  std::shared_lock lock(mutex_);
  std::vector<EventId> out;
  std::unordered_set<EventId> seen;
  for (const auto sid : summary_ids) {
    const auto it = summaries_.find(sid);
    if (it == summaries_.end()) {
      throw LinkIntegrityError("backtrack: unknown summary id " + std::to_string(sid));
    }
    if (seen.insert(it->second.event_id).second) out.push_back(it->second.event_id);
  }
  return out;
}

std::vector<EventUnit> MemoryStore::backtrack(std::span<const SummaryId> summary_ids) const {
  const auto ids = backtrack_ids(summary_ids);
  std::shared_lock lock(mutex_);
  std::vector<EventUnit> out;
  out.reserve(ids.size());
  for (const auto id : ids) {
    const auto it = events_.find(id);
    if (it == events_.end()) {
      throw LinkIntegrityError("backtrack: summary links to missing event " + std::to_string(id));
    }
    out.push_back(it->second);
  }
  return out;
}

std::optional<EventUnit> MemoryStore::event(EventId id) const {
  std::shared_lock lock(mutex_);
  const auto it = events_.find(id);
  if (it == events_.end()) return std::nullopt;
  return it->second;
}

std::optional<SummaryUnit> MemoryStore::summary(SummaryId id) const {
  std::shared_lock lock(mutex_);
  const auto it = summaries_.find(id);
  if (it == summaries_.end()) return std::nullopt;
  return it->second;
}

std::vector<EventUnit> MemoryStore::events() const {
  std::shared_lock lock(mutex_);
  std::vector<EventUnit> out;
  out.reserve(events_.size());
  for (const auto& [id, e] : events_) out.push_back(e);
  return out;
}

std::vector<SummaryUnit> MemoryStore::summaries() const {
  std::shared_lock lock(mutex_);
  std::vector<SummaryUnit> out;
  out.reserve(summaries_.size());
  for (const auto& [id, s] : summaries_) out.push_back(s);
  return out;
}

std::vector<SummaryId> MemoryStore::summaries_of(EventId id) const {
  std::shared_lock lock(mutex_);
  std::vector<SummaryId> out;
  for (const auto& [sid, s] : summaries_) {
    if (s.event_id == id) out.push_back(sid);
  }
  return out;
}

std::vector<SummaryId> MemoryStore::summaries_in_dialogue(const std::string& dialogue_id) const {
  std::shared_lock lock(mutex_);
  std::vector<SummaryId> out;
  for (const auto& [sid, s] : summaries_) {
    const auto it = events_.find(s.event_id);
    if (it != events_.end() && it->second.dialogue_id == dialogue_id) out.push_back(sid);
  }
  return out;
}

bool MemoryStore::has_dialogue(const std::string& dialogue_id) const {
  std::shared_lock lock(mutex_);
  for (const auto& [id, e] : events_) {
    if (e.dialogue_id == dialogue_id) return true;
  }
  return false;
}

std::size_t MemoryStore::event_count() const {
  std::shared_lock lock(mutex_);
  return events_.size();
}

std::size_t MemoryStore::summary_count() const {
  std::shared_lock lock(mutex_);
  return summaries_.size();
}

EventId MemoryStore::next_event_id() const {
  std::shared_lock lock(mutex_);
  return next_event_;
}

SummaryId MemoryStore::next_summary_id() const {
  std::shared_lock lock(mutex_);
  return next_summary_;
}

void MemoryStore::restore(std::map<EventId, EventUnit> events,
                          std::map<SummaryId, SummaryUnit> summaries, EventId next_event,
                          SummaryId next_summary) {
  if (!events.empty() && events.rbegin()->first >= next_event) {
    throw ContractViolation("restore: event counter does not exceed stored ids");
  }
  if (!summaries.empty() && summaries.rbegin()->first >= next_summary) {
    throw ContractViolation("restore: summary counter does not exceed stored ids");
  }
  for (const auto& [sid, s] : summaries) {
    if (!events.contains(s.event_id)) {
      throw LinkIntegrityError("summary " + std::to_string(sid) + " links to missing event " +
                               std::to_string(s.event_id));
    }
  }
  std::unique_lock lock(mutex_);
  events_ = std::move(events);
  summaries_ = std::move(summaries);
  next_event_ = next_event;
  next_summary_ = next_summary;
}

bool operator==(const MemoryStore& a, const MemoryStore& b) {
  if (&a == &b) return true;
  std::shared_lock la(a.mutex_, std::defer_lock);
  std::shared_lock lb(b.mutex_, std::defer_lock);
  std::lock(la, lb);
  return a.events_ == b.events_ && a.summaries_ == b.summaries_ &&
         a.next_event_ == b.next_event_ && a.next_summary_ == b.next_summary_;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr const char* kEventsFile = "events.jsonl";
constexpr const char* kSummariesFile = "summaries.jsonl";
constexpr const char* kIndexFile = "index.hym1";
constexpr const char* kMetaFile = "meta.json";

void write_file(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StoreIOError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw StoreIOError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw StoreIOError("cannot publish " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StoreIOError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

json event_to_json(const EventUnit& e) {
  return {{"event_id", e.event_id},
          {"dialogue_id", e.dialogue_id},
          {"passage", e.passage},
          {"time_label", e.time_label},
          {"turn_range", {{"start", e.turn_range.start}, {"end", e.turn_range.end}}}};
}

json summary_to_json(const SummaryUnit& s) {
  return {{"summary_id", s.summary_id}, {"event_id", s.event_id}, {"text", s.text}};
}

/// Calls `fn(line_no, json)` for each line of a JSONL file. Every line,
/// including the last, must be newline-terminated.
template <typename Fn>
void for_each_record(const std::string& file, const std::string& contents, Fn&& fn) {
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < contents.size()) {
    ++line_no;
    const auto nl = contents.find('\n', pos);
    if (nl == std::string::npos) {
      throw StoreFormatError(file, line_no, "unterminated record");
    }
    const auto line = std::string_view(contents).substr(pos, nl - pos);
    pos = nl + 1;
    auto doc = json::parse(line, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
      throw StoreFormatError(file, line_no, "record is not a JSON object");
    }
    try {
      fn(line_no, doc);
    } catch (const json::exception& e) {
      throw StoreFormatError(file, line_no, e.what());
    } catch (const ContractViolation& e) {
      throw StoreFormatError(file, line_no, e.what());
    }
  }
}

}  // namespace

void store_save(const MemoryStore& store, const std::filesystem::path& root,
                std::size_t embedding_dim) {
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec) throw StoreIOError("cannot create store directory " + root.string());

  // One snapshot so the three files agree.
  const MemoryStore snapshot(store);
  std::string events;
  for (const auto& e : snapshot.events()) events += event_to_json(e).dump() + "\n";
  std::string summaries;
  for (const auto& s : snapshot.summaries()) summaries += summary_to_json(s).dump() + "\n";
  const json meta = {{"format_version", kStoreFormatVersion},
                     {"embedding_dim", embedding_dim},
                     {"next_event_id", snapshot.next_event_id()},
                     {"next_summary_id", snapshot.next_summary_id()},
                     {"event_count", snapshot.event_count()},
                     {"summary_count", snapshot.summary_count()}};

  write_file(root / kEventsFile, events);
  write_file(root / kSummariesFile, summaries);
  write_file(root / kMetaFile, meta.dump(2) + "\n");
}

LoadedStore store_load(const std::filesystem::path& root) {
  const auto meta_text = read_file(root / kMetaFile);
  auto meta = json::parse(meta_text, nullptr, false);
  if (meta.is_discarded() || !meta.is_object()) {
    throw StoreFormatError(kMetaFile, 1, "meta.json is not a JSON object");
  }

  LoadedStore loaded;
  EventId next_event = 0;
  SummaryId next_summary = 0;
  std::size_t event_count = 0;
  std::size_t summary_count = 0;
  try {
    const auto version = meta.at("format_version").get<int>();
    if (version != kStoreFormatVersion) {
      throw StoreFormatError(kMetaFile, 1, "unsupported format_version " + std::to_string(version));
    }
    loaded.embedding_dim = meta.at("embedding_dim").get<std::size_t>();
    next_event = meta.at("next_event_id").get<EventId>();
    next_summary = meta.at("next_summary_id").get<SummaryId>();
    event_count = meta.at("event_count").get<std::size_t>();
    summary_count = meta.at("summary_count").get<std::size_t>();
  } catch (const json::exception& e) {
    throw StoreFormatError(kMetaFile, 1, e.what());
  }

  std::map<EventId, EventUnit> events;
  for_each_record(kEventsFile, read_file(root / kEventsFile), [&](std::size_t line, const json& j) {
    EventUnit e;
    e.event_id = j.at("event_id").get<EventId>();
    e.dialogue_id = j.at("dialogue_id").get<std::string>();
    e.passage = j.at("passage").get<std::string>();
    e.time_label = j.at("time_label").get<std::string>();
    e.turn_range.start = j.at("turn_range").at("start").get<std::size_t>();
    e.turn_range.end = j.at("turn_range").at("end").get<std::size_t>();
    validate(e);
    if (e.event_id >= next_event) {
      throw StoreFormatError(kEventsFile, line, "event id beyond stored counter");
    }
    const auto id = e.event_id;
    if (!events.emplace(id, std::move(e)).second) {
      throw StoreFormatError(kEventsFile, line, "duplicate event id " + std::to_string(id));
    }
  });
  if (events.size() != event_count) {
    throw StoreFormatError(kEventsFile, events.size() + 1,
                           "expected " + std::to_string(event_count) + " events, found " +
                               std::to_string(events.size()));
  }

  std::map<SummaryId, SummaryUnit> summaries;
  for_each_record(kSummariesFile, read_file(root / kSummariesFile),
                  [&](std::size_t line, const json& j) {
                    SummaryUnit s;
                    s.summary_id = j.at("summary_id").get<SummaryId>();
                    s.event_id = j.at("event_id").get<EventId>();
                    s.text = j.at("text").get<std::string>();
                    if (s.text.empty()) {
                      throw StoreFormatError(kSummariesFile, line, "empty summary text");
                    }
                    if (s.summary_id >= next_summary) {
                      throw StoreFormatError(kSummariesFile, line, "summary id beyond stored counter");
                    }
                    if (!events.contains(s.event_id)) {
                      throw LinkIntegrityError("summaries.jsonl:" + std::to_string(line) +
                                               ": summary links to missing event " +
                                               std::to_string(s.event_id));
                    }
                    const auto id = s.summary_id;
                    if (!summaries.emplace(id, std::move(s)).second) {
                      throw StoreFormatError(kSummariesFile, line,
                                             "duplicate summary id " + std::to_string(id));
                    }
                  });
  if (summaries.size() != summary_count) {
    throw StoreFormatError(kSummariesFile, summaries.size() + 1,
                           "expected " + std::to_string(summary_count) + " summaries, found " +
                               std::to_string(summaries.size()));
  }

  loaded.store.restore(std::move(events), std::move(summaries), next_event, next_summary);
  return loaded;
}

void MemoryDatabase::save(const std::filesystem::path& root) const {
  store_save(store, root, index.dimension());
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  auto tmp = root / kIndexFile;
  tmp += ".tmp";
  index_save(index, tmp);
  std::filesystem::rename(tmp, root / kIndexFile, ec);
  if (ec) throw StoreIOError("cannot publish index file: " + ec.message());
}

MemoryDatabase MemoryDatabase::load(const std::filesystem::path& root) {
  auto loaded = store_load(root);
  MemoryDatabase db(loaded.embedding_dim);
  db.store = std::move(loaded.store);
  db.index = index_load(root / kIndexFile);
  if (db.index.dimension() != loaded.embedding_dim) {
    throw IndexFormatError("index dimension disagrees with meta.json", 4);
  }
  const auto summaries = db.store.summaries();
  if (db.index.size() != summaries.size()) {
    throw LinkIntegrityError("index holds " + std::to_string(db.index.size()) +
                             " rows for " + std::to_string(summaries.size()) + " summaries");
  }
  for (const auto& s : summaries) {
    if (!db.index.contains(s.summary_id)) {
      throw LinkIntegrityError("summary " + std::to_string(s.summary_id) + " has no index row");
    }
  }
  return db;
}

bool MemoryDatabase::exists(const std::filesystem::path& root) {
  return std::filesystem::exists(root / kMetaFile);
}

}  // namespace hymem
