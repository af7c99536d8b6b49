#include "hymem/ingestion.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "hymem/errors.hpp"
#include "hymem/prompts.hpp"

namespace hymem {

using nlohmann::json;

void validate(const RawDialogue& dialogue) {
  for (std::size_t i = 0; i < dialogue.turns.size(); ++i) {
    const auto& t = dialogue.turns[i];
    if (t.turn_index != i) {
      throw ContractViolation("dialogue '" + dialogue.dialogue_id +
                              "': turn indices must run contiguously from 0");
    }
    if (t.speaker.empty() || t.text.empty()) {
      throw ContractViolation("dialogue '" + dialogue.dialogue_id + "': turn " +
                              std::to_string(i) + " lacks a speaker or text");
    }
  }
}

RawDialogue parse_dialogue_line(std::string_view line) {
  auto doc = json::parse(line, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw ContractViolation("corpus line is not a JSON object");
  }
  RawDialogue d;
  try {
    d.dialogue_id = doc.at("dialogue_id").get<std::string>();
    const auto& turns = doc.at("turns");
    if (!turns.is_array()) throw ContractViolation("\"turns\" must be an array");
    for (std::size_t i = 0; i < turns.size(); ++i) {
      const auto& t = turns[i];
      d.turns.push_back({i, t.at("speaker").get<std::string>(), t.value("time", std::string{}),
                         t.at("text").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw ContractViolation(std::string("malformed corpus line: ") + e.what());
  }
  if (d.dialogue_id.empty()) throw ContractViolation("dialogue_id must be non-empty");
  validate(d);
  return d;
}

// ---------------------------------------------------------------------------
// Segmentation

SegmentationPlan window_segments(std::size_t turn_count, std::size_t window,
                                 std::size_t overlap_turns) {
  if (window < 2) throw ContractViolation("segmentation window must be >= 2");
  if (overlap_turns >= window) throw ContractViolation("overlap must be smaller than the window");
  if (turn_count == 0) throw EmptyInput("cannot segment an empty dialogue");

  SegmentationPlan plan;
  plan.overlap_turns = overlap_turns;
  const auto step = window - overlap_turns;
  for (std::size_t start = 0;; start += step) {
    const auto end = std::min(start + window - 1, turn_count - 1);
    plan.segments.push_back({start, end});
    if (end == turn_count - 1) break;
  }
  return plan;
}

SegmentationPlan boundary_segments(std::size_t turn_count,
                                   const std::vector<std::size_t>& boundaries,
                                   std::size_t overlap_turns) {
  if (turn_count == 0) throw EmptyInput("cannot segment an empty dialogue");
  std::size_t prev = 0;
  for (const auto b : boundaries) {
    if (b <= prev || b >= turn_count) {
      throw ContractViolation("topic boundary " + std::to_string(b) +
                              " is out of range or out of order");
    }
    prev = b;
  }

  SegmentationPlan plan;
  plan.overlap_turns = overlap_turns;
  std::size_t topic_start = 0;
  std::size_t prev_start = 0;
  for (std::size_t i = 0; i <= boundaries.size(); ++i) {
    const auto topic_end = i < boundaries.size() ? boundaries[i] - 1 : turn_count - 1;
    std::size_t start = topic_start;
    if (i > 0) {
      start = topic_start >= overlap_turns ? topic_start - overlap_turns : 0;
      start = std::max(start, prev_start);
    }
    plan.segments.push_back({start, topic_end});
    prev_start = start;
    topic_start = topic_end + 1;
  }
  return plan;
}

namespace {

std::string render_turns(const RawDialogue& dialogue) {
  std::string out;
  for (const auto& t : dialogue.turns) {
    out += "[" + std::to_string(t.turn_index) + "] " + t.speaker + ": " + t.text + "\n";
  }
  return out;
}

std::vector<std::size_t> boundaries_from(const json& doc) {
  const json* list = &doc;
  if (doc.is_object()) {
    const auto it = doc.find("boundaries");
    if (it == doc.end()) throw ContractViolation("no \"boundaries\" key");
    list = &*it;
  }
  if (!list->is_array()) throw ContractViolation("boundaries are not a list");
  std::vector<std::size_t> out;
  for (const auto& v : *list) {
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw ContractViolation("boundary is not a non-negative integer");
    }
    out.push_back(v.get<std::size_t>());
  }
  return out;
}

}  // namespace

SegmentationPlan segment_dialogue(const RawDialogue& dialogue, const SegmentationOptions& options,
                                  ChatBackend* backend, TokenLedger* ledger) {
  if (options.window < 2) throw ContractViolation("segmentation window must be >= 2");
  if (options.overlap_turns >= options.window) {
    throw ContractViolation("overlap must be smaller than the window");
  }
  if (dialogue.turns.empty()) throw EmptyInput("dialogue '" + dialogue.dialogue_id + "' has no turns");

  const auto n = dialogue.turns.size();
  if (options.mode == SegmentationMode::Window) {
    return window_segments(n, options.window, options.overlap_turns);
  }
  if (backend == nullptr || ledger == nullptr) {
    throw ContractViolation("LLM segmentation needs a chat backend and a ledger");
  }

  const auto& tmpl = prompts::segmentation();
  ChatRequest request{std::string(tmpl.system),
                      prompts::fill(tmpl.user, {{"context", render_turns(dialogue)}}), 0.0,
                      ModuleTag::Summarize};
  const auto exchange = chat(*backend, request, *ledger);
  std::string reason;
  try {
    return boundary_segments(n, boundaries_from(extract_json(exchange.raw_response)),
                             options.overlap_turns);
  } catch (const JsonProtocolError& e) {
    reason = "unparseable boundary response";
  } catch (const ContractViolation& e) {
    reason = e.what();
  }
  auto plan = window_segments(n, options.window, options.overlap_turns);
  plan.fallback_reason = "LLM segmentation fell back to windows: " + reason;
  return plan;
}

std::string render_passage(const RawDialogue& dialogue, TurnRange range) {
  std::string out;
  for (auto i = range.start; i <= range.end && i < dialogue.turns.size(); ++i) {
    if (!out.empty()) out += '\n';
    out += dialogue.turns[i].speaker + ": " + dialogue.turns[i].text;
  }
  return out;
}

namespace {
constexpr std::string_view kStampPrefix = "dialogue time: ";
}

std::string stamp_sentence(std::string_view time_label, std::string_view sentence) {
  return std::string(kStampPrefix) + std::string(time_label) + ", " + std::string(sentence);
}

std::string_view unstamp_sentence(std::string_view stored, std::string_view time_label) {
  auto rest = stored;
  if (!rest.starts_with(kStampPrefix)) return stored;
  rest.remove_prefix(kStampPrefix.size());
  if (!rest.starts_with(time_label)) return stored;
  rest.remove_prefix(time_label.size());
  if (!rest.starts_with(", ")) return stored;
  return rest.substr(2);
}

// ---------------------------------------------------------------------------
// Summaries

namespace {

std::vector<std::string> keywords_from(const std::string& raw) {
  const auto doc = extract_json(raw);
  if (!doc.is_object() || !doc.contains("keywords") || !doc.at("keywords").is_array()) {
    throw JsonProtocolError("summary response lacks a \"keywords\" list", raw);
  }
  std::vector<std::string> out;
  for (const auto& k : doc.at("keywords")) {
    if (!k.is_string()) throw JsonProtocolError("summary keyword is not a string", raw);
    auto s = k.get<std::string>();
    if (s.find_first_not_of(" \t\r\n") != std::string::npos) out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

std::vector<std::string> summarize_event(const EventUnit& event, ChatBackend& backend,
                                         TokenLedger& ledger) {
  if (event.passage.empty()) throw ContractViolation("cannot summarize an empty passage");
  const auto& tmpl = prompts::summary();
  const ChatRequest request{
      std::string(tmpl.system),
      prompts::fill(tmpl.user, {{"time", event.time_label}, {"context", event.passage}}), 0.0,
      ModuleTag::Summarize};

  std::string last_raw;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const auto exchange = chat(backend, request, ledger);
    last_raw = exchange.raw_response;
    try {
      return keywords_from(exchange.raw_response);
    } catch (const JsonProtocolError&) {
    }
  }
  throw SummaryProtocolError("summary response is not a keywords list", last_raw);
}

// ---------------------------------------------------------------------------
// Ingest

namespace {

struct StagedEvent {
  EventUnit event;
  std::vector<std::string> sentences;  // stamped
  std::vector<Embedding> embeddings;
};

void merge_into(TokenLedger& target, const TokenLedger& source) {
  for (const auto& e : source.entries()) target.record(e.tag, e.usage);
}

}  // namespace

IngestReport ingest_dialogue(const RawDialogue& dialogue, const SegmentationOptions& options,
                             MemoryDatabase& db, ChatBackend& backend,
                             EmbeddingProvider& embedder, TokenLedger& ledger) {
  validate(dialogue);
  if (embedder.dimension() != db.index.dimension()) {
    throw ContractViolation("embedder dimension does not match the index");
  }

  IngestReport report;
  report.dialogue_id = dialogue.dialogue_id;
  TokenLedger local;
  std::vector<StagedEvent> staged;

  try {
    const auto plan = segment_dialogue(dialogue, options, &backend, &local);
    report.segmentation_note = plan.fallback_reason;

    std::size_t prev_end = 0;
    for (std::size_t i = 0; i < plan.segments.size(); ++i) {
      const auto range = plan.segments[i];
      const auto first_new = i == 0 ? range.start : std::min(std::max(range.start, prev_end + 1), range.end);
      prev_end = range.end;

      StagedEvent s;
      s.event.dialogue_id = dialogue.dialogue_id;
      s.event.turn_range = range;
      s.event.time_label = dialogue.turns[first_new].time_label;
      s.event.passage = render_passage(dialogue, range);
      validate(s.event);

      for (auto& sentence : summarize_event(s.event, backend, local)) {
        s.sentences.push_back(stamp_sentence(s.event.time_label, sentence));
      }
      s.embeddings = embedder.embed_batch(s.sentences);
      staged.push_back(std::move(s));
    }
  } catch (...) {
    merge_into(ledger, local);
    throw;
  }

  for (auto& s : staged) {
    const auto event_id = db.store.put_event(std::move(s.event));
    const auto ids = db.store.put_summaries(event_id, s.sentences);
    for (std::size_t j = 0; j < ids.size(); ++j) db.index.add(ids[j], s.embeddings[j]);
    ++report.events_created;
    report.summaries_created += ids.size();
    if (ids.empty()) report.events_without_summaries.push_back(event_id);
  }

  merge_into(ledger, local);
  report.tokens_spent = local.total();
  return report;
}

}  // namespace hymem
