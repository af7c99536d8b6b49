#include "hymem/retrieval.hpp"

#include <atomic>
#include <exception>
#include <memory>
#include <thread>
#include <unordered_set>

#include "hymem/ingestion.hpp"
#include "hymem/prompts.hpp"

namespace hymem {

using nlohmann::json;

std::function<bool(SummaryId)> EngineContext::scope_filter() const {
  if (!dialogue_scope) return {};
  const auto ids = store.summaries_in_dialogue(*dialogue_scope);
  auto allowed = std::make_shared<const std::unordered_set<SummaryId>>(ids.begin(), ids.end());
  return [allowed](SummaryId id) { return allowed->contains(id); };
}

AnswerStatus status_from_finished(int finished) {
  switch (finished) {
    case 0: return AnswerStatus::Answered;
    case 2: return AnswerStatus::Escalate;
    default:
      throw JsonProtocolError("light generator returned finished=" + std::to_string(finished),
                              std::to_string(finished));
  }
}

// ---------------------------------------------------------------------------
// Rendering

std::string render_light_context(const MemoryStore& store, std::span<const SearchHit> hits) {
  std::string out;
  for (const auto& hit : hits) {
    const auto s = store.summary(hit.summary_id);
    if (!s) {
      throw LinkIntegrityError("index row " + std::to_string(hit.summary_id) +
                               " has no summary record");
    }
    if (!out.empty()) out += '\n';
    out += "id:" + std::to_string(hit.summary_id) + ", " + s->text;
  }
  return out;
}

std::string render_indices(std::span<const FilterCandidate> batch) {
  std::string out;
  for (const auto& c : batch) {
    if (!out.empty()) out += "\n\n";
    out += "id:" + std::to_string(c.summary_id) + ", dialogue time:" + c.time_label + ", " + c.text;
  }
  return out;
}

std::string render_events(std::span<const EventUnit> events) {
  std::string out;
  for (const auto& e : events) {
    if (!out.empty()) out += "\n\n";
    out += "dialogue time: " + e.time_label + "\n" + e.passage;
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

/// Calls the backend up to twice, handing each response to `parse` until
/// one parses. Returns nullopt when both attempts were protocol failures.
template <typename Parse>
auto call_with_retry(ChatBackend& backend, const ChatRequest& request, TokenLedger& ledger,
                     std::vector<ChatExchange>& exchanges, std::string& last_error, Parse&& parse)
    -> std::optional<decltype(parse(std::string{}))> {
  for (int attempt = 0; attempt < 2; ++attempt) {
    auto exchange = chat(backend, request, ledger);
    const auto raw = exchange.raw_response;
    exchanges.push_back(std::move(exchange));
    try {
      return parse(raw);
    } catch (const JsonProtocolError& e) {
      last_error = e.what();
    } catch (const json::exception& e) {
      last_error = e.what();
    }
  }
  return std::nullopt;
}

json object_from(const std::string& raw) {
  auto doc = extract_json(raw);
  if (!doc.is_object()) throw JsonProtocolError("expected a JSON object", raw);
  return doc;
}

}  // namespace

LightOutcome light_step(const std::string& query, const std::string& original,
                        const MemoryPool& pool, const EngineContext& ctx, TokenLedger& ledger,
                        IterationTrace& trace) {
  LightOutcome outcome;
  if (ctx.index.size() == 0) {
    trace.notes.push_back("light: empty index, escalating without a model call");
    return outcome;
  }
  const auto q = ctx.embedder.embed(query);
  const auto hits = topk_search(ctx.index, q, ctx.config.k, ctx.scope_filter());
  for (const auto& h : hits) outcome.retrieved.push_back(h.summary_id);
  trace.retrieved = outcome.retrieved;
  if (hits.empty()) {
    trace.notes.push_back("light: nothing retrievable in scope, escalating without a model call");
    return outcome;
  }

  const auto& tmpl = prompts::light_generator();
  const ChatRequest request{std::string(tmpl.system),
                            prompts::fill(tmpl.user, {{"question", original},
                                                      {"context", render_light_context(ctx.store, hits)},
                                                      {"pool", render(pool)}}),
                            0.0, ModuleTag::Light};

  std::string error;
  auto parsed = call_with_retry(
      ctx.backend, request, ledger, trace.exchanges, error,
      [](const std::string& raw) -> std::pair<AnswerStatus, std::string> {
        const auto doc = object_from(raw);
        const auto it = doc.find("finished");
        if (it == doc.end() || !it->is_number_integer()) {
          throw JsonProtocolError("light response lacks an integer \"finished\"", raw);
        }
        const auto status = status_from_finished(it->get<int>());
        if (status == AnswerStatus::Escalate) return {status, {}};
        const auto answer = doc.find("answer");
        if (answer == doc.end() || !answer->is_string() || answer->get<std::string>().empty()) {
          throw JsonProtocolError("light response has finished=0 but no answer", raw);
        }
        return {status, answer->get<std::string>()};
      });

  if (!parsed) {
    trace.notes.push_back("light: protocol failure after retry, escalating (" + error + ")");
    return outcome;
  }
  outcome.status = parsed->first;
  if (outcome.status == AnswerStatus::Answered) outcome.answer = std::move(parsed->second);
  return outcome;
}

std::vector<SummaryId> llm_filter(const std::string& query, std::span<const FilterCandidate> batch,
                                  ChatBackend& backend, TokenLedger& ledger,
                                  std::vector<ChatExchange>& exchanges,
                                  std::vector<std::string>& notes) {
  if (batch.empty()) throw ContractViolation("llm_filter needs a non-empty batch");
  const auto& tmpl = prompts::llm_retriever();
  const ChatRequest request{
      std::string(tmpl.system),
      prompts::fill(tmpl.user, {{"question", query}, {"indices", render_indices(batch)}}), 0.0,
      ModuleTag::DeepRetrieve};

  std::string error;
  auto listed = call_with_retry(backend, request, ledger, exchanges, error,
                                [](const std::string& raw) {
                                  const auto doc = object_from(raw);
                                  const auto it = doc.find("keywords_list");
                                  if (it == doc.end() || !it->is_array()) {
                                    throw JsonProtocolError(
                                        "retriever response lacks \"keywords_list\"", raw);
                                  }
                                  return *it;
                                });
  if (!listed) {
    notes.push_back("deep: retriever protocol failure after retry, empty selection (" + error + ")");
    return {};
  }

  std::unordered_set<SummaryId> in_batch;
  for (const auto& c : batch) in_batch.insert(c.summary_id);
  std::vector<SummaryId> out;
  std::unordered_set<SummaryId> taken;
  for (const auto& v : *listed) {
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      notes.push_back("deep: retriever returned non-id entry " + v.dump() + ", dropped");
      continue;
    }
    const auto id = v.get<SummaryId>();
    if (!in_batch.contains(id)) {
      notes.push_back("deep: retriever returned id " + std::to_string(id) +
                      " outside its batch, dropped");
      continue;
    }
    if (taken.insert(id).second) out.push_back(id);
  }
  return out;
}

DeepOutcome deep_step(const std::string& query, const std::string& original,
                      const MemoryPool& pool, const EngineContext& ctx, TokenLedger& ledger,
                      IterationTrace& trace) {
  DeepOutcome outcome;
  std::vector<SearchHit> hits;
  if (ctx.index.size() > 0) {
    const auto q = ctx.embedder.embed(query);
    hits = topk_search(ctx.index, q, ctx.config.coarse_n, ctx.scope_filter());
  }

  std::vector<FilterCandidate> candidates;
  candidates.reserve(hits.size());
  for (const auto& h : hits) {
    outcome.coarse.push_back(h.summary_id);
    const auto s = ctx.store.summary(h.summary_id);
    if (!s) throw LinkIntegrityError("index row " + std::to_string(h.summary_id) + " has no summary");
    const auto e = ctx.store.event(s->event_id);
    if (!e) throw LinkIntegrityError("summary " + std::to_string(s->summary_id) + " has no event");
    candidates.push_back({h.summary_id, std::string(unstamp_sentence(s->text, e->time_label)), e->time_label});
  }

  const auto batches = partition_batches(std::span<const FilterCandidate>(candidates),
                                         ctx.config.batch_size);
  struct BatchResult {
    std::vector<SummaryId> ids;
    std::vector<ChatExchange> exchanges;
    std::vector<std::string> notes;
  };
  std::vector<BatchResult> results(batches.size());
  std::vector<std::exception_ptr> failures(batches.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (auto b = next.fetch_add(1); b < batches.size(); b = next.fetch_add(1)) {
      try {
        results[b].ids = llm_filter(query, batches[b], ctx.backend, ledger, results[b].exchanges,
                                    results[b].notes);
      } catch (...) {
        failures[b] = std::current_exception();
      }
    }
  };
  const auto workers = std::min(ctx.config.max_in_flight, batches.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool_threads;
    pool_threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool_threads.emplace_back(worker);
  }
  for (std::size_t b = 0; b < batches.size(); ++b) {
    for (auto& ex : results[b].exchanges) trace.exchanges.push_back(std::move(ex));
    for (auto& n : results[b].notes) trace.notes.push_back(std::move(n));
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  for (const auto& r : results) {
    outcome.selected_summary_ids.insert(outcome.selected_summary_ids.end(), r.ids.begin(), r.ids.end());
  }

  std::vector<SummaryId> to_backtrack = outcome.selected_summary_ids;
  if (to_backtrack.empty()) {
    const auto fallback = std::min(ctx.config.k, outcome.coarse.size());
    to_backtrack.assign(outcome.coarse.begin(), outcome.coarse.begin() + static_cast<std::ptrdiff_t>(fallback));
    outcome.used_fallback = true;
    trace.notes.push_back("deep: nothing selected, backtracking the coarse top-" +
                          std::to_string(fallback));
  }
  const auto events = ctx.store.backtrack(to_backtrack);
  for (const auto& e : events) outcome.backtracked_event_ids.push_back(e.event_id);

  trace.coarse = outcome.coarse;
  trace.selected = outcome.selected_summary_ids;
  trace.backtracked = outcome.backtracked_event_ids;
  trace.deep_fallback = outcome.used_fallback;

  const auto context = events.empty() ? std::string("(no memories)") : render_events(events);
  const auto& tmpl = prompts::deep_generator();
  const ChatRequest request{
      std::string(tmpl.system),
      prompts::fill(tmpl.user, {{"question", original}, {"context", context}, {"pool", render(pool)}}),
      0.0, ModuleTag::DeepGenerate};

  std::string error;
  auto answer = call_with_retry(ctx.backend, request, ledger, trace.exchanges, error,
                                [](const std::string& raw) {
                                  const auto doc = object_from(raw);
                                  const auto it = doc.find("answer");
                                  if (it == doc.end() || !it->is_string() ||
                                      it->get<std::string>().empty()) {
                                    throw JsonProtocolError("deep response lacks an answer", raw);
                                  }
                                  return it->get<std::string>();
                                });
  if (!answer) {
    const auto raw = trace.exchanges.empty() ? std::string{} : trace.exchanges.back().raw_response;
    trace.notes.push_back("deep: generator protocol failure after retry (" + error + ")");
    throw DeepProtocolError("deep generator returned no usable answer: " + error, raw);
  }
  outcome.answer = std::move(*answer);
  return outcome;
}

ReflectionVerdict reflect(const std::string& answer, const std::string& original,
                          ChatBackend& backend, TokenLedger& ledger, IterationTrace& trace) {
  if (answer.empty()) throw ContractViolation("reflect needs a non-empty answer");
  const auto& tmpl = prompts::reflection();
  const ChatRequest request{std::string(tmpl.system),
                            prompts::fill(tmpl.user, {{"question", original}, {"answer", answer}}),
                            0.0, ModuleTag::Reflect};

  std::string error;
  auto verdict = call_with_retry(
      backend, request, ledger, trace.exchanges, error, [](const std::string& raw) {
        const auto doc = object_from(raw);
        const auto it = doc.find("finished");
        if (it == doc.end() || !it->is_number_integer()) {
          throw JsonProtocolError("reflection response lacks an integer \"finished\"", raw);
        }
        const auto finished = it->get<int>();
        if (finished == 1) return ReflectionVerdict{true, {}};
        if (finished != 0) {
          throw JsonProtocolError("reflection returned finished=" + std::to_string(finished), raw);
        }
        const auto q = doc.find("new_question");
        if (q == doc.end() || !q->is_string() || q->get<std::string>().empty()) {
          throw JsonProtocolError("reflection asked to continue without a new_question", raw);
        }
        return ReflectionVerdict{false, q->get<std::string>()};
      });
  if (!verdict) {
    trace.notes.push_back("reflect: protocol failure after retry, treating as done (" + error + ")");
    return {};
  }
  return *verdict;
}

QueryResult answer_query(const std::string& question, const EngineContext& ctx) {
  if (question.empty()) throw ContractViolation("question must be non-empty");
  ctx.config.validate();

  QueryResult result;
  result.trace.question = question;
  MemoryPool pool;
  std::string query = question;
  bool done = false;

  for (std::size_t i = 0; !done && i < ctx.config.max_iterations; ++i) {
    IterationTrace it;
    it.index = i;
    it.query = query;

    auto light = light_step(query, question, pool, ctx, result.ledger, it);
    std::string answer;
    if (light.status == AnswerStatus::Answered) {
      it.path = PathTaken::Light;
      answer = std::move(*light.answer);
    } else {
      it.path = PathTaken::LightThenDeep;
      try {
        answer = deep_step(query, question, pool, ctx, result.ledger, it).answer;
      } catch (const DeepProtocolError& e) {
        result.trace.iterations.push_back(std::move(it));
        result.trace.error = e.what();
        throw SessionAborted(e, result);
      }
    }

    pool.append(i, query, answer);
    it.answer = answer;
    const auto verdict = reflect(answer, question, ctx.backend, result.ledger, it);
    it.reflection_done = verdict.done;
    it.new_question = verdict.new_question;
    result.trace.iterations.push_back(std::move(it));
    result.answer = std::move(answer);

    done = verdict.done;
    if (!done) query = verdict.new_question;
  }
  result.trace.max_iterations_reached = !done;
  return result;
}

// ---------------------------------------------------------------------------
// Trace

std::string_view to_string(PathTaken path) {
  return path == PathTaken::Light ? "LIGHT" : "LIGHT->DEEP";
}

bool SessionTrace::used_deep_path() const {
  return std::any_of(iterations.begin(), iterations.end(),
                     [](const IterationTrace& it) { return it.path == PathTaken::LightThenDeep; });
}

json to_json(const TokenLedger& ledger) {
  json by_module = json::object();
  for (auto tag : kAllModuleTags) {
    if (ledger.count(tag) > 0) by_module[std::string(to_string(tag))] = ledger.subtotal(tag);
  }
  std::int64_t prompt = 0;
  std::int64_t completion = 0;
  for (const auto& e : ledger.entries()) {
    prompt += e.usage.prompt_tokens;
    completion += e.usage.completion_tokens;
  }
  return {{"total", ledger.total()},
          {"prompt", prompt},
          {"completion", completion},
          {"calls", ledger.entries().size()},
          {"by_module", by_module}};
}

json to_json(const SessionTrace& trace, const TokenLedger& ledger, bool full) {
  json iterations = json::array();
  for (const auto& it : trace.iterations) {
    json exchanges = json::array();
    for (const auto& ex : it.exchanges) {
      json e = {{"tag", to_string(ex.request.tag)},
                {"backend", to_string(ex.backend_kind)},
                {"response", ex.raw_response},
                {"prompt_tokens", ex.usage.prompt_tokens},
                {"completion_tokens", ex.usage.completion_tokens},
                {"usage_estimated", ex.usage_estimated}};
      if (full) {
        e["system_prompt"] = ex.request.system_prompt;
        e["user_prompt"] = ex.request.user_prompt;
      }
      exchanges.push_back(std::move(e));
    }
    json reflection = {{"done", it.reflection_done}};
    if (!it.reflection_done) reflection["new_question"] = it.new_question;
    iterations.push_back({{"index", it.index},
                          {"query", it.query},
                          {"path", to_string(it.path)},
                          {"retrieved", it.retrieved},
                          {"coarse", it.coarse},
                          {"selected", it.selected},
                          {"backtracked", it.backtracked},
                          {"deep_fallback", it.deep_fallback},
                          {"answer", it.answer},
                          {"reflection", reflection},
                          {"notes", it.notes},
                          {"exchanges", exchanges}});
  }
  json out = {{"question", trace.question},
              {"iterations", iterations},
              {"max_iterations_reached", trace.max_iterations_reached},
              {"flags", trace.max_iterations_reached ? json::array({"MAX_ITERATIONS"}) : json::array()},
              {"tokens", to_json(ledger)}};
  if (!trace.error.empty()) out["error"] = trace.error;
  return out;
}

}  // namespace hymem
