#include "hymem/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <iomanip>
#include <sstream>
#include <thread>

#include "hymem/errors.hpp"
#include "hymem/prompts.hpp"
#include "hymem/retrieval.hpp"

namespace hymem {

using nlohmann::json;

std::string_view to_string(Category category) {
  switch (category) {
    case Category::SingleHop: return "single_hop";
    case Category::MultiHop: return "multi_hop";
    case Category::OpenDomain: return "open_domain";
    case Category::Temporal: return "temporal";
    case Category::Other: return "other";
  }
  return "other";
}

Category parse_category(std::string_view name) {
  for (auto c : kAllCategories) {
    if (to_string(c) == name) return c;
  }
  return Category::Other;
}

std::string_view to_string(Verdict verdict) {
  return verdict == Verdict::Correct ? "CORRECT" : "WRONG";
}

std::vector<EvalCase> parse_cases(std::string_view jsonl) {
  std::vector<EvalCase> cases;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto doc = json::parse(line, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
      throw ContractViolation("case line " + std::to_string(line_no) + " is not a JSON object");
    }
    EvalCase c;
    try {
      c.question = doc.at("question").get<std::string>();
      const auto& answer = doc.at("answer");
      c.gold_answer = answer.is_string() ? answer.get<std::string>() : answer.dump();
      c.category = parse_category(doc.value("category", std::string("other")));
      c.dialogue_id = doc.value("dialogue_id", std::string{});
    } catch (const json::exception& e) {
      throw ContractViolation("case line " + std::to_string(line_no) + ": " + e.what());
    }
    if (c.question.empty() || c.gold_answer.empty()) {
      throw ContractViolation("case line " + std::to_string(line_no) +
                              ": question and answer must be non-empty");
    }
    cases.push_back(std::move(c));
  }
  return cases;
}

Verdict judge(const std::string& question, const std::string& gold, const std::string& generated,
              ChatBackend& backend, TokenLedger& ledger) {
  if (question.empty() || gold.empty() || generated.empty()) {
    throw ContractViolation("judge inputs must be non-empty");
  }
  const auto& tmpl = prompts::judge();
  const ChatRequest request{std::string(tmpl.system),
                            prompts::fill(tmpl.user, {{"question", question},
                                                      {"gold_answer", gold},
                                                      {"generated_answer", generated}}),
                            0.0, ModuleTag::Judge};
  std::string last_raw;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const auto exchange = chat(backend, request, ledger);
    last_raw = exchange.raw_response;
    try {
      const auto doc = extract_json(exchange.raw_response);
      if (!doc.is_object() || !doc.contains("label") || !doc.at("label").is_string()) continue;
      auto label = doc.at("label").get<std::string>();
      std::transform(label.begin(), label.end(), label.begin(),
                     [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
      if (label == "CORRECT") return Verdict::Correct;
      if (label == "WRONG") return Verdict::Wrong;
    } catch (const JsonProtocolError&) {
    }
  }
  throw JudgeProtocolError("judge did not return CORRECT or WRONG", last_raw);
}

// ---------------------------------------------------------------------------

void aggregate(EvalReport& report) {
  report.per_category.clear();
  report.overall = {};
  report.unscored = 0;
  report.errored = 0;
  double tokens = 0.0;
  std::size_t deep = 0;
  for (const auto& c : report.cases) {
    tokens += static_cast<double>(c.tokens);
    if (c.used_deep) ++deep;
    if (!c.error.empty()) ++report.errored;
    auto& cat = report.per_category[c.eval_case.category];
    if (!c.verdict) {
      ++report.unscored;
      continue;
    }
    const bool correct = *c.verdict == Verdict::Correct;
    ++cat.scored;
    ++report.overall.scored;
    if (correct) {
      ++cat.correct;
      ++report.overall.correct;
    }
  }
  const auto n = static_cast<double>(report.cases.size());
  report.avg_tokens = report.cases.empty() ? 0.0 : tokens / n;
  report.deep_ratio = report.cases.empty() ? 0.0 : static_cast<double>(deep) / n;
}

namespace {

template <typename Fn>
void for_each_case(std::size_t count, std::size_t jobs, Fn&& fn) {
  const auto workers = std::min(std::max<std::size_t>(1, jobs), count);
  std::atomic<std::size_t> next{0};
  const auto work = [&] {
    for (auto i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
  };
  if (workers <= 1) {
    work();
    return;
  }
  std::vector<std::jthread> threads;
  for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work);
}

bool ledger_has_deep(const TokenLedger& ledger) {
  return ledger.count(ModuleTag::DeepRetrieve) > 0 || ledger.count(ModuleTag::DeepGenerate) > 0;
}

void score(CaseRecord& record, ChatBackend& judge_backend) {
  if (!record.error.empty()) {
    record.verdict = Verdict::Wrong;
    return;
  }
  TokenLedger judge_ledger;
  try {
    record.verdict = judge(record.eval_case.question, record.eval_case.gold_answer,
                           record.generated, judge_backend, judge_ledger);
  } catch (const JudgeProtocolError&) {
    record.verdict.reset();
  }
  record.judge_tokens = judge_ledger.total();
}

std::optional<std::string> scope_for(const EvalCase& c, const MemoryDatabase& db,
                                     const EvalOptions& options) {
  if (!options.scope_to_dialogue || c.dialogue_id.empty()) return std::nullopt;
  if (!db.store.has_dialogue(c.dialogue_id)) {
    throw ContractViolation("dialogue '" + c.dialogue_id + "' is not in the store");
  }
  return c.dialogue_id;
}

}  // namespace

EvalReport run_eval(const std::vector<EvalCase>& cases, const MemoryDatabase& db,
                    const Config& config, const Backends& backends, const EvalOptions& options) {
  config.validate();
  EvalReport report;
  report.label = "HYMEM(k=" + std::to_string(config.k) + ")";
  report.cases.resize(cases.size());

  for_each_case(cases.size(), options.jobs, [&](std::size_t i) {
    auto& record = report.cases[i];
    record.eval_case = cases[i];
    try {
      const EngineContext ctx{db.store, db.index, backends.embedder, backends.chat, config,
                              scope_for(cases[i], db, options)};
      auto result = answer_query(cases[i].question, ctx);
      record.generated = std::move(result.answer);
      record.tokens = result.ledger.total();
      record.iterations = result.trace.iterations.size();
      record.used_deep = result.trace.used_deep_path();
      record.ledger_has_deep = ledger_has_deep(result.ledger);
    } catch (const SessionAborted& e) {
      const auto& partial = e.partial();
      record.tokens = partial.ledger.total();
      record.iterations = partial.trace.iterations.size();
      record.used_deep = partial.trace.used_deep_path();
      record.ledger_has_deep = ledger_has_deep(partial.ledger);
      record.error = e.what();
    } catch (const std::exception& e) {
      record.error = e.what();
    }
    score(record, backends.judge);
  });

  aggregate(report);
  return report;
}

EvalReport run_naive_rag(const std::vector<EvalCase>& cases, const MemoryDatabase& db,
                         std::size_t k, const Backends& backends, const EvalOptions& options) {
  if (k == 0) throw ContractViolation("naive RAG needs k >= 1");
  EvalReport report;
  report.label = "NAIVE_RAG(k=" + std::to_string(k) + ")";
  report.cases.resize(cases.size());

  for_each_case(cases.size(), options.jobs, [&](std::size_t i) {
    auto& record = report.cases[i];
    record.eval_case = cases[i];
    TokenLedger ledger;
    try {
      Config config;
      config.k = k;
      config.coarse_n = k;
      const EngineContext ctx{db.store, db.index, backends.embedder, backends.chat, config,
                              scope_for(cases[i], db, options)};
      std::vector<EventUnit> events;
      if (db.index.size() > 0) {
        const auto hits = topk_search(db.index, backends.embedder.embed(cases[i].question), k,
                                      ctx.scope_filter());
        std::vector<SummaryId> ids;
        for (const auto& h : hits) ids.push_back(h.summary_id);
        events = db.store.backtrack(ids);
      }
      const auto& tmpl = prompts::deep_generator();
      // Single-shot generation; tagged LIGHT because no deep path is involved.
      const ChatRequest request{
          std::string(tmpl.system),
          prompts::fill(tmpl.user, {{"question", cases[i].question},
                                    {"context", events.empty() ? std::string("(no memories)")
                                                               : render_events(events)},
                                    {"pool", std::string{}}}),
          0.0, ModuleTag::Light};
      std::string last_raw;
      for (int attempt = 0; attempt < 2 && record.generated.empty(); ++attempt) {
        const auto exchange = chat(backends.chat, request, ledger);
        last_raw = exchange.raw_response;
        try {
          const auto doc = extract_json(exchange.raw_response);
          if (doc.is_object() && doc.contains("answer") && doc.at("answer").is_string()) {
            record.generated = doc.at("answer").get<std::string>();
          }
        } catch (const JsonProtocolError&) {
        }
      }
      if (record.generated.empty()) record.error = "generator returned no usable answer";
      record.iterations = 1;
    } catch (const std::exception& e) {
      record.error = e.what();
    }
    record.tokens = ledger.total();
    score(record, backends.judge);
  });

  aggregate(report);
  return report;
}

std::vector<SweepRow> sweep_k(const std::vector<EvalCase>& cases, const MemoryDatabase& db,
                              const Config& config, const std::vector<std::size_t>& k_values,
                              const Backends& backends, const EvalOptions& options) {
  if (k_values.empty()) throw ContractViolation("sweep needs at least one k");
  for (const auto k : k_values) {
    if (k == 0) throw ContractViolation("sweep k values must be >= 1");
  }
  std::vector<SweepRow> rows;
  for (const auto k : k_values) {
    auto c = config;
    c.k = k;
    c.coarse_n = std::max(c.coarse_n, k);
    SweepRow row;
    row.k = k;
    row.report = run_eval(cases, db, c, backends, options);
    row.overall = row.report.overall.accuracy();
    row.avg_tokens = row.report.avg_tokens;
    row.deep_ratio = row.report.deep_ratio;
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Output

json to_json(const EvalReport& report, bool include_cases) {
  json categories = json::object();
  for (const auto& [cat, score] : report.per_category) {
    categories[std::string(to_string(cat))] = {
        {"scored", score.scored}, {"correct", score.correct}, {"accuracy", score.accuracy()}};
  }
  json out = {{"label", report.label},
              {"cases", report.cases.size()},
              {"scored", report.overall.scored},
              {"correct", report.overall.correct},
              {"overall", report.overall.accuracy()},
              {"per_category", categories},
              {"avg_tokens", report.avg_tokens},
              {"deep_ratio", report.deep_ratio},
              {"unscored", report.unscored},
              {"errored", report.errored}};
  if (report.unscored > 0) {
    out["footnote"] = std::to_string(report.unscored) +
                      " case(s) unscored after judge protocol failures; excluded from accuracy";
  }
  if (include_cases) {
    json records = json::array();
    for (const auto& c : report.cases) {
      json r = {{"question", c.eval_case.question},
                {"gold_answer", c.eval_case.gold_answer},
                {"category", to_string(c.eval_case.category)},
                {"dialogue_id", c.eval_case.dialogue_id},
                {"generated", c.generated},
                {"verdict", c.verdict ? json(to_string(*c.verdict)) : json("UNSCORED")},
                {"tokens", c.tokens},
                {"judge_tokens", c.judge_tokens},
                {"iterations", c.iterations},
                {"used_deep", c.used_deep}};
      if (!c.error.empty()) r["error"] = c.error;
      records.push_back(std::move(r));
    }
    out["records"] = std::move(records);
  }
  return out;
}

namespace {

std::string fixed(double v, int precision) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

}  // namespace

std::string format_table(const EvalReport& report) {
  std::ostringstream os;
  os << report.label << "\n";
  os << std::left << std::setw(14) << "category" << std::right << std::setw(8) << "scored"
     << std::setw(9) << "correct" << std::setw(10) << "acc(%)" << "\n";
  for (const auto& [cat, score] : report.per_category) {
    os << std::left << std::setw(14) << to_string(cat) << std::right << std::setw(8)
       << score.scored << std::setw(9) << score.correct << std::setw(10)
       << fixed(score.accuracy(), 2) << "\n";
  }
  os << std::left << std::setw(14) << "overall" << std::right << std::setw(8)
     << report.overall.scored << std::setw(9) << report.overall.correct << std::setw(10)
     << fixed(report.overall.accuracy(), 2) << "\n";
  os << "avg tokens: " << fixed(report.avg_tokens, 1) << "\n";
  os << "deep ratio: " << fixed(report.deep_ratio, 4) << "\n";
  if (report.unscored > 0) {
    os << "* " << report.unscored << " unscored case(s) excluded from accuracy\n";
  }
  if (report.errored > 0) os << "errored cases: " << report.errored << "\n";
  return os.str();
}

json to_json(const std::vector<SweepRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    out.push_back({{"k", r.k},
                   {"overall", r.overall},
                   {"avg_tokens", r.avg_tokens},
                   {"deep_ratio", r.deep_ratio},
                   {"errored", r.report.errored},
                   {"unscored", r.report.unscored}});
  }
  return out;
}

std::string format_table(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << std::right << std::setw(6) << "k" << std::setw(12) << "overall" << std::setw(14)
     << "avg_tokens" << std::setw(12) << "deep_ratio" << "\n";
  for (const auto& r : rows) {
    os << std::setw(6) << r.k << std::setw(12) << fixed(r.overall, 2) << std::setw(14)
       << fixed(r.avg_tokens, 1) << std::setw(12) << fixed(r.deep_ratio, 4) << "\n";
  }
  return os.str();
}

}  // namespace hymem
