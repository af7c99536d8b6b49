#include <gtest/gtest.h>

#include "hymem/errors.hpp"
#include "hymem/eval.hpp"
#include "hymem/ingestion.hpp"
#include "support.hpp"

namespace hymem {
namespace {

using testing::PlaybookBuilder;

TEST(Judge, LabelsCaseInsensitive) {
  TokenLedger ledger;
  ScriptedBackend yes(PlaybookBuilder().fallback(R"({"label": "CORRECT"})").build());
  EXPECT_EQ(judge("q", "Paris", "Paris, France", yes, ledger), Verdict::Correct);
  ScriptedBackend no(PlaybookBuilder().fallback(R"({"label": "wrong"})").build());
  EXPECT_EQ(judge("q", "Paris", "Rome", no, ledger), Verdict::Wrong);
  ScriptedBackend prose(PlaybookBuilder().fallback("Verdict: {\"label\": \"Correct\"}").build());
  EXPECT_EQ(judge("q", "a", "a", prose, ledger), Verdict::Correct);
  EXPECT_EQ(ledger.subtotal(ModuleTag::Judge), ledger.total());
}

TEST(Judge, GarbageRetriedThenProtocolError) {
  TokenLedger ledger;
  ScriptedBackend maybe(PlaybookBuilder().fallback(R"({"label": "MAYBE"})").build());
  EXPECT_THROW(judge("q", "a", "b", maybe, ledger), JudgeProtocolError);
  EXPECT_EQ(ledger.count(ModuleTag::Judge), 2u);
}

TEST(ParseCases, Lines) {
  const auto cases = parse_cases(
      "{\"question\":\"Q1\",\"answer\":\"A1\",\"category\":\"temporal\",\"dialogue_id\":\"d\"}\n\n"
      "{\"question\":\"Q2\",\"answer\":2022,\"category\":\"weird\"}\n");
  ASSERT_EQ(cases.size(), 2u);
  EXPECT_EQ(cases[0].category, Category::Temporal);
  EXPECT_EQ(cases[1].gold_answer, "2022");
  EXPECT_EQ(cases[1].category, Category::Other);
  EXPECT_THROW(parse_cases("{\"question\":\"\",\"answer\":\"x\"}"), ContractViolation);
  EXPECT_THROW(parse_cases("[1]"), ContractViolation);
}

CaseRecord record(Category cat, std::optional<Verdict> v, std::int64_t tokens, bool deep) {
  CaseRecord r;
  r.eval_case.category = cat;
  r.verdict = v;
  r.tokens = tokens;
  r.used_deep = deep;
  return r;
}

TEST(Aggregate, AccuracyExcludesUnscored) {
  EvalReport report;
  report.cases = {record(Category::SingleHop, Verdict::Correct, 100, false),
                  record(Category::SingleHop, Verdict::Wrong, 100, true),
                  record(Category::Temporal, Verdict::Correct, 100, false),
                  record(Category::Temporal, Verdict::Correct, 300, false),
                  record(Category::Temporal, std::nullopt, 400, false)};
  aggregate(report);
  EXPECT_EQ(report.overall.scored, 4u);
  EXPECT_DOUBLE_EQ(report.overall.accuracy(), 75.0);
  EXPECT_DOUBLE_EQ(report.per_category[Category::SingleHop].accuracy(), 50.0);
  EXPECT_DOUBLE_EQ(report.per_category[Category::Temporal].accuracy(), 100.0);
  EXPECT_EQ(report.unscored, 1u);
  EXPECT_DOUBLE_EQ(report.avg_tokens, 200.0);
  EXPECT_DOUBLE_EQ(report.deep_ratio, 0.2);
  EXPECT_NE(format_table(report).find("75.00"), std::string::npos);
  EXPECT_TRUE(to_json(report).contains("footnote"));
}

// Five dialogues, one fact each.
struct Corpus {
  MemoryDatabase db{64};
  FallbackEmbedder embedder{64};
  std::vector<EvalCase> cases;

  Corpus() {
    ScriptedBackend summarizer(PlaybookBuilder()
                                   .rule("Alice", R"({"keywords":["Alice likes tea."]})")
                                   .rule("Bob", R"({"keywords":["Bob owns a boat."]})")
                                   .rule("Carol", R"({"keywords":["Carol flies planes."]})")
                                   .rule("Dan", R"({"keywords":["Dan sings."]})")
                                   .fallback(R"({"keywords":["Eve visited Oslo."]})")
                                   .build());
    TokenLedger ledger;
    const std::vector<std::pair<std::string, std::string>> facts = {
        {"Alice", "I like green tea"}, {"Bob", "my boat is blue"}, {"Carol", "I fly planes"},
        {"Dan", "I sing tenor"},       {"Eve", "I went to Oslo on 3 July 2022"}};
    for (const auto& [who, text] : facts) {
      RawDialogue d{"dlg-" + who, {{0, who, "5 May 2023", text}, {1, "Friend", "5 May 2023", "ok"}}};
      ingest_dialogue(d, {}, db, summarizer, embedder, ledger);
    }
    cases = {{"What does Alice drink?", "green tea", Category::SingleHop, "dlg-Alice"},
             {"What colour is Bob's boat?", "blue", Category::SingleHop, "dlg-Bob"},
             {"What does Carol do?", "flies planes", Category::OpenDomain, "dlg-Carol"},
             {"What does Dan do?", "sings tenor", Category::MultiHop, "dlg-Dan"},
             {"When did Eve go to Oslo?", "3 July 2022", Category::Temporal, "dlg-Eve"}};
  }
};

// Light answers everything except the Oslo question, which escalates.
ScriptedBackend answering_backend() {
  return ScriptedBackend(PlaybookBuilder()
                             .rule("Model response:", R"({"finished":1})")
                             .rule("Indices:", R"({"keywords_list":[]})")
                             .rule("Memories:", R"({"answer":"3 July 2022"})")
                             .rule("Question: When did Eve", R"({"finished":2})")
                             .rule("Question: What colour", R"({"answer":"red","finished":0})")
                             .fallback(R"({"answer":"the right thing","finished":0})")
                             .build());
}

ScriptedBackend judge_backend() {
  return ScriptedBackend(PlaybookBuilder()
                             .rule("Generated answer: red", R"({"label":"WRONG"})")
                             .fallback(R"({"label":"CORRECT"})")
                             .build());
}

TEST(RunEval, ScoresTokensAndDeepRatio) {
  Corpus corpus;
  auto chat = answering_backend();
  auto judge_b = judge_backend();
  const Backends backends{chat, judge_b, corpus.embedder};
  const auto report = run_eval(corpus.cases, corpus.db, Config{}, backends);
  EXPECT_EQ(report.label, "HYMEM(k=10)");
  EXPECT_DOUBLE_EQ(report.overall.accuracy(), 80.0);
  EXPECT_DOUBLE_EQ(report.deep_ratio, 0.2);
  for (const auto& c : report.cases) {
    EXPECT_EQ(c.used_deep, c.ledger_has_deep);
    EXPECT_GT(c.judge_tokens, 0);
  }
  EXPECT_EQ(report.cases[4].generated, "3 July 2022");

  // concurrent evaluation produces the same report
  const auto parallel = run_eval(corpus.cases, corpus.db, Config{}, backends, {4, true});
  EXPECT_EQ(to_json(parallel).dump(), to_json(report).dump());
}

TEST(RunEval, EngineErrorsCountAsWrong) {
  Corpus corpus;
  ScriptedBackend chat(PlaybookBuilder().rule("Memory summary:", R"({"finished":2})")
                           .rule("Indices:", R"({"keywords_list":[]})")
                           .fallback("garbage")
                           .build());
  auto judge_b = judge_backend();
  const auto report = run_eval(corpus.cases, corpus.db, Config{}, {chat, judge_b, corpus.embedder});
  EXPECT_EQ(report.errored, 5u);
  EXPECT_EQ(report.overall.scored, 5u);
  EXPECT_EQ(report.overall.correct, 0u);
  EXPECT_DOUBLE_EQ(report.deep_ratio, 1.0);
}

TEST(NaiveRag, RejectsZeroK) {
  Corpus corpus;
  auto chat = answering_backend();
  auto judge_b = judge_backend();
  EXPECT_THROW(run_naive_rag(corpus.cases, corpus.db, 0, {chat, judge_b, corpus.embedder}), ContractViolation);
}

TEST(NaiveRag, PassagesReachTheGenerator) {
  Corpus corpus;
  // answers correctly only when the Level-2 passage carrying the date is in context
  ScriptedBackend chat(PlaybookBuilder()
                           .rule("I went to Oslo on 3 July 2022", R"({"answer":"3 July 2022"})")
                           .fallback(R"({"answer":"no idea"})")
                           .build());
  ScriptedBackend judge_b(PlaybookBuilder().rule("Generated answer: 3 July 2022", R"({"label":"CORRECT"})")
                              .fallback(R"({"label":"WRONG"})")
                              .build());
  const auto report = run_naive_rag(corpus.cases, corpus.db, 1, {chat, judge_b, corpus.embedder});
  EXPECT_EQ(report.label, "NAIVE_RAG(k=1)");
  EXPECT_EQ(report.cases[4].generated, "3 July 2022");
  EXPECT_EQ(report.overall.correct, 1u);
  EXPECT_DOUBLE_EQ(report.deep_ratio, 0.0);
}

TEST(SweepK, OneRowPerK) {
  Corpus corpus;
  auto chat = answering_backend();
  auto judge_b = judge_backend();
  const auto rows = sweep_k(corpus.cases, corpus.db, Config{}, {1, 5, 40}, {chat, judge_b, corpus.embedder});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].k, 1u);
  EXPECT_EQ(rows[2].k, 40u);  // N raised to k
  EXPECT_EQ(rows[2].report.label, "HYMEM(k=40)");
  EXPECT_EQ(to_json(rows).size(), 3u);
  EXPECT_THROW(sweep_k(corpus.cases, corpus.db, Config{}, {}, {chat, judge_b, corpus.embedder}),
               ContractViolation);
}

}  // namespace
}  // namespace hymem
