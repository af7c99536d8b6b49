#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "hymem/errors.hpp"
#include "hymem/ingestion.hpp"
#include "hymem/retrieval.hpp"
#include "support.hpp"

namespace hymem {
namespace {

using testing::PlaybookBuilder;

// A small two-dialogue memory. Summaries deliberately omit the dates that
// only the Level-2 passages carry.
struct Memory {
  MemoryDatabase db{64};
  FallbackEmbedder embedder{64};

  Memory() {
    add("alice", "8 May 2023", "Alice: I adopted a puppy on 14 March 2023, his name is Rex.",
        {"Alice adopted a dog named Rex."});
    add("alice", "9 May 2023", "Alice: I moved to Lisbon last year.\nBob: Nice!",
        {"Alice lives in Lisbon.", "Bob likes Lisbon."});
    add("alice", "10 May 2023", "Bob: I started painting watercolours.",
        {"Bob paints watercolours."});
    add("carol", "1 June 2023", "Carol: My sister is a pilot.", {"Carol's sister is a pilot."});
  }

  void add(const std::string& dialogue, const std::string& time, const std::string& passage,
           const std::vector<std::string>& sentences) {
    const auto start = next_turn_[dialogue];
    const auto id = db.store.put_event(EventUnit{0, dialogue, passage, time, {start, start + 1}});
    next_turn_[dialogue] = start + 2;
    std::vector<std::string> stamped;
    for (const auto& s : sentences) stamped.push_back(stamp_sentence(time, s));
    const auto ids = db.store.put_summaries(id, stamped);
    for (std::size_t i = 0; i < ids.size(); ++i) db.index.add(ids[i], embedder.embed(stamped[i]));
  }

  EngineContext context(ChatBackend& backend, Config config = {}) {
    return EngineContext{db.store, db.index, embedder, backend, std::move(config), std::nullopt};
  }

 private:
  std::map<std::string, std::size_t> next_turn_;
};

TEST(StatusFromFinished, Mapping) {
  EXPECT_EQ(status_from_finished(0), AnswerStatus::Answered);
  EXPECT_EQ(status_from_finished(2), AnswerStatus::Escalate);
  EXPECT_THROW(status_from_finished(1), JsonProtocolError);
  EXPECT_THROW(status_from_finished(7), JsonProtocolError);
}

TEST(PartitionBatches, Examples) {
  const std::vector<int> six = {1, 2, 3, 4, 5, 6};
  const auto b = partition_batches(std::span<const int>(six), 2);
  EXPECT_EQ(b, (std::vector<std::vector<int>>{{1, 2}, {3, 4}, {5, 6}}));
  const auto c = partition_batches(std::span<const int>(six), 4);
  EXPECT_EQ(c, (std::vector<std::vector<int>>{{1, 2, 3, 4}, {5, 6}}));
  EXPECT_TRUE(partition_batches(std::span<const int>(), 3).empty());
  EXPECT_THROW(partition_batches(std::span<const int>(six), 0), ContractViolation);
}

TEST(PartitionBatches, Laws) {
  for (std::size_t m = 0; m <= 60; ++m) {
    std::vector<int> xs(m);
    std::iota(xs.begin(), xs.end(), 0);
    for (std::size_t d = 1; d <= 15; ++d) {
      const auto batches = partition_batches(std::span<const int>(xs), d);
      EXPECT_EQ(batches.size(), (m + d - 1) / d);
      std::vector<int> flat;
      for (std::size_t i = 0; i < batches.size(); ++i) {
        EXPECT_FALSE(batches[i].empty());
        EXPECT_LE(batches[i].size(), d);
        if (i + 1 < batches.size()) EXPECT_EQ(batches[i].size(), d);
        flat.insert(flat.end(), batches[i].begin(), batches[i].end());
      }
      EXPECT_EQ(flat, xs);
    }
  }
}

TEST(Rendering, LightContextAndIndicesAndEvents) {
  Memory m;
  const std::vector<SearchHit> hits = {{1, 0.9}, {0, 0.5}};
  EXPECT_EQ(render_light_context(m.db.store, hits),
            "id:1, dialogue time: 9 May 2023, Alice lives in Lisbon.\n"
            "id:0, dialogue time: 8 May 2023, Alice adopted a dog named Rex.");
  const std::vector<FilterCandidate> batch = {{4, "Alice lives in Lisbon.", "9 May 2023"},
                                              {5, "Bob likes Lisbon.", "9 May 2023"}};
  EXPECT_EQ(render_indices(batch),
            "id:4, dialogue time:9 May 2023, Alice lives in Lisbon.\n\n"
            "id:5, dialogue time:9 May 2023, Bob likes Lisbon.");
  const auto events = m.db.store.events();
  EXPECT_EQ(render_events(std::span<const EventUnit>(events).subspan(2, 1)),
            "dialogue time: 10 May 2023\nBob: I started painting watercolours.");
}

class FilterFixture : public ::testing::Test {
 protected:
  const std::vector<FilterCandidate> batch = {
      {3, "Alice went hiking on Saturday.", "2 May 2023"},
      {4, "Alice moved into a flat in Lisbon.", "9 May 2023"},
      {5, "Alice's flat is near the river.", "9 May 2023"},
      {6, "Bob bought a bicycle.", "11 May 2023"},
  };
  TokenLedger ledger;
  std::vector<ChatExchange> exchanges;
  std::vector<std::string> notes;

  std::vector<SummaryId> run(const std::string& response) {
    ScriptedBackend backend(PlaybookBuilder().rule("Indices:", response).build());
    return llm_filter("Where is Alice's home?", batch, backend, ledger, exchanges, notes);
  }
};

TEST_F(FilterFixture, SelectsRelevantIds) {
  EXPECT_EQ(run(R"({"keywords_list": [4, 5]})"), (std::vector<SummaryId>{4, 5}));
  EXPECT_TRUE(notes.empty());
  ASSERT_EQ(exchanges.size(), 1u);
  EXPECT_NE(exchanges[0].request.user_prompt.find("id:4, dialogue time:9 May 2023, Alice moved"),
            std::string::npos);
  EXPECT_EQ(ledger.count(ModuleTag::DeepRetrieve), 1u);
}

TEST_F(FilterFixture, EmptySelection) {
  EXPECT_TRUE(run(R"({"keywords_list": []})").empty());
}

TEST_F(FilterFixture, OutOfBatchIdsDropped) {
  EXPECT_EQ(run(R"({"keywords_list": [4, 99, "x", 4]})"), (std::vector<SummaryId>{4}));
  EXPECT_EQ(notes.size(), 2u);
}

TEST_F(FilterFixture, GarbageRetriedThenEmpty) {
  EXPECT_TRUE(run("I think 4 and 5").empty());
  EXPECT_EQ(ledger.count(ModuleTag::DeepRetrieve), 2u);
  EXPECT_EQ(notes.size(), 1u);
}

TEST(LightStep, AnswersOrEscalates) {
  Memory m;
  TokenLedger ledger;
  IterationTrace trace;
  MemoryPool pool;
  ScriptedBackend answer(PlaybookBuilder().rule("Memory summary:", R"({"answer":"Lisbon","finished":0})").build());
  auto out = light_step("Where does Alice live?", "Where does Alice live?", pool, m.context(answer), ledger, trace);
  EXPECT_EQ(out.status, AnswerStatus::Answered);
  EXPECT_EQ(*out.answer, "Lisbon");
  EXPECT_EQ(out.retrieved.size(), 5u);  // fewer rows than k

  ScriptedBackend escalate(PlaybookBuilder().rule("Memory summary:", R"({"answer":"","finished":2})").build());
  out = light_step("q", "q", pool, m.context(escalate), ledger, trace);
  EXPECT_EQ(out.status, AnswerStatus::Escalate);
  EXPECT_FALSE(out.answer);

  ScriptedBackend garbage(PlaybookBuilder().fallback("not json").build());
  TokenLedger l2;
  out = light_step("q", "q", pool, m.context(garbage), l2, trace);
  EXPECT_EQ(out.status, AnswerStatus::Escalate);
  EXPECT_EQ(l2.count(ModuleTag::Light), 2u);

  ScriptedBackend bad_code(PlaybookBuilder().fallback(R"({"answer":"x","finished":1})").build());
  out = light_step("q", "q", pool, m.context(bad_code), l2, trace);
  EXPECT_EQ(out.status, AnswerStatus::Escalate);
}

TEST(LightStep, EmptyIndexEscalatesWithoutCall) {
  MemoryDatabase db(16);
  FallbackEmbedder e(16);
  ScriptedBackend backend(PlaybookBuilder().fallback(R"({"answer":"x","finished":0})").build());
  EngineContext ctx{db.store, db.index, e, backend, {}, std::nullopt};
  TokenLedger ledger;
  IterationTrace trace;
  const auto out = light_step("q", "q", MemoryPool{}, ctx, ledger, trace);
  EXPECT_EQ(out.status, AnswerStatus::Escalate);
  EXPECT_EQ(ledger.entries().size(), 0u);
}

TEST(LightStep, ScopeRestrictsRetrieval) {
  Memory m;
  ScriptedBackend backend(PlaybookBuilder().fallback(R"({"answer":"x","finished":0})").build());
  auto ctx = m.context(backend);
  ctx.dialogue_scope = "carol";
  TokenLedger ledger;
  IterationTrace trace;
  const auto out = light_step("pilot", "pilot", MemoryPool{}, ctx, ledger, trace);
  EXPECT_EQ(out.retrieved, (std::vector<SummaryId>{4}));
}

TEST(DeepStep, RecoversDateOnlyInPassage) {
  Memory m;
  ScriptedBackend backend(PlaybookBuilder()
                              .rule("Indices:", R"({"keywords_list":[0]})")
                              .rule("14 March 2023", R"({"answer":"Alice adopted Rex on 14 March 2023."})")
                              .rule("Memories:", R"({"answer":"unknown"})")
                              .build());
  TokenLedger ledger;
  IterationTrace trace;
  Config config;
  config.batch_size = 2;
  const auto out = deep_step("When did Alice adopt her dog?", "When did Alice adopt her dog?", MemoryPool{},
                             m.context(backend, config), ledger, trace);
  EXPECT_EQ(out.coarse.size(), 5u);
  EXPECT_EQ(ledger.count(ModuleTag::DeepRetrieve), 3u);  // ceil(5 / 2)
  EXPECT_EQ(out.selected_summary_ids, (std::vector<SummaryId>{0}));
  EXPECT_EQ(out.backtracked_event_ids, (std::vector<EventId>{0}));
  EXPECT_FALSE(out.used_fallback);
  EXPECT_NE(out.answer.find("14 March 2023"), std::string::npos);
}

TEST(DeepStep, EmptySelectionFallsBackToCoarseTopK) {
  Memory m;
  ScriptedBackend backend(PlaybookBuilder()
                              .rule("Indices:", R"({"keywords_list":[]})")
                              .rule("Memories:", R"({"answer":"something"})")
                              .build());
  Config config;
  config.k = 2;
  config.coarse_n = 4;
  TokenLedger ledger;
  IterationTrace trace;
  const auto out = deep_step("Lisbon", "Lisbon", MemoryPool{}, m.context(backend, config), ledger, trace);
  EXPECT_TRUE(out.used_fallback);
  EXPECT_TRUE(out.selected_summary_ids.empty());
  const std::vector<SummaryId> top2(out.coarse.begin(), out.coarse.begin() + 2);
  EXPECT_EQ(out.backtracked_event_ids, m.db.store.backtrack_ids(top2));
  EXPECT_TRUE(trace.deep_fallback);
}

TEST(DeepStep, GeneratorGarbageThrows) {
  Memory m;
  ScriptedBackend backend(PlaybookBuilder().rule("Indices:", R"({"keywords_list":[1]})").fallback("nope").build());
  TokenLedger ledger;
  IterationTrace trace;
  EXPECT_THROW(deep_step("q", "q", MemoryPool{}, m.context(backend), ledger, trace), DeepProtocolError);
  EXPECT_EQ(ledger.count(ModuleTag::DeepGenerate), 2u);
}

TEST(DeepStep, ConcurrentBatchesKeepOrder) {
  Memory m;
  for (int i = 0; i < 40; ++i) {
    m.add("bulk", "day " + std::to_string(i), "X: filler " + std::to_string(i),
          {"filler fact " + std::to_string(i)});
  }
  // select every candidate: order must equal the coarse order regardless of thread timing
  std::string all = "[";
  for (int i = 0; i < 60; ++i) all += (i ? "," : "") + std::to_string(i);
  all += "]";
  ScriptedBackend backend(PlaybookBuilder()
                              .rule("Indices:", R"({"keywords_list":)" + all + "}")
                              .rule("Memories:", R"({"answer":"a"})")
                              .build());
  Config config;
  config.batch_size = 3;
  config.max_in_flight = 1;
  TokenLedger l0;
  IterationTrace t0;
  const auto sequential = deep_step("filler", "filler", MemoryPool{}, m.context(backend, config), l0, t0);
  auto as_set = sequential.selected_summary_ids;
  auto coarse = sequential.coarse;
  std::sort(as_set.begin(), as_set.end());
  std::sort(coarse.begin(), coarse.end());
  EXPECT_EQ(as_set, coarse);

  config.max_in_flight = 8;
  for (int rep = 0; rep < 10; ++rep) {
    TokenLedger ledger;
    IterationTrace trace;
    const auto out = deep_step("filler", "filler", MemoryPool{}, m.context(backend, config), ledger, trace);
    EXPECT_EQ(out.selected_summary_ids, sequential.selected_summary_ids);
    EXPECT_EQ(out.backtracked_event_ids, sequential.backtracked_event_ids);
    EXPECT_EQ(ledger.total(), l0.total());
    EXPECT_EQ(ledger.count(ModuleTag::DeepRetrieve), 10u);
  }
}

TEST(Reflect, Verdicts) {
  TokenLedger ledger;
  IterationTrace trace;
  ScriptedBackend done(PlaybookBuilder().fallback(R"({"finished":1})").build());
  EXPECT_TRUE(reflect("Lisbon", "Where?", done, ledger, trace).done);

  ScriptedBackend more(PlaybookBuilder().fallback(R"({"finished":0,"new_question":"Which city?"})").build());
  const auto v = reflect("dunno", "Where?", more, ledger, trace);
  EXPECT_FALSE(v.done);
  EXPECT_EQ(v.new_question, "Which city?");

  ScriptedBackend missing(PlaybookBuilder().fallback(R"({"finished":0})").build());
  TokenLedger l2;
  EXPECT_TRUE(reflect("a", "q", missing, l2, trace).done);
  EXPECT_EQ(l2.count(ModuleTag::Reflect), 2u);

  EXPECT_THROW(reflect("", "q", done, ledger, trace), ContractViolation);
}

TEST(AnswerQuery, LightAnswerAccepted) {
  Memory m;
  ScriptedBackend backend(PlaybookBuilder()
                              .rule("Memory summary:", R"({"answer":"Lisbon","finished":0})")
                              .rule("Model response:", R"({"finished":1})")
                              .build());
  const auto r = answer_query("Where does Alice live?", m.context(backend));
  EXPECT_EQ(r.answer, "Lisbon");
  ASSERT_EQ(r.trace.iterations.size(), 1u);
  EXPECT_EQ(r.trace.iterations[0].path, PathTaken::Light);
  EXPECT_FALSE(r.trace.used_deep_path());
  EXPECT_FALSE(r.trace.max_iterations_reached);
  EXPECT_EQ(r.ledger.count(ModuleTag::Light), 1u);
  EXPECT_EQ(r.ledger.count(ModuleTag::Reflect), 1u);
  EXPECT_EQ(r.ledger.count(ModuleTag::DeepRetrieve) + r.ledger.count(ModuleTag::DeepGenerate), 0u);
}

TEST(AnswerQuery, EscalationToDeep) {
  Memory m;
  ScriptedBackend backend(PlaybookBuilder()
                              .rule("Memory summary:", R"({"answer":"","finished":2})")
                              .rule("Indices:", R"({"keywords_list":[0]})")
                              .rule("Memories:", R"({"answer":"14 March 2023"})")
                              .rule("Model response:", R"({"finished":1})")
                              .build());
  const auto r = answer_query("When did Alice adopt Rex?", m.context(backend));
  EXPECT_EQ(r.answer, "14 March 2023");
  ASSERT_EQ(r.trace.iterations.size(), 1u);
  EXPECT_EQ(r.trace.iterations[0].path, PathTaken::LightThenDeep);
  EXPECT_EQ(r.trace.iterations[0].backtracked, (std::vector<EventId>{0}));
  EXPECT_EQ(r.ledger.count(ModuleTag::DeepRetrieve), 1u);  // 5 candidates, d = 10
  EXPECT_EQ(r.ledger.count(ModuleTag::DeepGenerate), 1u);
}

TEST(AnswerQuery, ReflectionLoopBoundedByT) {
  Memory m;
  ScriptedBackend backend(PlaybookBuilder()
                              .rule("Memory summary:", R"({"answer":"not sure","finished":0})")
                              .rule("Model response:", R"({"finished":0,"new_question":"Try again: where?"})")
                              .build());
  const auto r = answer_query("Where?", m.context(backend));
  ASSERT_EQ(r.trace.iterations.size(), 3u);
  EXPECT_TRUE(r.trace.max_iterations_reached);
  EXPECT_EQ(r.trace.iterations[0].query, "Where?");
  EXPECT_EQ(r.trace.iterations[1].query, "Try again: where?");
  EXPECT_EQ(r.ledger.count(ModuleTag::Light), 3u);
  EXPECT_EQ(r.ledger.count(ModuleTag::Reflect), 3u);
  // the pool feeds earlier findings into later prompts
  const auto& third = r.trace.iterations[2].exchanges.front().request.user_prompt;
  EXPECT_NE(third.find("Previous finding 1: Q: Try again: where? A: not sure"), std::string::npos);
  const auto j = to_json(r.trace, r.ledger, false);
  EXPECT_EQ(j["flags"], nlohmann::json::array({"MAX_ITERATIONS"}));
  EXPECT_FALSE(j["iterations"][0]["exchanges"][0].contains("user_prompt"));
  EXPECT_TRUE(to_json(r.trace, r.ledger, true)["iterations"][0]["exchanges"][0].contains("user_prompt"));
}

TEST(AnswerQuery, DeepGarbageAbortsWithPartialTrace) {
  Memory m;
  ScriptedBackend backend(PlaybookBuilder()
                              .rule("Memory summary:", R"({"finished":2})")
                              .rule("Indices:", R"({"keywords_list":[]})")
                              .fallback("garbage")
                              .build());
  try {
    answer_query("q", m.context(backend));
    FAIL();
  } catch (const SessionAborted& e) {
    EXPECT_EQ(e.partial().trace.iterations.size(), 1u);
    EXPECT_EQ(e.partial().ledger.count(ModuleTag::DeepGenerate), 2u);
    EXPECT_FALSE(e.partial().trace.error.empty());
  }
}

// Random playbooks: every step may answer, escalate, loop or emit garbage.
TEST(AnswerQuery, FuzzedPlaybooksKeepInvariants) {
  Memory m;
  std::mt19937_64 rng(2024);
  const std::vector<std::string> light = {R"({"answer":"L","finished":0})", R"({"finished":2})", "junk",
                                          R"({"finished":5})"};
  const std::vector<std::string> filter = {R"({"keywords_list":[0,1,2]})", R"({"keywords_list":[]})",
                                           R"({"keywords_list":[77]})", "junk"};
  const std::vector<std::string> deep = {R"({"answer":"D"})", R"({"answer":"D"})", "junk"};
  const std::vector<std::string> refl = {R"({"finished":1})", R"({"finished":0,"new_question":"again"})",
                                         "junk"};
  auto pick = [&](const std::vector<std::string>& xs) {
    return xs[std::uniform_int_distribution<std::size_t>(0, xs.size() - 1)(rng)];
  };
  for (int trial = 0; trial < 200; ++trial) {
    ScriptedBackend backend(PlaybookBuilder()
                                .rule("Memory summary:", pick(light))
                                .rule("Indices:", pick(filter))
                                .rule("Memories:", pick(deep))
                                .rule("Model response:", pick(refl))
                                .build());
    Config config;
    config.max_iterations = 1 + trial % 4;
    config.batch_size = 1 + trial % 3;
    try {
      const auto r = answer_query("Where does Alice live?", m.context(backend, config));
      EXPECT_GE(r.trace.iterations.size(), 1u);
      EXPECT_LE(r.trace.iterations.size(), config.max_iterations);
      EXPECT_FALSE(r.answer.empty());
      EXPECT_EQ(r.ledger.count(ModuleTag::Reflect) >= r.trace.iterations.size(), true);
      std::int64_t sum = 0;
      for (auto tag : kAllModuleTags) sum += r.ledger.subtotal(tag);
      EXPECT_EQ(sum, r.ledger.total());
      for (const auto& it : r.trace.iterations) {
        if (it.path == PathTaken::Light) EXPECT_TRUE(it.coarse.empty());
        for (auto sid : it.selected) {
          EXPECT_NE(std::find(it.coarse.begin(), it.coarse.end(), sid), it.coarse.end());
        }
      }
      EXPECT_EQ(r.trace.max_iterations_reached, !r.trace.iterations.back().reflection_done);
    } catch (const SessionAborted& e) {
      EXPECT_LE(e.partial().trace.iterations.size(), config.max_iterations);
    }
  }
}

}  // namespace
}  // namespace hymem
