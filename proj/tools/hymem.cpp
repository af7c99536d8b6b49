// Command-line entry point: ingest corpora, answer questions, run
// evaluations and k-sweeps, and inspect stores.
//
// Exit codes: 0 success, 1 runtime or partial failure, 2 usage/config error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hymem/config.hpp"
#include "hymem/errors.hpp"
#include "hymem/eval.hpp"
#include "hymem/ingestion.hpp"
#include "hymem/retrieval.hpp"
#include "hymem/store.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeFailure = 1;
constexpr int kUsage = 2;

/// A usage/config problem detected after argument parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_text(const fs::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError(std::string("cannot read ") + what + " " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

hymem::Config config_from(const std::string& path) {
  if (path.empty()) {
    hymem::Config config;
    config.embedding_backend = hymem::BackendDescriptor::parse("fallback");
    hymem::apply_environment(config);
    return config;
  }
  try {
    return hymem::load_config(path);
  } catch (const hymem::ConfigError& e) {
    throw UsageError(e.what());
  }
}

hymem::MemoryDatabase open_store(const std::string& path) {
  if (!hymem::MemoryDatabase::exists(path)) {
    throw UsageError("no store at " + path);
  }
  return hymem::MemoryDatabase::load(path);
}

void write_out(const std::string& path, const json& doc) {
  if (path.empty()) return;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path);
  out << doc.dump(2) << "\n";
}

// ---------------------------------------------------------------------------

struct IngestArgs {
  std::string corpus;
  std::string store;
  std::string config;
  std::string mode = "window";
  std::size_t window = 20;
  std::size_t overlap = 2;
};

int cmd_ingest(const IngestArgs& args) {
  const auto config = config_from(args.config);
  const auto corpus = read_text(args.corpus, "corpus");

  hymem::SegmentationOptions options;
  options.mode = args.mode == "llm" ? hymem::SegmentationMode::Llm : hymem::SegmentationMode::Window;
  options.window = args.window;
  options.overlap_turns = args.overlap;
  if (options.window < 2 || options.overlap_turns >= options.window) {
    throw UsageError("--window must be >= 2 and --overlap smaller than --window");
  }

  hymem::MemoryDatabase db(config.embedding_dim);
  if (hymem::MemoryDatabase::exists(args.store)) {
    db = hymem::MemoryDatabase::load(args.store);
    if (db.index.dimension() != config.embedding_dim) {
      throw UsageError("store embedding_dim " + std::to_string(db.index.dimension()) +
                       " differs from config embedding_dim " +
                       std::to_string(config.embedding_dim));
    }
  }

  std::unique_ptr<hymem::ChatBackend> chat;
  std::unique_ptr<hymem::EmbeddingProvider> embedder;
  try {
    chat = hymem::make_chat_backend(config.chat_backend, config);
    embedder = hymem::make_embedding_provider(config.embedding_backend, config);
  } catch (const hymem::ConfigError& e) {
    throw UsageError(e.what());
  }

  bool any_failed = false;
  std::istringstream lines(corpus);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    hymem::RawDialogue dialogue;
    try {
      dialogue = hymem::parse_dialogue_line(line);
    } catch (const std::exception& e) {
      std::cerr << "line " << line_no << ": skipped: " << e.what() << "\n";
      any_failed = true;
      continue;
    }
    hymem::TokenLedger ledger;
    try {
      const auto report = hymem::ingest_dialogue(dialogue, options, db, *chat, *embedder, ledger);
      std::cout << "dialogue " << report.dialogue_id << ": events=" << report.events_created
                << " summaries=" << report.summaries_created << " tokens=" << report.tokens_spent;
      if (!report.events_without_summaries.empty()) {
        std::cout << " level2_only_events=" << report.events_without_summaries.size();
      }
      std::cout << "\n";
      if (!report.segmentation_note.empty()) {
        std::cerr << "dialogue " << report.dialogue_id << ": " << report.segmentation_note << "\n";
      }
    } catch (const std::exception& e) {
      std::cerr << "dialogue " << dialogue.dialogue_id << ": failed: " << e.what() << "\n";
      any_failed = true;
    }
  }

  db.save(args.store);
  return any_failed ? kRuntimeFailure : kOk;
}

// ---------------------------------------------------------------------------

struct QueryArgs {
  std::string store;
  std::string question;
  std::string config;
  std::string dialogue;
  bool trace = false;
  bool trace_full = false;
};

int cmd_query(const QueryArgs& args) {
  const auto config = config_from(args.config);
  const auto db = open_store(args.store);
  std::unique_ptr<hymem::ChatBackend> chat;
  std::unique_ptr<hymem::EmbeddingProvider> embedder;
  try {
    chat = hymem::make_chat_backend(config.chat_backend, config);
    embedder = hymem::make_embedding_provider(config.embedding_backend, config);
  } catch (const hymem::ConfigError& e) {
    throw UsageError(e.what());
  }
  if (embedder->dimension() != db.index.dimension()) {
    throw UsageError("config embedding_dim does not match the store");
  }

  std::optional<std::string> scope;
  if (!args.dialogue.empty()) scope = args.dialogue;
  const hymem::EngineContext ctx{db.store, db.index, *embedder, *chat, config, scope};
  const bool want_trace = args.trace || args.trace_full;
  try {
    const auto result = hymem::answer_query(args.question, ctx);
    if (want_trace) {
      auto doc = hymem::to_json(result.trace, result.ledger, args.trace_full);
      doc["answer"] = result.answer;
      std::cout << doc.dump(2) << "\n";
    } else {
      std::cout << result.answer << "\n";
    }
    return kOk;
  } catch (const hymem::SessionAborted& e) {
    std::cerr << "query failed: " << e.what() << "\n";
    if (want_trace) {
      std::cout << hymem::to_json(e.partial().trace, e.partial().ledger, args.trace_full).dump(2)
                << "\n";
    }
    return kRuntimeFailure;
  }
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string cases;
  std::string store;
  std::string config;
  std::string baseline = "hymem";
  std::string k_values;
  std::string out;
  std::size_t jobs = 1;
  bool no_scope = false;
};

struct Providers {
  std::unique_ptr<hymem::ChatBackend> chat;
  std::unique_ptr<hymem::ChatBackend> judge;
  std::unique_ptr<hymem::EmbeddingProvider> embedder;

  hymem::Backends view() { return {*chat, judge ? *judge : *chat, *embedder}; }
};

Providers make_providers(const hymem::Config& config) {
  Providers p;
  try {
    p.chat = hymem::make_chat_backend(config.chat_backend, config);
    if (config.judge_backend) p.judge = hymem::make_chat_backend(*config.judge_backend, config);
    p.embedder = hymem::make_embedding_provider(config.embedding_backend, config);
  } catch (const hymem::ConfigError& e) {
    throw UsageError(e.what());
  }
  return p;
}

std::vector<hymem::EvalCase> load_cases(const std::string& path) {
  try {
    return hymem::parse_cases(read_text(path, "case file"));
  } catch (const hymem::ContractViolation& e) {
    throw UsageError(e.what());
  }
}

int cmd_eval(const EvalArgs& args) {
  auto config = config_from(args.config);
  config.max_in_flight = std::max(config.max_in_flight, args.jobs);
  const auto cases = load_cases(args.cases);
  const auto db = open_store(args.store);
  auto providers = make_providers(config);
  const hymem::EvalOptions options{args.jobs, !args.no_scope};

  hymem::EvalReport report;
  if (args.baseline == "hymem") {
    report = hymem::run_eval(cases, db, config, providers.view(), options);
  } else if (args.baseline.rfind("naive:", 0) == 0) {
    std::size_t k = 0;
    try {
      k = std::stoul(args.baseline.substr(6));
    } catch (const std::exception&) {
      throw UsageError("--baseline naive:<k> needs an integer k");
    }
    if (k == 0) throw UsageError("--baseline naive:<k> needs k >= 1");
    report = hymem::run_naive_rag(cases, db, k, providers.view(), options);
  } else {
    throw UsageError("--baseline must be 'hymem' or 'naive:<k>'");
  }

  std::cout << hymem::format_table(report);
  write_out(args.out, hymem::to_json(report));
  return report.errored > 0 ? kRuntimeFailure : kOk;
}

std::vector<std::size_t> parse_k_values(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t pos = 0;
      const auto k = std::stoul(item, &pos);
      if (pos != item.size() || k == 0) throw std::invalid_argument(item);
      out.push_back(k);
    } catch (const std::exception&) {
      throw UsageError("--k-values expects a comma-separated list of positive integers");
    }
  }
  if (out.empty()) throw UsageError("--k-values must not be empty");
  return out;
}

int cmd_sweep(const EvalArgs& args) {
  auto config = config_from(args.config);
  config.max_in_flight = std::max(config.max_in_flight, args.jobs);
  const auto k_values = parse_k_values(args.k_values);
  const auto cases = load_cases(args.cases);
  const auto db = open_store(args.store);
  auto providers = make_providers(config);
  const hymem::EvalOptions options{args.jobs, !args.no_scope};

  const auto rows = hymem::sweep_k(cases, db, config, k_values, providers.view(), options);
  std::cout << hymem::format_table(rows);
  write_out(args.out, hymem::to_json(rows));
  const bool errored = std::any_of(rows.begin(), rows.end(),
                                   [](const hymem::SweepRow& r) { return r.report.errored > 0; });
  return errored ? kRuntimeFailure : kOk;
}

// ---------------------------------------------------------------------------

struct InspectArgs {
  std::string store;
  std::optional<hymem::EventId> event;
  std::optional<hymem::SummaryId> summary;
};

int cmd_inspect(const InspectArgs& args) {
  const auto db = open_store(args.store);
  if (args.event) {
    const auto e = db.store.event(*args.event);
    if (!e) {
      std::cerr << "no event " << *args.event << "\n";
      return kRuntimeFailure;
    }
    json summaries = json::array();
    for (const auto sid : db.store.summaries_of(e->event_id)) {
      summaries.push_back({{"summary_id", sid}, {"text", db.store.summary(sid)->text}});
    }
    std::cout << json{{"event_id", e->event_id},
                      {"dialogue_id", e->dialogue_id},
                      {"time_label", e->time_label},
                      {"turn_range", {e->turn_range.start, e->turn_range.end}},
                      {"passage", e->passage},
                      {"summaries", summaries}}
                     .dump(2)
              << "\n";
    return kOk;
  }
  if (args.summary) {
    const auto s = db.store.summary(*args.summary);
    if (!s) {
      std::cerr << "no summary " << *args.summary << "\n";
      return kRuntimeFailure;
    }
    std::cout << json{{"summary_id", s->summary_id}, {"event_id", s->event_id}, {"text", s->text}}
                     .dump(2)
              << "\n";
    return kOk;
  }

  std::map<std::string, std::pair<std::size_t, std::size_t>> per_dialogue;
  for (const auto& e : db.store.events()) {
    auto& counts = per_dialogue[e.dialogue_id];
    ++counts.first;
    counts.second += db.store.summaries_of(e.event_id).size();
  }
  json dialogues = json::object();
  for (const auto& [id, counts] : per_dialogue) {
    dialogues[id] = {{"events", counts.first}, {"summaries", counts.second}};
  }
  std::cout << json{{"events", db.store.event_count()},
                    {"summaries", db.store.summary_count()},
                    {"index_rows", db.index.size()},
                    {"embedding_dim", db.index.dimension()},
                    {"next_event_id", db.store.next_event_id()},
                    {"next_summary_id", db.store.next_summary_id()},
                    {"dialogues", dialogues}}
                   .dump(2)
            << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-tier long-term memory for conversational agents"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "Segment, summarize and store a JSONL corpus");
  ingest_cmd->add_option("--corpus", ingest.corpus, "Dialogue corpus (JSONL)")->required();
  ingest_cmd->add_option("--store", ingest.store, "Store directory")->required();
  ingest_cmd->add_option("--config", ingest.config, "Config file")->required();
  ingest_cmd->add_option("--mode", ingest.mode, "Segmentation mode")
      ->check(CLI::IsMember({"window", "llm"}));
  ingest_cmd->add_option("--window", ingest.window, "Turns per window");
  ingest_cmd->add_option("--overlap", ingest.overlap, "Turns shared by consecutive events");

  QueryArgs query;
  auto* query_cmd = app.add_subcommand("query", "Answer one question from a store");
  query_cmd->add_option("--store", query.store, "Store directory")->required();
  query_cmd->add_option("--question", query.question, "Question text")->required();
  query_cmd->add_option("--config", query.config, "Config file");
  query_cmd->add_option("--dialogue", query.dialogue, "Restrict retrieval to one dialogue");
  query_cmd->add_flag("--trace", query.trace, "Print the session trace as JSON");
  query_cmd->add_flag("--trace-full", query.trace_full, "Trace including rendered prompts");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a case file with LLM-as-judge");
  EvalArgs sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "Evaluate once per light retrieval count k");
  for (auto [cmd, a] : {std::pair{eval_cmd, &eval}, std::pair{sweep_cmd, &sweep}}) {
    cmd->add_option("--cases", a->cases, "Case file (JSONL)")->required();
    cmd->add_option("--store", a->store, "Store directory")->required();
    cmd->add_option("--config", a->config, "Config file");
    cmd->add_option("--out", a->out, "Write the JSON report here");
    cmd->add_option("--jobs", a->jobs, "Concurrent cases")->check(CLI::PositiveNumber);
    cmd->add_flag("--no-scope", a->no_scope, "Retrieve across all dialogues");
  }
  eval_cmd->add_option("--baseline", eval.baseline, "hymem or naive:<k>");
  sweep_cmd->add_option("--k-values", sweep.k_values, "Comma-separated k values")->required();

  InspectArgs inspect;
  auto* inspect_cmd = app.add_subcommand("inspect", "Summarize a store or show one record");
  inspect_cmd->add_option("--store", inspect.store, "Store directory")->required();
  inspect_cmd->add_option("--event", inspect.event, "Show one event");
  inspect_cmd->add_option("--summary", inspect.summary, "Show one summary");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*ingest_cmd) return cmd_ingest(ingest);
    if (*query_cmd) return cmd_query(query);
    if (*eval_cmd) return cmd_eval(eval);
    if (*sweep_cmd) return cmd_sweep(sweep);
    if (*inspect_cmd) return cmd_inspect(inspect);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const hymem::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
  return kUsage;
}
