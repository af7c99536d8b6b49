#pragma once

// Shared fixtures and independent oracles for the test suites. Nothing here
// calls into the code paths it is used to check.

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <optional>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "hymem/embedding.hpp"
#include "hymem/llm_client.hpp"
#include "hymem/types.hpp"

namespace hymem::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::mt19937_64 rng{std::random_device{}()};
    path_ = std::filesystem::temp_directory_path() /
            ("hymem-test-" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void spit(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << contents;
}

inline Embedding random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Embedding v(static_cast<Eigen::Index>(dim));
  double norm2 = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    v[i] = normal(rng);
    norm2 += static_cast<double>(v[i]) * v[i];
  }
  const double norm = std::sqrt(norm2);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = static_cast<float>(v[i] / norm);
  return v;
}

struct OracleHit {
  SummaryId id;
  double similarity;
};

/// Brute force: every dot product by a plain loop, full sort by
/// (-similarity, id), truncate to k.
inline std::vector<OracleHit> brute_force_topk(const std::vector<SummaryId>& ids,
                                               const std::vector<Embedding>& rows,
                                               const Embedding& query, std::size_t k) {
  std::vector<OracleHit> all;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    double dot = 0.0;
    for (Eigen::Index j = 0; j < query.size(); ++j) {
      dot += static_cast<double>(rows[r][j]) * static_cast<double>(query[j]);
    }
    all.push_back({ids[r], dot});
  }
  std::sort(all.begin(), all.end(), [](const OracleHit& a, const OracleHit& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.id < b.id;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

/// Dedup-in-order image of `selection` under a summary -> event map, by a
/// direct scan of the map.
inline std::vector<EventId> link_map_image(const std::map<SummaryId, EventId>& links,
                                           const std::vector<SummaryId>& selection) {
  std::vector<EventId> out;
  for (const auto sid : selection) {
    const auto event = links.at(sid);
    if (std::find(out.begin(), out.end(), event) == out.end()) out.push_back(event);
  }
  return out;
}

/// Playbook builder for scripted-backend tests.
class PlaybookBuilder {
 public:
  PlaybookBuilder& rule(std::string match, std::string response,
                        std::optional<TokenUsage> usage = std::nullopt) {
    book_.rules.push_back({std::move(match), std::move(response), usage});
    return *this;
  }
  PlaybookBuilder& fallback(std::string response, std::optional<TokenUsage> usage = std::nullopt) {
    book_.default_response = std::move(response);
    book_.default_usage = usage;
    return *this;
  }
  ScriptedPlaybook build() const { return book_; }

  /// The same playbook in the JSONL file format.
  std::string jsonl() const {
    std::string out;
    for (const auto& r : book_.rules) {
      nlohmann::json line = {{"match", r.match}, {"response", r.response}};
      if (r.usage) {
        line["prompt_tokens"] = r.usage->prompt_tokens;
        line["completion_tokens"] = r.usage->completion_tokens;
      }
      out += line.dump() + "\n";
    }
    nlohmann::json last = {{"default", book_.default_response}};
    if (book_.default_usage) {
      last["prompt_tokens"] = book_.default_usage->prompt_tokens;
      last["completion_tokens"] = book_.default_usage->completion_tokens;
    }
    out += last.dump() + "\n";
    return out;
  }

 private:
  ScriptedPlaybook book_;
};

/// Runs a shell command, capturing stdout; returns the exit status.
inline int run_command(const std::string& command, std::string* out = nullptr) {
  FILE* pipe = ::popen(command.c_str(), "r");
  if (pipe == nullptr) return -1;
  std::string captured;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe) != nullptr) captured += buf;
  const int status = ::pclose(pipe);
  if (out != nullptr) *out = std::move(captured);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

inline std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

}  // namespace hymem::testing
