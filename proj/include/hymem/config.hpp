#pragma once

#include <filesystem>
#include <optional>
#include <string>

namespace hymem {

/// Where a chat or embedding provider lives.
///
/// Textual forms (as used in config files):
///   scripted:<playbook.jsonl>      offline chat playbook
///   remote:<model>@<base_url>      chat-completions / embeddings endpoint
///   fallback                       hashed bag-of-words embedder
struct BackendDescriptor {
  enum class Kind { Scripted, Remote, Fallback };

  Kind kind = Kind::Fallback;
  std::string model;
  std::string base_url;
  std::filesystem::path playbook;

  static BackendDescriptor parse(const std::string& text,
                                 const std::filesystem::path& relative_to = {});
  std::string to_string() const;
};

struct Config {
  std::size_t k = 10;              // light retrieval count
  std::size_t coarse_n = 30;       // deep coarse recall count (N)
  std::size_t batch_size = 10;     // LLM self-retrieval batch size (d)
  std::size_t max_iterations = 3;  // reflection bound (T)
  std::size_t embedding_dim = 256;
  std::size_t max_in_flight = 4;

  BackendDescriptor chat_backend{BackendDescriptor::Kind::Scripted, {}, {}, {}};
  BackendDescriptor embedding_backend{};
  std::optional<BackendDescriptor> judge_backend;
  std::string api_key;

  /// Throws ConfigError on any broken bound (k >= 1, N >= k, d >= 1, T >= 1,
  /// max_in_flight >= 1, embedding_dim >= 1).
  void validate() const;
};

/// Parses the flat `key = value` config format. Blank lines and lines
/// starting with '#' are ignored; unknown keys are a ConfigError. Relative
/// playbook paths resolve against `base_dir`.
Config parse_config(const std::string& text,
                    const std::filesystem::path& base_dir = {});

/// Reads a config file and applies HYMEM_API_KEY from the environment,
/// which wins over any file value.
Config load_config(const std::filesystem::path& path);

/// Applies HYMEM_API_KEY if set.
void apply_environment(Config& config);

}  // namespace hymem
