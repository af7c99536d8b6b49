#pragma once

#include <string>
#include <vector>

namespace hymem {

/// Intermediate answers accumulated across reflection iterations. Starts
/// empty and only ever grows by one entry per iteration.
class MemoryPool {
 public:
  struct Entry {
    std::size_t iteration = 0;
    std::string query;
    std::string answer;

    friend bool operator==(const Entry&, const Entry&) = default;
  };

  /// Requires iteration == size(); throws ContractViolation otherwise.
  void append(std::size_t iteration, std::string query, std::string answer);

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

 private:
  std::vector<Entry> entries_;
};

/// One line per entry, "Previous finding {i}: Q: {query} A: {answer}",
/// newline-joined. Empty pool renders as "".
std::string render(const MemoryPool& pool);

}  // namespace hymem
