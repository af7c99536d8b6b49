#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace hymem {

using EventId = std::uint64_t;
using SummaryId = std::uint64_t;

/// Dense embedding. Unit L2 norm wherever the library hands one out.
template <typename Scalar>
using EmbeddingT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using Embedding = EmbeddingT<float>;

struct TurnRange {
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive

  std::size_t size() const { return end - start + 1; }
  friend bool operator==(const TurnRange&, const TurnRange&) = default;
};

/// Level-2 memory: the raw passage of one topical event.
struct EventUnit {
  EventId event_id = 0;
  std::string dialogue_id;
  std::string passage;
  std::string time_label;
  TurnRange turn_range;

  friend bool operator==(const EventUnit&, const EventUnit&) = default;
};

/// Level-1 memory: one key sentence linked to its event. The embedding
/// itself lives in the VectorIndex under the same id.
struct SummaryUnit {
  SummaryId summary_id = 0;
  EventId event_id = 0;
  std::string text;

  friend bool operator==(const SummaryUnit&, const SummaryUnit&) = default;
};

/// Throws ContractViolation unless the event satisfies its field invariants.
void validate(const EventUnit& event);

}  // namespace hymem
