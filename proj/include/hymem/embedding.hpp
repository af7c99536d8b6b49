#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hymem/config.hpp"
#include "hymem/llm_client.hpp"
#include "hymem/types.hpp"

namespace hymem {

[[noreturn]] void throw_zero_norm();

/// Scales `v` to unit L2 norm in place. A zero vector is a ContractViolation.
template <typename Derived>
void normalize_in_place(Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const double norm = v.template cast<double>().norm();
  if (!(norm > 0.0)) {
    throw_zero_norm();
  }
  v = (v.template cast<double>() / norm).template cast<Scalar>();
}

/// Cosine similarity of two vectors, accumulated in double.
template <typename A, typename B>
double cosine(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  const auto ad = a.template cast<double>();
  const auto bd = b.template cast<double>();
  return ad.dot(bd) / (ad.norm() * bd.norm());
}

// ---------------------------------------------------------------------------
// Embedding providers

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  /// Unit-norm vector of dimension(). Empty text is a ContractViolation.
  virtual Embedding embed(std::string_view text) = 0;
  virtual std::vector<Embedding> embed_batch(
      std::span<const std::string> texts);
  virtual std::size_t dimension() const = 0;
};

std::uint64_t fnv1a64(std::string_view bytes);

/// Lowercases ASCII and splits on everything that is not an ASCII letter or
/// digit. Bytes >= 0x80 count as word characters so UTF-8 words survive.
std::vector<std::string> tokenize(std::string_view text);

/// Deterministic hashed bag-of-words: every token adds +1 to bucket
/// fnv1a64(token) mod D, then the vector is L2-normalized. Text with no
/// tokens is hashed as a single token of its lowercased bytes.
class FallbackEmbedder final : public EmbeddingProvider {
 public:
  explicit FallbackEmbedder(std::size_t dimension);
  Embedding embed(std::string_view text) override;
  std::size_t dimension() const override { return dimension_; }

 private:
  std::size_t dimension_;
};

/// POST {base_url}/embeddings, normalizing whatever comes back.
class RemoteEmbedder final : public EmbeddingProvider {
 public:
  RemoteEmbedder(std::string base_url, std::string model, std::string api_key,
                 std::size_t dimension, RetryPolicy retry = {});

  Embedding embed(std::string_view text) override;
  std::vector<Embedding> embed_batch(
      std::span<const std::string> texts) override;
  std::size_t dimension() const override { return dimension_; }

 private:
  std::string base_url_;
  std::string model_;
  std::string api_key_;
  std::size_t dimension_;
  RetryPolicy retry_;
};

std::unique_ptr<EmbeddingProvider> make_embedding_provider(
    const BackendDescriptor& desc, const Config& config);

// ---------------------------------------------------------------------------
// Exact cosine index

struct SearchHit {
  SummaryId summary_id = 0;
  double similarity = 0.0;

  friend bool operator==(const SearchHit&, const SearchHit&) = default;
};

/// Rows of (summary_id, unit embedding) kept in one contiguous column-major
/// buffer. Searches take a shared lock; inserts take an exclusive one.
class VectorIndex {
 public:
  explicit VectorIndex(std::size_t dimension = 0);
  VectorIndex(const VectorIndex& other);
  VectorIndex& operator=(const VectorIndex& other);
  VectorIndex(VectorIndex&& other) noexcept;
  VectorIndex& operator=(VectorIndex&& other) noexcept;

  std::size_t dimension() const { return dimension_; }
  std::size_t size() const;
  bool contains(SummaryId id) const;

  /// Duplicate ids and wrong dimensions are ContractViolations.
  void add(SummaryId id, const Embedding& embedding);

  std::vector<SummaryId> ids() const;
  Embedding row(std::size_t position) const;
  std::optional<Embedding> find(SummaryId id) const;

  /// Exact scan. Rows rejected by `filter` are skipped. Results are ordered
  /// by similarity descending, ties by ascending id, truncated to k.
  std::vector<SearchHit> search(
      const Embedding& query, std::size_t k,
      const std::function<bool(SummaryId)>& filter = {}) const;

  friend bool operator==(const VectorIndex& a, const VectorIndex& b);

 private:
  std::size_t dimension_;
  std::vector<SummaryId> ids_;
  std::unordered_map<SummaryId, std::size_t> positions_;
  std::vector<float> data_;  // dimension_ x ids_.size(), column-major
  mutable std::shared_mutex mutex_;
};

std::vector<SearchHit> topk_search(
    const VectorIndex& index, const Embedding& query, std::size_t k,
    const std::function<bool(SummaryId)>& filter = {});

/// Binary "HYM1" format: magic, u32 dimension, u64 row count, then per row a
/// u64 id and D float32 values, all little-endian.
void index_save(const VectorIndex& index, const std::filesystem::path& path);
VectorIndex index_load(const std::filesystem::path& path);

std::string index_serialize(const VectorIndex& index);
VectorIndex index_deserialize(std::string_view bytes);

}  // namespace hymem
