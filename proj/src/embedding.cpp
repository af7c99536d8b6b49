#include "hymem/embedding.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "hymem/errors.hpp"
#include "http.hpp"

namespace hymem {

void throw_zero_norm() {
  throw ContractViolation("cannot normalize a zero vector");
}

std::vector<Embedding> EmbeddingProvider::embed_batch(std::span<const std::string> texts) {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed(t));
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

namespace {

bool is_word_byte(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

char ascii_lower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : text) {
    if (is_word_byte(static_cast<unsigned char>(c))) {
      current.push_back(ascii_lower(c));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

FallbackEmbedder::FallbackEmbedder(std::size_t dimension) : dimension_(dimension) {
  if (dimension_ == 0) throw ContractViolation("embedding dimension must be >= 1");
}

Embedding FallbackEmbedder::embed(std::string_view text) {
  if (text.empty()) throw ContractViolation("cannot embed empty text");
  auto tokens = tokenize(text);
  if (tokens.empty()) {
    std::string whole(text);
    std::transform(whole.begin(), whole.end(), whole.begin(), ascii_lower);
    tokens.push_back(std::move(whole));
  }
  Embedding v = Embedding::Zero(static_cast<Eigen::Index>(dimension_));
  for (const auto& tok : tokens) {
    v[static_cast<Eigen::Index>(fnv1a64(tok) % dimension_)] += 1.0f;
  }
  normalize_in_place(v);
  return v;
}

// ---------------------------------------------------------------------------

RemoteEmbedder::RemoteEmbedder(std::string base_url, std::string model, std::string api_key,
                               std::size_t dimension, RetryPolicy retry)
    : base_url_(std::move(base_url)),
      model_(std::move(model)),
      api_key_(std::move(api_key)),
      dimension_(dimension),
      retry_(retry) {}

Embedding RemoteEmbedder::embed(std::string_view text) {
  const std::string one(text);
  return embed_batch(std::span<const std::string>(&one, 1)).front();
}

std::vector<Embedding> RemoteEmbedder::embed_batch(std::span<const std::string> texts) {
  if (texts.empty()) return {};
  for (const auto& t : texts) {
    if (t.empty()) throw ContractViolation("cannot embed empty text");
  }
  nlohmann::json body = {{"model", model_}, {"input", nlohmann::json(std::vector<std::string>(texts.begin(), texts.end()))}};
  nlohmann::json response;
  try {
    response = detail::post_json(base_url_, "/embeddings", body, api_key_, retry_);
  } catch (const detail::HttpFailure& f) {
    throw EmbeddingBackendError("embedding backend: " + f.message, f.status);
  }

  std::vector<Embedding> out;
  out.reserve(texts.size());
  try {
    const auto& data = response.at("data");
    if (data.size() != texts.size()) {
      throw EmbeddingBackendError("embedding backend returned " + std::to_string(data.size()) +
                                  " vectors for " + std::to_string(texts.size()) + " inputs");
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto values = data.at(i).at("embedding").get<std::vector<float>>();
      if (values.size() != dimension_) {
        throw EmbeddingBackendError("embedding backend returned dimension " +
                                    std::to_string(values.size()) + ", expected " +
                                    std::to_string(dimension_));
      }
      Embedding v = Eigen::Map<const Embedding>(values.data(), static_cast<Eigen::Index>(values.size()));
      try {
        normalize_in_place(v);
      } catch (const ContractViolation&) {
        throw EmbeddingBackendError("embedding backend returned a zero vector");
      }
      out.push_back(std::move(v));
    }
  } catch (const nlohmann::json::exception& e) {
    throw EmbeddingBackendError(std::string("malformed embeddings response: ") + e.what());
  }
  return out;
}

std::unique_ptr<EmbeddingProvider> make_embedding_provider(const BackendDescriptor& desc,
                                                           const Config& config) {
  switch (desc.kind) {
    case BackendDescriptor::Kind::Fallback:
      return std::make_unique<FallbackEmbedder>(config.embedding_dim);
    case BackendDescriptor::Kind::Remote:
      return std::make_unique<RemoteEmbedder>(desc.base_url, desc.model, config.api_key,
                                              config.embedding_dim);
    case BackendDescriptor::Kind::Scripted:
      break;
  }
  throw ConfigError("scripted playbooks cannot serve embeddings");
}

// ---------------------------------------------------------------------------
// VectorIndex

VectorIndex::VectorIndex(std::size_t dimension) : dimension_(dimension) {}

VectorIndex::VectorIndex(const VectorIndex& other) {
  std::shared_lock lock(other.mutex_);
  dimension_ = other.dimension_;
  ids_ = other.ids_;
  positions_ = other.positions_;
  data_ = other.data_;
}

VectorIndex& VectorIndex::operator=(const VectorIndex& other) {
  if (this != &other) {
    VectorIndex copy(other);
    *this = std::move(copy);
  }
  return *this;
}

VectorIndex::VectorIndex(VectorIndex&& other) noexcept
    : dimension_(other.dimension_),
      ids_(std::move(other.ids_)),
      positions_(std::move(other.positions_)),
      data_(std::move(other.data_)) {}

VectorIndex& VectorIndex::operator=(VectorIndex&& other) noexcept {
  if (this != &other) {
    std::unique_lock lock(mutex_);
    dimension_ = other.dimension_;
    ids_ = std::move(other.ids_);
    positions_ = std::move(other.positions_);
    data_ = std::move(other.data_);
  }
  return *this;
}

std::size_t VectorIndex::size() const {
  std::shared_lock lock(mutex_);
  return ids_.size();
}

bool VectorIndex::contains(SummaryId id) const {
  std::shared_lock lock(mutex_);
  return positions_.contains(id);
}

void VectorIndex::add(SummaryId id, const Embedding& embedding) {
  if (static_cast<std::size_t>(embedding.size()) != dimension_) {
    throw ContractViolation("index add: embedding dimension " + std::to_string(embedding.size()) +
                            " does not match index dimension " + std::to_string(dimension_));
  }
  std::unique_lock lock(mutex_);
  if (!positions_.emplace(id, ids_.size()).second) {
    throw ContractViolation("index add: duplicate summary id " + std::to_string(id));
  }
  ids_.push_back(id);
  data_.insert(data_.end(), embedding.data(), embedding.data() + embedding.size());
}

std::vector<SummaryId> VectorIndex::ids() const {
  std::shared_lock lock(mutex_);
  return ids_;
}

Embedding VectorIndex::row(std::size_t position) const {
  std::shared_lock lock(mutex_);
  if (position >= ids_.size()) throw ContractViolation("index row out of range");
  return Eigen::Map<const Embedding>(data_.data() + position * dimension_,
                                     static_cast<Eigen::Index>(dimension_));
}

std::optional<Embedding> VectorIndex::find(SummaryId id) const {
  std::shared_lock lock(mutex_);
  const auto it = positions_.find(id);
  if (it == positions_.end()) return std::nullopt;
  const auto pos = it->second;
  return Embedding(Eigen::Map<const Embedding>(data_.data() + pos * dimension_,
                                               static_cast<Eigen::Index>(dimension_)));
}

std::vector<SearchHit> VectorIndex::search(const Embedding& query, std::size_t k,
                                           const std::function<bool(SummaryId)>& filter) const {
  if (k == 0) throw ContractViolation("top-k search needs k >= 1");
  if (static_cast<std::size_t>(query.size()) != dimension_) {
    throw ContractViolation("query dimension " + std::to_string(query.size()) +
                            " does not match index dimension " + std::to_string(dimension_));
  }
  std::shared_lock lock(mutex_);
  const auto n = static_cast<Eigen::Index>(ids_.size());
  if (n == 0) return {};

  const Eigen::Map<const Eigen::MatrixXf> rows(data_.data(), static_cast<Eigen::Index>(dimension_), n);
  const Eigen::VectorXd scores = rows.transpose().cast<double>() * query.cast<double>();

  std::vector<SearchHit> hits;
  hits.reserve(ids_.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto id = ids_[static_cast<std::size_t>(i)];
    if (filter && !filter(id)) continue;
    hits.push_back({id, scores[i]});
  }
  const auto by_rank = [](const SearchHit& a, const SearchHit& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.summary_id < b.summary_id;
  };
  const auto keep = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(),
                    by_rank);
  hits.resize(keep);
  return hits;
}

std::vector<SearchHit> topk_search(const VectorIndex& index, const Embedding& query,
                                   std::size_t k, const std::function<bool(SummaryId)>& filter) {
  return index.search(query, k, filter);
}

bool operator==(const VectorIndex& a, const VectorIndex& b) {
  if (&a == &b) return true;
  std::shared_lock la(a.mutex_, std::defer_lock);
  std::shared_lock lb(b.mutex_, std::defer_lock);
  std::lock(la, lb);
  return a.dimension_ == b.dimension_ && a.ids_ == b.ids_ &&
         std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(float)) == 0 &&
         a.data_.size() == b.data_.size();
}

// ---------------------------------------------------------------------------
// HYM1 binary format

namespace {

constexpr char kMagic[4] = {'H', 'Y', 'M', '1'};

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    if (bytes_.size() - pos_ < sizeof(T)) {
      throw IndexFormatError(std::string("truncated ") + what, pos_);
    }
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      value |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return value;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string index_serialize(const VectorIndex& index) {
  const auto ids = index.ids();
  const auto dim = index.dimension();
  std::string out;
  out.reserve(16 + ids.size() * (8 + 4 * dim));
  out.append(kMagic, 4);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
  put_le<std::uint64_t>(out, ids.size());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    put_le<std::uint64_t>(out, ids[r]);
    const auto v = index.row(r);
    for (Eigen::Index j = 0; j < v.size(); ++j) {
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v[j]));
    }
  }
  return out;
}

VectorIndex index_deserialize(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IndexFormatError("bad magic, expected HYM1", 0);
  }
  Reader in(bytes.substr(0));
  (void)in.get<std::uint32_t>("magic");
  const auto dim = in.get<std::uint32_t>("dimension");
  const auto rows_at = in.pos();
  const auto rows = in.get<std::uint64_t>("row count");
  if (dim == 0 && rows > 0) throw IndexFormatError("zero dimension with rows", 4);
  const std::uint64_t row_bytes = 8 + 4ULL * dim;
  if (rows > in.remaining() / row_bytes + 1) {
    throw IndexFormatError("row count exceeds payload", rows_at);
  }

  VectorIndex index(dim);
  std::unordered_set<SummaryId> seen;
  Embedding v(static_cast<Eigen::Index>(dim));
  for (std::uint64_t r = 0; r < rows; ++r) {
    const auto row_at = in.pos();
    const auto id = in.get<std::uint64_t>("row id");
    for (std::uint32_t j = 0; j < dim; ++j) {
      v[j] = std::bit_cast<float>(in.get<std::uint32_t>("row payload"));
    }
    if (!seen.insert(id).second) {
      throw IndexFormatError("duplicate summary id " + std::to_string(id), row_at);
    }
    index.add(id, v);
  }
  if (in.remaining() != 0) {
    throw IndexFormatError("trailing bytes after last row", in.pos());
  }
  return index;
}

void index_save(const VectorIndex& index, const std::filesystem::path& path) {
  const auto bytes = index_serialize(index);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StoreIOError("cannot write index file " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw StoreIOError("short write to index file " + path.string());
}

VectorIndex index_load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StoreIOError("cannot read index file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return index_deserialize(buf.str());
}

}  // namespace hymem
