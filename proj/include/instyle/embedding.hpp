#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace instyle {

using EmbeddingId = std::uint64_t;

/// Dense row-major float32 embeddings with strictly ascending ids.
///
/// Construction validates every invariant (ids sorted and unique, finite
/// values, unit rows when `normalized` is set) and the set is immutable
/// afterwards, so it can be shared read-only between workers.
class EmbeddingSet {
 public:
  /// Row norms of a normalized set must lie within this distance of 1.
  static constexpr double kNormTolerance = 1e-4;

  EmbeddingSet() = default;
  EmbeddingSet(std::vector<EmbeddingId> ids, std::size_t dim, std::vector<float> data,
               bool normalized);

  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }
  std::size_t dim() const noexcept { return dim_; }
  bool normalized() const noexcept { return normalized_; }

  const std::vector<EmbeddingId>& ids() const noexcept { return ids_; }
  EmbeddingId id(std::size_t row) const { return ids_.at(row); }
  std::span<const float> row(std::size_t r) const {
    return {data_.data() + r * dim_, dim_};
  }
  const std::vector<float>& data() const noexcept { return data_; }

  /// Row index for `id`, or nullopt. O(log n).
  std::optional<std::size_t> find(EmbeddingId id) const;

  /// Rows at the given indices, in the given order. Indices must be strictly
  /// increasing so the result keeps ascending ids.
  EmbeddingSet select(std::span<const std::size_t> rows) const;

  friend bool operator==(const EmbeddingSet&, const EmbeddingSet&) = default;

 private:
  std::vector<EmbeddingId> ids_;
  std::size_t dim_ = 0;
  std::vector<float> data_;
  bool normalized_ = false;
};

/// Fixed-order float32 -> float64 dot product. Every similarity in the
/// library goes through this so results are bit-stable.
double dot(std::span<const float> a, std::span<const float> b);
double squared_norm(std::span<const float> a);

/// Throws ZeroVectorRow naming the offending id.
EmbeddingSet normalize(const EmbeddingSet& set);

/// Cosine similarity; throws DimMismatch or ZeroVector.
double cosine_sim(std::span<const float> a, std::span<const float> b);

/// Dense count_a x count_b similarity table.
struct SimMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// Pairwise similarities of two normalized sets, computed row-parallel.
SimMatrix sim_matrix(const EmbeddingSet& texts, const EmbeddingSet& videos);

}  // namespace instyle
