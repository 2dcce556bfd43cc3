#include "instyle/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "instyle/error.hpp"
#include "instyle/parallel.hpp"

namespace instyle {

EmbeddingSet::EmbeddingSet(std::vector<EmbeddingId> ids, std::size_t dim, std::vector<float> data,
                           bool normalized)
    : ids_(std::move(ids)), dim_(dim), data_(std::move(data)), normalized_(normalized) {
  if (dim_ == 0) throw Error(ErrorCode::DimMismatch, "embedding dim must be positive");
  if (data_.size() != ids_.size() * dim_) {
    throw Error(ErrorCode::CountMismatch, "data holds " + std::to_string(data_.size()) +
                                              " values, expected " +
                                              std::to_string(ids_.size() * dim_));
  }
  for (std::size_t i = 1; i < ids_.size(); ++i) {
    if (ids_[i] == ids_[i - 1]) {
      throw Error(ErrorCode::DuplicateId, "id " + std::to_string(ids_[i]) + " repeated");
    }
    if (ids_[i] < ids_[i - 1]) {
      throw Error(ErrorCode::UnsortedIds, "id " + std::to_string(ids_[i]) + " follows " +
                                              std::to_string(ids_[i - 1]));
    }
  }
  for (std::size_t r = 0; r < ids_.size(); ++r) {
    const auto values = row(r);
    for (float v : values) {
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::NonFiniteValue, "row id " + std::to_string(ids_[r]));
      }
    }
    if (normalized_ && std::abs(std::sqrt(squared_norm(values)) - 1.0) > kNormTolerance) {
      throw Error(ErrorCode::NotNormalized, "row id " + std::to_string(ids_[r]) +
                                                " is flagged normalized but is not unit length");
    }
  }
}

std::optional<std::size_t> EmbeddingSet::find(EmbeddingId id) const {
  const auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
  if (it == ids_.end() || *it != id) return std::nullopt;
  return static_cast<std::size_t>(it - ids_.begin());
}

EmbeddingSet EmbeddingSet::select(std::span<const std::size_t> rows) const {
  std::vector<EmbeddingId> ids;
  std::vector<float> data;
  ids.reserve(rows.size());
  data.reserve(rows.size() * dim_);
  for (std::size_t r : rows) {
    if (r >= size()) throw Error(ErrorCode::RangeOutOfBounds, "row " + std::to_string(r));
    ids.push_back(ids_[r]);
    const auto values = row(r);
    data.insert(data.end(), values.begin(), values.end());
  }
  return EmbeddingSet(std::move(ids), dim_, std::move(data), normalized_);
}

double dot(std::span<const float> a, std::span<const float> b) {
  double sum = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    sum += static_cast<double>(a[k]) * static_cast<double>(b[k]);
  }
  return sum;
}

double squared_norm(std::span<const float> a) { return dot(a, a); }

EmbeddingSet normalize(const EmbeddingSet& set) {
  std::vector<float> data(set.data());
  for (std::size_t r = 0; r < set.size(); ++r) {
    const double norm = std::sqrt(squared_norm(set.row(r)));
    if (norm == 0.0) {
      throw Error(ErrorCode::ZeroVectorRow, "row id " + std::to_string(set.id(r)));
    }
    float* out = data.data() + r * set.dim();
    for (std::size_t k = 0; k < set.dim(); ++k) {
      out[k] = static_cast<float>(static_cast<double>(out[k]) / norm);
    }
  }
  return EmbeddingSet(set.ids(), set.dim(), std::move(data), true);
}

double cosine_sim(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::DimMismatch,
                std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  const double na = squared_norm(a);
  const double nb = squared_norm(b);
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::ZeroVector, "cosine of a zero vector");
  return dot(a, b) / (std::sqrt(na) * std::sqrt(nb));
}

SimMatrix sim_matrix(const EmbeddingSet& texts, const EmbeddingSet& videos) {
  if (texts.dim() != videos.dim()) {
    throw Error(ErrorCode::DimMismatch, std::to_string(texts.dim()) + " vs " +
                                            std::to_string(videos.dim()));
  }
  if (!texts.normalized() || !videos.normalized()) {
    throw Error(ErrorCode::NotNormalized, "sim_matrix needs normalized inputs");
  }
  SimMatrix out{texts.size(), videos.size(), std::vector<double>(texts.size() * videos.size())};
  parallel_for(texts.size(), [&](std::size_t i) {
    const auto t = texts.row(i);
    double* dst = out.values.data() + i * out.cols;
    for (std::size_t j = 0; j < videos.size(); ++j) dst[j] = dot(t, videos.row(j));
  });
  return out;
}

}  // namespace instyle
