#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include <json.hpp>

#include "instyle/embedding.hpp"
#include "instyle/trainer.hpp"

namespace instyle {

using TruthMap = std::map<EmbeddingId, EmbeddingId>;  // query id -> candidate id

/// 1-based rank of each query's ground-truth candidate, in query row order.
///
/// Similarities use projected, renormalized embeddings when a model is given
/// and raw cosine otherwise. A candidate outranks the truth if its similarity
/// is higher, or equal with a smaller candidate id.
std::vector<std::size_t> rank_queries(const AdapterModel* model, const EmbeddingSet& queries,
                                      const EmbeddingSet& candidates, const TruthMap& truth);

struct RetrievalReport {
  double r1 = 0.0;
  double r5 = 0.0;
  double r10 = 0.0;
  double median_rank = 0.0;
  std::size_t query_count = 0;
  std::vector<std::size_t> per_query_ranks;
};

/// R@k as percentages and the median rank (mean of the middle two for even n).
RetrievalReport report(std::span<const std::size_t> ranks);

nlohmann::json to_json(const RetrievalReport& r, bool include_ranks = false);
void save_ranks_csv(const std::filesystem::path& path, std::span<const EmbeddingId> query_ids,
                    std::span<const std::size_t> ranks);

}  // namespace instyle
