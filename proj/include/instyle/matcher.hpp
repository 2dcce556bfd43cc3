#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "instyle/embedding.hpp"

namespace instyle {

enum class MatchOrder {
  QueryId,       // each query in ascending id order takes its best free clip
  GlobalGreedy,  // repeatedly commit the best remaining (query, clip) pair
};

std::string to_string(MatchOrder order);
MatchOrder parse_match_order(const std::string& name);

struct MatchOptions {
  MatchOrder order = MatchOrder::QueryId;
  std::size_t shortlist = 32;  // per-query candidates kept before falling back to a rescan
};

struct PseudoPair {
  EmbeddingId query_id = 0;
  EmbeddingId clip_id = 0;
  double sim = 0.0;

  friend bool operator==(const PseudoPair&, const PseudoPair&) = default;
};

/// Text queries paired one-to-one with uncurated clips. Pairs are stored in
/// commit order: query-id order for MatchOrder::QueryId, descending
/// similarity for MatchOrder::GlobalGreedy.
struct PseudoPairSet {
  std::vector<PseudoPair> pairs;
  std::string query_set;
  std::string clip_set;
  MatchOrder order = MatchOrder::QueryId;

  friend bool operator==(const PseudoPairSet&, const PseudoPairSet&) = default;
};

/// Exclusive nearest-neighbour assignment: every query gets the most similar
/// clip that no earlier query has taken; ties go to the smaller clip id.
///
/// Works from per-query top-K shortlists and rescans the whole pool only when
/// a shortlist has been used up by earlier assignments, so the result is the
/// same as recomputing the masked argmax at every step.
PseudoPairSet match_exclusive(const EmbeddingSet& queries, const EmbeddingSet& clips,
                              const MatchOptions& options = {});

struct ScoredClip {
  EmbeddingId clip_id = 0;
  double sim = 0.0;

  friend bool operator==(const ScoredClip&, const ScoredClip&) = default;
};

/// Top-k clips per query (no exclusion), similarity descending then id ascending.
std::vector<std::vector<ScoredClip>> match_topk_report(const EmbeddingSet& queries,
                                                       const EmbeddingSet& clips, std::size_t k);

void save_pseudo_pairs(const std::filesystem::path& path, const PseudoPairSet& set);
PseudoPairSet load_pseudo_pairs(const std::filesystem::path& path);

}  // namespace instyle
