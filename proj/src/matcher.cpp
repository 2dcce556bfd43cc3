#include "instyle/matcher.hpp"

#include <algorithm>
#include <optional>
#include <queue>

#include "instyle/error.hpp"
#include "instyle/jsonl.hpp"
#include "instyle/parallel.hpp"

namespace instyle {

std::string to_string(MatchOrder order) {
  return order == MatchOrder::QueryId ? "query_id" : "global_greedy";
}

MatchOrder parse_match_order(const std::string& name) {
  if (name == "query_id") return MatchOrder::QueryId;
  if (name == "global_greedy") return MatchOrder::GlobalGreedy;
  throw Error(ErrorCode::ConfigInvalid, "unknown match order '" + name + "'");
}

namespace {

struct Candidate {
  double sim;
  std::size_t row;  // clip row; rows are in ascending id order
};

// Strict weak order: higher similarity first, then smaller clip id.
bool better(const Candidate& a, const Candidate& b) {
  if (a.sim != b.sim) return a.sim > b.sim;
  return a.row < b.row;
}

void check_inputs(const EmbeddingSet& queries, const EmbeddingSet& clips) {
  if (queries.dim() != clips.dim()) {
    throw Error(ErrorCode::DimMismatch, "queries dim " + std::to_string(queries.dim()) +
                                            ", clips dim " + std::to_string(clips.dim()));
  }
  if (!queries.normalized() || !clips.normalized()) {
    throw Error(ErrorCode::NotNormalized, "matching needs normalized embeddings");
  }
}

std::vector<Candidate> top_candidates(std::span<const float> query, const EmbeddingSet& clips,
                                      std::size_t k, const std::vector<char>* taken) {
  std::vector<Candidate> all;
  all.reserve(clips.size());
  for (std::size_t c = 0; c < clips.size(); ++c) {
    if (taken && (*taken)[c]) continue;
    all.push_back({dot(query, clips.row(c)), c});
  }
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
  all.resize(k);
  return all;
}

// Per-query cursor over its shortlist; refills from a full rescan of the
// free clips when the shortlist is exhausted.
class CandidateStream {
 public:
  CandidateStream(std::span<const float> query, const EmbeddingSet& clips, std::size_t k)
      : query_(query), clips_(clips), k_(k), list_(top_candidates(query, clips, k, nullptr)) {}

  // Best clip not yet taken. The shortlist is the top-K under `better`, so
  // any clip outside it ranks below every shortlisted one.
  Candidate best_free(const std::vector<char>& taken) {
    while (true) {
      while (pos_ < list_.size() && taken[list_[pos_].row]) ++pos_;
      if (pos_ < list_.size()) return list_[pos_];
      list_ = top_candidates(query_, clips_, k_, &taken);
      pos_ = 0;
      if (list_.empty()) throw Error(ErrorCode::PoolExhausted, "no free clips left");
    }
  }

 private:
  std::span<const float> query_;
  const EmbeddingSet& clips_;
  std::size_t k_;
  std::vector<Candidate> list_;
  std::size_t pos_ = 0;
};

}  // namespace

PseudoPairSet match_exclusive(const EmbeddingSet& queries, const EmbeddingSet& clips,
                              const MatchOptions& options) {
  check_inputs(queries, clips);
  if (queries.size() > clips.size()) {
    throw Error(ErrorCode::PoolExhausted, std::to_string(queries.size()) + " queries but only " +
                                              std::to_string(clips.size()) + " clips");
  }
  const std::size_t k = std::max<std::size_t>(1, options.shortlist);

  std::vector<std::optional<CandidateStream>> streams(queries.size());
  parallel_for(queries.size(), [&](std::size_t q) { streams[q].emplace(queries.row(q), clips, k); });

  PseudoPairSet out;
  out.order = options.order;
  out.pairs.reserve(queries.size());
  std::vector<char> taken(clips.size(), 0);

  if (options.order == MatchOrder::QueryId) {
    for (std::size_t q = 0; q < queries.size(); ++q) {
      const Candidate best = streams[q]->best_free(taken);
      taken[best.row] = 1;
      out.pairs.push_back({queries.id(q), clips.id(best.row), best.sim});
    }
    return out;
  }

  // Lazy max-heap of each open query's best free clip; stale heads are
  // refreshed when popped. Ties go to the smaller query id, then clip id.
  struct Head {
    Candidate cand;
    std::size_t query;
  };
  auto worse = [](const Head& a, const Head& b) {
    if (a.cand.sim != b.cand.sim) return a.cand.sim < b.cand.sim;
    if (a.query != b.query) return a.query > b.query;
    return a.cand.row > b.cand.row;
  };
  std::priority_queue<Head, std::vector<Head>, decltype(worse)> heap(worse);
  for (std::size_t q = 0; q < queries.size(); ++q) heap.push({streams[q]->best_free(taken), q});

  while (!heap.empty()) {
    Head head = heap.top();
    heap.pop();
    if (taken[head.cand.row]) {
      heap.push({streams[head.query]->best_free(taken), head.query});
      continue;
    }
    taken[head.cand.row] = 1;
    out.pairs.push_back({queries.id(head.query), clips.id(head.cand.row), head.cand.sim});
  }
  return out;
}

std::vector<std::vector<ScoredClip>> match_topk_report(const EmbeddingSet& queries,
                                                       const EmbeddingSet& clips, std::size_t k) {
  check_inputs(queries, clips);
  if (k == 0 || k > clips.size()) {
    throw Error(ErrorCode::KTooLarge, "k=" + std::to_string(k) + " with " +
                                          std::to_string(clips.size()) + " clips");
  }
  std::vector<std::vector<ScoredClip>> out(queries.size());
  parallel_for(queries.size(), [&](std::size_t q) {
    for (const auto& c : top_candidates(queries.row(q), clips, k, nullptr)) {
      out[q].push_back({clips.id(c.row), c.sim});
    }
  });
  return out;
}

void save_pseudo_pairs(const std::filesystem::path& path, const PseudoPairSet& set) {
  std::vector<nlohmann::json> lines;
  lines.reserve(set.pairs.size() + 1);
  lines.push_back({{"kind", "pseudo_pairs"},
                   {"query_set", set.query_set},
                   {"clip_set", set.clip_set},
                   {"policy", to_string(set.order)},
                   {"count", set.pairs.size()}});
  for (const auto& p : set.pairs) {
    lines.push_back({{"query_id", p.query_id}, {"clip_id", p.clip_id}, {"sim", p.sim}});
  }
  jsonl::write(path, lines);
}

PseudoPairSet load_pseudo_pairs(const std::filesystem::path& path) {
  const auto lines = jsonl::read(path);
  PseudoPairSet set;
  try {
    if (lines.empty() || lines.front().value("kind", "") != "pseudo_pairs") {
      throw Error(ErrorCode::ParseError, path.string() + ": missing pseudo_pairs header");
    }
    const auto& header = lines.front();
    set.query_set = header.at("query_set").get<std::string>();
    set.clip_set = header.at("clip_set").get<std::string>();
    set.order = parse_match_order(header.at("policy").get<std::string>());
    for (std::size_t i = 1; i < lines.size(); ++i) {
      set.pairs.push_back({lines[i].at("query_id").get<EmbeddingId>(),
                           lines[i].at("clip_id").get<EmbeddingId>(),
                           lines[i].at("sim").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  return set;
}

}  // namespace instyle
