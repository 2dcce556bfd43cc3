#include "instyle/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "instyle/error.hpp"
#include "instyle/parallel.hpp"

namespace instyle {

namespace {

// Unit float64 vectors, either projected through a head or just renormalized.
// Both routes do the same arithmetic, so identity heads reproduce zero-shot
// scores bit for bit.
std::vector<std::vector<double>> embed_all(const EmbeddingSet& set, const std::vector<double>* head,
                                           std::size_t proj_dim) {
  std::vector<std::vector<double>> out(set.size());
  parallel_for(set.size(), [&](std::size_t i) {
    const auto row = set.row(i);
    std::vector<double> v;
    if (head) {
      v.assign(proj_dim, 0.0);
      for (std::size_t r = 0; r < proj_dim; ++r) {
        double s = 0.0;
        const double* w = head->data() + r * row.size();
        for (std::size_t c = 0; c < row.size(); ++c) s += w[c] * static_cast<double>(row[c]);
        v[r] = s;
      }
    } else {
      v.assign(row.begin(), row.end());
    }
    double norm2 = 0.0;
    for (double x : v) norm2 += x * x;
    if (!(norm2 > 0.0)) throw Error(ErrorCode::ZeroVectorRow, "row id " + std::to_string(set.id(i)));
    const double norm = std::sqrt(norm2);
    for (double& x : v) x /= norm;
    out[i] = std::move(v);
  });
  return out;
}

}  // namespace

std::vector<std::size_t> rank_queries(const AdapterModel* model, const EmbeddingSet& queries,
                                      const EmbeddingSet& candidates, const TruthMap& truth) {
  if (model) {
    if (model->text_dim != queries.dim() || model->video_dim != candidates.dim()) {
      throw Error(ErrorCode::DimMismatch, "adapter dims do not match evaluation embeddings");
    }
  } else if (queries.dim() != candidates.dim()) {
    throw Error(ErrorCode::DimMismatch, "query vs candidate dim");
  }

  std::vector<std::size_t> truth_rows(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto it = truth.find(queries.id(q));
    if (it == truth.end()) throw Error(ErrorCode::MissingTruth, "query " + std::to_string(queries.id(q)));
    const auto row = candidates.find(it->second);
    if (!row) throw Error(ErrorCode::UnknownCandidate, "candidate " + std::to_string(it->second));
    truth_rows[q] = *row;
  }

  const std::size_t pd = model ? model->proj_dim : 0;
  const auto qv = embed_all(queries, model ? &model->text_head : nullptr, pd);
  const auto cv = embed_all(candidates, model ? &model->video_head : nullptr, pd);

  std::vector<std::size_t> ranks(queries.size());
  parallel_for(queries.size(), [&](std::size_t q) {
    auto sim = [&](std::size_t c) {
      double s = 0.0;
      for (std::size_t k = 0; k < qv[q].size(); ++k) s += qv[q][k] * cv[c][k];
      return s;
    };
    const std::size_t t = truth_rows[q];
    const double target = sim(t);
    std::size_t ahead = 0;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const double s = sim(c);
      // rows are in ascending id order, so "smaller id" is "smaller row"
      if (s > target || (s == target && c < t)) ++ahead;
    }
    ranks[q] = ahead + 1;
  });
  return ranks;
}

RetrievalReport report(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw Error(ErrorCode::EmptyRanks, "no ranks to report");
  RetrievalReport r;
  r.query_count = ranks.size();
  r.per_query_ranks.assign(ranks.begin(), ranks.end());
  std::size_t hit1 = 0, hit5 = 0, hit10 = 0;
  for (std::size_t rank : ranks) {
    if (rank == 0) throw Error(ErrorCode::ConfigInvalid, "ranks are 1-based");
    hit1 += rank <= 1;
    hit5 += rank <= 5;
    hit10 += rank <= 10;
  }
  const double n = static_cast<double>(ranks.size());
  r.r1 = 100.0 * static_cast<double>(hit1) / n;
  r.r5 = 100.0 * static_cast<double>(hit5) / n;
  r.r10 = 100.0 * static_cast<double>(hit10) / n;

  std::vector<std::size_t> sorted(ranks.begin(), ranks.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  r.median_rank = sorted.size() % 2 == 1
                      ? static_cast<double>(sorted[mid])
                      : 0.5 * static_cast<double>(sorted[mid - 1] + sorted[mid]);
  return r;
}

nlohmann::json to_json(const RetrievalReport& r, bool include_ranks) {
  nlohmann::json j{{"r1", r.r1},
                   {"r5", r.r5},
                   {"r10", r.r10},
                   {"median_rank", r.median_rank},
                   {"query_count", r.query_count}};
  if (include_ranks) j["per_query_ranks"] = r.per_query_ranks;
  return j;
}

void save_ranks_csv(const std::filesystem::path& path, std::span<const EmbeddingId> query_ids,
                    std::span<const std::size_t> ranks) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "query_id,rank\n";
  for (std::size_t i = 0; i < ranks.size(); ++i) out << query_ids[i] << ',' << ranks[i] << '\n';
}

}  // namespace instyle
