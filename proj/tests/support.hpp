#pragma once

// Fixture builders and independent reference implementations shared by the
// unit tests and the acceptance binary. The oracles deliberately avoid the
// library's fast paths: full matrices, plain loops, std::sort.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "instyle/embedding.hpp"
#include "instyle/evaluator.hpp"
#include "instyle/matcher.hpp"
#include "instyle/rng.hpp"
#include "instyle/trainer.hpp"

namespace testing {

using instyle::EmbeddingId;
using instyle::EmbeddingSet;

inline std::vector<EmbeddingId> iota_ids(std::size_t n, EmbeddingId first = 0) {
  std::vector<EmbeddingId> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = first + i;
  return ids;
}

// n unit rows of Gaussian directions.
inline EmbeddingSet random_unit_set(std::size_t n, std::size_t dim, std::uint64_t seed, EmbeddingId first = 0) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  std::vector<float> data(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(dim);
    double s = 0;
    for (auto& x : v) {
      x = nd(gen);
      s += x * x;
    }
    s = std::sqrt(s);
    for (std::size_t k = 0; k < dim; ++k) data[i * dim + k] = static_cast<float>(v[k] / s);
  }
  return EmbeddingSet(iota_ids(n, first), dim, std::move(data), true);
}

inline EmbeddingSet from_rows(const std::vector<std::vector<float>>& rows, bool normalized = true,
                              std::vector<EmbeddingId> ids = {}) {
  const std::size_t dim = rows.empty() ? 0 : rows[0].size();
  std::vector<float> data;
  for (const auto& r : rows) data.insert(data.end(), r.begin(), r.end());
  if (ids.empty()) ids = iota_ids(rows.size());
  return EmbeddingSet(std::move(ids), dim, std::move(data), normalized);
}

inline double ref_cos(std::span<const float> a, std::span<const float> b) {
  long double ab = 0, aa = 0, bb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += static_cast<long double>(a[k]) * b[k];
    aa += static_cast<long double>(a[k]) * a[k];
    bb += static_cast<long double>(b[k]) * b[k];
  }
  return static_cast<double>(ab / std::sqrt(aa * bb));
}

// Exclusive matching by rebuilding the full similarity matrix and taking a
// masked argmax per query, in id order. Similarities use the same f64 dot as
// the library so the comparison can be exact.
inline std::vector<instyle::PseudoPair> masked_argmax_oracle(const EmbeddingSet& q, const EmbeddingSet& c) {
  std::vector<std::vector<double>> sim(q.size(), std::vector<double>(c.size()));
  for (std::size_t i = 0; i < q.size(); ++i)
    for (std::size_t j = 0; j < c.size(); ++j) sim[i][j] = instyle::dot(q.row(i), c.row(j));
  std::vector<bool> taken(c.size(), false);
  std::vector<instyle::PseudoPair> out;
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::size_t best = c.size();
    for (std::size_t j = 0; j < c.size(); ++j) {
      if (taken[j]) continue;
      if (best == c.size() || sim[i][j] > sim[i][best] ||
          (sim[i][j] == sim[i][best] && c.id(j) < c.id(best)))
        best = j;
    }
    taken[best] = true;
    out.push_back({q.id(i), c.id(best), sim[i][best]});
  }
  return out;
}

// Global greedy by repeated full scan over all unmatched pairs.
inline std::vector<instyle::PseudoPair> global_greedy_oracle(const EmbeddingSet& q, const EmbeddingSet& c) {
  std::vector<bool> qdone(q.size(), false), taken(c.size(), false);
  std::vector<instyle::PseudoPair> out;
  for (std::size_t step = 0; step < q.size(); ++step) {
    std::size_t bi = 0, bj = 0;
    double bs = -INFINITY;
    bool found = false;
    for (std::size_t i = 0; i < q.size(); ++i) {
      if (qdone[i]) continue;
      for (std::size_t j = 0; j < c.size(); ++j) {
        if (taken[j]) continue;
        const double s = instyle::dot(q.row(i), c.row(j));
        if (!found || s > bs) {
          found = true;
          bs = s;
          bi = i;
          bj = j;
        }
      }
    }
    qdone[bi] = true;
    taken[bj] = true;
    out.push_back({q.id(bi), c.id(bj), bs});
  }
  return out;
}

// Rank of the truth after a full stable sort by (sim desc, id asc).
inline std::vector<std::size_t> rank_sort_oracle(const std::vector<std::vector<double>>& sim,
                                                 const std::vector<EmbeddingId>& cand_ids,
                                                 const std::vector<std::size_t>& truth_col) {
  std::vector<std::size_t> ranks;
  for (std::size_t i = 0; i < sim.size(); ++i) {
    std::vector<std::size_t> order(cand_ids.size());
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (sim[i][a] != sim[i][b]) return sim[i][a] > sim[i][b];
      return cand_ids[a] < cand_ids[b];
    });
    ranks.push_back(static_cast<std::size_t>(std::find(order.begin(), order.end(), truth_col[i]) - order.begin()) + 1);
  }
  return ranks;
}

// Straight-line reading of the scheduler contract: shuffle each set with its
// own stream, cut full batches, then repeatedly emit the set whose next batch
// has the smallest due time (k + 1/2) / n.
inline instyle::StyleBatchPlan reference_plan(const std::vector<instyle::GeneratedPairSet>& sets, std::size_t B,
                                              instyle::ScheduleMode mode, std::uint64_t seed) {
  instyle::StyleBatchPlan plan;
  plan.batch_size = B;
  plan.seed = seed;
  plan.mode = mode;
  if (mode == instyle::ScheduleMode::Mixed) {
    std::vector<instyle::PairRef> all;
    for (std::size_t s = 0; s < sets.size(); ++s)
      for (std::size_t p = 0; p < sets[s].pairs.size(); ++p) all.push_back({s, p});
    auto rng = instyle::make_rng(seed, 0);
    for (std::size_t i = all.size(); i > 1; --i) std::swap(all[i - 1], all[rng() % i]);
    const std::string tag = sets.size() == 1 ? sets[0].style_tag : instyle::kMixedTag;
    for (std::size_t b = 0; b + B <= all.size(); b += B)
      plan.batches.push_back({tag, std::vector<instyle::PairRef>(all.begin() + b, all.begin() + b + B)});
    return plan;
  }
  std::vector<std::vector<instyle::PairRef>> shuffled(sets.size());
  for (std::size_t s = 0; s < sets.size(); ++s) {
    for (std::size_t p = 0; p < sets[s].pairs.size(); ++p) shuffled[s].push_back({s, p});
    auto rng = instyle::make_rng(seed, s);
    for (std::size_t i = shuffled[s].size(); i > 1; --i) std::swap(shuffled[s][i - 1], shuffled[s][rng() % i]);
  }
  std::vector<std::size_t> next(sets.size(), 0), total(sets.size());
  for (std::size_t s = 0; s < sets.size(); ++s) total[s] = shuffled[s].size() / B;
  while (true) {
    std::size_t pick = sets.size();
    double best = 0;
    for (std::size_t s = 0; s < sets.size(); ++s) {
      if (next[s] == total[s]) continue;
      const double due = (next[s] + 0.5) / static_cast<double>(total[s]);
      if (pick == sets.size() || due < best) {
        pick = s;
        best = due;
      }
    }
    if (pick == sets.size()) break;
    const auto first = shuffled[pick].begin() + static_cast<std::ptrdiff_t>(next[pick] * B);
    plan.batches.push_back({sets[pick].style_tag, std::vector<instyle::PairRef>(first, first + B)});
    ++next[pick];
  }
  return plan;
}

// Generated-pair set with n dummy pairs, for scheduler tests.
inline instyle::GeneratedPairSet dummy_pairs(std::size_t n, const std::string& tag) {
  instyle::GeneratedPairSet set;
  set.style_tag = tag;
  set.candidates = n;
  for (std::size_t i = 0; i < n; ++i) set.pairs.push_back({i, i, 0.5});
  return set;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("instyle_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// FNV-1a over every file's relative path and bytes, in sorted path order.
inline std::string hash_tree(const std::filesystem::path& root) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&](const std::string& bytes) {
    for (unsigned char ch : bytes) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& f : files) {
    feed(std::filesystem::relative(f, root).generic_string());
    std::ifstream in(f, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    feed(ss.str());
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h << ":" << files.size();
  return out.str();
}

}  // namespace testing
