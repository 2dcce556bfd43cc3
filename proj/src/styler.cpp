#include "instyle/styler.hpp"

#include <algorithm>
#include <cmath>

#include "instyle/error.hpp"
#include "instyle/iemb.hpp"
#include "instyle/jsonl.hpp"
#include "instyle/parallel.hpp"
#include "instyle/rng.hpp"

namespace instyle {

StyleTransform StyleTransform::identity(std::size_t dim, std::string tag) {
  StyleTransform s;
  s.dim_out = s.dim_in = dim;
  s.weight.assign(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) s.weight[i * dim + i] = 1.0;
  s.bias.assign(dim, 0.0);
  s.style_tag = std::move(tag);
  return s;
}

namespace {

// In-place lower Cholesky of the n x n symmetric matrix `a`. Rejects pivots
// that are non-positive or negligible relative to the largest diagonal entry.
void cholesky(std::vector<double>& a, std::size_t n) {
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(a[i * n + i]));
  const double floor = 1e-12 * std::max(max_diag, 1e-300);

  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
    if (!(d > floor)) {
      throw Error(ErrorCode::SingularSystem, "normal equations are not positive definite (pivot " +
                                                 std::to_string(j) + ")");
    }
    const double l = std::sqrt(d);
    a[j * n + j] = l;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = s / l;
    }
  }
}

// Solves L·Lᵀ·x = rhs for each of the m columns of rhs (n x m, row-major).
void cholesky_solve(const std::vector<double>& l, std::size_t n, std::vector<double>& rhs,
                    std::size_t m) {
  for (std::size_t c = 0; c < m; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = rhs[i * m + c];
      for (std::size_t k = 0; k < i; ++k) s -= l[i * n + k] * rhs[k * m + c];
      rhs[i * m + c] = s / l[i * n + i];
    }
    for (std::size_t i = n; i-- > 0;) {
      double s = rhs[i * m + c];
      for (std::size_t k = i + 1; k < n; ++k) s -= l[k * n + i] * rhs[k * m + c];
      rhs[i * m + c] = s / l[i * n + i];
    }
  }
}

std::vector<double> apply_affine(const StyleTransform& style, std::span<const float> v) {
  std::vector<double> out(style.bias);
  for (std::size_t r = 0; r < style.dim_out; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < style.dim_in; ++c) s += style.w(r, c) * static_cast<double>(v[c]);
    out[r] += s;
  }
  return out;
}

void check_aligned(const EmbeddingSet& styled, const EmbeddingSet& clips) {
  if (styled.size() != clips.size()) {
    throw Error(ErrorCode::CountMismatch, std::to_string(styled.size()) + " styled rows vs " +
                                              std::to_string(clips.size()) + " clips");
  }
  if (styled.ids() != clips.ids()) {
    throw Error(ErrorCode::IdMismatch, "styled rows are not aligned with clip ids");
  }
  if (styled.dim() != clips.dim()) throw Error(ErrorCode::DimMismatch, "styled vs clip dim");
  if (!styled.normalized() || !clips.normalized()) {
    throw Error(ErrorCode::NotNormalized, "filtering needs normalized embeddings");
  }
}

std::vector<double> pair_sims(const EmbeddingSet& styled, const EmbeddingSet& clips) {
  std::vector<double> sims(styled.size());
  parallel_for(styled.size(), [&](std::size_t i) { sims[i] = cosine_sim(styled.row(i), clips.row(i)); });
  return sims;
}

}  // namespace

StyleFit fit_style(const PseudoPairSet& pseudo, const EmbeddingSet& queries,
                   const EmbeddingSet& clips, double ridge_lambda, double noise_sigma,
                   std::string style_tag) {
  if (!(ridge_lambda >= 0.0) || !std::isfinite(ridge_lambda)) {
    throw Error(ErrorCode::ConfigInvalid, "ridge_lambda must be finite and >= 0");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw Error(ErrorCode::ConfigInvalid, "noise_sigma must be finite and >= 0");
  }
  const std::size_t din = clips.dim();
  const std::size_t dout = queries.dim();
  const std::size_t p = din + 1;  // last column of the design is the bias

  // Gram = XᵀX + lambda·diag(1..1, 0),  cross = XᵀT  (p x dout)
  std::vector<double> gram(p * p, 0.0);
  std::vector<double> cross(p * dout, 0.0);
  std::vector<double> x(p);
  for (const auto& pair : pseudo.pairs) {
    const auto qrow = queries.find(pair.query_id);
    const auto crow = clips.find(pair.clip_id);
    if (!qrow) throw Error(ErrorCode::UnknownCandidate, "query " + std::to_string(pair.query_id));
    if (!crow) throw Error(ErrorCode::UnknownCandidate, "clip " + std::to_string(pair.clip_id));
    const auto v = clips.row(*crow);
    const auto t = queries.row(*qrow);
    for (std::size_t k = 0; k < din; ++k) x[k] = v[k];
    x[din] = 1.0;
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t j = 0; j <= i; ++j) gram[i * p + j] += x[i] * x[j];
      for (std::size_t c = 0; c < dout; ++c) cross[i * dout + c] += x[i] * static_cast<double>(t[c]);
    }
  }
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < i; ++j) gram[j * p + i] = gram[i * p + j];
  }
  for (std::size_t i = 0; i < din; ++i) gram[i * p + i] += ridge_lambda;

  cholesky(gram, p);
  cholesky_solve(gram, p, cross, dout);

  StyleFit fit;
  auto& s = fit.transform;
  s.dim_in = din;
  s.dim_out = dout;
  s.weight.resize(dout * din);
  s.bias.resize(dout);
  for (std::size_t r = 0; r < dout; ++r) {
    for (std::size_t c = 0; c < din; ++c) s.weight[r * din + c] = cross[c * dout + r];
    s.bias[r] = cross[din * dout + r];
  }
  s.ridge_lambda = ridge_lambda;
  s.noise_sigma = noise_sigma;
  s.style_tag = std::move(style_tag);

  double sse = 0.0;
  for (const auto& pair : pseudo.pairs) {
    const auto pred = apply_affine(s, clips.row(*clips.find(pair.clip_id)));
    const auto t = queries.row(*queries.find(pair.query_id));
    for (std::size_t c = 0; c < dout; ++c) {
      const double e = pred[c] - static_cast<double>(t[c]);
      sse += e * e;
    }
  }
  fit.pair_count = pseudo.pairs.size();
  fit.residual_rms = fit.pair_count ? std::sqrt(sse / static_cast<double>(fit.pair_count)) : 0.0;
  return fit;
}

EmbeddingSet generate_styled(const EmbeddingSet& clips, const StyleTransform& style,
                             std::uint64_t seed) {
  if (style.dim_in != clips.dim()) {
    throw Error(ErrorCode::DimMismatch, "style expects dim " + std::to_string(style.dim_in) +
                                            ", clips have " + std::to_string(clips.dim()));
  }
  std::vector<float> data(clips.size() * style.dim_out);
  parallel_for(clips.size(), [&](std::size_t i) {
    auto out = apply_affine(style, clips.row(i));
    if (style.noise_sigma > 0.0) {
      Rng rng = make_rng(seed, clips.id(i));
      for (double& v : out) v += style.noise_sigma * standard_normal(rng);
    }
    double norm2 = 0.0;
    for (double v : out) norm2 += v * v;
    if (!(norm2 > 0.0) || !std::isfinite(norm2)) {
      throw Error(ErrorCode::ZeroVectorRow, "styled row for clip " + std::to_string(clips.id(i)));
    }
    const double norm = std::sqrt(norm2);
    float* dst = data.data() + i * style.dim_out;
    for (std::size_t k = 0; k < style.dim_out; ++k) dst[k] = static_cast<float>(out[k] / norm);
  });
  return EmbeddingSet(clips.ids(), style.dim_out, std::move(data), true);
}

GeneratedPairSet filter_pairs(const EmbeddingSet& styled, const EmbeddingSet& clips,
                              double threshold, std::string style_tag) {
  check_aligned(styled, clips);
  const auto sims = pair_sims(styled, clips);
  GeneratedPairSet out;
  out.threshold = threshold;
  out.style_tag = std::move(style_tag);
  out.candidates = sims.size();
  for (std::size_t i = 0; i < sims.size(); ++i) {
    if (sims[i] > threshold) out.pairs.push_back({styled.id(i), i, sims[i]});
  }
  return out;
}

std::vector<SweepRow> threshold_sweep(const EmbeddingSet& styled, const EmbeddingSet& clips,
                                      const std::vector<double>& thresholds) {
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) {
    throw Error(ErrorCode::UnsortedThresholds, "thresholds must be ascending");
  }
  check_aligned(styled, clips);
  auto sims = pair_sims(styled, clips);
  std::sort(sims.begin(), sims.end());
  std::vector<SweepRow> rows;
  for (double th : thresholds) {
    const auto first_above = std::upper_bound(sims.begin(), sims.end(), th);
    const auto kept = static_cast<std::size_t>(sims.end() - first_above);
    rows.push_back({th, kept, sims.empty() ? 0.0 : static_cast<double>(kept) / sims.size()});
  }
  return rows;
}

void save_style(const std::filesystem::path& path, const StyleTransform& style) {
  iemb::Writer w;
  w.u32(static_cast<std::uint32_t>(style.dim_out));
  w.u32(static_cast<std::uint32_t>(style.dim_in));
  w.f64(style.ridge_lambda);
  w.f64(style.noise_sigma);
  w.str(style.style_tag);
  for (double v : style.weight) w.f64(v);
  for (double v : style.bias) w.f64(v);
  iemb::write_file(path, iemb::encode_chunks({{"STYL", w.take()}}));
}

StyleTransform load_style(const std::filesystem::path& path) {
  const auto chunks = iemb::decode_chunks(iemb::read_file(path));
  iemb::Reader r(iemb::find_chunk(chunks, "STYL"));
  StyleTransform s;
  s.dim_out = r.u32();
  s.dim_in = r.u32();
  s.ridge_lambda = r.f64();
  s.noise_sigma = r.f64();
  s.style_tag = r.str();
  if (r.remaining() != (s.dim_out * s.dim_in + s.dim_out) * sizeof(double)) {
    throw Error(ErrorCode::TruncatedFile, "STYL payload size does not match its dims");
  }
  s.weight.resize(s.dim_out * s.dim_in);
  s.bias.resize(s.dim_out);
  for (double& v : s.weight) v = r.f64();
  for (double& v : s.bias) v = r.f64();
  for (double v : s.weight) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "style weight");
  }
  for (double v : s.bias) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "style bias");
  }
  return s;
}

void save_generated_pairs(const std::filesystem::path& path, const GeneratedPairSet& set) {
  std::vector<nlohmann::json> lines;
  lines.reserve(set.pairs.size() + 1);
  lines.push_back({{"kind", "generated_pairs"},
                   {"threshold", set.threshold},
                   {"style_tag", set.style_tag},
                   {"candidates", set.candidates},
                   {"count", set.pairs.size()}});
  for (const auto& p : set.pairs) {
    lines.push_back({{"clip_id", p.clip_id}, {"row", p.row}, {"sim", p.sim}});
  }
  jsonl::write(path, lines);
}

GeneratedPairSet load_generated_pairs(const std::filesystem::path& path) {
  const auto lines = jsonl::read(path);
  GeneratedPairSet set;
  try {
    if (lines.empty() || lines.front().value("kind", "") != "generated_pairs") {
      throw Error(ErrorCode::ParseError, path.string() + ": missing generated_pairs header");
    }
    const auto& h = lines.front();
    set.threshold = h.at("threshold").get<double>();
    set.style_tag = h.at("style_tag").get<std::string>();
    set.candidates = h.at("candidates").get<std::size_t>();
    for (std::size_t i = 1; i < lines.size(); ++i) {
      set.pairs.push_back({lines[i].at("clip_id").get<EmbeddingId>(),
                           lines[i].at("row").get<std::size_t>(),
                           lines[i].at("sim").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  return set;
}

}  // namespace instyle
