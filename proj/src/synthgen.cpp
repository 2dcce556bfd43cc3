#include "instyle/synthgen.hpp"

#include <cmath>
#include <numeric>

#include "instyle/error.hpp"
#include "instyle/iemb.hpp"
#include "instyle/jsonl.hpp"
#include "instyle/rng.hpp"

namespace instyle::synth {

namespace {

// Stream ids for make_rng(seed, stream). Each component draws from its own
// stream so changing one size leaves the others untouched; per-style streams
// add the style index to a base.
constexpr std::uint64_t kCentersStream = 1;
constexpr std::uint64_t kMixtureStream = 1000000;
constexpr std::uint64_t kStyleStream = 2000000;
constexpr std::uint64_t kTestContentStream = 200;
constexpr std::uint64_t kTestClipStream = 201;
constexpr std::uint64_t kTrainContentStream = 3000000;
constexpr std::uint64_t kTrainCaptionStream = 4000000;
constexpr std::uint64_t kPoolStream = 600;
constexpr std::uint64_t kTestCaptionStream = 5000000;

void fail(const std::string& what) { throw Error(ErrorCode::ConfigInvalid, what); }

std::vector<double> gaussian(Rng& rng, std::size_t n, double scale) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * standard_normal(rng);
  return v;
}

void normalize_in_place(std::vector<double>& v) {
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  const double n = std::sqrt(n2);
  if (n > 0.0) {
    for (double& x : v) x /= n;
  }
}

// d x cd matrix with orthonormal columns (Gram-Schmidt on Gaussian columns),
// so the restyled content keeps its norm.
std::vector<double> orthonormal_columns(Rng& rng, std::size_t d, std::size_t cd) {
  std::vector<std::vector<double>> cols;
  while (cols.size() < cd) {
    auto v = gaussian(rng, d, 1.0);
    for (const auto& q : cols) {
      double proj = 0.0;
      for (std::size_t k = 0; k < d; ++k) proj += v[k] * q[k];
      for (std::size_t k = 0; k < d; ++k) v[k] -= proj * q[k];
    }
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    if (n2 < 1e-12) continue;
    normalize_in_place(v);
    cols.push_back(std::move(v));
  }
  std::vector<double> m(d * cd);
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = 0; c < cd; ++c) m[r * cd + c] = cols[c][r];
  }
  return m;
}

std::size_t sample_cluster(Rng& rng, const std::vector<double>& weights) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    acc += weights[k];
    if (u < acc) return k;
  }
  return weights.size() - 1;
}

class Generator {
 public:
  explicit Generator(const SynthConfig& cfg) : cfg_(cfg) {}

  std::vector<std::vector<double>> centers() const {
    Rng rng = make_rng(cfg_.seed, kCentersStream);
    std::vector<std::vector<double>> out;
    for (std::size_t k = 0; k < cfg_.n_clusters; ++k) {
      auto c = gaussian(rng, cfg_.content_dim, 1.0);
      normalize_in_place(c);
      out.push_back(std::move(c));
    }
    return out;
  }

  // Each style's queries favour their own random half of the clusters (3:1);
  // the uncurated pool is uniform over clusters, so it overlaps every style
  // without matching any of them.
  std::vector<double> style_mixture(std::size_t style) const {
    std::vector<std::size_t> perm(cfg_.n_clusters);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng = make_rng(cfg_.seed, kMixtureStream + style);
    shuffle_in_place(perm, rng);
    std::vector<double> w(cfg_.n_clusters);
    for (std::size_t i = 0; i < perm.size(); ++i) w[perm[i]] = i < (perm.size() + 1) / 2 ? 3.0 : 1.0;
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& x : w) x /= total;
    return w;
  }

  StyleParams style(std::size_t s) const {
    const std::size_t d = cfg_.dim, cd = cfg_.content_dim;
    const double a = cfg_.style_strength;
    const double keep = std::sqrt(1.0 - a * a);
    Rng rng = make_rng(cfg_.seed, kStyleStream + s);
    StyleParams p;
    // The restyled component lives in the text-only dimensions, orthogonal
    // to the content subspace clips are expressed in.
    std::vector<double> random_map(d * cd, 0.0);
    if (d > cd) {
      const std::size_t extra = d - cd;
      const auto q = orthonormal_columns(rng, extra, std::min(cd, extra));
      const std::size_t cols = std::min(cd, extra);
      for (std::size_t r = 0; r < extra; ++r) {
        for (std::size_t c = 0; c < cols; ++c) random_map[(cd + r) * cd + c] = q[r * cols + c];
      }
    }
    // Per-dimension emphasis of the content itself: log-normal weights with
    // log-std a * aspect_emphasis, rescaled to unit mean square.
    std::vector<double> emphasis(cd);
    double mean_sq = 0.0;
    for (double& e : emphasis) {
      e = std::exp(a * cfg_.aspect_emphasis * standard_normal(rng));
      mean_sq += e * e;
    }
    mean_sq /= static_cast<double>(cd);
    for (double& e : emphasis) e /= std::sqrt(mean_sq);

    p.matrix.resize(d * cd);
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t c = 0; c < cd; ++c) {
        const double base = r == c ? emphasis[c] : 0.0;
        p.matrix[r * cd + c] = keep * base + a * random_map[r * cd + c];
      }
    }
    auto dir = gaussian(rng, d, 1.0);
    normalize_in_place(dir);
    p.offset.resize(d);
    for (std::size_t r = 0; r < d; ++r) p.offset[r] = a * cfg_.style_bias * dir[r];
    return p;
  }

  std::vector<double> content(Rng& rng, const std::vector<std::vector<double>>& centers,
                              const std::vector<double>& mixture) const {
    const auto& center = centers[sample_cluster(rng, mixture)];
    const double spread = cfg_.cluster_spread / std::sqrt(static_cast<double>(cfg_.content_dim));
    std::vector<double> c(cfg_.content_dim);
    for (std::size_t k = 0; k < c.size(); ++k) c[k] = center[k] + spread * standard_normal(rng);
    normalize_in_place(c);
    return c;
  }

  // normalize(content ⊕ noise) with the noise spread over the remaining dims.
  void clip(Rng& rng, const std::vector<double>& content, std::vector<float>& out) const {
    const std::size_t extra = cfg_.dim - cfg_.content_dim;
    std::vector<double> v(content);
    const double scale = extra ? cfg_.cross_modal_noise / std::sqrt(static_cast<double>(extra)) : 0.0;
    for (std::size_t k = 0; k < extra; ++k) v.push_back(scale * standard_normal(rng));
    normalize_in_place(v);
    for (double x : v) out.push_back(static_cast<float>(x));
  }

  void caption(Rng& rng, const std::vector<double>& content, const StyleParams& style,
               std::vector<float>& out) const {
    const std::size_t d = cfg_.dim, cd = cfg_.content_dim;
    const double scale = cfg_.cross_modal_noise / std::sqrt(static_cast<double>(d));
    std::vector<double> v(style.offset);
    for (std::size_t r = 0; r < d; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < cd; ++c) s += style.matrix[r * cd + c] * content[c];
      v[r] += s + scale * standard_normal(rng);
    }
    normalize_in_place(v);
    for (double x : v) out.push_back(static_cast<float>(x));
  }

 private:
  const SynthConfig& cfg_;
};

std::vector<EmbeddingId> iota_ids(EmbeddingId first, std::size_t n) {
  std::vector<EmbeddingId> ids(n);
  std::iota(ids.begin(), ids.end(), first);
  return ids;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_styles == 0) fail("n_styles must be positive");
  if (dim == 0 || content_dim == 0) fail("dim and content_dim must be positive");
  if (content_dim > dim) fail("content_dim must not exceed dim");
  if (!(held_out_fraction > 0.0 && held_out_fraction < 1.0)) {
    fail("held_out_fraction must lie in (0, 1)");
  }
  if (!(style_strength >= 0.0 && style_strength <= 1.0)) fail("style_strength must lie in [0, 1]");
  if (!(cross_modal_noise >= 0.0) || !std::isfinite(cross_modal_noise)) {
    fail("cross_modal_noise must be finite and >= 0");
  }
  if (!(cluster_spread >= 0.0) || !std::isfinite(cluster_spread)) fail("cluster_spread must be >= 0");
  if (!(style_bias >= 0.0) || !std::isfinite(style_bias)) fail("style_bias must be >= 0");
  if (!(aspect_emphasis >= 0.0) || !std::isfinite(aspect_emphasis)) fail("aspect_emphasis must be >= 0");
  if (n_clusters == 0) fail("n_clusters must be positive");
  if (test_count() == 0 || train_count() == 0) {
    fail("held_out_fraction leaves no test or no training queries");
  }
  if (pool_size < n_styles * queries_per_style) fail("pool_size must be >= total queries");
}

std::size_t SynthConfig::test_count() const {
  return static_cast<std::size_t>(std::llround(held_out_fraction * static_cast<double>(queries_per_style)));
}

std::size_t SynthConfig::train_count() const {
  const std::size_t t = test_count();
  return t >= queries_per_style ? 0 : queries_per_style - t;
}

nlohmann::json SynthConfig::to_json() const {
  return {{"n_styles", n_styles},
          {"queries_per_style", queries_per_style},
          {"pool_size", pool_size},
          {"dim", dim},
          {"content_dim", content_dim},
          {"style_strength", style_strength},
          {"cross_modal_noise", cross_modal_noise},
          {"seed", seed},
          {"held_out_fraction", held_out_fraction},
          {"n_clusters", n_clusters},
          {"cluster_spread", cluster_spread},
          {"style_bias", style_bias},
          {"aspect_emphasis", aspect_emphasis}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig c;
  try {
    c.n_styles = j.value("n_styles", c.n_styles);
    c.queries_per_style = j.value("queries_per_style", c.queries_per_style);
    c.pool_size = j.value("pool_size", c.pool_size);
    c.dim = j.value("dim", c.dim);
    c.content_dim = j.value("content_dim", c.content_dim);
    c.style_strength = j.value("style_strength", c.style_strength);
    c.cross_modal_noise = j.value("cross_modal_noise", c.cross_modal_noise);
    c.seed = j.value("seed", c.seed);
    c.held_out_fraction = j.value("held_out_fraction", c.held_out_fraction);
    c.n_clusters = j.value("n_clusters", c.n_clusters);
    c.cluster_spread = j.value("cluster_spread", c.cluster_spread);
    c.style_bias = j.value("style_bias", c.style_bias);
    c.aspect_emphasis = j.value("aspect_emphasis", c.aspect_emphasis);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("synth config: ") + e.what());
  }
  return c;
}

SynthDataset generate(const SynthConfig& cfg) {
  cfg.validate();
  const Generator gen(cfg);
  const auto centers = gen.centers();
  const std::size_t n_test = cfg.test_count();
  const std::size_t n_train = cfg.train_count();

  SynthDataset out;
  out.config = cfg;
  out.latent.pool_mixture.assign(cfg.n_clusters, 1.0 / static_cast<double>(cfg.n_clusters));
  out.latent.test_mixture.assign(cfg.n_clusters, 0.0);
  for (std::size_t s = 0; s < cfg.n_styles; ++s) {
    out.latent.style_mixtures.push_back(gen.style_mixture(s));
    for (std::size_t k = 0; k < cfg.n_clusters; ++k) {
      out.latent.test_mixture[k] += out.latent.style_mixtures[s][k] / static_cast<double>(cfg.n_styles);
    }
  }
  for (std::size_t s = 0; s < cfg.n_styles; ++s) out.latent.styles.push_back(gen.style(s));

  {
    Rng rng = make_rng(cfg.seed, kPoolStream);
    std::vector<float> data;
    data.reserve(cfg.pool_size * cfg.dim);
    for (std::size_t i = 0; i < cfg.pool_size; ++i) gen.clip(rng, gen.content(rng, centers, out.latent.pool_mixture), data);
    out.pool = EmbeddingSet(iota_ids(0, cfg.pool_size), cfg.dim, std::move(data), true);
  }

  {
    Rng content_rng = make_rng(cfg.seed, kTestContentStream);
    Rng clip_rng = make_rng(cfg.seed, kTestClipStream);
    std::vector<float> data;
    for (std::size_t i = 0; i < n_test; ++i) {
      const auto c = gen.content(content_rng, centers, out.latent.test_mixture);
      out.latent.test_contents.insert(out.latent.test_contents.end(), c.begin(), c.end());
      gen.clip(clip_rng, c, data);
      out.truth[i] = i;
    }
    out.test_clips = EmbeddingSet(iota_ids(0, n_test), cfg.dim, std::move(data), true);
  }

  for (std::size_t s = 0; s < cfg.n_styles; ++s) {
    StyleSplit split;
    split.tag = "style" + std::to_string(s);
    Rng content_rng = make_rng(cfg.seed, kTrainContentStream + s);
    Rng caption_rng = make_rng(cfg.seed, kTrainCaptionStream + s);
    std::vector<float> data;
    data.reserve(n_train * cfg.dim);
    for (std::size_t i = 0; i < n_train; ++i) {
      gen.caption(caption_rng, gen.content(content_rng, centers, out.latent.style_mixtures[s]),
                  out.latent.styles[s], data);
    }
    split.train_queries =
        EmbeddingSet(iota_ids(n_test + s * n_train, n_train), cfg.dim, std::move(data), true);
    out.styles.push_back(std::move(split));
  }
  for (std::size_t s = 0; s < cfg.n_styles; ++s) {
    out.styles[s].test_queries = caption_test_items(out, s, 0);
  }
  return out;
}

EmbeddingSet caption_test_items(const SynthDataset& data, std::size_t style, std::uint64_t draw) {
  const auto& cfg = data.config;
  if (style >= data.latent.styles.size()) throw Error(ErrorCode::ConfigInvalid, "style index");
  const Generator gen(cfg);
  const std::size_t n_test = cfg.test_count();
  Rng rng = make_rng(mix_seed(cfg.seed, kTestCaptionStream + style), draw);
  std::vector<float> out;
  out.reserve(n_test * cfg.dim);
  for (std::size_t i = 0; i < n_test; ++i) {
    const auto first = data.latent.test_contents.begin() + static_cast<std::ptrdiff_t>(i * cfg.content_dim);
    const std::vector<double> content(first, first + static_cast<std::ptrdiff_t>(cfg.content_dim));
    gen.caption(rng, content, data.latent.styles[style], out);
  }
  return EmbeddingSet(iota_ids(0, n_test), cfg.dim, std::move(out), true);
}

std::string pool_file() { return "pool.iemb"; }
std::string test_clips_file() { return "test_clips.iemb"; }
std::string train_queries_file(std::size_t style) { return "style" + std::to_string(style) + "_queries.iemb"; }
std::string test_queries_file(std::size_t style) { return "style" + std::to_string(style) + "_test.iemb"; }
std::string truth_file() { return "truth.jsonl"; }

void write_dataset(const std::filesystem::path& dir, const SynthDataset& data) {
  std::filesystem::create_directories(dir);
  iemb::save_embeddings(dir / pool_file(), data.pool);
  iemb::save_embeddings(dir / test_clips_file(), data.test_clips);
  std::vector<nlohmann::json> lines;
  nlohmann::json tags = nlohmann::json::array();
  for (const auto& s : data.styles) tags.push_back(s.tag);
  lines.push_back({{"kind", "synth_truth"}, {"config", data.config.to_json()}, {"styles", tags}});
  for (std::size_t s = 0; s < data.styles.size(); ++s) {
    iemb::save_embeddings(dir / train_queries_file(s), data.styles[s].train_queries);
    iemb::save_embeddings(dir / test_queries_file(s), data.styles[s].test_queries);
    for (const auto& [query, clip] : data.truth) {
      lines.push_back({{"style", data.styles[s].tag}, {"query_id", query}, {"clip_id", clip}});
    }
  }
  jsonl::write(dir / truth_file(), lines);
}

TruthFile read_truth(const std::filesystem::path& path) {
  const auto lines = jsonl::read(path);
  TruthFile out;
  try {
    if (lines.empty() || lines.front().value("kind", "") != "synth_truth") {
      throw Error(ErrorCode::ParseError, path.string() + ": missing synth_truth header");
    }
    out.config = SynthConfig::from_json(lines.front().at("config"));
    out.style_tags = lines.front().at("styles").get<std::vector<std::string>>();
    for (std::size_t i = 1; i < lines.size(); ++i) {
      out.truth[lines[i].at("query_id").get<EmbeddingId>()] = lines[i].at("clip_id").get<EmbeddingId>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  return out;
}

SynthDataset read_dataset(const std::filesystem::path& dir) {
  auto truth = read_truth(dir / truth_file());
  SynthDataset out;
  out.config = truth.config;
  out.truth = std::move(truth.truth);
  out.pool = iemb::load_embeddings(dir / pool_file());
  out.test_clips = iemb::load_embeddings(dir / test_clips_file());
  for (std::size_t s = 0; s < truth.style_tags.size(); ++s) {
    out.styles.push_back({truth.style_tags[s], iemb::load_embeddings(dir / train_queries_file(s)),
                          iemb::load_embeddings(dir / test_queries_file(s))});
  }
  return out;
}

}  // namespace instyle::synth
