#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "instyle/embedding.hpp"
#include "instyle/evaluator.hpp"

namespace instyle::synth {

/// Knobs of the synthetic cross-modal benchmark.
struct SynthConfig {
  std::size_t n_styles = 2;
  std::size_t queries_per_style = 512;
  std::size_t pool_size = 8192;
  std::size_t dim = 64;
  std::size_t content_dim = 16;
  double style_strength = 0.8;     // 0 = captions are plain content, 1 = fully restyled
  double cross_modal_noise = 0.1;  // expected norm of the per-modality noise vectors
  std::uint64_t seed = 7;
  double held_out_fraction = 0.25;
  std::size_t n_clusters = 16;
  double cluster_spread = 0.6;
  double style_bias = 0.5;  // norm of the style offset at full strength
  double aspect_emphasis = 1.5;  // log-std of per-dimension content emphasis at full strength

  /// Throws ConfigInvalid.
  void validate() const;
  std::size_t test_count() const;
  std::size_t train_count() const;  // training queries per style

  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);  // missing keys keep defaults
};

struct StyleParams {
  std::vector<double> matrix;  // dim x content_dim
  std::vector<double> offset;  // dim
};

/// Latent generating state, kept so tests can re-caption items.
struct LatentTruth {
  std::vector<double> test_contents;  // test_count x content_dim, unit rows
  std::vector<StyleParams> styles;
  std::vector<std::vector<double>> style_mixtures;  // per-style cluster weights of the queries
  std::vector<double> test_mixture;  // mean of the style mixtures; held-out items
  std::vector<double> pool_mixture;  // uniform; the uncurated pool
};

struct StyleSplit {
  std::string tag;
  EmbeddingSet train_queries;  // text only; ids disjoint from test ids
  EmbeddingSet test_queries;   // styled captions of the shared test items
};

struct SynthDataset {
  SynthConfig config;
  EmbeddingSet pool;        // uncurated clips, ids 0..pool_size-1
  EmbeddingSet test_clips;  // held-out clips, ids 0..test_count-1
  std::vector<StyleSplit> styles;
  TruthMap truth;  // test query id -> test clip id (shared by all styles)
  LatentTruth latent;
};

/// Deterministic in cfg.seed. Clip embedding: normalize(content ⊕ noise).
/// Style-s caption: normalize(A_s·content + b_s + noise) with
/// A_s = (1 - a)·[I; 0] + a·R_s and b_s = a·style_bias·u_s, a = style_strength.
/// Each style draws its queries from its own cluster mixture; the pool is
/// uniform over clusters and the shared held-out items follow the average of
/// the style mixtures.
SynthDataset generate(const SynthConfig& cfg);

/// Style-`style` captions of the held-out items with an independent noise
/// stream `draw` (draw 0 reproduces the dataset's own test queries).
EmbeddingSet caption_test_items(const SynthDataset& data, std::size_t style, std::uint64_t draw);

/// Files written by write_dataset, relative to its directory.
std::string pool_file();
std::string test_clips_file();
std::string train_queries_file(std::size_t style);
std::string test_queries_file(std::size_t style);
std::string truth_file();

/// Writes the IEMB sets plus truth.jsonl (a config header, then one
/// {"style","query_id","clip_id"} line per held-out pair and style).
void write_dataset(const std::filesystem::path& dir, const SynthDataset& data);

/// Reads the truth file back: config header and the test truth map.
struct TruthFile {
  SynthConfig config;
  std::vector<std::string> style_tags;
  TruthMap truth;
};
TruthFile read_truth(const std::filesystem::path& path);

/// Loads a directory written by write_dataset. The latent record stays empty.
SynthDataset read_dataset(const std::filesystem::path& dir);

}  // namespace instyle::synth
