#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "instyle/embedding.hpp"
#include "instyle/matcher.hpp"

namespace instyle {

/// Affine map from clip space into styled-caption space: t ≈ W·v + b.
///
/// Stands in for a fine-tuned captioner: rather than decoding text for each
/// clip, the styled caption embedding is predicted directly. `noise_sigma`
/// adds isotropic Gaussian jitter at generation time to diversify outputs.
struct StyleTransform {
  std::size_t dim_out = 0;
  std::size_t dim_in = 0;
  std::vector<double> weight;  // dim_out x dim_in, row-major
  std::vector<double> bias;    // dim_out
  double ridge_lambda = 0.0;
  double noise_sigma = 0.0;
  std::string style_tag;

  double w(std::size_t r, std::size_t c) const { return weight[r * dim_in + c]; }

  static StyleTransform identity(std::size_t dim, std::string tag = "identity");

  friend bool operator==(const StyleTransform&, const StyleTransform&) = default;
};

struct StyleFit {
  StyleTransform transform;
  double residual_rms = 0.0;  // sqrt(mean_i ||W·v_i + b - t_i||^2)
  std::size_t pair_count = 0;
};

inline constexpr double kDefaultRidgeLambda = 1e-2;
inline constexpr double kDefaultNoiseSigma = 0.05;
inline constexpr double kDefaultFilterThreshold = 0.28;

/// Ridge least squares over the pseudo pairs,
///   min  sum_i ||W·v_i + b - t_i||^2 + lambda·||W||_F^2   (bias unpenalized),
/// solved through the normal equations with a float64 Cholesky factorization.
/// Throws SingularSystem when the Gram matrix is not positive definite.
StyleFit fit_style(const PseudoPairSet& pseudo, const EmbeddingSet& queries,
                   const EmbeddingSet& clips, double ridge_lambda,
                   double noise_sigma = kDefaultNoiseSigma, std::string style_tag = "style");

/// Row i = normalize(W·v_i + b + eps_i), eps_i ~ N(0, sigma^2 I). Each row's
/// noise stream is derived from (seed, clip id), so output is independent of
/// worker count and row order.
EmbeddingSet generate_styled(const EmbeddingSet& clips, const StyleTransform& style,
                             std::uint64_t seed);

struct GeneratedPair {
  EmbeddingId clip_id = 0;
  std::size_t row = 0;  // row in the styled set (and the aligned clip set)
  double sim = 0.0;

  friend bool operator==(const GeneratedPair&, const GeneratedPair&) = default;
};

struct GeneratedPairSet {
  std::vector<GeneratedPair> pairs;
  double threshold = kDefaultFilterThreshold;
  std::string style_tag;
  std::size_t candidates = 0;  // pairs considered before filtering

  double retention_rate() const {
    return candidates == 0 ? 0.0 : static_cast<double>(pairs.size()) / static_cast<double>(candidates);
  }

  friend bool operator==(const GeneratedPairSet&, const GeneratedPairSet&) = default;
};

/// Keeps the aligned (styled_i, clip_i) pairs whose cosine similarity is
/// strictly greater than `threshold`.
GeneratedPairSet filter_pairs(const EmbeddingSet& styled, const EmbeddingSet& clips,
                              double threshold, std::string style_tag = "style");

struct SweepRow {
  double threshold = 0.0;
  std::size_t retained = 0;
  double rate = 0.0;
};

/// Retention per threshold; thresholds must be ascending.
std::vector<SweepRow> threshold_sweep(const EmbeddingSet& styled, const EmbeddingSet& clips,
                                      const std::vector<double>& thresholds);

void save_style(const std::filesystem::path& path, const StyleTransform& style);
StyleTransform load_style(const std::filesystem::path& path);

void save_generated_pairs(const std::filesystem::path& path, const GeneratedPairSet& set);
GeneratedPairSet load_generated_pairs(const std::filesystem::path& path);

}  // namespace instyle
