#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "instyle/evaluator.hpp"
#include "instyle/matcher.hpp"
#include "instyle/styler.hpp"
#include "instyle/synthgen.hpp"
#include "instyle/trainer.hpp"

namespace instyle {

struct PipelineConfig {
  double threshold = kDefaultFilterThreshold;
  double tau = kDefaultTemperature;
  std::size_t batch_size = 64;
  double learning_rate = 0.5;
  double momentum = 0.9;
  std::size_t epochs = 5;
  std::size_t queue_capacity = 1024;
  MatchOptions match;
  double ridge_lambda = kDefaultRidgeLambda;
  double noise_sigma = kDefaultNoiseSigma;
  std::uint64_t seed = 7;
  bool deterministic = true;

  /// Throws ConfigInvalid.
  void validate() const;
  nlohmann::json to_json() const;
  /// Overlays the keys present in `j` onto `base`.
  static PipelineConfig from_json(const nlohmann::json& j, PipelineConfig base);
};

/// Products of match -> stylize -> filter for one query style.
struct StyleStages {
  PseudoPairSet pseudo;
  StyleFit fit;
  EmbeddingSet styled;
  GeneratedPairSet generated;
};

/// Seed for a style's caption noise, derived so styles never share a stream.
std::uint64_t stylize_seed(std::uint64_t seed, std::size_t style);
/// Seed of epoch `epoch`'s batch plan.
std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch);

StyleStages run_style_stages(const EmbeddingSet& queries, const EmbeddingSet& pool,
                             const PipelineConfig& cfg, const std::string& tag, std::size_t style);

struct TrainedAdapter {
  AdapterModel model;
  std::vector<LossLogEntry> log;
};

/// Identity-initialized adapter trained for cfg.epochs epochs over the
/// generated sets with the given schedule.
TrainedAdapter train_adapter(const std::vector<StyleStages>& stages, const EmbeddingSet& pool,
                             const PipelineConfig& cfg, ScheduleMode mode);

struct HeldOutSet {
  std::string tag;
  const EmbeddingSet* queries = nullptr;
  const EmbeddingSet* candidates = nullptr;
  const TruthMap* truth = nullptr;
};

/// Per-style reports plus their mean R@1.
nlohmann::json evaluate_sets(const AdapterModel* model, const std::vector<HeldOutSet>& sets);

struct PipelineRun {
  nlohmann::json report;
  std::vector<StyleStages> stages;
  std::vector<std::pair<ScheduleMode, TrainedAdapter>> adapters;
};

/// Full run on a dataset: zero-shot baseline, in_style training and, when
/// there is more than one style, mixed training, plus a side-by-side report.
PipelineRun run_pipeline(const synth::SynthDataset& data, const PipelineConfig& cfg);

}  // namespace instyle
