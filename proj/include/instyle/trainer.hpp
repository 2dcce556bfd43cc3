#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "instyle/embedding.hpp"
#include "instyle/styler.hpp"

namespace instyle {

inline constexpr double kDefaultTemperature = 0.05;

/// Linear text and video projection heads over frozen embeddings plus a fixed
/// softmax temperature. Weights are float64 in memory and float32 on disk.
struct AdapterModel {
  std::size_t proj_dim = 0;
  std::size_t text_dim = 0;
  std::size_t video_dim = 0;
  std::vector<double> text_head;   // proj_dim x text_dim
  std::vector<double> video_head;  // proj_dim x video_dim
  double tau = kDefaultTemperature;
  std::uint64_t step_count = 0;

  /// Square identity heads: projected similarities equal raw cosine.
  static AdapterModel identity(std::size_t dim, double tau = kDefaultTemperature);

  friend bool operator==(const AdapterModel&, const AdapterModel&) = default;
};

/// Unit-norm projection of `x` through a proj x dim head. Throws
/// NonFiniteLoss when the projection vanishes.
std::vector<double> project(std::span<const double> head, std::size_t proj_dim,
                            std::span<const float> x);

/// FIFO of detached, normalized projections used as extra negatives for
/// batches of one style.
class NegativeQueue {
 public:
  NegativeQueue(std::string style_tag, std::size_t capacity, std::size_t proj_dim)
      : style_tag_(std::move(style_tag)), capacity_(capacity), proj_dim_(proj_dim) {}

  const std::string& style_tag() const noexcept { return style_tag_; }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return size_; }
  std::size_t proj_dim() const noexcept { return proj_dim_; }

  /// Appends one pair, evicting the oldest once full.
  void push(std::span<const double> text, std::span<const double> video);
  /// Entry i counted from the oldest.
  std::span<const double> text(std::size_t i) const { return {texts_.data() + slot(i) * proj_dim_, proj_dim_}; }
  std::span<const double> video(std::size_t i) const { return {videos_.data() + slot(i) * proj_dim_, proj_dim_}; }

 private:
  std::size_t slot(std::size_t i) const { return (head_ + i) % capacity_; }

  std::string style_tag_;
  std::size_t capacity_;
  std::size_t proj_dim_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
  std::vector<double> texts_;  // ring buffers, capacity x proj_dim
  std::vector<double> videos_;
};

/// Row views of one minibatch; texts[i] and videos[i] form a positive pair.
struct BatchView {
  std::vector<std::span<const float>> texts;
  std::vector<std::span<const float>> videos;
};

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad_text_head;
  std::vector<double> grad_video_head;
  std::vector<std::vector<double>> text_proj;   // normalized, for enqueueing
  std::vector<std::vector<double>> video_proj;
};

/// Symmetric InfoNCE over the B x B similarity matrix (over temperature), with
/// queue entries appended as negative columns in both directions:
///
///   L = -1/(2B) * sum_i [ log softmax_j(u_i·w_j / tau)_i + log softmax_j(w_i·u_j / tau)_i ]
///
/// where u and w are the renormalized text and video projections. Gradients
/// with respect to both heads are exact.
LossResult info_nce_loss(const AdapterModel& model, const BatchView& batch,
                         const NegativeQueue* queue = nullptr);

struct GradCheckResult {
  double max_rel_error = 0.0;  // |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
  double max_abs_error = 0.0;
  std::size_t weights_checked = 0;
};

/// Five-point central differences over every head weight, step `eps`.
GradCheckResult grad_check(const AdapterModel& model, const BatchView& batch, double eps,
                           const NegativeQueue* queue = nullptr);

enum class ScheduleMode { Mixed, InStyle };
std::string to_string(ScheduleMode mode);
ScheduleMode parse_schedule_mode(const std::string& name);

inline constexpr const char* kMixedTag = "mixed";

struct PairRef {
  std::size_t set = 0;   // index into the style-set list
  std::size_t pair = 0;  // index into that set's pairs

  friend bool operator==(const PairRef&, const PairRef&) = default;
  friend auto operator<=>(const PairRef&, const PairRef&) = default;
};

struct PlannedBatch {
  std::string style_tag;  // the set's tag, or "mixed"
  std::vector<PairRef> items;

  friend bool operator==(const PlannedBatch&, const PlannedBatch&) = default;
};

struct StyleBatchPlan {
  std::vector<PlannedBatch> batches;
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
  ScheduleMode mode = ScheduleMode::InStyle;

  friend bool operator==(const StyleBatchPlan&, const StyleBatchPlan&) = default;
};

/// One epoch of minibatches. Set s is shuffled with the stream
/// make_rng(seed, s); ragged tails are dropped.
///
/// InStyle: every batch comes from a single set, and sets are interleaved by
/// smooth weighted round-robin (batch k of a set with n batches sits at
/// (k + 1/2) / n; ties go to the lower set index). Mixed: the union of all
/// pairs is shuffled with make_rng(seed, 0) and cut into batches, so a
/// single-set Mixed plan equals the InStyle plan.
StyleBatchPlan plan_epoch(const std::vector<GeneratedPairSet>& sets, std::size_t batch_size,
                          ScheduleMode mode, std::uint64_t seed);

/// Training inputs for one style: the filtered pairs plus the styled caption
/// and clip embeddings their rows index into.
struct StyleData {
  const GeneratedPairSet* pairs = nullptr;
  const EmbeddingSet* styled = nullptr;
  const EmbeddingSet* clips = nullptr;
};

struct OptimizerConfig {
  double learning_rate = 0.5;
  double momentum = 0.9;
  std::size_t queue_capacity = 1024;  // 0 disables queues
};

struct LossLogEntry {
  std::uint64_t step = 0;
  std::string style_tag;
  double loss = 0.0;

  friend bool operator==(const LossLogEntry&, const LossLogEntry&) = default;
};

/// SGD (with optional momentum) over a sequence of epoch plans. Optimizer
/// state and per-style queues persist across `run` calls.
class Trainer {
 public:
  Trainer(AdapterModel model, OptimizerConfig config);

  /// Executes the plan in order and returns one log entry per batch. After
  /// each step the batch projections enter the queue keyed by the batch tag.
  std::vector<LossLogEntry> run(const StyleBatchPlan& plan, std::span<const StyleData> data);

  const AdapterModel& model() const noexcept { return model_; }
  const std::map<std::string, NegativeQueue>& queues() const noexcept { return queues_; }

 private:
  AdapterModel model_;
  OptimizerConfig config_;
  std::vector<double> text_velocity_;
  std::vector<double> video_velocity_;
  std::map<std::string, NegativeQueue> queues_;
};

struct TrainResult {
  AdapterModel model;
  std::vector<LossLogEntry> log;
};

TrainResult train(const AdapterModel& model, const StyleBatchPlan& plan,
                  std::span<const StyleData> data, const OptimizerConfig& config);

void save_adapter(const std::filesystem::path& path, const AdapterModel& model);
AdapterModel load_adapter(const std::filesystem::path& path);

void save_loss_log(const std::filesystem::path& path, std::span<const LossLogEntry> log);

}  // namespace instyle
