#include "instyle/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "instyle/error.hpp"
#include "instyle/iemb.hpp"
#include "instyle/rng.hpp"

namespace instyle {

AdapterModel AdapterModel::identity(std::size_t dim, double tau) {
  AdapterModel m;
  m.proj_dim = m.text_dim = m.video_dim = dim;
  m.text_head.assign(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) m.text_head[i * dim + i] = 1.0;
  m.video_head = m.text_head;
  m.tau = tau;
  return m;
}

namespace {

struct Projection {
  std::vector<double> unit;
  double norm = 0.0;
};

Projection project_raw(std::span<const double> head, std::size_t proj_dim,
                       std::span<const float> x) {
  const std::size_t dim = x.size();
  Projection p;
  p.unit.resize(proj_dim);
  double norm2 = 0.0;
  for (std::size_t r = 0; r < proj_dim; ++r) {
    double s = 0.0;
    const double* w = head.data() + r * dim;
    for (std::size_t c = 0; c < dim; ++c) s += w[c] * static_cast<double>(x[c]);
    p.unit[r] = s;
    norm2 += s * s;
  }
  p.norm = std::sqrt(norm2);
  if (!(p.norm > 0.0) || !std::isfinite(p.norm)) {
    throw Error(ErrorCode::NonFiniteLoss, "projection has zero or non-finite norm");
  }
  for (double& v : p.unit) v /= p.norm;
  return p;
}

// Four interleaved partial sums combined in a fixed order: vectorizes, and
// the result depends only on the inputs.
double dot64(std::span<const double> a, std::span<const double> b) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  const std::size_t n = a.size();
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    s0 += a[k] * b[k];
    s1 += a[k + 1] * b[k + 1];
    s2 += a[k + 2] * b[k + 2];
    s3 += a[k + 3] * b[k + 3];
  }
  for (; k < n; ++k) s0 += a[k] * b[k];
  return (s0 + s1) + (s2 + s3);
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t k = 0; k < x.size(); ++k) y[k] += alpha * x[k];
}

// Softmax cross-entropy of one logit row against target index `target`;
// writes the probabilities into `prob`.
double row_loss(const std::vector<double>& logits, std::size_t target, std::vector<double>& prob) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  prob.resize(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) {
    prob[j] = std::exp(logits[j] - m);
    z += prob[j];
  }
  for (double& p : prob) p /= z;
  return (m + std::log(z)) - logits[target];
}

// dL/dW += ((g - u (u·g)) / ||p||) ⊗ x, the chain rule through p -> p/||p||.
void backprop_head(const Projection& p, std::span<const double> grad_unit, std::span<const float> x,
                   std::vector<double>& grad_head) {
  const double along = dot64(p.unit, grad_unit);
  const std::size_t dim = x.size();
  for (std::size_t r = 0; r < p.unit.size(); ++r) {
    const double dp = (grad_unit[r] - p.unit[r] * along) / p.norm;
    double* g = grad_head.data() + r * dim;
    for (std::size_t c = 0; c < dim; ++c) g[c] += dp * static_cast<double>(x[c]);
  }
}

}  // namespace

std::vector<double> project(std::span<const double> head, std::size_t proj_dim,
                            std::span<const float> x) {
  return project_raw(head, proj_dim, x).unit;
}

void NegativeQueue::push(std::span<const double> text, std::span<const double> video) {
  if (capacity_ == 0) return;
  if (text.size() != proj_dim_ || video.size() != proj_dim_) {
    throw Error(ErrorCode::DimMismatch, "queue entry dim");
  }
  if (texts_.empty()) {
    texts_.resize(capacity_ * proj_dim_);
    videos_.resize(capacity_ * proj_dim_);
  }
  const std::size_t slot = (head_ + size_) % capacity_;
  std::copy(text.begin(), text.end(), texts_.begin() + static_cast<std::ptrdiff_t>(slot * proj_dim_));
  std::copy(video.begin(), video.end(), videos_.begin() + static_cast<std::ptrdiff_t>(slot * proj_dim_));
  if (size_ < capacity_) {
    ++size_;
  } else {
    head_ = (head_ + 1) % capacity_;
  }
}

LossResult info_nce_loss(const AdapterModel& model, const BatchView& batch,
                         const NegativeQueue* queue) {
  const std::size_t b = batch.texts.size();
  if (b == 0 || batch.videos.size() != b) {
    throw Error(ErrorCode::CountMismatch, std::to_string(batch.texts.size()) + " texts vs " +
                                              std::to_string(batch.videos.size()) + " videos");
  }
  if (!(model.tau > 0.0) || !std::isfinite(model.tau)) {
    throw Error(ErrorCode::ConfigInvalid, "temperature must be positive and finite");
  }
  if (queue && queue->proj_dim() != model.proj_dim) {
    throw Error(ErrorCode::DimMismatch, "queue projection dim differs from model");
  }
  const std::size_t pd = model.proj_dim;
  const std::size_t nq = queue ? queue->size() : 0;

  std::vector<Projection> u(b), w(b);
  for (std::size_t i = 0; i < b; ++i) {
    if (batch.texts[i].size() != model.text_dim || batch.videos[i].size() != model.video_dim) {
      throw Error(ErrorCode::DimMismatch, "batch row dim differs from model");
    }
    u[i] = project_raw(model.text_head, pd, batch.texts[i]);
    w[i] = project_raw(model.video_head, pd, batch.videos[i]);
  }

  const double inv_tau = 1.0 / model.tau;
  const double scale = 1.0 / (2.0 * static_cast<double>(b));
  std::vector<std::vector<double>> gu(b, std::vector<double>(pd, 0.0));
  std::vector<std::vector<double>> gw(b, std::vector<double>(pd, 0.0));
  std::vector<double> logits(b + nq), prob;
  double total = 0.0;

  // text -> video rows: columns are batch videos, then queued videos
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) logits[j] = dot64(u[i].unit, w[j].unit) * inv_tau;
    for (std::size_t q = 0; q < nq; ++q) logits[b + q] = dot64(u[i].unit, queue->video(q)) * inv_tau;
    total += row_loss(logits, i, prob);
    for (std::size_t j = 0; j < b + nq; ++j) {
      const double coeff = (prob[j] - (j == i ? 1.0 : 0.0)) * scale * inv_tau;
      if (j < b) {
        axpy(coeff, w[j].unit, gu[i]);
        axpy(coeff, u[i].unit, gw[j]);
      } else {
        axpy(coeff, queue->video(j - b), gu[i]);
      }
    }
  }
  // video -> text rows: columns are batch texts, then queued texts
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) logits[j] = dot64(w[i].unit, u[j].unit) * inv_tau;
    for (std::size_t q = 0; q < nq; ++q) logits[b + q] = dot64(w[i].unit, queue->text(q)) * inv_tau;
    total += row_loss(logits, i, prob);
    for (std::size_t j = 0; j < b + nq; ++j) {
      const double coeff = (prob[j] - (j == i ? 1.0 : 0.0)) * scale * inv_tau;
      if (j < b) {
        axpy(coeff, u[j].unit, gw[i]);
        axpy(coeff, w[i].unit, gu[j]);
      } else {
        axpy(coeff, queue->text(j - b), gw[i]);
      }
    }
  }

  LossResult out;
  out.loss = total * scale;
  if (!std::isfinite(out.loss)) throw Error(ErrorCode::NonFiniteLoss, "loss is not finite");
  out.grad_text_head.assign(model.text_head.size(), 0.0);
  out.grad_video_head.assign(model.video_head.size(), 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    backprop_head(u[i], gu[i], batch.texts[i], out.grad_text_head);
    backprop_head(w[i], gw[i], batch.videos[i], out.grad_video_head);
  }
  out.text_proj.reserve(b);
  out.video_proj.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    out.text_proj.push_back(std::move(u[i].unit));
    out.video_proj.push_back(std::move(w[i].unit));
  }
  return out;
}

GradCheckResult grad_check(const AdapterModel& model, const BatchView& batch, double eps,
                           const NegativeQueue* queue) {
  const LossResult analytic = info_nce_loss(model, batch, queue);
  GradCheckResult result;
  AdapterModel probe = model;

  auto check_head = [&](std::vector<double>& head, const std::vector<double>& grad) {
    for (std::size_t k = 0; k < head.size(); ++k) {
      const double saved = head[k];
      auto loss_at = [&](double offset) {
        head[k] = saved + offset;
        return info_nce_loss(probe, batch, queue).loss;
      };
      // five-point central stencil, O(eps^4) truncation
      const double numeric =
          (8.0 * (loss_at(eps) - loss_at(-eps)) - (loss_at(2.0 * eps) - loss_at(-2.0 * eps))) / (12.0 * eps);
      head[k] = saved;
      const double abs_err = std::abs(numeric - grad[k]);
      const double denom = std::max({std::abs(numeric), std::abs(grad[k]), 1e-8});
      result.max_abs_error = std::max(result.max_abs_error, abs_err);
      result.max_rel_error = std::max(result.max_rel_error, abs_err / denom);
      ++result.weights_checked;
    }
  };
  check_head(probe.text_head, analytic.grad_text_head);
  check_head(probe.video_head, analytic.grad_video_head);
  return result;
}

std::string to_string(ScheduleMode mode) { return mode == ScheduleMode::Mixed ? "mixed" : "in_style"; }

ScheduleMode parse_schedule_mode(const std::string& name) {
  if (name == "mixed") return ScheduleMode::Mixed;
  if (name == "in_style") return ScheduleMode::InStyle;
  throw Error(ErrorCode::ConfigInvalid, "unknown schedule mode '" + name + "'");
}

StyleBatchPlan plan_epoch(const std::vector<GeneratedPairSet>& sets, std::size_t batch_size,
                          ScheduleMode mode, std::uint64_t seed) {
  if (sets.empty()) throw Error(ErrorCode::EmptyStyleSet, "no style sets");
  if (batch_size == 0) throw Error(ErrorCode::ConfigInvalid, "batch size must be positive");
  std::size_t total = 0;
  for (std::size_t s = 0; s < sets.size(); ++s) {
    if (sets[s].pairs.empty()) {
      throw Error(ErrorCode::EmptyStyleSet, "style set " + std::to_string(s) + " ('" +
                                                sets[s].style_tag + "') is empty");
    }
    if (mode == ScheduleMode::InStyle && batch_size > sets[s].pairs.size()) {
      throw Error(ErrorCode::BatchTooLarge, "batch size " + std::to_string(batch_size) +
                                                " exceeds style set '" + sets[s].style_tag +
                                                "' of " + std::to_string(sets[s].pairs.size()));
    }
    total += sets[s].pairs.size();
  }
  if (batch_size > total) {
    throw Error(ErrorCode::BatchTooLarge, "batch size " + std::to_string(batch_size) +
                                              " exceeds all " + std::to_string(total) + " pairs");
  }

  StyleBatchPlan plan;
  plan.batch_size = batch_size;
  plan.seed = seed;
  plan.mode = mode;

  auto cut = [&](const std::vector<PairRef>& order, const std::string& tag) {
    std::vector<PlannedBatch> out;
    for (std::size_t start = 0; start + batch_size <= order.size(); start += batch_size) {
      out.push_back({tag, {order.begin() + static_cast<std::ptrdiff_t>(start),
                           order.begin() + static_cast<std::ptrdiff_t>(start + batch_size)}});
    }
    return out;
  };

  if (mode == ScheduleMode::Mixed) {
    std::vector<PairRef> all;
    all.reserve(total);
    for (std::size_t s = 0; s < sets.size(); ++s) {
      for (std::size_t p = 0; p < sets[s].pairs.size(); ++p) all.push_back({s, p});
    }
    Rng rng = make_rng(seed, 0);
    shuffle_in_place(all, rng);
    plan.batches = cut(all, sets.size() == 1 ? sets[0].style_tag : kMixedTag);
    return plan;
  }

  std::vector<std::vector<PlannedBatch>> per_set;
  for (std::size_t s = 0; s < sets.size(); ++s) {
    std::vector<PairRef> order;
    for (std::size_t p = 0; p < sets[s].pairs.size(); ++p) order.push_back({s, p});
    Rng rng = make_rng(seed, s);
    shuffle_in_place(order, rng);
    per_set.push_back(cut(order, sets[s].style_tag));
  }
  // Smooth weighted round-robin: batch k of a set with n batches is due at
  // (2k + 1) / (2n). Compare cross-multiplied to stay in integers.
  std::vector<std::size_t> next(sets.size(), 0);
  while (true) {
    std::optional<std::size_t> pick;
    for (std::size_t s = 0; s < sets.size(); ++s) {
      const std::size_t n = per_set[s].size();
      if (next[s] >= n) continue;
      if (!pick) {
        pick = s;
        continue;
      }
      const std::size_t m = per_set[*pick].size();
      const auto lhs = (2 * next[s] + 1) * m;
      const auto rhs = (2 * next[*pick] + 1) * n;
      if (lhs < rhs) pick = s;
    }
    if (!pick) break;
    plan.batches.push_back(std::move(per_set[*pick][next[*pick]++]));
  }
  return plan;
}

Trainer::Trainer(AdapterModel model, OptimizerConfig config)
    : model_(std::move(model)),
      config_(config),
      text_velocity_(model_.text_head.size(), 0.0),
      video_velocity_(model_.video_head.size(), 0.0) {
  for (double v : model_.text_head) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "initial text head");
  }
  for (double v : model_.video_head) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "initial video head");
  }
}

std::vector<LossLogEntry> Trainer::run(const StyleBatchPlan& plan, std::span<const StyleData> data) {
  std::vector<LossLogEntry> log;
  log.reserve(plan.batches.size());
  BatchView view;
  for (const auto& batch : plan.batches) {
    view.texts.clear();
    view.videos.clear();
    for (const PairRef& ref : batch.items) {
      if (ref.set >= data.size()) throw Error(ErrorCode::RangeOutOfBounds, "plan style index");
      const StyleData& sd = data[ref.set];
      const GeneratedPair& pair = sd.pairs->pairs.at(ref.pair);
      if (pair.row >= sd.styled->size() || sd.styled->id(pair.row) != pair.clip_id ||
          sd.clips->id(pair.row) != pair.clip_id) {
        throw Error(ErrorCode::IdMismatch, "generated pair for clip " +
                                               std::to_string(pair.clip_id) +
                                               " does not match its embedding rows");
      }
      view.texts.push_back(sd.styled->row(pair.row));
      view.videos.push_back(sd.clips->row(pair.row));
    }

    NegativeQueue* queue = nullptr;
    if (config_.queue_capacity > 0) {
      auto it = queues_.find(batch.style_tag);
      if (it == queues_.end()) {
        it = queues_.emplace(batch.style_tag,
                             NegativeQueue(batch.style_tag, config_.queue_capacity, model_.proj_dim))
                 .first;
      }
      queue = &it->second;
    }

    LossResult step;
    try {
      step = info_nce_loss(model_, view, queue && queue->size() > 0 ? queue : nullptr);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFiniteLoss) throw;
      throw Error(ErrorCode::NonFiniteLoss, "at step " + std::to_string(model_.step_count) + ": " +
                                                e.what());
    }

    const double lr = config_.learning_rate;
    const double mu = config_.momentum;
    for (std::size_t k = 0; k < model_.text_head.size(); ++k) {
      text_velocity_[k] = mu * text_velocity_[k] + step.grad_text_head[k];
      model_.text_head[k] -= lr * text_velocity_[k];
    }
    for (std::size_t k = 0; k < model_.video_head.size(); ++k) {
      video_velocity_[k] = mu * video_velocity_[k] + step.grad_video_head[k];
      model_.video_head[k] -= lr * video_velocity_[k];
    }
    const auto finite = [](double v) { return std::isfinite(v); };
    if (!std::all_of(model_.text_head.begin(), model_.text_head.end(), finite) ||
        !std::all_of(model_.video_head.begin(), model_.video_head.end(), finite)) {
      throw Error(ErrorCode::NonFiniteLoss, "weights diverged at step " +
                                                std::to_string(model_.step_count));
    }

    if (queue) {
      for (std::size_t i = 0; i < step.text_proj.size(); ++i) {
        queue->push(step.text_proj[i], step.video_proj[i]);
      }
    }
    log.push_back({model_.step_count, batch.style_tag, step.loss});
    ++model_.step_count;
  }
  return log;
}

TrainResult train(const AdapterModel& model, const StyleBatchPlan& plan,
                  std::span<const StyleData> data, const OptimizerConfig& config) {
  Trainer trainer(model, config);
  auto log = trainer.run(plan, data);
  return {trainer.model(), std::move(log)};
}

void save_adapter(const std::filesystem::path& path, const AdapterModel& model) {
  iemb::Writer w;
  w.u32(static_cast<std::uint32_t>(model.proj_dim));
  w.u32(static_cast<std::uint32_t>(model.text_dim));
  w.u32(static_cast<std::uint32_t>(model.video_dim));
  w.f64(model.tau);
  w.u64(model.step_count);
  for (double v : model.text_head) w.f32(static_cast<float>(v));
  for (double v : model.video_head) w.f32(static_cast<float>(v));
  iemb::write_file(path, iemb::encode_chunks({{"ADPT", w.take()}}));
}

AdapterModel load_adapter(const std::filesystem::path& path) {
  const auto chunks = iemb::decode_chunks(iemb::read_file(path));
  iemb::Reader r(iemb::find_chunk(chunks, "ADPT"));
  AdapterModel m;
  m.proj_dim = r.u32();
  m.text_dim = r.u32();
  m.video_dim = r.u32();
  m.tau = r.f64();
  m.step_count = r.u64();
  if (r.remaining() != (m.proj_dim * (m.text_dim + m.video_dim)) * sizeof(float)) {
    throw Error(ErrorCode::TruncatedFile, "ADPT payload size does not match its dims");
  }
  if (!(m.tau > 0.0) || !std::isfinite(m.tau)) {
    throw Error(ErrorCode::NonFiniteValue, "adapter temperature");
  }
  m.text_head.resize(m.proj_dim * m.text_dim);
  m.video_head.resize(m.proj_dim * m.video_dim);
  for (double& v : m.text_head) v = r.f32();
  for (double& v : m.video_head) v = r.f32();
  for (double v : m.text_head) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "adapter text head");
  }
  for (double v : m.video_head) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "adapter video head");
  }
  return m;
}

void save_loss_log(const std::filesystem::path& path, std::span<const LossLogEntry> log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "step,style_tag,loss\n" << std::setprecision(17);
  for (const auto& e : log) out << e.step << ',' << e.style_tag << ',' << e.loss << '\n';
}

}  // namespace instyle
