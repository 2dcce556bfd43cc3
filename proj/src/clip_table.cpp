#include "instyle/clip_table.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>


#include "instyle/error.hpp"
#include "instyle/jsonl.hpp"

namespace instyle {

std::vector<Clip> segment_video(std::uint64_t source_video_id, double duration_s,
                                std::size_t first_frame_row, EmbeddingId first_clip_id,
                                const SegmentOptions& options) {
  if (!(options.clip_length_s > 0.0) || options.frames_per_clip == 0) {
    throw Error(ErrorCode::ConfigInvalid, "clip length and frames per clip must be positive");
  }
  if (!(duration_s >= 0.0)) throw Error(ErrorCode::ConfigInvalid, "negative video duration");

  std::vector<Clip> clips;
  double start = 0.0;
  while (start < duration_s && clips.size() < options.max_clips_per_video) {
    Clip c;
    c.clip_id = first_clip_id + clips.size();
    c.source_video_id = source_video_id;
    c.start_s = start;
    c.end_s = std::min(start + options.clip_length_s, duration_s);
    c.frame_row_start = first_frame_row + clips.size() * options.frames_per_clip;
    c.frame_row_end = c.frame_row_start + options.frames_per_clip;
    clips.push_back(c);
    start += options.clip_length_s;
  }
  return clips;
}

void validate_clip_table(std::span<const Clip> table, const SegmentOptions& options) {
  std::map<std::uint64_t, std::vector<const Clip*>> by_video;
  for (const auto& c : table) by_video[c.source_video_id].push_back(&c);

  for (const auto& [video, clips] : by_video) {
    const auto where = " (video " + std::to_string(video) + ")";
    if (clips.size() > options.max_clips_per_video) {
      throw Error(ErrorCode::InvalidClipTable, "more than " +
                                                   std::to_string(options.max_clips_per_video) +
                                                   " clips" + where);
    }
    for (std::size_t i = 0; i < clips.size(); ++i) {
      const Clip& c = *clips[i];
      if (c.start_s < 0.0 || c.end_s <= c.start_s) {
        throw Error(ErrorCode::InvalidClipTable, "bad time span on clip " +
                                                     std::to_string(c.clip_id) + where);
      }
      if (i > 0 && c.start_s < clips[i - 1]->end_s) {
        throw Error(ErrorCode::InvalidClipTable, "clip " + std::to_string(c.clip_id) +
                                                     " overlaps or precedes its predecessor" +
                                                     where);
      }
      const bool terminal = i + 1 == clips.size();
      if (!terminal && std::abs((c.end_s - c.start_s) - options.clip_length_s) > 1e-9) {
        throw Error(ErrorCode::InvalidClipTable, "non-terminal clip " +
                                                     std::to_string(c.clip_id) +
                                                     " has the wrong length" + where);
      }
    }
  }
}

EmbeddingSet pool_clips(const EmbeddingSet& frames, std::span<const Clip> table) {
  const std::size_t dim = frames.dim();
  std::vector<EmbeddingId> ids;
  std::vector<float> data;
  ids.reserve(table.size());
  data.reserve(table.size() * dim);
  std::vector<double> mean(dim);

  for (const auto& clip : table) {
    if (clip.frame_row_end <= clip.frame_row_start) {
      throw Error(ErrorCode::EmptyClip, "clip " + std::to_string(clip.clip_id));
    }
    if (clip.frame_row_end > frames.size()) {
      throw Error(ErrorCode::RangeOutOfBounds, "clip " + std::to_string(clip.clip_id) +
                                                   " ends at frame row " +
                                                   std::to_string(clip.frame_row_end) + " of " +
                                                   std::to_string(frames.size()));
    }
    std::fill(mean.begin(), mean.end(), 0.0);
    for (std::size_t r = clip.frame_row_start; r < clip.frame_row_end; ++r) {
      const auto f = frames.row(r);
      for (std::size_t k = 0; k < dim; ++k) mean[k] += f[k];
    }
    const double n = static_cast<double>(clip.frame_row_end - clip.frame_row_start);
    double norm2 = 0.0;
    for (double& v : mean) {
      v /= n;
      norm2 += v * v;
    }
    if (norm2 == 0.0) throw Error(ErrorCode::ZeroVectorRow, "clip " + std::to_string(clip.clip_id));
    const double norm = std::sqrt(norm2);
    for (double v : mean) data.push_back(static_cast<float>(v / norm));
    ids.push_back(clip.clip_id);
  }
  return EmbeddingSet(std::move(ids), dim, std::move(data), true);
}

void save_clip_table(const std::filesystem::path& path, std::span<const Clip> table) {
  std::vector<nlohmann::json> lines;
  lines.reserve(table.size());
  for (const auto& c : table) {
    lines.push_back({{"clip_id", c.clip_id},
                     {"source_video_id", c.source_video_id},
                     {"start_s", c.start_s},
                     {"end_s", c.end_s},
                     {"frame_row_start", c.frame_row_start},
                     {"frame_row_end", c.frame_row_end}});
  }
  jsonl::write(path, lines);
}

std::vector<Clip> load_clip_table(const std::filesystem::path& path) {
  std::vector<Clip> table;
  for (const auto& j : jsonl::read(path)) {
    try {
      Clip c;
      c.clip_id = j.at("clip_id").get<EmbeddingId>();
      c.source_video_id = j.at("source_video_id").get<std::uint64_t>();
      c.start_s = j.at("start_s").get<double>();
      c.end_s = j.at("end_s").get<double>();
      c.frame_row_start = j.at("frame_row_start").get<std::size_t>();
      c.frame_row_end = j.at("frame_row_end").get<std::size_t>();
      table.push_back(c);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
    }
  }
  return table;
}

}  // namespace instyle
