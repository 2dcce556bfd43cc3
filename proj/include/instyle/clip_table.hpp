#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "instyle/embedding.hpp"

namespace instyle {

struct Clip {
  EmbeddingId clip_id = 0;
  std::uint64_t source_video_id = 0;
  double start_s = 0.0;
  double end_s = 0.0;
  std::size_t frame_row_start = 0;  // half-open [start, end) into the frame set
  std::size_t frame_row_end = 0;

  friend bool operator==(const Clip&, const Clip&) = default;
};

struct SegmentOptions {
  double clip_length_s = 8.0;
  std::size_t max_clips_per_video = 15;
  std::size_t frames_per_clip = 8;  // m, sampled upstream
};

/// Cuts one source video into consecutive non-overlapping clips of
/// `clip_length_s`; the terminal clip may be shorter. Frame rows are assigned
/// `frames_per_clip` at a time starting at `first_frame_row`.
std::vector<Clip> segment_video(std::uint64_t source_video_id, double duration_s,
                                std::size_t first_frame_row, EmbeddingId first_clip_id,
                                const SegmentOptions& options);

/// Checks ordering, overlap, clip length and per-video count; throws
/// InvalidClipTable.
void validate_clip_table(std::span<const Clip> table, const SegmentOptions& options);

/// Mean of each clip's frame rows, L2-normalized after averaging.
EmbeddingSet pool_clips(const EmbeddingSet& frames, std::span<const Clip> table);

void save_clip_table(const std::filesystem::path& path, std::span<const Clip> table);
std::vector<Clip> load_clip_table(const std::filesystem::path& path);

}  // namespace instyle
