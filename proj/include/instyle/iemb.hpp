#pragma once

// IEMB container (little-endian):
//   "IEMB" | u32 version=1 | u64 count | u32 dim | u32 flags | count x u64 ids
//   | count*dim x f32 row-major
// flags bit 0 marks a normalized set. Bit 1 marks a chunk file: count and dim
// are zero and the body is a sequence of (4-byte tag, u64 length, payload).

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "instyle/embedding.hpp"

namespace instyle::iemb {

inline constexpr std::array<char, 4> kMagic{'I', 'E', 'M', 'B'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint32_t kFlagNormalized = 1u << 0;
inline constexpr std::uint32_t kFlagChunked = 1u << 1;

using Bytes = std::vector<std::uint8_t>;

Bytes encode(const EmbeddingSet& set);
EmbeddingSet decode(const Bytes& bytes);

void save_embeddings(const std::filesystem::path& path, const EmbeddingSet& set);
EmbeddingSet load_embeddings(const std::filesystem::path& path);

struct Chunk {
  std::string tag;  // exactly four characters
  Bytes payload;
};

Bytes encode_chunks(const std::vector<Chunk>& chunks);
std::vector<Chunk> decode_chunks(const Bytes& bytes);
/// Payload of the first chunk with `tag`; throws MissingChunk.
const Bytes& find_chunk(const std::vector<Chunk>& chunks, std::string_view tag);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const Bytes& bytes);

/// Append-only little-endian encoder.
class Writer {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void raw(const void* data, std::size_t size);
  void str(std::string_view s);  // u32 length prefix
  Bytes take() { return std::move(bytes_); }

 private:
  Bytes bytes_;
};

/// Bounds-checked decoder; running off the end throws TruncatedFile.
class Reader {
 public:
  explicit Reader(const Bytes& bytes) : bytes_(bytes) {}
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  void raw(void* out, std::size_t size);
  std::string str();
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  const Bytes& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace instyle::iemb
