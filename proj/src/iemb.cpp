#include "instyle/iemb.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "instyle/error.hpp"

namespace instyle::iemb {

static_assert(std::endian::native == std::endian::little, "IEMB I/O assumes a little-endian host");

void Writer::raw(const void* data, std::size_t size) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  bytes_.insert(bytes_.end(), p, p + size);
}
void Writer::u32(std::uint32_t v) { raw(&v, sizeof v); }
void Writer::u64(std::uint64_t v) { raw(&v, sizeof v); }
void Writer::f32(float v) { raw(&v, sizeof v); }
void Writer::f64(double v) { raw(&v, sizeof v); }
void Writer::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  raw(s.data(), s.size());
}

void Reader::raw(void* out, std::size_t size) {
  if (remaining() < size) {
    throw Error(ErrorCode::TruncatedFile, "needed " + std::to_string(size) + " bytes at offset " +
                                              std::to_string(pos_) + ", have " +
                                              std::to_string(remaining()));
  }
  std::memcpy(out, bytes_.data() + pos_, size);
  pos_ += size;
}
std::uint32_t Reader::u32() {
  std::uint32_t v;
  raw(&v, sizeof v);
  return v;
}
std::uint64_t Reader::u64() {
  std::uint64_t v;
  raw(&v, sizeof v);
  return v;
}
float Reader::f32() {
  float v;
  raw(&v, sizeof v);
  return v;
}
double Reader::f64() {
  double v;
  raw(&v, sizeof v);
  return v;
}
std::string Reader::str() {
  const std::uint32_t n = u32();
  std::string s(n, '\0');
  raw(s.data(), n);
  return s;
}

namespace {

struct Header {
  std::uint64_t count = 0;
  std::uint32_t dim = 0;
  std::uint32_t flags = 0;
};

Header read_header(Reader& in) {
  std::array<char, 4> magic{};
  in.raw(magic.data(), magic.size());
  if (magic != kMagic) {
    throw Error(ErrorCode::MagicMismatch, "got '" + std::string(magic.begin(), magic.end()) + "'");
  }
  const std::uint32_t version = in.u32();
  if (version != kVersion) {
    throw Error(ErrorCode::VersionUnsupported, "version " + std::to_string(version));
  }
  Header h;
  h.count = in.u64();
  h.dim = in.u32();
  h.flags = in.u32();
  return h;
}

void write_header(Writer& out, const Header& h) {
  out.raw(kMagic.data(), kMagic.size());
  out.u32(kVersion);
  out.u64(h.count);
  out.u32(h.dim);
  out.u32(h.flags);
}

}  // namespace

Bytes encode(const EmbeddingSet& set) {
  Writer out;
  write_header(out, {set.size(), static_cast<std::uint32_t>(set.dim()),
                     set.normalized() ? kFlagNormalized : 0u});
  out.raw(set.ids().data(), set.ids().size() * sizeof(EmbeddingId));
  out.raw(set.data().data(), set.data().size() * sizeof(float));
  return out.take();
}

EmbeddingSet decode(const Bytes& bytes) {
  Reader in(bytes);
  const Header h = read_header(in);
  if (h.flags & kFlagChunked) {
    throw Error(ErrorCode::ParseError, "chunk container where an embedding set was expected");
  }
  // Check the declared size up front so a corrupt count cannot trigger a
  // huge allocation.
  const std::uint64_t need = h.count * sizeof(EmbeddingId) + h.count * h.dim * sizeof(float);
  if (h.dim != 0 && h.count > in.remaining() / (sizeof(EmbeddingId) + h.dim * sizeof(float))) {
    throw Error(ErrorCode::TruncatedFile, "header declares " + std::to_string(h.count) +
                                              " rows but only " + std::to_string(in.remaining()) +
                                              " body bytes remain");
  }
  std::vector<EmbeddingId> ids(h.count);
  std::vector<float> data(h.count * h.dim);
  in.raw(ids.data(), ids.size() * sizeof(EmbeddingId));
  in.raw(data.data(), data.size() * sizeof(float));
  if (in.remaining() != 0) {
    throw Error(ErrorCode::ParseError, std::to_string(in.remaining()) + " trailing bytes after " +
                                           std::to_string(need) + " body bytes");
  }
  return EmbeddingSet(std::move(ids), h.dim, std::move(data), (h.flags & kFlagNormalized) != 0);
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingSet& set) {
  write_file(path, encode(set));
}

EmbeddingSet load_embeddings(const std::filesystem::path& path) { return decode(read_file(path)); }

Bytes encode_chunks(const std::vector<Chunk>& chunks) {
  Writer out;
  write_header(out, {0, 0, kFlagChunked});
  for (const auto& chunk : chunks) {
    if (chunk.tag.size() != 4) throw Error(ErrorCode::ParseError, "chunk tag must be 4 bytes");
    out.raw(chunk.tag.data(), 4);
    out.u64(chunk.payload.size());
    out.raw(chunk.payload.data(), chunk.payload.size());
  }
  return out.take();
}

std::vector<Chunk> decode_chunks(const Bytes& bytes) {
  Reader in(bytes);
  const Header h = read_header(in);
  if (!(h.flags & kFlagChunked)) {
    throw Error(ErrorCode::ParseError, "embedding set where a chunk container was expected");
  }
  std::vector<Chunk> chunks;
  while (in.remaining() > 0) {
    Chunk chunk;
    chunk.tag.resize(4);
    in.raw(chunk.tag.data(), 4);
    const std::uint64_t size = in.u64();
    if (size > in.remaining()) {
      throw Error(ErrorCode::TruncatedFile, "chunk '" + chunk.tag + "' declares " +
                                                std::to_string(size) + " bytes");
    }
    chunk.payload.resize(size);
    in.raw(chunk.payload.data(), size);
    chunks.push_back(std::move(chunk));
  }
  return chunks;
}

const Bytes& find_chunk(const std::vector<Chunk>& chunks, std::string_view tag) {
  const auto it = std::find_if(chunks.begin(), chunks.end(),
                               [&](const Chunk& c) { return c.tag == tag; });
  if (it == chunks.end()) throw Error(ErrorCode::MissingChunk, std::string(tag));
  return it->payload;
}

}  // namespace instyle::iemb
