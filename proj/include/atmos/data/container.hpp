#pragma once

// Shared framing for the on-disk formats:
//   magic (4 bytes) | version u32 LE | manifest length u64 LE | JSON manifest | payload
// Payload layout is owned by each format; all integers and floats are little-endian.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace atmos::data {

class ArchiveError : public std::runtime_error {
 public:
  enum class Kind { kIo, kBadMagic, kVersionMismatch, kTruncated, kChecksumMismatch, kBadManifest };
  ArchiveError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline const char* archive_error_name(ArchiveError::Kind k) {
  switch (k) {
    case ArchiveError::Kind::kIo: return "io";
    case ArchiveError::Kind::kBadMagic: return "bad-magic";
    case ArchiveError::Kind::kVersionMismatch: return "version-mismatch";
    case ArchiveError::Kind::kTruncated: return "truncated";
    case ArchiveError::Kind::kChecksumMismatch: return "checksum-mismatch";
    case ArchiveError::Kind::kBadManifest: return "bad-manifest";
  }
  return "unknown";
}

using Bytes = std::vector<std::uint8_t>;

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void str(const std::string& s) { raw(s.data(), s.size()); }
  /// CRC32 of everything written since `from`, appended as u32.
  void crc_since(std::size_t from) { u32(crc32_of(buf_.data() + from, buf_.size() - from)); }

  std::size_t size() const { return buf_.size(); }
  Bytes& bytes() { return buf_; }

  static std::uint32_t crc32_of(const std::uint8_t* p, std::size_t n) {
    uLong c = crc32(0L, Z_NULL, 0);
    while (n > 0) {
      const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
      c = crc32(c, p, chunk);
      p += chunk;
      n -= chunk;
    }
    return static_cast<std::uint32_t>(c);
  }

 private:
  Bytes buf_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* p, std::size_t n, std::string context) : p_(p), n_(n), ctx_(std::move(context)) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    const auto* b = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const auto* b = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  const std::uint8_t* take(std::size_t k) {
    if (k > n_ - pos_)
      throw ArchiveError(ArchiveError::Kind::kTruncated, ctx_ + ": truncated (need " + std::to_string(k) +
                                                             " bytes at offset " + std::to_string(pos_) + ", have " +
                                                             std::to_string(n_ - pos_) + ")");
    const auto* b = p_ + pos_;
    pos_ += k;
    return b;
  }
  /// Reads a trailing CRC32 and compares it with the bytes since `from`.
  bool check_crc_since(std::size_t from) {
    const std::uint32_t expect = ByteWriter::crc32_of(p_ + from, pos_ - from);
    return u32() == expect;
  }
  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) {
    if (p > n_) throw ArchiveError(ArchiveError::Kind::kTruncated, ctx_ + ": offset beyond end of payload");
    pos_ = p;
  }
  std::size_t remaining() const { return n_ - pos_; }

 private:
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
  std::string ctx_;
};

struct Framed {
  std::string manifest;
  Bytes payload;
};

inline void write_framed(const std::string& path, const char (&magic)[5], std::uint32_t version,
                         const std::string& manifest, const Bytes& payload) {
  ByteWriter head;
  head.raw(magic, 4);
  head.u32(version);
  head.u64(manifest.size());
  head.str(manifest);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArchiveError(ArchiveError::Kind::kIo, "cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(head.bytes().data()), static_cast<std::streamsize>(head.size()));
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!out) throw ArchiveError(ArchiveError::Kind::kIo, "write failed for " + path);
}

inline Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArchiveError(ArchiveError::Kind::kIo, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string s = ss.str();
  return Bytes(s.begin(), s.end());
}

inline Framed parse_framed(const Bytes& file, const char (&magic)[5], std::uint32_t version, const std::string& ctx) {
  if (file.size() < 4 || std::memcmp(file.data(), magic, 4) != 0)
    throw ArchiveError(ArchiveError::Kind::kBadMagic, ctx + ": not a " + std::string(magic, 4) + " file");
  ByteReader r(file.data(), file.size(), ctx);
  r.take(4);
  const std::uint32_t v = r.u32();
  if (v != version)
    throw ArchiveError(ArchiveError::Kind::kVersionMismatch,
                       ctx + ": format version " + std::to_string(v) + ", expected " + std::to_string(version));
  const std::uint64_t mlen = r.u64();
  if (mlen > r.remaining())
    throw ArchiveError(ArchiveError::Kind::kTruncated, ctx + ": manifest length exceeds file size");
  Framed f;
  const auto* m = r.take(static_cast<std::size_t>(mlen));
  f.manifest.assign(reinterpret_cast<const char*>(m), static_cast<std::size_t>(mlen));
  f.payload.assign(file.begin() + static_cast<std::ptrdiff_t>(r.pos()), file.end());
  return f;
}

inline Framed read_framed(const std::string& path, const char (&magic)[5], std::uint32_t version) {
  return parse_framed(read_file(path), magic, version, path);
}

}  // namespace atmos::data
