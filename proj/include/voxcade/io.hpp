#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "voxcade/error.hpp"

namespace voxcade {

static_assert(std::endian::native == std::endian::little,
              "serialized formats assume a little-endian host");

inline std::vector<uint8_t> gunzip(const std::vector<uint8_t>& in) {
  z_stream zs{};
  // 16 + MAX_WBITS: expect a gzip wrapper
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) fail(errc::io_failure, "inflateInit2 failed");
  std::vector<uint8_t> out;
  out.reserve(in.size() * 4);
  std::vector<uint8_t> chunk(1 << 16);
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  int rc = Z_OK;
  do {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      fail(errc::io_failure, "gzip stream corrupt (zlib rc " + std::to_string(rc) + ")");
    }
    out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
  } while (rc != Z_STREAM_END);
  inflateEnd(&zs);
  return out;
}

// Reads a whole file; .gz content (by magic, not extension) is decompressed.
inline std::vector<uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(errc::io_failure, "cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) return gunzip(bytes);
  return bytes;
}

inline void write_file(const std::filesystem::path& path, const void* data, size_t n) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(errc::io_failure, "cannot open " + path.string() + " for writing");
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!f) fail(errc::io_failure, "short write to " + path.string());
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  write_file(path, text.data(), text.size());
}

// --- little-endian cursor over a byte buffer ------------------------------

class ByteReader {
 public:
  ByteReader(const uint8_t* data, size_t size) : p_(data), end_(data + size) {}
  explicit ByteReader(const std::vector<uint8_t>& v) : ByteReader(v.data(), v.size()) {}

  size_t remaining() const { return static_cast<size_t>(end_ - p_); }

  template <class T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    if (remaining() < sizeof(T)) fail(errc::truncated, "unexpected end of data");
    T v;
    std::memcpy(&v, p_, sizeof(T));
    p_ += sizeof(T);
    return v;
  }

  uint32_t get_u32_be() {
    if (remaining() < 4) fail(errc::truncated, "unexpected end of data");
    uint32_t v = (uint32_t(p_[0]) << 24) | (uint32_t(p_[1]) << 16) | (uint32_t(p_[2]) << 8) | uint32_t(p_[3]);
    p_ += 4;
    return v;
  }

  void get_bytes(void* out, size_t n) {
    if (remaining() < n) fail(errc::truncated, "unexpected end of data");
    std::memcpy(out, p_, n);
    p_ += n;
  }

  std::string get_string(size_t n) {
    std::string s(n, '\0');
    get_bytes(s.data(), n);
    return s;
  }

 private:
  const uint8_t* p_;
  const uint8_t* end_;
};

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    size_t at = buf_.size();
    buf_.resize(at + sizeof(T));
    std::memcpy(buf_.data() + at, &v, sizeof(T));
  }

  void put_bytes(const void* data, size_t n) {
    const auto* p = static_cast<const uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }

  void put_string(const std::string& s) { put_bytes(s.data(), s.size()); }

  const std::vector<uint8_t>& bytes() const { return buf_; }
  std::vector<uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<uint8_t> buf_;
};

}  // namespace voxcade
