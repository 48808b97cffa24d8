#pragma once

// Little-endian buffer codec shared by the dataset and checkpoint formats.
// Readers track the byte offset so format errors can point at the failing
// field.

#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "urnet/errors.hpp"

namespace urnet::bytes {

struct Writer {
  std::vector<std::uint8_t> buf;

  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
  }
  void u8(std::uint8_t v) { buf.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void magic(std::string_view m) { raw(m.data(), m.size()); }
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> buf) : buf_(buf) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

  std::uint8_t u8() {
    need(1);
    return buf_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{buf_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{buf_[pos_ + i]} << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }

  // Checks a versioned magic string: a matching prefix with a different
  // trailing version byte is a version error, anything else a format error.
  void magic(std::string_view expected) {
    const std::size_t at = pos_;
    need(expected.size());
    std::string got(reinterpret_cast<const char*>(buf_.data() + pos_), expected.size());
    pos_ += expected.size();
    if (got == expected) return;
    if (got.substr(0, expected.size() - 1) == expected.substr(0, expected.size() - 1)) {
      throw VersionError("unsupported format version '" + got + "' (expected '" +
                         std::string(expected) + "')");
    }
    throw FormatError("bad magic (expected '" + std::string(expected) + "')", at);
  }

  void expect_eof() const {
    if (pos_ != buf_.size()) {
      throw FormatError("trailing bytes after end of data", pos_);
    }
  }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) {
      throw FormatError("unexpected end of file", pos_);
    }
  }

  std::span<const std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> data);

// FNV-1a, used for content hashes in manifests and artifact caching.
std::uint64_t fnv1a64(std::span<const std::uint8_t> data);

}  // namespace urnet::bytes
