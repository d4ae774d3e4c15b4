#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>

namespace mmw {

// Little-endian buffer reader that reports the byte offset of any failure.
class ByteReader {
 public:
  ByteReader(const std::string& buf, std::string origin)
      : buf_(buf), origin_(std::move(origin)) {}

  size_t pos() const { return pos_; }
  size_t remaining() const { return buf_.size() - pos_; }

  void expect_magic(const char* magic, size_t len) {
    const size_t at = pos_;
    if (remaining() < len || std::memcmp(buf_.data() + pos_, magic, len) != 0)
      fail("expected magic \"" + std::string(magic, len) + "\"", at);
    pos_ += len;
  }

  uint8_t u8() { return take<uint8_t>("u8"); }
  uint32_t u32() { return take<uint32_t>("u32"); }
  uint64_t u64() { return take<uint64_t>("u64"); }
  float f32() { return take<float>("f32"); }

  void raw(void* dst, size_t len, const char* what) {
    if (remaining() < len) fail(std::string("truncated ") + what, pos_);
    std::memcpy(dst, buf_.data() + pos_, len);
    pos_ += len;
  }

  [[noreturn]] void fail(const std::string& what, size_t at) const {
    throw std::runtime_error(origin_ + ": " + what + " at byte " + std::to_string(at));
  }
  [[noreturn]] void fail(const std::string& what) const { fail(what, pos_); }

 private:
  template <typename T>
  T take(const char* what) {
    T v;
    raw(&v, sizeof(T), what);
    return v;
  }

  const std::string& buf_;
  std::string origin_;
  size_t pos_ = 0;
};

class ByteWriter {
 public:
  void magic(const char* m, size_t len) { buf_.append(m, len); }
  void u8(uint8_t v) { put(v); }
  void u32(uint32_t v) { put(v); }
  void u64(uint64_t v) { put(v); }
  void f32(float v) { put(v); }
  void raw(const void* src, size_t len) {
    buf_.append(reinterpret_cast<const char*>(src), len);
  }
  const std::string& bytes() const { return buf_; }

 private:
  template <typename T>
  void put(T v) {
    buf_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  std::string buf_;
};

}  // namespace mmw
