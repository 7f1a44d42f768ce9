#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "riposte/errors.hpp"

namespace riposte {

using Bytes = std::vector<uint8_t>;

inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }

inline std::string hex_encode(std::span<const uint8_t> in) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(in.size() * 2);
  for (uint8_t b : in) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0xF]);
  }
  return out;
}

inline Bytes hex_decode(std::string_view in) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  require(in.size() % 2 == 0, Errc::decode_error, "hex string has odd length");
  Bytes out(in.size() / 2);
  for (size_t i = 0; i < out.size(); i++) {
    int hi = nibble(in[2 * i]), lo = nibble(in[2 * i + 1]);
    require(hi >= 0 && lo >= 0, Errc::decode_error, "bad hex digit");
    out[i] = static_cast<uint8_t>(hi << 4 | lo);
  }
  return out;
}

// Incremental little-endian writer for the canonical serializations.
// Byte vectors are u32-length-prefixed; the network frame header is the one
// place big-endian appears, handled by put_u32be.
class ByteWriter {
 public:
  void put_u8(uint8_t v) { buf_.push_back(v); }
  void put_u32le(uint32_t v) {
    for (int i = 0; i < 4; i++) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void put_u64le(uint64_t v) {
    for (int i = 0; i < 8; i++) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void put_u32be(uint32_t v) {
    for (int i = 3; i >= 0; i--) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void put_bytes(std::span<const uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void put_lp_bytes(std::span<const uint8_t> b) {
    put_u32le(static_cast<uint32_t>(b.size()));
    put_bytes(b);
  }
  Bytes take() { return std::move(buf_); }
  const Bytes& view() const { return buf_; }

 private:
  Bytes buf_;
};

// Bounds-checked reader; all failures surface as DecodeError.
class ByteReader {
 public:
  explicit ByteReader(std::span<const uint8_t> data) : data_(data) {}

  uint8_t get_u8() { return take(1)[0]; }
  uint32_t get_u32le() {
    auto b = take(4);
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
  }
  uint64_t get_u64le() {
    auto b = take(8);
    uint64_t v = 0;
    for (int i = 7; i >= 0; i--) v = v << 8 | b[i];
    return v;
  }
  uint32_t get_u32be() {
    auto b = take(4);
    return static_cast<uint32_t>(b[0]) << 24 | static_cast<uint32_t>(b[1]) << 16 |
           static_cast<uint32_t>(b[2]) << 8 | static_cast<uint32_t>(b[3]);
  }
  Bytes get_bytes(size_t n) {
    auto b = take(n);
    return Bytes(b.begin(), b.end());
  }
  Bytes get_lp_bytes() {
    uint32_t n = get_u32le();
    require(n <= remaining(), Errc::decode_error, "length prefix exceeds buffer");
    return get_bytes(n);
  }
  template <size_t N>
  std::array<uint8_t, N> get_array() {
    auto b = take(N);
    std::array<uint8_t, N> out;
    std::memcpy(out.data(), b.data(), N);
    return out;
  }
  size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return remaining() == 0; }
  void expect_done() const { require(done(), Errc::decode_error, "trailing bytes"); }

 private:
  std::span<const uint8_t> take(size_t n) {
    require(n <= remaining(), Errc::decode_error, "buffer underrun");
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::span<const uint8_t> data_;
  size_t pos_ = 0;
};

inline void xor_into(std::span<uint8_t> dst, std::span<const uint8_t> src) {
  require(dst.size() == src.size(), Errc::invalid_argument, "xor length mismatch");
  for (size_t i = 0; i < dst.size(); i++) dst[i] ^= src[i];
}

inline bool all_zero(std::span<const uint8_t> b) {
  for (uint8_t v : b)
    if (v != 0) return false;
  return true;
}

}  // namespace riposte
