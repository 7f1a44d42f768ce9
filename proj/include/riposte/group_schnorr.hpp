#pragma once

#include <cstdint>
#include <random>
#include <span>

#include "riposte/bytes.hpp"
#include "riposte/errors.hpp"
#include "riposte/hashing.hpp"

// Schnorr test group: the order-q subgroup of quadratic residues modulo the
// safe prime t = 2q + 1 (64-bit). Group operations are modular multiplication,
// written additively to match the generic group API the protocols are written
// against. Exponentiations are a few dozen u128 multiplies, which keeps the
// statistical and fuzzing suites fast. Not for production use.
namespace riposte::group {

class SchnorrGroup {
 public:
  // largest 64-bit safe prime and its Sophie Germain half
  static constexpr uint64_t kModulus = 0xFFFFFFFFFFFFFA43ull;
  static constexpr uint64_t kOrder = 0x7FFFFFFFFFFFFD21ull;

  struct Element {
    uint64_t v = 1;  // multiplicative identity
    bool operator==(const Element&) const = default;
  };
  struct Scalar {
    uint64_t v = 0;
    bool operator==(const Scalar&) const = default;
  };

  static constexpr const char* name() { return "schnorr64"; }

  Element identity() const { return Element{1}; }
  bool is_identity(const Element& e) const { return e.v == 1; }

  Element add(const Element& a, const Element& b) const { return Element{mulmod(a.v, b.v)}; }
  Element neg(const Element& a) const { return Element{powmod(a.v, kModulus - 2)}; }
  Element sub(const Element& a, const Element& b) const { return add(a, neg(b)); }
  Element mul(const Scalar& k, const Element& a) const { return Element{powmod(a.v, k.v)}; }

  Scalar scalar_zero() const { return Scalar{0}; }
  Scalar scalar_from_u64(uint64_t v) const { return Scalar{v % kOrder}; }
  Scalar scalar_add(const Scalar& a, const Scalar& b) const {
    unsigned __int128 s = static_cast<unsigned __int128>(a.v) + b.v;
    return Scalar{static_cast<uint64_t>(s % kOrder)};
  }
  Scalar scalar_neg(const Scalar& a) const { return Scalar{a.v == 0 ? 0 : kOrder - a.v}; }
  Scalar scalar_sub(const Scalar& a, const Scalar& b) const { return scalar_add(a, scalar_neg(b)); }
  Scalar scalar_mul(const Scalar& a, const Scalar& b) const {
    return Scalar{static_cast<uint64_t>(static_cast<unsigned __int128>(a.v) * b.v % kOrder)};
  }

  template <class Rng>
  Scalar random_scalar(Rng& rng) const {
    // rejection below 2q keeps the draw exactly uniform
    uint64_t r;
    do {
      r = rng();
    } while (r >= 2 * kOrder);
    return Scalar{r % kOrder};
  }

  Scalar scalar_from_hash(const hashing::Digest& d) const {
    uint64_t v = 0;
    for (int i = 0; i < 8; i++) v = v << 8 | d[i];
    return Scalar{v % kOrder};
  }

  Bytes serialize(const Element& e) const {
    ByteWriter w;
    w.put_u64le(e.v);
    return w.take();
  }
  Element parse(std::span<const uint8_t> b) const {
    require(b.size() == 8, Errc::decode_error, "group element must be 8 bytes");
    ByteReader r(b);
    uint64_t v = r.get_u64le();
    require(v != 0 && v < kModulus, Errc::decode_error, "element out of range");
    require(powmod(v, kOrder) == 1, Errc::decode_error, "element not in subgroup");
    return Element{v};
  }
  size_t element_size() const { return 8; }

  Bytes serialize_scalar(const Scalar& s) const {
    ByteWriter w;
    w.put_u64le(s.v);
    w.put_bytes(Bytes(24, 0));  // scalars are 32 bytes in every group
    return w.take();
  }
  Scalar parse_scalar(std::span<const uint8_t> b) const {
    require(b.size() == 32, Errc::decode_error, "scalar must be 32 bytes");
    ByteReader r(b);
    uint64_t v = r.get_u64le();
    Bytes rest = r.get_bytes(24);
    require(all_zero(rest) && v < kOrder, Errc::decode_error, "scalar out of range");
    return Scalar{v};
  }

  // Squaring any hash output lands in the QR subgroup; skip the two fixed
  // points 0 and 1 so derived generators have order exactly q.
  Element element_from_label(std::string_view label) const {
    for (uint32_t ctr = 0;; ctr++) {
      ByteWriter w;
      w.put_bytes(to_bytes(label));
      w.put_u32le(ctr);
      Bytes material = w.take();
      hashing::Digest d = hashing::sha256(material);
      uint64_t h = 0;
      for (int i = 0; i < 8; i++) h = h << 8 | d[i];
      uint64_t v = mulmod(h % kModulus, h % kModulus);
      if (v > 1) return Element{v};
    }
  }

  // Message embedding: len(1B) | data(4B) | counter(2B) | zero(1B), as a
  // little-endian word, bumped until the value is a quadratic residue.
  size_t embed_capacity() const { return 4; }
  Element encode_message(std::span<const uint8_t> chunk) const {
    require(chunk.size() <= embed_capacity(), Errc::invalid_argument, "chunk exceeds capacity");
    for (uint64_t ctr = 0; ctr < 0x10000; ctr++) {
      uint64_t v = chunk.size();
      for (size_t i = 0; i < chunk.size(); i++) v |= static_cast<uint64_t>(chunk[i]) << (8 * (i + 1));
      v |= ctr << 40;
      if (v > 1 && powmod(v, kOrder) == 1) return Element{v};
    }
    fail(Errc::crypto_failure, "embedding exhausted counters");
  }
  Bytes decode_message(const Element& e) const {
    require(e.v >> 56 == 0, Errc::decode_error, "element is not an embedded message");
    size_t len = e.v & 0xFF;
    require(len <= embed_capacity(), Errc::decode_error, "embedded length out of range");
    Bytes out(len);
    for (size_t i = 0; i < len; i++) out[i] = static_cast<uint8_t>(e.v >> (8 * (i + 1)));
    return out;
  }

  static uint64_t mulmod(uint64_t a, uint64_t b) {
    return static_cast<uint64_t>(static_cast<unsigned __int128>(a) * b % kModulus);
  }
  static uint64_t powmod(uint64_t base, uint64_t exp) {
    uint64_t acc = 1;
    base %= kModulus;
    while (exp) {
      if (exp & 1) acc = mulmod(acc, base);
      base = mulmod(base, base);
      exp >>= 1;
    }
    return acc;
  }
};

}  // namespace riposte::group
