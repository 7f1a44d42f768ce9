#pragma once

#include <cstdint>
#include <optional>

#include "riposte/errors.hpp"

// Arithmetic in the prime field F_p with p = 2^64 - 59, the largest prime
// below 2^64. Elements are canonical uint64_t values in [0, p). p = 1 (mod 4),
// so square roots need the general Tonelli-Shanks ladder; with p - 1 = 4q
// (q odd) the loop body runs at most twice.
namespace riposte::fp {

inline constexpr uint64_t kPrime = 0xFFFFFFFFFFFFFFC5ull;  // 2^64 - 59

inline uint64_t reduce(uint64_t v) { return v >= kPrime ? v - kPrime : v; }

// Reduces a 128-bit value; used when digesting raw PRG output into elements.
inline uint64_t reduce128(unsigned __int128 v) { return static_cast<uint64_t>(v % kPrime); }

inline uint64_t add(uint64_t a, uint64_t b) {
  uint64_t s = a + b;
  // overflow past 2^64 means we dropped exactly 2^64 = p + 59
  if (s < a) s += 59;
  return reduce(s);
}

inline uint64_t neg(uint64_t a) { return a == 0 ? 0 : kPrime - a; }

inline uint64_t sub(uint64_t a, uint64_t b) { return add(a, neg(b)); }

inline uint64_t mul(uint64_t a, uint64_t b) {
  return reduce128(static_cast<unsigned __int128>(a) * b);
}

inline uint64_t pow(uint64_t base, uint64_t exp) {
  uint64_t acc = 1;
  while (exp) {
    if (exp & 1) acc = mul(acc, base);
    base = mul(base, base);
    exp >>= 1;
  }
  return acc;
}

inline uint64_t inv(uint64_t a) {
  require(a != 0, Errc::invalid_argument, "inverse of zero");
  return pow(a, kPrime - 2);
}

// Legendre symbol via Euler's criterion: 1 residue, p-1 non-residue, 0 zero.
inline uint64_t euler(uint64_t a) { return pow(a, (kPrime - 1) / 2); }

// Canonical square root (the smaller of the two), or nullopt for non-residues.
inline std::optional<uint64_t> sqrt(uint64_t a) {
  if (a == 0) return 0;
  if (euler(a) != 1) return std::nullopt;
  // p - 1 = 2^2 * Q with Q odd
  constexpr uint64_t Q = (kPrime - 1) >> 2;
  constexpr int S = 2;
  // smallest quadratic non-residue of p (verified in tests)
  uint64_t z = 2;
  while (euler(z) == 1) z++;
  uint64_t M = S;
  uint64_t c = pow(z, Q);
  uint64_t t = pow(a, Q);
  uint64_t r = pow(a, (Q + 1) / 2);
  while (t != 1) {
    uint64_t i = 0, probe = t;
    while (probe != 1) {
      probe = mul(probe, probe);
      i++;
    }
    uint64_t b = c;
    for (uint64_t k = 0; k + i + 1 < M; k++) b = mul(b, b);
    M = i;
    c = mul(b, b);
    t = mul(t, c);
    r = mul(r, b);
  }
  uint64_t other = neg(r);
  return r < other ? r : other;
}

}  // namespace riposte::fp
