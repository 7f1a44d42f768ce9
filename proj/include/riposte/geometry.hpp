#pragma once

#include <cmath>
#include <cstdint>

#include "riposte/errors.hpp"

namespace riposte {

// Matrix layout for the bandwidth-efficient keys: a length-L table folded
// into x columns of y rows, x*y >= L. Cells past L are padding and are never
// revealed. Index split: l = lx*y + ly.
struct Geometry {
  uint32_t L = 0;
  uint32_t x = 0;
  uint32_t y = 0;
  uint32_t row_bytes = 0;

  bool valid() const {
    return L >= 1 && x >= 1 && y >= 1 &&
           static_cast<uint64_t>(x) * y >= L && row_bytes >= 1;
  }
  uint32_t col_of(uint32_t l) const { return l / y; }
  uint32_t row_of(uint32_t l) const { return l % y; }
  uint64_t cells() const { return static_cast<uint64_t>(x) * y; }

  bool operator==(const Geometry&) const = default;
};

// Serialized two-server key size in bits for a given geometry: one bit plus
// an alpha-bit seed per column, beta bits per row of the v table.
inline uint64_t key_bits(uint64_t x, uint64_t y, uint64_t alpha, uint64_t beta) {
  return (1 + alpha) * x + beta * y;
}

// Minimizes key_bits subject to x*y >= L. The real-valued optimum sits at
// x = c*sqrt(L) with c = sqrt(beta/(1+alpha)); the integer answer is found by
// scanning a window around it plus the degenerate edges. Ties break toward
// smaller x so every party derives the same geometry from shared parameters.
inline Geometry optimize_geometry(uint32_t L, uint32_t alpha, uint32_t beta, uint32_t row_bytes) {
  require(L >= 1 && alpha >= 1 && beta >= 1, Errc::invalid_argument, "bad optimizer inputs");
  double c = std::sqrt(static_cast<double>(beta) / (1.0 + alpha));
  double x_real = c * std::sqrt(static_cast<double>(L));
  uint64_t lo = x_real < 64 ? 1 : static_cast<uint64_t>(x_real) - 64;
  uint64_t hi = std::min<uint64_t>(L, static_cast<uint64_t>(x_real) + 64 + 1);

  uint64_t best_x = 0, best_y = 0, best_bits = ~0ull;
  auto consider = [&](uint64_t x) {
    if (x < 1 || x > L) return;
    uint64_t y = (L + x - 1) / x;
    uint64_t bits = key_bits(x, y, alpha, beta);
    if (bits < best_bits || (bits == best_bits && x < best_x)) {
      best_bits = bits;
      best_x = x;
      best_y = y;
    }
  };
  for (uint64_t x = lo; x <= hi; x++) consider(x);
  // the ceil steps can favor an x that makes y round; scan the y-side window too
  double y_real = static_cast<double>(L) / x_real;
  uint64_t ylo = y_real < 65 ? 1 : static_cast<uint64_t>(y_real) - 64;
  for (uint64_t y = ylo; y <= static_cast<uint64_t>(y_real) + 65; y++) consider((L + y - 1) / y);
  consider(1);
  consider(L);
  // y snapped to ceil(L/x) can leave a better x just outside the window when
  // L is tiny; the full scan is cheap there and settles it exactly.
  if (L <= 4096)
    for (uint64_t x = 1; x <= L; x++) consider(x);

  return Geometry{L, static_cast<uint32_t>(best_x), static_cast<uint32_t>(best_y), row_bytes};
}

}  // namespace riposte
