#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "riposte/bytes.hpp"
#include "riposte/fp.hpp"
#include "riposte/prg.hpp"

// Payload fields for table rows. A row is a fixed-width vector of cells; the
// table accumulates rows under the field's addition. Two instantiations:
// bytes under XOR (characteristic 2, its own inverse) and vectors over F_p
// (where accumulation and its inverse differ).
namespace riposte::rows {

struct XorField {
  using Cell = uint8_t;
  static constexpr bool self_inverse = true;
  static size_t cells_for_bytes(uint32_t row_bytes) { return row_bytes; }
  static size_t bytes_per_cell() { return 1; }

  static void add_into(std::span<Cell> dst, std::span<const Cell> src) {
    for (size_t i = 0; i < dst.size(); i++) dst[i] ^= src[i];
  }
  static void sub_into(std::span<Cell> dst, std::span<const Cell> src) { add_into(dst, src); }
  static void expand_seed(const prg::Seed& s, std::span<Cell> out) { prg::expand_into(s, out); }
  template <class Rng>
  static Cell random_cell(Rng& rng) {
    return static_cast<Cell>(rng());
  }
  static void serialize_cells(ByteWriter& w, std::span<const Cell> cells) {
    w.put_bytes(cells);
  }
  static std::vector<Cell> parse_cells(ByteReader& r, size_t count) { return r.get_bytes(count); }
  static bool is_zero(std::span<const Cell> cells) { return all_zero(cells); }
};

struct FpField {
  using Cell = uint64_t;
  static constexpr bool self_inverse = false;
  static size_t cells_for_bytes(uint32_t row_bytes) {
    require(row_bytes % 8 == 0, Errc::invalid_argument, "field rows need 8-byte alignment");
    return row_bytes / 8;
  }
  static size_t bytes_per_cell() { return 8; }

  static void add_into(std::span<Cell> dst, std::span<const Cell> src) {
    for (size_t i = 0; i < dst.size(); i++) dst[i] = fp::add(dst[i], src[i]);
  }
  static void sub_into(std::span<Cell> dst, std::span<const Cell> src) {
    for (size_t i = 0; i < dst.size(); i++) dst[i] = fp::sub(dst[i], src[i]);
  }
  static void expand_seed(const prg::Seed& s, std::span<Cell> out) {
    auto v = prg::expand_fp(s, out.size());
    std::copy(v.begin(), v.end(), out.begin());
  }
  template <class Rng>
  static Cell random_cell(Rng& rng) {
    uint64_t r;
    do {
      r = rng();
    } while (r >= fp::kPrime);
    return r;
  }
  static void serialize_cells(ByteWriter& w, std::span<const Cell> cells) {
    for (Cell c : cells) w.put_u64le(c);
  }
  static std::vector<Cell> parse_cells(ByteReader& r, size_t count) {
    std::vector<Cell> out(count);
    for (auto& c : out) {
      c = r.get_u64le();
      require(c < fp::kPrime, Errc::decode_error, "cell exceeds field modulus");
    }
    return out;
  }
  static bool is_zero(std::span<const Cell> cells) {
    for (Cell c : cells)
      if (c != 0) return false;
    return true;
  }
};

}  // namespace riposte::rows
