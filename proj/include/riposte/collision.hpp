#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "riposte/bytes.hpp"
#include "riposte/fp.hpp"
#include "riposte/hashing.hpp"

// Collision handling for the shared table. Writers land on rows at random;
// a row with one writer is recoverable as-is, and with recovery coding a
// two-writer row is too: instead of m each writer adds the pair (m, m^2),
// whose sums determine {m_A, m_B} because 2*S2 - S1^2 = (m_A - m_B)^2 has a
// computable square root. Sizing formulas pick the table length n that makes
// the expected fraction of surviving messages hit a target.
namespace riposte::collision {

// Truncated-series estimates for the fraction of writers that survive when m
// writers pick uniformly among n rows; accurate for m/n well below 1.
inline double expected_success_rate(uint64_t m, uint64_t n, bool recovery) {
  require(m >= 1 && n >= 1, Errc::invalid_argument, "need m, n >= 1");
  double r = static_cast<double>(m) / static_cast<double>(n);
  if (recovery) return 1.0 - 0.5 * r * r + r * r * r / 3.0;
  return 1.0 - r + 0.5 * r * r;
}

struct SizingQuery {
  uint64_t writers = 0;    // expected honest writers m
  uint64_t malicious = 0;  // assumed adversarial writers, squatting cells
  double target = 0.0;     // required success rate, in (0,1)
  bool recovery = false;
};

// Smallest n with expected_success_rate(m, n - malicious, recovery) >= target.
// Adversarial writers are charged as full cells. The search stays in the
// regime m <= n - malicious where the estimate is monotone in n; below that
// the truncated series turns around and stops meaning anything.
inline uint64_t required_table_size(const SizingQuery& q) {
  require(q.writers >= 1, Errc::invalid_argument, "need at least one writer");
  require(q.target > 0.0 && q.target < 1.0, Errc::invalid_argument,
          "target rate must be in (0,1)");
  auto ok = [&](uint64_t n) {
    return expected_success_rate(q.writers, n - q.malicious, q.recovery) >= q.target;
  };
  uint64_t lo = q.malicious + q.writers;
  if (ok(lo)) return lo;
  uint64_t hi = lo;
  while (!ok(hi)) hi *= 2;
  while (lo + 1 < hi) {
    uint64_t mid = lo + (hi - lo) / 2;
    (ok(mid) ? hi : lo) = mid;
  }
  return hi;
}

// Balls-in-bins oracle for the formulas above: throw m writers into n rows,
// count the ones in a row of occupancy 1 (or <= 2 with recovery).
template <class Rng>
double simulate_success_rate(uint64_t m, uint64_t n, bool recovery, uint32_t trials, Rng& rng) {
  require(m >= 1 && n >= 1 && trials >= 1, Errc::invalid_argument, "bad simulation inputs");
  std::vector<uint32_t> stamp(n, ~0u);
  std::vector<uint8_t> occupancy(n, 0);
  std::vector<uint64_t> picks(m);
  std::uniform_int_distribution<uint64_t> row(0, n - 1);
  uint64_t survived = 0;
  for (uint32_t t = 0; t < trials; t++) {
    for (uint64_t i = 0; i < m; i++) {
      uint64_t c = row(rng);
      picks[i] = c;
      if (stamp[c] != t) {
        stamp[c] = t;
        occupancy[c] = 0;
      }
      if (occupancy[c] < 3) occupancy[c]++;
    }
    uint8_t limit = recovery ? 2 : 1;
    for (uint64_t i = 0; i < m; i++)
      if (occupancy[picks[i]] <= limit) survived++;
  }
  return static_cast<double>(survived) / (static_cast<double>(m) * trials);
}

// --------------------------------------------------------------- cell codec

struct CodedCell {
  uint64_t s1 = 0;  // accumulates sum of m_i
  uint64_t s2 = 0;  // accumulates sum of m_i^2
};

inline CodedCell encode_with_recovery(uint64_t m) {
  require(m != 0 && m < fp::kPrime, Errc::invalid_argument,
          "message must be a nonzero field element");
  return CodedCell{m, fp::mul(m, m)};
}

enum class CellStatus : uint8_t { empty, single, pair, unrecoverable };

struct CellDecode {
  CellStatus status = CellStatus::empty;
  uint64_t a = 0;  // single value, or smaller pair member
  uint64_t b = 0;  // larger pair member
};

inline CellDecode decode_cell(const CodedCell& c) {
  if (c.s1 == 0 && c.s2 == 0) return {CellStatus::empty, 0, 0};
  if (c.s2 == fp::mul(c.s1, c.s1)) return {CellStatus::single, c.s1, 0};
  uint64_t delta_sq = fp::sub(fp::add(c.s2, c.s2), fp::mul(c.s1, c.s1));
  auto delta = fp::sqrt(delta_sq);
  if (!delta) return {CellStatus::unrecoverable, 0, 0};
  constexpr uint64_t inv2 = (fp::kPrime + 1) / 2;
  uint64_t a = fp::mul(fp::add(c.s1, *delta), inv2);
  uint64_t b = fp::mul(fp::sub(c.s1, *delta), inv2);
  if (a == 0 || b == 0) return {CellStatus::unrecoverable, 0, 0};  // zero is reserved for empty
  if (a > b) std::swap(a, b);
  return {CellStatus::pair, a, b};
}

// ---------------------------------------------------------------- row codec
//
// A logical message longer than one field element is cut into 7-byte chunks,
// each carried as a separate coded cell. A two-writer row then yields an
// unordered candidate pair per chunk, and the chunks of one message must be
// told apart from the other's. Each row carries, besides the k data cells
// and one checksum cell, k *link* cells accumulating m_i * h, where h is the
// writer's checksum element: with checksums h_A != h_B the link sum
// u*h_A + v*h_B is asymmetric in (u, v), so it pins which candidate belongs
// to which writer, chunk by chunk. Both reassembled messages must then hash
// back to their checksum elements.
//
// Chunk values carry a marker at bit 56 so they are nonzero and below p;
// cell layout: [S-pairs of data chunks 0..k-1][S-pair of checksum][links].

inline constexpr uint64_t kChunkMarker = 1ull << 56;

inline size_t chunks_for(uint32_t msg_bytes) {
  require(msg_bytes >= 1, Errc::invalid_argument, "empty message");
  return (msg_bytes + 6) / 7;
}

// Field-element count of a coded row: k data + 1 checksum pairs, k links.
inline size_t coded_cells(uint32_t msg_bytes) { return 3 * chunks_for(msg_bytes) + 2; }

inline uint32_t coded_row_bytes(uint32_t msg_bytes) {
  return static_cast<uint32_t>(8 * coded_cells(msg_bytes));
}

namespace detail {

inline uint64_t chunk_value(std::span<const uint8_t> padded, size_t i) {
  uint64_t v = 0;
  for (size_t j = 0; j < 7; j++) v |= static_cast<uint64_t>(padded[i * 7 + j]) << (8 * j);
  return kChunkMarker | v;
}

inline bool valid_chunk(uint64_t v) { return (v >> 56) == 1; }

inline uint64_t checksum_element(std::span<const uint8_t> padded) {
  auto d = hashing::sha256(padded);
  uint64_t v = 0;
  for (size_t j = 0; j < 7; j++) v |= static_cast<uint64_t>(d[j]) << (8 * j);
  return kChunkMarker | v;
}

}  // namespace detail

inline std::vector<uint64_t> encode_row(std::span<const uint8_t> msg) {
  size_t k = chunks_for(static_cast<uint32_t>(msg.size()));
  Bytes padded(k * 7, 0);
  std::copy(msg.begin(), msg.end(), padded.begin());
  uint64_t h = detail::checksum_element(padded);
  std::vector<uint64_t> cells(3 * k + 2, 0);
  for (size_t i = 0; i < k; i++) {
    uint64_t m = detail::chunk_value(padded, i);
    cells[2 * i] = m;
    cells[2 * i + 1] = fp::mul(m, m);
    cells[2 * (k + 1) + i] = fp::mul(m, h);
  }
  cells[2 * k] = h;
  cells[2 * k + 1] = fp::mul(h, h);
  return cells;
}

enum class RowStatus : uint8_t { empty, single, pair, unrecoverable };

struct RowDecode {
  RowStatus status = RowStatus::empty;
  std::vector<Bytes> messages;  // one for single, two for pair (checksum order)
};

namespace detail {

// Reassembles chunk values into the message, rejecting bad markers and
// nonzero padding; empty return means invalid.
inline Bytes assemble(std::span<const uint64_t> chunks, uint32_t msg_bytes) {
  Bytes padded(chunks.size() * 7, 0);
  for (size_t i = 0; i < chunks.size(); i++) {
    if (!valid_chunk(chunks[i])) return {};
    for (size_t j = 0; j < 7; j++) padded[i * 7 + j] = static_cast<uint8_t>(chunks[i] >> (8 * j));
  }
  for (size_t i = msg_bytes; i < padded.size(); i++)
    if (padded[i] != 0) return {};
  return padded;
}

inline bool checksum_matches(std::span<const uint8_t> padded, uint64_t h) {
  return checksum_element(padded) == h;
}

}  // namespace detail

inline RowDecode decode_row(std::span<const uint64_t> cells, uint32_t msg_bytes) {
  size_t k = chunks_for(msg_bytes);
  require(cells.size() == 3 * k + 2, Errc::invalid_argument, "coded row width mismatch");
  bool zero = true;
  for (uint64_t c : cells) zero &= c == 0;
  if (zero) return {RowStatus::empty, {}};

  RowDecode bad{RowStatus::unrecoverable, {}};
  std::vector<CellDecode> dec(k + 1);
  for (size_t i = 0; i <= k; i++) {
    dec[i] = decode_cell(CodedCell{cells[2 * i], cells[2 * i + 1]});
    if (dec[i].status == CellStatus::empty || dec[i].status == CellStatus::unrecoverable)
      return bad;
    if (dec[i].status != dec[0].status) return bad;  // mixed single/pair cells
  }
  auto link = [&](size_t i) { return cells[2 * (k + 1) + i]; };

  if (dec[0].status == CellStatus::single) {
    uint64_t h = dec[k].a;
    std::vector<uint64_t> chunks(k);
    for (size_t i = 0; i < k; i++) {
      chunks[i] = dec[i].a;
      if (link(i) != fp::mul(chunks[i], h)) return bad;
    }
    Bytes padded = detail::assemble(chunks, msg_bytes);
    if (padded.empty() || !detail::checksum_matches(padded, h)) return bad;
    padded.resize(msg_bytes);
    return {RowStatus::single, {std::move(padded)}};
  }

  // two writers: split each chunk's candidate pair by its link sum
  uint64_t ha = dec[k].a, hb = dec[k].b;
  std::vector<uint64_t> chunks_a(k), chunks_b(k);
  for (size_t i = 0; i < k; i++) {
    uint64_t u = dec[i].a, v = dec[i].b;
    if (ha == hb) {
      // identical checksums: only identical messages are distinguishable
      if (u != v) return bad;
      if (link(i) != fp::add(fp::mul(u, ha), fp::mul(u, ha))) return bad;
      chunks_a[i] = chunks_b[i] = u;
    } else if (link(i) == fp::add(fp::mul(u, ha), fp::mul(v, hb))) {
      chunks_a[i] = u;
      chunks_b[i] = v;
    } else if (link(i) == fp::add(fp::mul(v, ha), fp::mul(u, hb))) {
      chunks_a[i] = v;
      chunks_b[i] = u;
    } else {
      return bad;
    }
  }
  Bytes pa = detail::assemble(chunks_a, msg_bytes);
  Bytes pb = detail::assemble(chunks_b, msg_bytes);
  if (pa.empty() || pb.empty()) return bad;
  if (!detail::checksum_matches(pa, ha) || !detail::checksum_matches(pb, hb)) return bad;
  pa.resize(msg_bytes);
  pb.resize(msg_bytes);
  return {RowStatus::pair, {std::move(pa), std::move(pb)}};
}

}  // namespace riposte::collision
