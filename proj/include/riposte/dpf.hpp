#pragma once

#include <random>
#include <span>
#include <vector>

#include "riposte/bytes.hpp"
#include "riposte/geometry.hpp"
#include "riposte/pedersen.hpp"
#include "riposte/prg.hpp"
#include "riposte/rows.hpp"

// Distributed point functions. Three constructions share the interface
// "keys that sum to a one-row table":
//
//   toy:  each key is a full-length random table, the last one patched so the
//         tables sum to m*e_l. Information-theoretic, keys as large as the
//         table; the baseline the compact schemes are checked against.
//
//   dpf2: two keys of size O(x + y) for an x-by-y folding of the table. Each
//         column carries a PRG seed; the two keys share seeds everywhere but
//         the target column lx, where the bits b differ and a shared patch
//         row-strip v turns the seed difference into m at row ly. Combination
//         is A-minus-B in the payload field; over XOR that is plain XOR and
//         matches the construction's usual description in characteristic 2.
//
//   dpfs: s keys over a group payload. Bits and seeds become additive shares
//         of e_lx and s**e_lx over the scalar field, and the PRG is the
//         seed-homomorphic one, so ANY number of keys can be summed; v
//         patches the strip just once since shares telescope.
namespace riposte::dpf {

// variant byte in serialized key headers
enum class Variant : uint8_t {
  toy_xor = 0x01,
  toy_fp = 0x02,
  two_xor = 0x03,
  two_fp = 0x04,
  s_schnorr = 0x05,
  s_p256 = 0x06,
};

inline bool is_toy(Variant v) { return v == Variant::toy_xor || v == Variant::toy_fp; }
inline bool is_two(Variant v) { return v == Variant::two_xor || v == Variant::two_fp; }
inline bool is_group(Variant v) { return v == Variant::s_schnorr || v == Variant::s_p256; }

inline void write_key_header(ByteWriter& w, Variant variant, const Geometry& g) {
  w.put_u8(static_cast<uint8_t>(variant));
  w.put_u32le(g.x);
  w.put_u32le(g.y);
  w.put_u32le(g.row_bytes);
}

struct KeyHeader {
  Variant variant;
  uint32_t x, y, row_bytes;
};

inline KeyHeader read_key_header(ByteReader& r) {
  KeyHeader h;
  h.variant = static_cast<Variant>(r.get_u8());
  h.x = r.get_u32le();
  h.y = r.get_u32le();
  h.row_bytes = r.get_u32le();
  require(h.x >= 1 && h.y >= 1, Errc::decode_error, "degenerate key geometry");
  return h;
}

// ---------------------------------------------------------------- toy keys

template <class F>
struct ToyKey {
  uint32_t L = 0;
  size_t row_cells = 0;
  std::vector<typename F::Cell> table;  // L rows, flat

  std::span<const typename F::Cell> row(uint32_t l) const {
    return std::span(table).subspan(static_cast<size_t>(l) * row_cells, row_cells);
  }
};

template <class F, class Rng>
std::vector<ToyKey<F>> toy_gen(uint32_t l, std::span<const typename F::Cell> m, uint32_t L,
                               uint32_t n_servers, Rng& rng) {
  require(l < L, Errc::invalid_argument, "target row out of range");
  require(n_servers >= 2, Errc::invalid_argument, "need at least two servers");
  size_t cells = m.size();
  std::vector<ToyKey<F>> keys(n_servers);
  for (auto& k : keys) {
    k.L = L;
    k.row_cells = cells;
    k.table.assign(static_cast<size_t>(L) * cells, typename F::Cell{});
  }
  for (uint32_t i = 0; i + 1 < n_servers; i++)
    for (auto& c : keys[i].table) c = F::random_cell(rng);

  // last key = m*e_l minus the others, so the sum telescopes to the point row
  auto& last = keys[n_servers - 1].table;
  std::span<typename F::Cell> target(last.data() + static_cast<size_t>(l) * cells, cells);
  F::add_into(target, m);
  for (uint32_t i = 0; i + 1 < n_servers; i++)
    F::sub_into(last, keys[i].table);
  return keys;
}

template <class F>
std::vector<typename F::Cell> toy_eval(const ToyKey<F>& k, uint32_t l) {
  require(l < k.L, Errc::invalid_argument, "index out of range");
  auto r = k.row(l);
  return std::vector<typename F::Cell>(r.begin(), r.end());
}

// ---------------------------------------------------------------- two-server

template <class F>
struct Dpf2Key {
  Geometry geom;
  std::vector<uint8_t> b;        // one bit per column
  std::vector<prg::Seed> seeds;  // one per column
  std::vector<typename F::Cell> v;  // y rows, flat

  size_t row_cells() const { return F::cells_for_bytes(geom.row_bytes); }
};

// Expands one column seed into its y-row strip.
template <class F>
std::vector<typename F::Cell> strip_expand(const prg::Seed& s, const Geometry& g) {
  std::vector<typename F::Cell> out(static_cast<size_t>(g.y) * F::cells_for_bytes(g.row_bytes));
  F::expand_seed(s, out);
  return out;
}

template <class F, class Rng>
std::pair<Dpf2Key<F>, Dpf2Key<F>> dpf2_gen(uint32_t l, std::span<const typename F::Cell> m,
                                           const Geometry& g, Rng& rng) {
  require(g.valid(), Errc::invalid_argument, "invalid geometry");
  require(l < g.L, Errc::invalid_argument, "target row out of range");
  size_t cells = F::cells_for_bytes(g.row_bytes);
  require(m.size() == cells, Errc::invalid_argument, "payload width mismatch");
  uint32_t lx = g.col_of(l), ly = g.row_of(l);

  Dpf2Key<F> ka, kb;
  ka.geom = kb.geom = g;
  ka.b.resize(g.x);
  ka.seeds.resize(g.x);
  for (uint32_t i = 0; i < g.x; i++) {
    ka.b[i] = static_cast<uint8_t>(rng() & 1);
    for (auto& byte : ka.seeds[i]) byte = static_cast<uint8_t>(rng());
  }
  kb.b = ka.b;
  kb.seeds = ka.seeds;
  kb.b[lx] ^= 1;
  for (auto& byte : kb.seeds[lx]) byte = static_cast<uint8_t>(rng());

  // v = delta * (m*e_ly - (G(sa*) - G(sb*))), delta = bA[lx] - bB[lx] = +/-1.
  // Combined evaluation (A minus B) then leaves exactly m at (lx, ly): off
  // the target column everything matches and cancels; on it the seed
  // difference is cancelled by v and delta^2 = 1 rebuilds m. Over XOR delta
  // is invisible and this is the familiar v = m*e XOR G(sa*) XOR G(sb*).
  std::vector<typename F::Cell> v(static_cast<size_t>(g.y) * cells, typename F::Cell{});
  F::add_into(std::span(v).subspan(static_cast<size_t>(ly) * cells, cells), m);
  auto ga = strip_expand<F>(ka.seeds[lx], g);
  auto gb = strip_expand<F>(kb.seeds[lx], g);
  F::sub_into(v, ga);
  F::add_into(v, gb);
  if constexpr (!F::self_inverse) {
    if (ka.b[lx] == 0) {  // delta = -1: negate by subtracting twice from zero
      std::vector<typename F::Cell> negv(v.size(), typename F::Cell{});
      F::sub_into(negv, v);
      v = std::move(negv);
    }
  }
  ka.v = v;
  kb.v = std::move(v);
  return {std::move(ka), std::move(kb)};
}

template <class F>
std::vector<typename F::Cell> dpf2_eval(const Dpf2Key<F>& k, uint32_t l) {
  require(l < k.geom.L, Errc::invalid_argument, "index out of range");
  size_t cells = k.row_cells();
  uint32_t lx = k.geom.col_of(l), ly = k.geom.row_of(l);
  auto strip = strip_expand<F>(k.seeds[lx], k.geom);
  std::vector<typename F::Cell> out(strip.begin() + static_cast<size_t>(ly) * cells,
                                    strip.begin() + static_cast<size_t>(ly + 1) * cells);
  if (k.b[lx])
    F::add_into(out, std::span(k.v).subspan(static_cast<size_t>(ly) * cells, cells));
  return out;
}

// Hot path: one PRG expansion per column strip, then per-row field adds.
// Emits the full x*y-cell table including the padding rows past L.
template <class F>
std::vector<typename F::Cell> dpf2_eval_full(const Dpf2Key<F>& k) {
  const Geometry& g = k.geom;
  size_t cells = k.row_cells();
  size_t strip_cells = static_cast<size_t>(g.y) * cells;
  std::vector<typename F::Cell> table(static_cast<size_t>(g.x) * strip_cells);
  for (uint32_t col = 0; col < g.x; col++) {
    std::span<typename F::Cell> strip(table.data() + col * strip_cells, strip_cells);
    F::expand_seed(k.seeds[col], strip);
    if (k.b[col]) F::add_into(strip, k.v);
  }
  return table;
}

template <class F>
Bytes dpf2_serialize(const Dpf2Key<F>& k) {
  ByteWriter w;
  write_key_header(w, F::self_inverse ? Variant::two_xor : Variant::two_fp, k.geom);
  Bytes bits((k.geom.x + 7) / 8, 0);
  for (uint32_t i = 0; i < k.geom.x; i++)
    if (k.b[i]) bits[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
  w.put_bytes(bits);
  for (const auto& s : k.seeds) w.put_bytes(s);
  F::serialize_cells(w, k.v);
  return w.take();
}

template <class F>
Dpf2Key<F> dpf2_parse(std::span<const uint8_t> in) {
  ByteReader r(in);
  KeyHeader h = read_key_header(r);
  require(h.variant == (F::self_inverse ? Variant::two_xor : Variant::two_fp), Errc::decode_error,
          "key variant mismatch");
  Dpf2Key<F> k;
  // L travels in epoch config, not in keys; the consumer fills it in.
  k.geom = Geometry{0, h.x, h.y, h.row_bytes};
  Bytes bits = r.get_bytes((h.x + 7) / 8);
  // canonical encoding: bits past x must be zero so keys reserialize verbatim
  for (uint32_t i = h.x; i < 8 * bits.size(); i++)
    require(((bits[i / 8] >> (i % 8)) & 1) == 0, Errc::decode_error, "nonzero padding bit");
  k.b.resize(h.x);
  for (uint32_t i = 0; i < h.x; i++) k.b[i] = (bits[i / 8] >> (i % 8)) & 1;
  k.seeds.resize(h.x);
  for (auto& s : k.seeds) s = r.get_array<16>();
  k.v = F::parse_cells(r, static_cast<size_t>(h.y) * F::cells_for_bytes(h.row_bytes));
  r.expect_done();
  return k;
}

// ---------------------------------------------------------------- s-server

template <class G>
struct DpfsKey {
  Geometry geom;  // y counted in cells; row_bytes = chunks * element size
  std::vector<typename G::Scalar> b;
  std::vector<typename G::Scalar> s;
  std::vector<typename G::Element> v;

  size_t chunks(const G& g) const { return geom.row_bytes / g.element_size(); }
  uint32_t rows_per_col(const G& g) const {
    return geom.y / static_cast<uint32_t>(chunks(g));
  }
};

// l indexes logical rows; each logical row spans `chunks` consecutive cells.
template <class G, class Rng>
std::vector<DpfsKey<G>> dpfs_gen(const G& grp, const pedersen::Params<G>& params, uint32_t l,
                                 std::span<const typename G::Element> msg, const Geometry& g,
                                 uint32_t n_servers, Rng& rng) {
  require(g.L >= 1 && g.x >= 1 && g.y >= 1, Errc::invalid_argument, "invalid geometry");
  require(n_servers >= 2, Errc::invalid_argument, "need at least two servers");
  size_t chunks = msg.size();
  require(chunks >= 1 && g.y % chunks == 0, Errc::invalid_argument,
          "row cells must divide the strip");
  uint32_t rows_per_col = g.y / static_cast<uint32_t>(chunks);
  require(l < g.L && static_cast<uint64_t>(g.x) * rows_per_col >= g.L, Errc::invalid_argument,
          "target row out of range");
  bool nonzero = false;
  for (const auto& e : msg) nonzero |= !grp.is_identity(e);
  require(nonzero, Errc::invalid_argument, "message must be non-identity");

  uint32_t lx = l / rows_per_col, lrow = l % rows_per_col;
  typename G::Scalar star = grp.random_scalar(rng);

  std::vector<DpfsKey<G>> keys(n_servers);
  for (auto& k : keys) {
    k.geom = g;
    k.geom.row_bytes = static_cast<uint32_t>(chunks * grp.element_size());
    k.b.assign(g.x, grp.scalar_zero());
    k.s.assign(g.x, grp.scalar_zero());
  }
  // first s-1 keys uniform; the last completes the shares of e_lx and s**e_lx
  for (uint32_t j = 0; j < g.x; j++) {
    typename G::Scalar bsum = grp.scalar_zero(), ssum = grp.scalar_zero();
    for (uint32_t i = 0; i + 1 < n_servers; i++) {
      keys[i].b[j] = grp.random_scalar(rng);
      keys[i].s[j] = grp.random_scalar(rng);
      bsum = grp.scalar_add(bsum, keys[i].b[j]);
      ssum = grp.scalar_add(ssum, keys[i].s[j]);
    }
    auto& last = keys[n_servers - 1];
    last.b[j] = grp.scalar_neg(bsum);
    last.s[j] = grp.scalar_neg(ssum);
    if (j == lx) {
      last.b[j] = grp.scalar_add(last.b[j], grp.scalar_from_u64(1));
      last.s[j] = grp.scalar_add(last.s[j], star);
    }
  }

  // v = m placed at its cell block, minus the homomorphic expansion of s*
  std::vector<typename G::Element> v;
  v.reserve(g.y);
  auto expansion = pedersen::shprg_expand(grp, params, star, g.y);
  for (uint32_t j = 0; j < g.y; j++) {
    typename G::Element cell = grp.neg(expansion[j]);
    uint32_t block = lrow * static_cast<uint32_t>(chunks);
    if (j >= block && j < block + chunks) cell = grp.add(cell, msg[j - block]);
    v.push_back(cell);
  }
  for (auto& k : keys) k.v = v;
  return keys;
}

template <class G>
std::vector<typename G::Element> dpfs_eval(const G& grp, const pedersen::Params<G>& params,
                                           const DpfsKey<G>& k, uint32_t l) {
  size_t chunks = k.chunks(grp);
  uint32_t rows_per_col = k.rows_per_col(grp);
  require(l < static_cast<uint64_t>(k.geom.x) * rows_per_col, Errc::invalid_argument,
          "index out of range");
  uint32_t lx = l / rows_per_col, lrow = l % rows_per_col;
  std::vector<typename G::Element> out;
  out.reserve(chunks);
  for (size_t c = 0; c < chunks; c++) {
    uint32_t j = lrow * static_cast<uint32_t>(chunks) + static_cast<uint32_t>(c);
    typename G::Element e = grp.mul(k.s[lx], params.row[j]);
    e = grp.add(e, grp.mul(k.b[lx], k.v[j]));
    out.push_back(e);
  }
  return out;
}

template <class G>
std::vector<typename G::Element> dpfs_eval_full(const G& grp, const pedersen::Params<G>& params,
                                                const DpfsKey<G>& k) {
  std::vector<typename G::Element> table;
  table.reserve(static_cast<size_t>(k.geom.x) * k.geom.y);
  for (uint32_t col = 0; col < k.geom.x; col++) {
    auto strip = pedersen::shprg_expand(grp, params, k.s[col], k.geom.y);
    for (uint32_t j = 0; j < k.geom.y; j++)
      table.push_back(grp.add(strip[j], grp.mul(k.b[col], k.v[j])));
  }
  return table;
}

template <class G>
Bytes dpfs_serialize(const G& grp, const DpfsKey<G>& k) {
  ByteWriter w;
  write_key_header(
      w, grp.element_size() == 8 ? Variant::s_schnorr : Variant::s_p256, k.geom);
  for (const auto& s : k.b) w.put_bytes(grp.serialize_scalar(s));
  for (const auto& s : k.s) w.put_bytes(grp.serialize_scalar(s));
  for (const auto& e : k.v) w.put_bytes(grp.serialize(e));
  return w.take();
}

template <class G>
DpfsKey<G> dpfs_parse(const G& grp, std::span<const uint8_t> in) {
  ByteReader r(in);
  KeyHeader h = read_key_header(r);
  require(h.variant == (grp.element_size() == 8 ? Variant::s_schnorr : Variant::s_p256),
          Errc::decode_error, "key variant mismatch");
  require(h.row_bytes % grp.element_size() == 0 && h.y % (h.row_bytes / grp.element_size()) == 0,
          Errc::decode_error, "row width not a whole number of cells");
  DpfsKey<G> k;
  k.geom = Geometry{0, h.x, h.y, h.row_bytes};
  k.b.reserve(h.x);
  k.s.reserve(h.x);
  for (uint32_t i = 0; i < h.x; i++) k.b.push_back(grp.parse_scalar(r.get_bytes(32)));
  for (uint32_t i = 0; i < h.x; i++) k.s.push_back(grp.parse_scalar(r.get_bytes(32)));
  k.v.reserve(h.y);
  for (uint32_t i = 0; i < h.y; i++) k.v.push_back(grp.parse(r.get_bytes(grp.element_size())));
  r.expect_done();
  return k;
}

}  // namespace riposte::dpf
