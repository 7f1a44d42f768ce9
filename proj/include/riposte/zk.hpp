#pragma once

#include <string_view>
#include <vector>

#include "riposte/bytes.hpp"
#include "riposte/dpf.hpp"
#include "riposte/hashing.hpp"
#include "riposte/pedersen.hpp"

// Non-interactive validity proofs for s-server write requests. The client
// commits to each server's share vectors and proves, over the homomorphic
// sums every verifier can recompute, that the shares describe one write:
//
//   (a) bit proofs      each B_sum[j] commits to 0 or 1
//   (b) sum-to-one      sum_j B_sum[j] commits to 1      => one live column
//   (c) location link   S_sum[j] commits to 0 OR B_sum[j] commits to 1
//                                                        => seeds vanish off it
//   (d) row proofs      G_sum[j] = sum_i G_i[j] + v[j] is in span(Q), or is
//                       mu + span(Q) exactly where the row bit D[j] is 1
//   (e) row sum-to-one  sum_j D[j] commits to 1          => one live row
//   (f) v binding       off the live row, -v[j] = s*.P_j with s* the value
//                       committed by S'' := sum_j S_sum[j]
//
// (f) closes a gap (d) alone leaves open: commitment randomness can absorb
// Q-multiples smuggled into the plaintext v, and (f) pins v itself, not its
// commitment coset. All sub-proofs are sigma protocols made non-interactive
// with per-instance Fiat-Shamir challenges bound to the epoch, the geometry,
// v, and every commitment byte; OR-composition splits the challenge between
// a real and a simulated branch.
namespace riposte::zk {

enum class Reason : uint8_t {
  ok = 0,
  shape,             // dimension or serialization mismatch against the key
  opening_mismatch,  // this server's share does not open its commitments
  bit_proof,
  sum_proof,
  link_proof,
  row_proof,
  vbind_proof,
  rowsum_proof,
};

inline std::string_view reason_name(Reason r) {
  switch (r) {
    case Reason::ok: return "Ok";
    case Reason::shape: return "Shape";
    case Reason::opening_mismatch: return "OpeningMismatch";
    case Reason::bit_proof: return "BitProofFailed";
    case Reason::sum_proof: return "SumProofFailed";
    case Reason::link_proof: return "LinkProofFailed";
    case Reason::row_proof: return "RowProofFailed";
    case Reason::vbind_proof: return "VBindProofFailed";
    case Reason::rowsum_proof: return "RowSumProofFailed";
  }
  return "Unknown";
}

struct Result {
  bool accepted = false;
  Reason reason = Reason::ok;
};

// Plain Schnorr proof of knowledge of w with X = w*Q.
template <class G>
struct Schnorr {
  typename G::Element a;
  typename G::Scalar z;
};

// OR of two knowledge claims X0 = w*Q / X1 = w*Q with challenge split c0+c1.
template <class G>
struct Or2 {
  typename G::Element a0, a1;
  typename G::Scalar c0, c1, z0, z1;
};

// Row proof: {D[j] = tQ and Gsum = rQ} OR {D[j]-P = tQ and Gsum-mu = rQ}.
template <class G>
struct RowOr {
  typename G::Element a0d, a0g, a1d, a1g;
  typename G::Scalar c0, c1, z0d, z0g, z1d, z1g;
};

// V binding: {D[j] = tQ and -v[j] = s*P_j and S'' = sP + rQ} OR {D[j]-P = tQ}.
// z0s is shared by the second and third equations of branch 0.
template <class G>
struct VBindOr {
  typename G::Element a0d, a0w, a0s, a1d;
  typename G::Scalar c0, c1, z0d, z0s, z0r, z1d;
};

template <class G>
struct Bundle {
  uint32_t x = 0, y = 0, servers = 0;
  std::vector<std::vector<typename G::Element>> b_com;  // [server][x]
  std::vector<std::vector<typename G::Element>> s_com;  // [server][x]
  std::vector<std::vector<typename G::Element>> g_com;  // [server][y]
  std::vector<typename G::Element> d_com;               // [y]
  typename G::Element mu;
  std::vector<Or2<G>> bits;      // x
  Schnorr<G> sum_to_one;
  std::vector<Or2<G>> links;     // x
  std::vector<RowOr<G>> rows;    // y
  std::vector<VBindOr<G>> vbind; // y
  Schnorr<G> row_sum_to_one;
};

// Per-server commitment randomness; server i checks its own share against
// the public commitments with exactly these values.
template <class G>
struct Opening {
  std::vector<typename G::Scalar> rb, rs;  // x each
  std::vector<typename G::Scalar> rg;      // y
};

// ----------------------------------------------------------- transcript

namespace detail {

template <class G>
void absorb_elements(hashing::Sha256& h, const G& g,
                     const std::vector<typename G::Element>& v) {
  for (const auto& e : v) h.update(g.serialize(e));
}

// Statement digest: epoch, geometry, and every commitment byte. v enters
// each row and binding challenge through the recomputed g_sum / -v[j]
// announcement inputs instead, so a tampered v fails exactly the proofs
// that speak about it.
template <class G>
hashing::Digest statement_digest(const G& g, std::span<const uint8_t> epoch_id,
                                 const Bundle<G>& bundle) {
  hashing::Sha256 h;
  h.update(to_bytes("riposte/zk/v1"));
  h.update(epoch_id);
  ByteWriter dims;
  dims.put_u32le(bundle.x);
  dims.put_u32le(bundle.y);
  dims.put_u32le(bundle.servers);
  h.update(dims.view());
  for (const auto& vec : bundle.b_com) absorb_elements(h, g, vec);
  for (const auto& vec : bundle.s_com) absorb_elements(h, g, vec);
  for (const auto& vec : bundle.g_com) absorb_elements(h, g, vec);
  absorb_elements(h, g, bundle.d_com);
  h.update(g.serialize(bundle.mu));
  return h.finish();
}

template <class G, class... E>
typename G::Scalar challenge(const G& g, const hashing::Digest& stmt, std::string_view label,
                             uint32_t index, const E&... announcements) {
  hashing::Sha256 h;
  h.update(stmt);
  h.update(to_bytes(label));
  ByteWriter w;
  w.put_u32le(index);
  h.update(w.view());
  (h.update(g.serialize(announcements)), ...);
  return g.scalar_from_hash(h.finish());
}

}  // namespace detail

// ----------------------------------------------------------- sub-proofs

namespace detail {

// X = w*Q.
template <class G, class Rng>
Schnorr<G> schnorr_prove(const G& g, const pedersen::Params<G>& pp, const hashing::Digest& stmt,
                         std::string_view label, const typename G::Element& x,
                         const typename G::Scalar& w, Rng& rng) {
  auto alpha = g.random_scalar(rng);
  Schnorr<G> pr;
  pr.a = g.mul(alpha, pp.Q);
  auto c = challenge(g, stmt, label, 0, pr.a, x);
  pr.z = g.scalar_add(alpha, g.scalar_mul(c, w));
  return pr;
}

template <class G>
bool schnorr_verify(const G& g, const pedersen::Params<G>& pp, const hashing::Digest& stmt,
                    std::string_view label, const typename G::Element& x, const Schnorr<G>& pr) {
  auto c = challenge(g, stmt, label, 0, pr.a, x);
  return g.mul(pr.z, pp.Q) == g.add(pr.a, g.mul(c, x));
}

// Or2 over (X0, X1): real branch proven, other simulated.
template <class G, class Rng>
Or2<G> or2_prove(const G& g, const pedersen::Params<G>& pp, const hashing::Digest& stmt,
                 std::string_view label, uint32_t index, const typename G::Element& x0,
                 const typename G::Element& x1, int real, const typename G::Scalar& w, Rng& rng) {
  Or2<G> pr;
  auto alpha = g.random_scalar(rng);
  if (real == 0) {
    pr.c1 = g.random_scalar(rng);
    pr.z1 = g.random_scalar(rng);
    pr.a1 = g.sub(g.mul(pr.z1, pp.Q), g.mul(pr.c1, x1));
    pr.a0 = g.mul(alpha, pp.Q);
  } else {
    pr.c0 = g.random_scalar(rng);
    pr.z0 = g.random_scalar(rng);
    pr.a0 = g.sub(g.mul(pr.z0, pp.Q), g.mul(pr.c0, x0));
    pr.a1 = g.mul(alpha, pp.Q);
  }
  auto c = challenge(g, stmt, label, index, pr.a0, pr.a1, x0, x1);
  if (real == 0) {
    pr.c0 = g.scalar_sub(c, pr.c1);
    pr.z0 = g.scalar_add(alpha, g.scalar_mul(pr.c0, w));
  } else {
    pr.c1 = g.scalar_sub(c, pr.c0);
    pr.z1 = g.scalar_add(alpha, g.scalar_mul(pr.c1, w));
  }
  return pr;
}

template <class G>
bool or2_verify(const G& g, const pedersen::Params<G>& pp, const hashing::Digest& stmt,
                std::string_view label, uint32_t index, const typename G::Element& x0,
                const typename G::Element& x1, const Or2<G>& pr) {
  auto c = challenge(g, stmt, label, index, pr.a0, pr.a1, x0, x1);
  if (!(g.scalar_add(pr.c0, pr.c1) == c)) return false;
  if (!(g.mul(pr.z0, pp.Q) == g.add(pr.a0, g.mul(pr.c0, x0)))) return false;
  return g.mul(pr.z1, pp.Q) == g.add(pr.a1, g.mul(pr.c1, x1));
}

// Row proof for one j. Branch 0 pairs (D[j], Gsum[j]); branch 1 pairs
// (D[j]-P, Gsum[j]-mu). Each branch shares one challenge across its two
// independent-witness equations.
template <class G, class Rng>
RowOr<G> row_prove(const G& g, const pedersen::Params<G>& pp, const hashing::Digest& stmt,
                   uint32_t index, const typename G::Element& dj,
                   const typename G::Element& gsum, const typename G::Element& mu, int real,
                   const typename G::Scalar& wt, const typename G::Scalar& wr, Rng& rng) {
  RowOr<G> pr;
  auto x1d = g.sub(dj, pp.P);
  auto x1g = g.sub(gsum, mu);
  auto at = g.random_scalar(rng);
  auto ag = g.random_scalar(rng);
  if (real == 0) {
    pr.c1 = g.random_scalar(rng);
    pr.z1d = g.random_scalar(rng);
    pr.z1g = g.random_scalar(rng);
    pr.a1d = g.sub(g.mul(pr.z1d, pp.Q), g.mul(pr.c1, x1d));
    pr.a1g = g.sub(g.mul(pr.z1g, pp.Q), g.mul(pr.c1, x1g));
    pr.a0d = g.mul(at, pp.Q);
    pr.a0g = g.mul(ag, pp.Q);
  } else {
    pr.c0 = g.random_scalar(rng);
    pr.z0d = g.random_scalar(rng);
    pr.z0g = g.random_scalar(rng);
    pr.a0d = g.sub(g.mul(pr.z0d, pp.Q), g.mul(pr.c0, dj));
    pr.a0g = g.sub(g.mul(pr.z0g, pp.Q), g.mul(pr.c0, gsum));
    pr.a1d = g.mul(at, pp.Q);
    pr.a1g = g.mul(ag, pp.Q);
  }
  auto c = challenge(g, stmt, "riposte/zk/row", index, pr.a0d, pr.a0g, pr.a1d, pr.a1g, dj, gsum);
  if (real == 0) {
    pr.c0 = g.scalar_sub(c, pr.c1);
    pr.z0d = g.scalar_add(at, g.scalar_mul(pr.c0, wt));
    pr.z0g = g.scalar_add(ag, g.scalar_mul(pr.c0, wr));
  } else {
    pr.c1 = g.scalar_sub(c, pr.c0);
    pr.z1d = g.scalar_add(at, g.scalar_mul(pr.c1, wt));
    pr.z1g = g.scalar_add(ag, g.scalar_mul(pr.c1, wr));
  }
  return pr;
}

template <class G>
bool row_verify(const G& g, const pedersen::Params<G>& pp, const hashing::Digest& stmt,
                uint32_t index, const typename G::Element& dj, const typename G::Element& gsum,
                const typename G::Element& mu, const RowOr<G>& pr) {
  auto x1d = g.sub(dj, pp.P);
  auto x1g = g.sub(gsum, mu);
  auto c = challenge(g, stmt, "riposte/zk/row", index, pr.a0d, pr.a0g, pr.a1d, pr.a1g, dj, gsum);
  if (!(g.scalar_add(pr.c0, pr.c1) == c)) return false;
  if (!(g.mul(pr.z0d, pp.Q) == g.add(pr.a0d, g.mul(pr.c0, dj)))) return false;
  if (!(g.mul(pr.z0g, pp.Q) == g.add(pr.a0g, g.mul(pr.c0, gsum)))) return false;
  if (!(g.mul(pr.z1d, pp.Q) == g.add(pr.a1d, g.mul(pr.c1, x1d)))) return false;
  return g.mul(pr.z1g, pp.Q) == g.add(pr.a1g, g.mul(pr.c1, x1g));
}

// V-binding proof for one j, W := -v[j], S'' the recomputed seed commitment.
// Branch 0: D[j] = tQ, W = s*P_j, S'' = sP + rQ with one response z0s tying
// s across the last two. Branch 1: D[j]-P = tQ.
template <class G, class Rng>
VBindOr<G> vbind_prove(const G& g, const pedersen::Params<G>& pp, const hashing::Digest& stmt,
                       uint32_t index, const typename G::Element& dj,
                       const typename G::Element& w_elem, const typename G::Element& s2,
                       int real, const typename G::Scalar& wt, const typename G::Scalar& ws,
                       const typename G::Scalar& wr, Rng& rng) {
  VBindOr<G> pr;
  const auto& pj = pp.row[index];
  auto x1d = g.sub(dj, pp.P);
  if (real == 0) {
    pr.c1 = g.random_scalar(rng);
    pr.z1d = g.random_scalar(rng);
    pr.a1d = g.sub(g.mul(pr.z1d, pp.Q), g.mul(pr.c1, x1d));
    auto at = g.random_scalar(rng);
    auto as = g.random_scalar(rng);
    auto ar = g.random_scalar(rng);
    pr.a0d = g.mul(at, pp.Q);
    pr.a0w = g.mul(as, pj);
    pr.a0s = g.add(g.mul(as, pp.P), g.mul(ar, pp.Q));
    auto c = challenge(g, stmt, "riposte/zk/vbind", index, pr.a0d, pr.a0w, pr.a0s, pr.a1d, dj,
                       w_elem, s2);
    pr.c0 = g.scalar_sub(c, pr.c1);
    pr.z0d = g.scalar_add(at, g.scalar_mul(pr.c0, wt));
    pr.z0s = g.scalar_add(as, g.scalar_mul(pr.c0, ws));
    pr.z0r = g.scalar_add(ar, g.scalar_mul(pr.c0, wr));
  } else {
    pr.c0 = g.random_scalar(rng);
    pr.z0d = g.random_scalar(rng);
    pr.z0s = g.random_scalar(rng);
    pr.z0r = g.random_scalar(rng);
    pr.a0d = g.sub(g.mul(pr.z0d, pp.Q), g.mul(pr.c0, dj));
    pr.a0w = g.sub(g.mul(pr.z0s, pj), g.mul(pr.c0, w_elem));
    pr.a0s = g.sub(g.add(g.mul(pr.z0s, pp.P), g.mul(pr.z0r, pp.Q)), g.mul(pr.c0, s2));
    auto at = g.random_scalar(rng);
    pr.a1d = g.mul(at, pp.Q);
    auto c = challenge(g, stmt, "riposte/zk/vbind", index, pr.a0d, pr.a0w, pr.a0s, pr.a1d, dj,
                       w_elem, s2);
    pr.c1 = g.scalar_sub(c, pr.c0);
    pr.z1d = g.scalar_add(at, g.scalar_mul(pr.c1, wt));
  }
  return pr;
}

template <class G>
bool vbind_verify(const G& g, const pedersen::Params<G>& pp, const hashing::Digest& stmt,
                  uint32_t index, const typename G::Element& dj,
                  const typename G::Element& w_elem, const typename G::Element& s2,
                  const VBindOr<G>& pr) {
  if (index >= pp.row.size()) return false;
  const auto& pj = pp.row[index];
  auto x1d = g.sub(dj, pp.P);
  auto c = challenge(g, stmt, "riposte/zk/vbind", index, pr.a0d, pr.a0w, pr.a0s, pr.a1d, dj,
                     w_elem, s2);
  if (!(g.scalar_add(pr.c0, pr.c1) == c)) return false;
  if (!(g.mul(pr.z0d, pp.Q) == g.add(pr.a0d, g.mul(pr.c0, dj)))) return false;
  if (!(g.mul(pr.z0s, pj) == g.add(pr.a0w, g.mul(pr.c0, w_elem)))) return false;
  if (!(g.add(g.mul(pr.z0s, pp.P), g.mul(pr.z0r, pp.Q)) == g.add(pr.a0s, g.mul(pr.c0, s2))))
    return false;
  return g.mul(pr.z1d, pp.Q) == g.add(pr.a1d, g.mul(pr.c1, x1d));
}

}  // namespace detail

// ------------------------------------------------------------- proving

template <class G>
struct WriteProof {
  Bundle<G> bundle;                 // identical for every server
  std::vector<Opening<G>> openings; // openings[i] goes only to server i
};

template <class G, class Rng>
WriteProof<G> prove_write_valid(const G& g, const pedersen::Params<G>& pp,
                                std::span<const uint8_t> epoch_id,
                                const std::vector<dpf::DpfsKey<G>>& keys, uint32_t l,
                                const typename G::Element& m, Rng& rng) {
  require(keys.size() >= 2, Errc::invalid_argument, "need at least two key shares");
  require(!g.is_identity(m), Errc::invalid_argument, "message must be non-identity");
  const Geometry& geom = keys[0].geom;
  require(geom.row_bytes == g.element_size(), Errc::invalid_argument,
          "proofs cover single-cell rows only");
  uint32_t x = geom.x, y = geom.y, s_count = static_cast<uint32_t>(keys.size());
  require(pp.row.size() >= y, Errc::invalid_argument, "row bases shorter than geometry");
  uint32_t lx = l / y, ly = l % y;
  require(lx < x, Errc::invalid_argument, "target out of range");

  WriteProof<G> out;
  Bundle<G>& bundle = out.bundle;
  bundle.x = x;
  bundle.y = y;
  bundle.servers = s_count;
  out.openings.resize(s_count);

  // commit to every share vector
  for (uint32_t i = 0; i < s_count; i++) {
    auto& op = out.openings[i];
    std::vector<typename G::Element> bc(x), sc(x), gc(y);
    op.rb.resize(x);
    op.rs.resize(x);
    op.rg.resize(y);
    typename G::Scalar sigma = g.scalar_zero();
    for (uint32_t j = 0; j < x; j++) sigma = g.scalar_add(sigma, keys[i].s[j]);
    for (uint32_t j = 0; j < x; j++) {
      op.rb[j] = g.random_scalar(rng);
      op.rs[j] = g.random_scalar(rng);
      bc[j] = pedersen::commit(g, pp, keys[i].b[j], op.rb[j]);
      sc[j] = pedersen::commit(g, pp, keys[i].s[j], op.rs[j]);
    }
    for (uint32_t j = 0; j < y; j++) {
      op.rg[j] = g.random_scalar(rng);
      gc[j] = g.add(g.mul(sigma, pp.row[j]), g.mul(op.rg[j], pp.Q));
    }
    bundle.b_com.push_back(std::move(bc));
    bundle.s_com.push_back(std::move(sc));
    bundle.g_com.push_back(std::move(gc));
  }

  // row-bit commitments and the blinded message
  std::vector<typename G::Scalar> rd(y);
  for (uint32_t j = 0; j < y; j++) {
    rd[j] = g.random_scalar(rng);
    bundle.d_com.push_back(pedersen::commit(g, pp, g.scalar_from_u64(j == ly ? 1 : 0), rd[j]));
  }
  auto r_mu = g.random_scalar(rng);
  bundle.mu = g.add(m, g.mul(r_mu, pp.Q));

  auto stmt = detail::statement_digest(g, epoch_id, bundle);

  // aggregate witnesses: randomness of the homomorphic sums
  std::vector<typename G::Scalar> rB(x, g.scalar_zero()), rS(x, g.scalar_zero()),
      rG(y, g.scalar_zero());
  for (uint32_t i = 0; i < s_count; i++)
    for (uint32_t j = 0; j < x; j++) {
      rB[j] = g.scalar_add(rB[j], out.openings[i].rb[j]);
      rS[j] = g.scalar_add(rS[j], out.openings[i].rs[j]);
    }
  for (uint32_t i = 0; i < s_count; i++)
    for (uint32_t j = 0; j < y; j++) rG[j] = g.scalar_add(rG[j], out.openings[i].rg[j]);

  // public homomorphic sums (recomputed identically by every verifier)
  std::vector<typename G::Element> b_sum(x, g.identity()), s_sum(x, g.identity()),
      g_sum(y, g.identity());
  for (uint32_t i = 0; i < s_count; i++)
    for (uint32_t j = 0; j < x; j++) {
      b_sum[j] = g.add(b_sum[j], bundle.b_com[i][j]);
      s_sum[j] = g.add(s_sum[j], bundle.s_com[i][j]);
    }
  for (uint32_t i = 0; i < s_count; i++)
    for (uint32_t j = 0; j < y; j++) g_sum[j] = g.add(g_sum[j], bundle.g_com[i][j]);
  for (uint32_t j = 0; j < y; j++) g_sum[j] = g.add(g_sum[j], keys[0].v[j]);

  // (a) bit proofs on B_sum
  for (uint32_t j = 0; j < x; j++) {
    int real = j == lx ? 1 : 0;
    bundle.bits.push_back(detail::or2_prove(g, pp, stmt, "riposte/zk/bit", j, b_sum[j],
                                            g.sub(b_sum[j], pp.P), real, rB[j], rng));
  }
  // (b) sum of bits is one
  {
    typename G::Element sum = g.identity();
    typename G::Scalar w = g.scalar_zero();
    for (uint32_t j = 0; j < x; j++) {
      sum = g.add(sum, b_sum[j]);
      w = g.scalar_add(w, rB[j]);
    }
    bundle.sum_to_one =
        detail::schnorr_prove(g, pp, stmt, "riposte/zk/sum1", g.sub(sum, pp.P), w, rng);
  }
  // (c) location link
  for (uint32_t j = 0; j < x; j++) {
    int real = j == lx ? 1 : 0;
    const auto& w = j == lx ? rB[j] : rS[j];
    bundle.links.push_back(detail::or2_prove(g, pp, stmt, "riposte/zk/link", j, s_sum[j],
                                             g.sub(b_sum[j], pp.P), real, w, rng));
  }
  // (d) row proofs on G_sum against mu
  for (uint32_t j = 0; j < y; j++) {
    int real = j == ly ? 1 : 0;
    auto wg = j == ly ? g.scalar_sub(rG[j], r_mu) : rG[j];
    bundle.rows.push_back(
        detail::row_prove(g, pp, stmt, j, bundle.d_com[j], g_sum[j], bundle.mu, real, rd[j], wg, rng));
  }
  // (f) v binding; S'' = sum_j S_sum[j] commits to s* under sum_j rS[j]
  {
    typename G::Element s2 = g.identity();
    typename G::Scalar r2 = g.scalar_zero();
    typename G::Scalar sstar = g.scalar_zero();
    for (uint32_t j = 0; j < x; j++) {
      s2 = g.add(s2, s_sum[j]);
      r2 = g.scalar_add(r2, rS[j]);
    }
    for (uint32_t i = 0; i < s_count; i++)
      for (uint32_t j = 0; j < x; j++) sstar = g.scalar_add(sstar, keys[i].s[j]);
    for (uint32_t j = 0; j < y; j++) {
      int real = j == ly ? 1 : 0;
      bundle.vbind.push_back(detail::vbind_prove(g, pp, stmt, j, bundle.d_com[j],
                                                 g.neg(keys[0].v[j]), s2, real, rd[j], sstar, r2,
                                                 rng));
    }
  }
  // (e) row bits sum to one
  {
    typename G::Element sum = g.identity();
    typename G::Scalar w = g.scalar_zero();
    for (uint32_t j = 0; j < y; j++) {
      sum = g.add(sum, bundle.d_com[j]);
      w = g.scalar_add(w, rd[j]);
    }
    bundle.row_sum_to_one =
        detail::schnorr_prove(g, pp, stmt, "riposte/zk/rowsum", g.sub(sum, pp.P), w, rng);
  }
  return out;
}

// ----------------------------------------------------------- verifying

template <class G>
Result verify_write_share(const G& g, const pedersen::Params<G>& pp,
                          std::span<const uint8_t> epoch_id, uint32_t server_index,
                          const dpf::DpfsKey<G>& key, const Bundle<G>& bundle,
                          const Opening<G>& opening) {
  uint32_t x = bundle.x, y = bundle.y, s_count = bundle.servers;
  if (key.geom.x != x || key.geom.y != y || key.geom.row_bytes != g.element_size() ||
      server_index >= s_count)
    return {false, Reason::shape};
  if (bundle.b_com.size() != s_count || bundle.s_com.size() != s_count ||
      bundle.g_com.size() != s_count || bundle.d_com.size() != y || bundle.bits.size() != x ||
      bundle.links.size() != x || bundle.rows.size() != y || bundle.vbind.size() != y)
    return {false, Reason::shape};
  for (uint32_t i = 0; i < s_count; i++)
    if (bundle.b_com[i].size() != x || bundle.s_com[i].size() != x || bundle.g_com[i].size() != y)
      return {false, Reason::shape};
  if (opening.rb.size() != x || opening.rs.size() != x || opening.rg.size() != y)
    return {false, Reason::shape};
  if (pp.row.size() < y) return {false, Reason::shape};

  // (i) this server's key share must open its commitment vectors
  typename G::Scalar sigma = g.scalar_zero();
  for (uint32_t j = 0; j < x; j++) sigma = g.scalar_add(sigma, key.s[j]);
  for (uint32_t j = 0; j < x; j++) {
    if (!(bundle.b_com[server_index][j] == pedersen::commit(g, pp, key.b[j], opening.rb[j])))
      return {false, Reason::opening_mismatch};
    if (!(bundle.s_com[server_index][j] == pedersen::commit(g, pp, key.s[j], opening.rs[j])))
      return {false, Reason::opening_mismatch};
  }
  for (uint32_t j = 0; j < y; j++) {
    auto expect = g.add(g.mul(sigma, pp.row[j]), g.mul(opening.rg[j], pp.Q));
    if (!(bundle.g_com[server_index][j] == expect)) return {false, Reason::opening_mismatch};
  }

  auto stmt = detail::statement_digest(g, epoch_id, bundle);

  // (ii) homomorphic sums
  std::vector<typename G::Element> b_sum(x, g.identity()), s_sum(x, g.identity()),
      g_sum(y, g.identity());
  for (uint32_t i = 0; i < s_count; i++)
    for (uint32_t j = 0; j < x; j++) {
      b_sum[j] = g.add(b_sum[j], bundle.b_com[i][j]);
      s_sum[j] = g.add(s_sum[j], bundle.s_com[i][j]);
    }
  for (uint32_t i = 0; i < s_count; i++)
    for (uint32_t j = 0; j < y; j++) g_sum[j] = g.add(g_sum[j], bundle.g_com[i][j]);
  for (uint32_t j = 0; j < y; j++) g_sum[j] = g.add(g_sum[j], key.v[j]);

  // (iii) sigma protocol checks
  for (uint32_t j = 0; j < x; j++)
    if (!detail::or2_verify(g, pp, stmt, "riposte/zk/bit", j, b_sum[j], g.sub(b_sum[j], pp.P),
                            bundle.bits[j]))
      return {false, Reason::bit_proof};
  {
    typename G::Element sum = g.identity();
    for (uint32_t j = 0; j < x; j++) sum = g.add(sum, b_sum[j]);
    if (!detail::schnorr_verify(g, pp, stmt, "riposte/zk/sum1", g.sub(sum, pp.P),
                                bundle.sum_to_one))
      return {false, Reason::sum_proof};
  }
  for (uint32_t j = 0; j < x; j++)
    if (!detail::or2_verify(g, pp, stmt, "riposte/zk/link", j, s_sum[j], g.sub(b_sum[j], pp.P),
                            bundle.links[j]))
      return {false, Reason::link_proof};
  for (uint32_t j = 0; j < y; j++)
    if (!detail::row_verify(g, pp, stmt, j, bundle.d_com[j], g_sum[j], bundle.mu, bundle.rows[j]))
      return {false, Reason::row_proof};
  {
    typename G::Element s2 = g.identity();
    for (uint32_t j = 0; j < x; j++) s2 = g.add(s2, s_sum[j]);
    for (uint32_t j = 0; j < y; j++)
      if (!detail::vbind_verify(g, pp, stmt, j, bundle.d_com[j], g.neg(key.v[j]), s2,
                                bundle.vbind[j]))
        return {false, Reason::vbind_proof};
  }
  {
    typename G::Element sum = g.identity();
    for (uint32_t j = 0; j < y; j++) sum = g.add(sum, bundle.d_com[j]);
    if (!detail::schnorr_verify(g, pp, stmt, "riposte/zk/rowsum", g.sub(sum, pp.P),
                                bundle.row_sum_to_one))
      return {false, Reason::rowsum_proof};
  }
  return {true, Reason::ok};
}

// -------------------------------------------------------- serialization

namespace detail {

// Tagged, length-prefixed sections in fixed order; parsing is strict.
enum : uint8_t {
  kSecHeader = 1,
  kSecB = 2,
  kSecS = 3,
  kSecG = 4,
  kSecD = 5,
  kSecMu = 6,
  kSecBits = 7,
  kSecSum1 = 8,
  kSecLinks = 9,
  kSecRows = 10,
  kSecVBind = 11,
  kSecRowSum = 12,
};

inline void begin_section(ByteWriter& w, uint8_t tag, const Bytes& payload) {
  w.put_u8(tag);
  w.put_u32le(static_cast<uint32_t>(payload.size()));
  w.put_bytes(payload);
}

inline Bytes read_section(ByteReader& r, uint8_t tag) {
  require(r.get_u8() == tag, Errc::decode_error, "unexpected proof section");
  uint32_t len = r.get_u32le();
  return r.get_bytes(len);
}

template <class G>
void put_schnorr(const G& g, ByteWriter& w, const Schnorr<G>& p) {
  w.put_bytes(g.serialize(p.a));
  w.put_bytes(g.serialize_scalar(p.z));
}

template <class G>
Schnorr<G> get_schnorr(const G& g, ByteReader& r) {
  Schnorr<G> p;
  p.a = g.parse(r.get_bytes(g.element_size()));
  p.z = g.parse_scalar(r.get_bytes(32));
  return p;
}

template <class G>
void put_or2(const G& g, ByteWriter& w, const Or2<G>& p) {
  w.put_bytes(g.serialize(p.a0));
  w.put_bytes(g.serialize(p.a1));
  for (const auto* s : {&p.c0, &p.c1, &p.z0, &p.z1}) w.put_bytes(g.serialize_scalar(*s));
}

template <class G>
Or2<G> get_or2(const G& g, ByteReader& r) {
  Or2<G> p;
  p.a0 = g.parse(r.get_bytes(g.element_size()));
  p.a1 = g.parse(r.get_bytes(g.element_size()));
  for (auto* s : {&p.c0, &p.c1, &p.z0, &p.z1}) *s = g.parse_scalar(r.get_bytes(32));
  return p;
}

template <class G>
void put_rowor(const G& g, ByteWriter& w, const RowOr<G>& p) {
  for (const auto* e : {&p.a0d, &p.a0g, &p.a1d, &p.a1g}) w.put_bytes(g.serialize(*e));
  for (const auto* s : {&p.c0, &p.c1, &p.z0d, &p.z0g, &p.z1d, &p.z1g})
    w.put_bytes(g.serialize_scalar(*s));
}

template <class G>
RowOr<G> get_rowor(const G& g, ByteReader& r) {
  RowOr<G> p;
  for (auto* e : {&p.a0d, &p.a0g, &p.a1d, &p.a1g}) *e = g.parse(r.get_bytes(g.element_size()));
  for (auto* s : {&p.c0, &p.c1, &p.z0d, &p.z0g, &p.z1d, &p.z1g})
    *s = g.parse_scalar(r.get_bytes(32));
  return p;
}

template <class G>
void put_vbind(const G& g, ByteWriter& w, const VBindOr<G>& p) {
  for (const auto* e : {&p.a0d, &p.a0w, &p.a0s, &p.a1d}) w.put_bytes(g.serialize(*e));
  for (const auto* s : {&p.c0, &p.c1, &p.z0d, &p.z0s, &p.z0r, &p.z1d})
    w.put_bytes(g.serialize_scalar(*s));
}

template <class G>
VBindOr<G> get_vbind(const G& g, ByteReader& r) {
  VBindOr<G> p;
  for (auto* e : {&p.a0d, &p.a0w, &p.a0s, &p.a1d}) *e = g.parse(r.get_bytes(g.element_size()));
  for (auto* s : {&p.c0, &p.c1, &p.z0d, &p.z0s, &p.z0r, &p.z1d})
    *s = g.parse_scalar(r.get_bytes(32));
  return p;
}

template <class G>
Bytes elements_payload(const G& g, const std::vector<std::vector<typename G::Element>>& vv) {
  ByteWriter w;
  for (const auto& v : vv)
    for (const auto& e : v) w.put_bytes(g.serialize(e));
  return w.take();
}

}  // namespace detail

template <class G>
Bytes serialize_bundle(const G& g, const Bundle<G>& b) {
  using namespace detail;
  ByteWriter w;
  {
    ByteWriter h;
    h.put_u32le(b.x);
    h.put_u32le(b.y);
    h.put_u32le(b.servers);
    begin_section(w, kSecHeader, h.take());
  }
  begin_section(w, kSecB, elements_payload(g, b.b_com));
  begin_section(w, kSecS, elements_payload(g, b.s_com));
  begin_section(w, kSecG, elements_payload(g, b.g_com));
  {
    ByteWriter d;
    for (const auto& e : b.d_com) d.put_bytes(g.serialize(e));
    begin_section(w, kSecD, d.take());
  }
  begin_section(w, kSecMu, g.serialize(b.mu));
  {
    ByteWriter p;
    for (const auto& pr : b.bits) put_or2(g, p, pr);
    begin_section(w, kSecBits, p.take());
  }
  {
    ByteWriter p;
    put_schnorr(g, p, b.sum_to_one);
    begin_section(w, kSecSum1, p.take());
  }
  {
    ByteWriter p;
    for (const auto& pr : b.links) put_or2(g, p, pr);
    begin_section(w, kSecLinks, p.take());
  }
  {
    ByteWriter p;
    for (const auto& pr : b.rows) put_rowor(g, p, pr);
    begin_section(w, kSecRows, p.take());
  }
  {
    ByteWriter p;
    for (const auto& pr : b.vbind) put_vbind(g, p, pr);
    begin_section(w, kSecVBind, p.take());
  }
  {
    ByteWriter p;
    put_schnorr(g, p, b.row_sum_to_one);
    begin_section(w, kSecRowSum, p.take());
  }
  return w.take();
}

template <class G>
Bundle<G> parse_bundle(const G& g, std::span<const uint8_t> in) {
  using namespace detail;
  ByteReader r(in);
  Bundle<G> b;
  {
    Bytes h = read_section(r, kSecHeader);
    ByteReader hr(h);
    b.x = hr.get_u32le();
    b.y = hr.get_u32le();
    b.servers = hr.get_u32le();
    hr.expect_done();
    require(b.x >= 1 && b.x <= (1u << 20) && b.y >= 1 && b.y <= (1u << 20) && b.servers >= 2 &&
                b.servers <= 64,
            Errc::decode_error, "bundle dimensions out of range");
  }
  auto read_matrix = [&](uint8_t tag, uint32_t rows_n, uint32_t cols) {
    Bytes payload = read_section(r, tag);
    require(payload.size() == static_cast<size_t>(rows_n) * cols * g.element_size(),
            Errc::decode_error, "bundle section size mismatch");
    ByteReader pr(payload);
    std::vector<std::vector<typename G::Element>> m(rows_n);
    for (auto& v : m) {
      v.reserve(cols);
      for (uint32_t j = 0; j < cols; j++) v.push_back(g.parse(pr.get_bytes(g.element_size())));
    }
    return m;
  };
  b.b_com = read_matrix(kSecB, b.servers, b.x);
  b.s_com = read_matrix(kSecS, b.servers, b.x);
  b.g_com = read_matrix(kSecG, b.servers, b.y);
  {
    Bytes payload = read_section(r, kSecD);
    require(payload.size() == static_cast<size_t>(b.y) * g.element_size(), Errc::decode_error,
            "bundle section size mismatch");
    ByteReader pr(payload);
    for (uint32_t j = 0; j < b.y; j++) b.d_com.push_back(g.parse(pr.get_bytes(g.element_size())));
  }
  {
    Bytes payload = read_section(r, kSecMu);
    b.mu = g.parse(payload);
  }
  auto read_proofs = [&](uint8_t tag, uint32_t count, auto reader, auto& dst) {
    Bytes payload = read_section(r, tag);
    ByteReader pr(payload);
    for (uint32_t j = 0; j < count; j++) dst.push_back(reader(g, pr));
    pr.expect_done();
  };
  read_proofs(kSecBits, b.x, [](const G& gg, ByteReader& rr) { return get_or2(gg, rr); }, b.bits);
  {
    Bytes payload = read_section(r, kSecSum1);
    ByteReader pr(payload);
    b.sum_to_one = get_schnorr(g, pr);
    pr.expect_done();
  }
  read_proofs(kSecLinks, b.x, [](const G& gg, ByteReader& rr) { return get_or2(gg, rr); },
              b.links);
  read_proofs(kSecRows, b.y, [](const G& gg, ByteReader& rr) { return get_rowor(gg, rr); },
              b.rows);
  read_proofs(kSecVBind, b.y, [](const G& gg, ByteReader& rr) { return get_vbind(gg, rr); },
              b.vbind);
  {
    Bytes payload = read_section(r, kSecRowSum);
    ByteReader pr(payload);
    b.row_sum_to_one = get_schnorr(g, pr);
    pr.expect_done();
  }
  r.expect_done();
  return b;
}

template <class G>
Bytes serialize_opening(const G& g, const Opening<G>& o) {
  ByteWriter w;
  w.put_u32le(static_cast<uint32_t>(o.rb.size()));
  w.put_u32le(static_cast<uint32_t>(o.rg.size()));
  for (const auto& s : o.rb) w.put_bytes(g.serialize_scalar(s));
  for (const auto& s : o.rs) w.put_bytes(g.serialize_scalar(s));
  for (const auto& s : o.rg) w.put_bytes(g.serialize_scalar(s));
  return w.take();
}

template <class G>
Opening<G> parse_opening(const G& g, std::span<const uint8_t> in) {
  ByteReader r(in);
  uint32_t x = r.get_u32le(), y = r.get_u32le();
  require(x >= 1 && y >= 1 && x <= (1u << 20) && y <= (1u << 20), Errc::decode_error,
          "opening dimensions out of range");
  Opening<G> o;
  for (uint32_t j = 0; j < x; j++) o.rb.push_back(g.parse_scalar(r.get_bytes(32)));
  for (uint32_t j = 0; j < x; j++) o.rs.push_back(g.parse_scalar(r.get_bytes(32)));
  for (uint32_t j = 0; j < y; j++) o.rg.push_back(g.parse_scalar(r.get_bytes(32)));
  r.expect_done();
  return o;
}

}  // namespace riposte::zk
