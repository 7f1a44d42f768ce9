#pragma once

#include <cstring>
#include <mutex>
#include <optional>
#include <unordered_map>
#include <vector>

#include "riposte/bytes.hpp"
#include "riposte/dpf.hpp"
#include "riposte/hashing.hpp"
#include "riposte/rows.hpp"

// Three-party validity check for two-server keys: the database servers each
// project their key share onto two short vectors and hand the audit server
// masked fingerprints of them. For an honest pair the vectors differ at
// exactly one position per phase, and the masking (per-request one-time
// Poly1305 keys, order rotated by a shared random shift) lets the auditor
// count differing positions without learning the position or the contents.
//
//   t phase: t[i] = b[i] || s[i] per column. "Differs at exactly one column"
//            pins the write to a single column of the table.
//   u phase: u_A = sum of all column expansions, u_B = same plus v. Their
//            difference telescopes to v + G(sA*) + G(sB*), which for an
//            honest key is m*e_ly: one differing row.
//
// The two phases alone still admit two dishonest shapes, so the t-phase
// vector carries two extra unrotated tags:
//
//   parity tag. Keys equal in every b bit but one seed pass the column check
//   (one differing t entry) while the u check still constrains v + dG, yet
//   the accepted write lands v + m*e_ly: a whole column of attacker-chosen
//   garbage. Each server tags the XOR parity of its entire b vector, with
//   role A complementing first. Honest pairs have parities differing in
//   exactly the target column's bit, so the tags must be EQUAL; the garbage
//   shape has equal parities and unequal tags.
//
//   strip tag. Only role B's u vector folds v in, so a request whose two
//   copies of v disagree audits exactly like an honest one while the servers
//   apply different strips, smearing vA + vB across every column where both
//   b bits are set. Each server tags a digest of the v it will apply; the
//   tags must be EQUAL.
//
// With both tags, every accepted pair writes exactly one row.
namespace riposte::audit {

using Nonce = std::array<uint8_t, 16>;
using Contribution = std::array<uint8_t, 32>;

enum class Role : uint8_t { a = 0, b = 1 };
enum class Phase : uint8_t { t = 0, u = 1 };

// Nonces are hash output already; the first eight bytes are as good a bucket
// index as rehashing would be.
struct NonceHash {
  size_t operator()(const Nonce& n) const {
    uint64_t v;
    std::memcpy(&v, n.data(), 8);
    return static_cast<size_t>(v);
  }
};

// Both servers derive the same nonce because the shares' hashes are ordered
// by role, not by who computes it. The client sends each server the digest
// of the share it mailed to the other, so agreement also confirms the two
// servers hold halves of one request.
inline Nonce derive_nonce(std::span<const uint8_t> epoch_id, const hashing::Digest& share_hash_a,
                          const hashing::Digest& share_hash_b) {
  hashing::Sha256 h;
  h.update(epoch_id);
  h.update(share_hash_a);
  h.update(share_hash_b);
  return hashing::truncated<16>(h.finish());
}

// ------------------------------------------------------------- coin flip

// Two-round commit-reveal; neither server controls the outcome alone.
template <class Rng>
Contribution random_contribution(Rng& rng) {
  Contribution c;
  for (auto& b : c) b = static_cast<uint8_t>(rng());
  return c;
}

inline hashing::Digest commit_contribution(const Contribution& contrib) {
  return hashing::sha256(contrib);
}

inline bool opening_matches(const hashing::Digest& commitment, const Contribution& contrib) {
  return hashing::sha256(contrib) == commitment;
}

struct CoinFlip {
  hashing::Digest kappa;
};

inline CoinFlip finish_coinflip(const Contribution& contrib_a, const Contribution& contrib_b,
                                const Nonce& nonce) {
  hashing::Sha256 h;
  h.update(contrib_a);
  h.update(contrib_b);
  h.update(nonce);
  return CoinFlip{h.finish()};
}

namespace detail {

inline std::string_view phase_label(Phase p) { return p == Phase::t ? "t" : "u"; }

}  // namespace detail

// Phases use independent shifts and key streams, derived from kappa under
// distinct labels.
inline uint64_t phase_shift(const CoinFlip& cf, Phase p, uint64_t n) {
  require(n >= 1, Errc::invalid_argument, "empty vector has no shift");
  std::string label = std::string("riposte/shift/") + std::string(detail::phase_label(p));
  return hashing::derive_u64(cf.kappa, label) % n;
}

inline std::vector<std::array<uint8_t, 32>> phase_keys(const CoinFlip& cf, Phase p, size_t count) {
  std::string label = std::string("riposte/keys/") + std::string(detail::phase_label(p));
  prg::Seed seed = hashing::derive_seed(cf.kappa, label);
  Bytes material = prg::expand(seed, 32 * count);
  std::vector<std::array<uint8_t, 32>> keys(count);
  for (size_t i = 0; i < count; i++)
    std::memcpy(keys[i].data(), material.data() + 32 * i, 32);
  return keys;
}

// --------------------------------------------------- vector construction

using Key = dpf::Dpf2Key<rows::XorField>;  // the audited variant carries byte rows

inline std::vector<Bytes> build_t_vector(const Key& k) {
  std::vector<Bytes> t;
  t.reserve(k.geom.x);
  for (uint32_t i = 0; i < k.geom.x; i++) {
    ByteWriter w;
    w.put_u8(k.b[i]);
    w.put_bytes(k.seeds[i]);
    t.push_back(w.take());
  }
  return t;
}

inline std::vector<Bytes> build_u_vector(const Key& k, Role role) {
  size_t row = k.geom.row_bytes;
  Bytes sum(static_cast<size_t>(k.geom.y) * row, 0);
  Bytes strip(sum.size());
  for (uint32_t i = 0; i < k.geom.x; i++) {
    prg::expand_into(k.seeds[i], strip);
    xor_into(sum, strip);
  }
  if (role == Role::b) xor_into(sum, k.v);
  std::vector<Bytes> u;
  u.reserve(k.geom.y);
  for (uint32_t j = 0; j < k.geom.y; j++)
    u.emplace_back(sum.begin() + static_cast<size_t>(j) * row,
                   sum.begin() + static_cast<size_t>(j + 1) * row);
  return u;
}

inline uint8_t b_parity(const Key& k) {
  uint8_t p = 0;
  for (uint8_t bit : k.b) p ^= bit;
  return p;
}

// ------------------------------------------------------------- masking

struct MaskedVector {
  std::vector<hashing::Tag> tags;
};

inline Bytes serialize_masked(const MaskedVector& mv) {
  ByteWriter w;
  w.put_u32le(static_cast<uint32_t>(mv.tags.size()));
  for (const auto& t : mv.tags) w.put_bytes(t);
  return w.take();
}

inline MaskedVector parse_masked(ByteReader& r) {
  uint32_t n = r.get_u32le();
  require(n >= 1 && n <= (1u << 24), Errc::decode_error, "masked vector length out of range");
  MaskedVector mv;
  mv.tags.reserve(n);
  for (uint32_t i = 0; i < n; i++) mv.tags.push_back(r.get_array<16>());
  return mv;
}

namespace detail {

inline std::vector<hashing::Tag> tag_and_rotate(const CoinFlip& cf, Phase p,
                                                std::span<const Bytes> entries, size_t key_count) {
  size_t n = entries.size();
  auto keys = phase_keys(cf, p, key_count);
  uint64_t f = phase_shift(cf, p, n);
  std::vector<hashing::Tag> out(n);
  // left rotation: position i shows the tag of entry (f + i) mod n
  for (size_t i = 0; i < n; i++) {
    size_t src = (f + i) % n;
    out[i] = hashing::poly1305(keys[src], entries[src]);
  }
  return out;
}

}  // namespace detail

// t phase appends the parity tag after the rotated column tags; role A tags
// the complement so that honest pairs produce EQUAL parity tags.
inline MaskedVector mask_phase_t(const CoinFlip& cf, std::span<const Bytes> entries, Role role,
                                 uint8_t parity, const hashing::Digest& strip_digest) {
  size_t x = entries.size();
  MaskedVector mv{detail::tag_and_rotate(cf, Phase::t, entries, x + 2)};
  auto keys = phase_keys(cf, Phase::t, x + 2);
  uint8_t tagged = role == Role::a ? parity ^ 1 : parity;
  Bytes msg{tagged};
  mv.tags.push_back(hashing::poly1305(keys[x], msg));
  mv.tags.push_back(hashing::poly1305(keys[x + 1], strip_digest));
  return mv;
}

inline MaskedVector mask_phase_u(const CoinFlip& cf, std::span<const Bytes> entries) {
  return MaskedVector{detail::tag_and_rotate(cf, Phase::u, entries, entries.size())};
}

// ------------------------------------------------------------- decision

enum class Verdict : uint8_t { reject = 0, accept = 1 };

inline size_t count_diffs(std::span<const hashing::Tag> a, std::span<const hashing::Tag> b) {
  size_t diffs = 0;
  for (size_t i = 0; i < a.size(); i++) diffs += a[i] != b[i];
  return diffs;
}

inline Verdict decide(Phase p, const MaskedVector& a, const MaskedVector& b) {
  if (a.tags.size() != b.tags.size() || a.tags.empty()) return Verdict::reject;
  if (p == Phase::t) {
    if (a.tags.size() < 3) return Verdict::reject;
    size_t n = a.tags.size() - 2;
    if (a.tags[n] != b.tags[n]) return Verdict::reject;          // parity binding
    if (a.tags[n + 1] != b.tags[n + 1]) return Verdict::reject;  // same strip on both sides
    return count_diffs(std::span(a.tags).first(n), std::span(b.tags).first(n)) == 1
               ? Verdict::accept
               : Verdict::reject;
  }
  return count_diffs(a.tags, b.tags) == 1 ? Verdict::accept : Verdict::reject;
}

// Whole audit in one place, for tests and the in-process simulator; the wire
// protocol performs exactly these steps across three parties.
inline Verdict run_audit(const Key& ka, const Key& kb, const CoinFlip& cf) {
  if (ka.geom.x != kb.geom.x || ka.geom.y != kb.geom.y || ka.geom.row_bytes != kb.geom.row_bytes)
    return Verdict::reject;
  auto mta = mask_phase_t(cf, build_t_vector(ka), Role::a, b_parity(ka), hashing::sha256(ka.v));
  auto mtb = mask_phase_t(cf, build_t_vector(kb), Role::b, b_parity(kb), hashing::sha256(kb.v));
  if (decide(Phase::t, mta, mtb) != Verdict::accept) return Verdict::reject;
  auto mua = mask_phase_u(cf, build_u_vector(ka, Role::a));
  auto mub = mask_phase_u(cf, build_u_vector(kb, Role::b));
  return decide(Phase::u, mua, mub);
}

// --------------------------------------------------------- pending table

// The auditor pairs the two halves of each audit by nonce. Halves may arrive
// on different connections in any order; matching is atomic per nonce, and
// entries that wait past the deadline are rejected.
class Auditor {
 public:
  struct Outcome {
    Nonce nonce;
    Phase phase;
    Verdict verdict;
  };

  explicit Auditor(uint64_t deadline_ms = 30'000) : deadline_ms_(deadline_ms) {}

  // Returns the decisions this submission completed (zero or one).
  std::vector<Outcome> submit(const Nonce& nonce, Phase phase, Role role, MaskedVector mv,
                              uint64_t now_ms) {
    std::lock_guard lock(mu_);
    auto [it, inserted] = pending_.try_emplace(nonce);
    Pending& entry = it->second;
    if (inserted) entry.expires_ms = now_ms + deadline_ms_;
    auto& slot = entry.slot(phase, role);
    std::vector<Outcome> out;
    if (slot.has_value()) {
      // duplicate submission for a slot: protocol violation, fail the phase
      out.push_back({nonce, phase, Verdict::reject});
      finish_phase(entry, phase);
      return out;
    }
    slot = std::move(mv);
    auto& a = entry.slot(phase, Role::a);
    auto& b = entry.slot(phase, Role::b);
    if (a.has_value() && b.has_value() && !entry.decided(phase)) {
      out.push_back({nonce, phase, decide(phase, *a, *b)});
      finish_phase(entry, phase);
    }
    gc(nonce);
    return out;
  }

  // Rejects every undecided phase of entries past their deadline.
  std::vector<Outcome> expire(uint64_t now_ms) {
    std::lock_guard lock(mu_);
    std::vector<Outcome> out;
    for (auto it = pending_.begin(); it != pending_.end();) {
      if (it->second.expires_ms <= now_ms) {
        for (Phase p : {Phase::t, Phase::u})
          if (!it->second.decided(p)) out.push_back({it->first, p, Verdict::reject});
        it = pending_.erase(it);
      } else {
        ++it;
      }
    }
    return out;
  }

  size_t pending_count() const {
    std::lock_guard lock(mu_);
    return pending_.size();
  }

 private:
  struct Pending {
    std::array<std::optional<MaskedVector>, 4> halves;
    bool phase_done[2] = {false, false};
    uint64_t expires_ms = 0;

    std::optional<MaskedVector>& slot(Phase p, Role r) {
      return halves[2 * static_cast<size_t>(p) + static_cast<size_t>(r)];
    }
    bool decided(Phase p) const { return phase_done[static_cast<size_t>(p)]; }
  };

  void finish_phase(Pending& entry, Phase p) { entry.phase_done[static_cast<size_t>(p)] = true; }

  void gc(const Nonce& nonce) {
    auto it = pending_.find(nonce);
    if (it != pending_.end() && it->second.decided(Phase::t) && it->second.decided(Phase::u))
      pending_.erase(it);
  }

  mutable std::mutex mu_;
  uint64_t deadline_ms_;
  std::unordered_map<Nonce, Pending, NonceHash> pending_;
};

}  // namespace riposte::audit
