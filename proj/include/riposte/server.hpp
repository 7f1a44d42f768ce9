#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <mutex>
#include <optional>
#include <random>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "riposte/audit.hpp"
#include "riposte/bytes.hpp"
#include "riposte/collision.hpp"
#include "riposte/config.hpp"
#include "riposte/dpf.hpp"
#include "riposte/errors.hpp"
#include "riposte/hashing.hpp"
#include "riposte/pedersen.hpp"
#include "riposte/rows.hpp"
#include "riposte/wire.hpp"
#include "riposte/zk.hpp"

// Database-server state machines, transport-agnostic: the same nodes are
// driven by the TLS service loops and by the in-process simulator. A node
// owns one epoch at a time: intake (validation order: epoch, parse, replay,
// then the variant's cryptographic check), streaming accumulation into its
// table share, the close handshake bookkeeping, share export, and reveal.
//
// Validated writes are applied immediately and their key shares dropped;
// after close only the accumulated share, counters, and the nonce set
// remain, so a later compromise cannot replay or attribute past requests.
namespace riposte::server {

using audit::Nonce;
using audit::NonceHash;

// ------------------------------------------------------------ epoch ids

// Both servers derive the first epoch id from the shared epoch config and
// every later one from its predecessor, so agreement needs no messages.
inline Bytes initial_epoch_id(const config::EpochConfig& cfg) {
  ByteWriter w;
  w.put_bytes(to_bytes("riposte/epoch/0"));
  w.put_bytes(config::epoch_info(cfg, {}).serialize());
  auto d = hashing::sha256(w.view());
  return Bytes(d.begin(), d.begin() + 16);
}

inline Bytes next_epoch_id(std::span<const uint8_t> prev) {
  ByteWriter w;
  w.put_bytes(to_bytes("riposte/epoch/next"));
  w.put_bytes(prev);
  auto d = hashing::sha256(w.view());
  return Bytes(d.begin(), d.begin() + 16);
}

// ---------------------------------------------------------- reveal report

using collision::RowStatus;

inline const char* row_status_name(RowStatus s) {
  switch (s) {
    case RowStatus::empty: return "empty";
    case RowStatus::single: return "single";
    case RowStatus::pair: return "pair";
    case RowStatus::unrecoverable: return "unrecoverable";
  }
  return "unknown";
}

struct RowRecord {
  uint32_t row = 0;
  RowStatus status = RowStatus::empty;
  std::vector<Bytes> messages;  // one for single, two for pair
};

struct EpochReport {
  Bytes epoch_id;
  uint64_t accepted = 0;
  uint64_t rejected = 0;
  uint64_t empty = 0;
  uint64_t single = 0;
  uint64_t pair = 0;
  uint64_t unrecoverable = 0;
  std::vector<RowRecord> rows;  // non-empty rows, ascending

  // One line per non-empty row: "row N status hex [hex]".
  std::string records_text() const {
    std::string out;
    for (const auto& r : rows) {
      out += "row " + std::to_string(r.row) + " " + row_status_name(r.status);
      for (const auto& m : r.messages) out += " " + hex_encode(m);
      out += "\n";
    }
    return out;
  }

  std::string text() const {
    std::string out = "epoch " + hex_encode(epoch_id) + "\n";
    out += "accepted " + std::to_string(accepted) + "\n";
    out += "rejected " + std::to_string(rejected) + "\n";
    out += "counts empty=" + std::to_string(empty) + " single=" + std::to_string(single) +
           " pair=" + std::to_string(pair) + " unrecoverable=" + std::to_string(unrecoverable) +
           "\n";
    out += records_text();
    return out;
  }
};

namespace detail {

inline void count_row(EpochReport& rep, RowRecord rec) {
  switch (rec.status) {
    case RowStatus::empty: rep.empty++; return;
    case RowStatus::single: rep.single++; break;
    case RowStatus::pair: rep.pair++; break;
    case RowStatus::unrecoverable: rep.unrecoverable++; break;
  }
  rep.rows.push_back(std::move(rec));
}

// Plain XOR rows carry 0x01 | message | zero padding; anything else nonzero
// is a collision or mangled write and is reported unrecoverable.
inline RowRecord decode_xor_row(uint32_t row, std::span<const uint8_t> bytes,
                                uint32_t msg_bytes) {
  RowRecord rec{row, RowStatus::empty, {}};
  if (all_zero(bytes)) return rec;
  if (bytes[0] == 0x01) {
    rec.status = RowStatus::single;
    rec.messages.emplace_back(bytes.begin() + 1, bytes.begin() + 1 + msg_bytes);
  } else {
    rec.status = RowStatus::unrecoverable;
  }
  return rec;
}

inline RowRecord decode_coded_row(uint32_t row, std::span<const uint64_t> cells,
                                  uint32_t msg_bytes) {
  collision::RowDecode d = collision::decode_row(cells, msg_bytes);
  RowRecord rec{row, d.status, {}};
  for (auto& m : d.messages) rec.messages.emplace_back(m.begin(), m.begin() + msg_bytes);
  return rec;
}

template <class G>
RowRecord decode_group_row(const G& g, uint32_t row,
                           std::span<const typename G::Element> cells, uint32_t msg_bytes) {
  RowRecord rec{row, RowStatus::empty, {}};
  bool empty = true;
  for (const auto& c : cells) empty &= g.is_identity(c);
  if (empty) return rec;
  Bytes padded;
  try {
    for (const auto& c : cells) {
      Bytes chunk = g.decode_message(c);
      padded.insert(padded.end(), chunk.begin(), chunk.end());
    }
  } catch (const Error&) {
    rec.status = RowStatus::unrecoverable;
    return rec;
  }
  if (padded.size() >= msg_bytes + 1 && padded[0] == 0x01) {
    rec.status = RowStatus::single;
    rec.messages.emplace_back(padded.begin() + 1, padded.begin() + 1 + msg_bytes);
  } else {
    rec.status = RowStatus::unrecoverable;
  }
  return rec;
}

}  // namespace detail

// -------------------------------------------------------------- node base

enum class EpochState : uint8_t { open, closing, revealed };

// Result of one intake or finish step. ok means the step may proceed; a
// final accept is reported by the finish/commit call.
struct WriteStatus {
  bool ok = false;
  wire::RejectReason reason = wire::RejectReason::none;
  Nonce nonce{};
  hashing::Digest digest{};  // bundle digest, proof-carrying variant only

  static WriteStatus rejected(wire::RejectReason r, const Nonce& n = {}) {
    return {false, r, n, {}};
  }
};

enum class CloseOutcome : uint8_t { agreed, retry, diverged };

class NodeBase {
 public:
  NodeBase(config::EpochConfig cfg, uint32_t index, uint32_t n_servers, uint64_t now_ms)
      : cfg_(std::move(cfg)),
        index_(index),
        n_servers_(n_servers),
        epoch_id_(initial_epoch_id(cfg_)),
        epoch_start_ms_(now_ms) {
    config::validate_epoch(cfg_);
    require(index < n_servers, Errc::invalid_argument, "server index out of range");
  }

  const config::EpochConfig& epoch_config() const { return cfg_; }
  uint32_t index() const { return index_; }

  Bytes epoch_id() const {
    std::lock_guard lock(mu_);
    return epoch_id_;
  }
  EpochState state() const {
    std::lock_guard lock(mu_);
    return state_;
  }
  uint64_t accepted() const {
    std::lock_guard lock(mu_);
    return accepted_;
  }
  uint64_t rejected() const {
    std::lock_guard lock(mu_);
    return rejected_;
  }
  uint64_t reject_count(wire::RejectReason r) const {
    std::lock_guard lock(mu_);
    return reject_by_[static_cast<size_t>(r)];
  }

  wire::EpochInfo epoch_info() const {
    std::lock_guard lock(mu_);
    return config::epoch_info(cfg_, epoch_id_);
  }

  bool policy_met(uint64_t now_ms) const {
    std::lock_guard lock(mu_);
    if (state_ != EpochState::open) return false;
    if (accepted_ >= cfg_.threshold) return true;
    return cfg_.duration_ms > 0 && now_ms - epoch_start_ms_ >= cfg_.duration_ms;
  }

  // Closing stops intake; in-flight validations drain through their normal
  // finish/abort paths before shares are exchanged.
  void enter_closing() {
    std::lock_guard lock(mu_);
    require(state_ == EpochState::open, Errc::epoch_closed, "epoch is not open");
    state_ = EpochState::closing;
  }

  wire::CloseEpoch make_close() const {
    std::lock_guard lock(mu_);
    return wire::CloseEpoch{epoch_id_, accepted_};
  }

  // Peer side of the close handshake: agree when the counts match, else
  // hand back the accepted-nonce set for reconciliation.
  wire::CloseAck handle_close(const wire::CloseEpoch& msg) {
    std::lock_guard lock(mu_);
    wire::CloseAck ack;
    ack.epoch_id = epoch_id_;
    ack.count = accepted_;
    if (msg.epoch_id == epoch_id_ && msg.final_count == accepted_) {
      ack.agreed = true;
    } else {
      ack.agreed = false;
      ack.nonces = sorted_nonces();
    }
    return ack;
  }

  // Closer side: an undrained peer shows up as a subset relation between the
  // nonce sets (retry after backoff); incomparable sets are divergence and
  // the caller halts with a diagnostic.
  CloseOutcome evaluate_close_ack(const wire::CloseAck& ack) const {
    std::lock_guard lock(mu_);
    if (ack.agreed) return CloseOutcome::agreed;
    if (ack.epoch_id != epoch_id_) return CloseOutcome::diverged;
    std::unordered_set<Nonce, NonceHash> theirs(ack.nonces.begin(), ack.nonces.end());
    bool theirs_in_mine = true, mine_in_theirs = true;
    for (const auto& n : ack.nonces) theirs_in_mine &= accepted_nonces_.count(n) != 0;
    for (const auto& n : accepted_nonces_) mine_in_theirs &= theirs.count(n) != 0;
    return theirs_in_mine || mine_in_theirs ? CloseOutcome::retry : CloseOutcome::diverged;
  }

  // Sorted list of the nonces of accepted writes, for acks and snapshots.
  std::vector<Nonce> accepted_nonce_list() const {
    std::lock_guard lock(mu_);
    return sorted_nonces();
  }

 protected:
  // Shared intake gate; callers hold the lock. Epoch and replay checks come
  // before any cryptography.
  std::optional<WriteStatus> gate_locked(const Bytes& req_epoch, const Nonce& nonce) {
    if (state_ != EpochState::open || req_epoch != epoch_id_)
      return reject_locked(wire::RejectReason::epoch, nonce);
    if (seen_nonces_.count(nonce) != 0) return reject_locked(wire::RejectReason::replay, nonce);
    return std::nullopt;
  }

  WriteStatus reject_locked(wire::RejectReason reason, const Nonce& nonce) {
    rejected_++;
    reject_by_[static_cast<size_t>(reason)]++;
    return WriteStatus::rejected(reason, nonce);
  }

  void accept_locked(const Nonce& nonce) {
    accepted_++;
    accepted_nonces_.insert(nonce);
  }

  std::vector<Nonce> sorted_nonces() const {
    std::vector<Nonce> out(accepted_nonces_.begin(), accepted_nonces_.end());
    std::sort(out.begin(), out.end());
    return out;
  }

  void advance_epoch_locked(uint64_t now_ms) {
    epoch_id_ = next_epoch_id(epoch_id_);
    state_ = EpochState::open;
    accepted_ = 0;
    rejected_ = 0;
    reject_by_.fill(0);
    seen_nonces_.clear();
    accepted_nonces_.clear();
    epoch_start_ms_ = now_ms;
  }

  config::EpochConfig cfg_;
  uint32_t index_;
  uint32_t n_servers_;
  Bytes epoch_id_;
  EpochState state_ = EpochState::open;
  uint64_t accepted_ = 0;
  uint64_t rejected_ = 0;
  std::array<uint64_t, 7> reject_by_{};
  std::unordered_set<Nonce, NonceHash> seen_nonces_;      // every processed request
  std::unordered_set<Nonce, NonceHash> accepted_nonces_;  // close reconciliation
  uint64_t epoch_start_ms_ = 0;
  mutable std::mutex mu_;
};

// ------------------------------------------------------------ audited node

// Two-server variant: every write clears the three-party audit before it is
// applied. The node exposes the per-request steps (intake, coin flip,
// masked vectors, verdicts) and the service or simulator sequences them.
class AuditedNode : public NodeBase {
 public:
  AuditedNode(config::EpochConfig cfg, uint32_t index, uint64_t rng_seed, uint64_t now_ms = 0)
      : NodeBase(std::move(cfg), index, 2, now_ms), rng_(rng_seed) {
    require(cfg_.validation() == config::Validation::audit, Errc::invalid_argument,
            "audited node wants the 2-server-audited variant");
    table_.assign(cfg_.geom.cells() * cfg_.geom.row_bytes, 0);
  }

  audit::Role role() const { return index_ == 0 ? audit::Role::a : audit::Role::b; }

  WriteStatus begin_write(const wire::WriteShare& msg, uint64_t now_ms) {
    std::lock_guard lock(mu_);
    audit::Key key;
    try {
      key = dpf::dpf2_parse<rows::XorField>(msg.key);
    } catch (const Error&) {
      return reject_locked(wire::RejectReason::parse, {});
    }
    key.geom.L = cfg_.geom.L;
    if (key.geom != cfg_.geom) return reject_locked(wire::RejectReason::parse, {});

    hashing::Digest own = hashing::sha256(msg.key);
    Nonce nonce = index_ == 0 ? audit::derive_nonce(msg.epoch_id, own, msg.peer_hash)
                              : audit::derive_nonce(msg.epoch_id, msg.peer_hash, own);
    if (auto gated = gate_locked(msg.epoch_id, nonce)) return *gated;
    seen_nonces_.insert(nonce);

    Pending p;
    p.key = std::move(key);
    p.deadline_ms = now_ms + audit_deadline_ms_;
    pending_.emplace(nonce, std::move(p));
    return {true, wire::RejectReason::none, nonce, {}};
  }

  // Coin flip, one call per step; the commitment is sampled lazily so a
  // request that dies earlier never burns randomness.
  hashing::Digest coinflip_commitment(const Nonce& nonce) {
    std::lock_guard lock(mu_);
    Pending& p = pending_entry(nonce);
    if (!p.contribution) p.contribution = audit::random_contribution(rng_);
    return audit::commit_contribution(*p.contribution);
  }

  void on_peer_commitment(const Nonce& nonce, const hashing::Digest& commitment) {
    std::lock_guard lock(mu_);
    Pending& p = pending_entry(nonce);
    require(!p.peer_commitment, Errc::protocol_violation, "duplicate coin-flip commitment");
    p.peer_commitment = commitment;
  }

  audit::Contribution opening(const Nonce& nonce) {
    std::lock_guard lock(mu_);
    Pending& p = pending_entry(nonce);
    require(p.contribution.has_value(), Errc::protocol_violation, "opening before commitment");
    return *p.contribution;
  }

  // Verifies the peer's opening against its commitment; a mismatch is a
  // protocol violation and the caller rejects the request.
  bool on_peer_opening(const Nonce& nonce, const audit::Contribution& contrib) {
    std::lock_guard lock(mu_);
    Pending& p = pending_entry(nonce);
    if (!p.peer_commitment || !p.contribution) return false;
    if (!audit::opening_matches(*p.peer_commitment, contrib)) return false;
    const audit::Contribution& a = index_ == 0 ? *p.contribution : contrib;
    const audit::Contribution& b = index_ == 0 ? contrib : *p.contribution;
    p.cf = audit::finish_coinflip(a, b, nonce);
    return true;
  }

  // Masked t and u vectors for the auditor, available once the flip is done.
  std::pair<audit::MaskedVector, audit::MaskedVector> masked_vectors(const Nonce& nonce) {
    std::lock_guard lock(mu_);
    Pending& p = pending_entry(nonce);
    require(p.cf.has_value(), Errc::protocol_violation, "masking before coin flip");
    auto t = audit::mask_phase_t(*p.cf, audit::build_t_vector(p.key), role(),
                                 audit::b_parity(p.key), hashing::sha256(p.key.v));
    auto u = audit::mask_phase_u(*p.cf, audit::build_u_vector(p.key, role()));
    return {std::move(t), std::move(u)};
  }

  // Both phase verdicts in: apply or reject. The share is dropped either way.
  WriteStatus finish(const Nonce& nonce, audit::Verdict t, audit::Verdict u) {
    std::lock_guard lock(mu_);
    auto it = pending_.find(nonce);
    require(it != pending_.end(), Errc::protocol_violation, "finish without pending write");
    if (t != audit::Verdict::accept || u != audit::Verdict::accept) {
      pending_.erase(it);
      return reject_locked(wire::RejectReason::audit, nonce);
    }
    // In-flight validations drain through here while the epoch is closing;
    // only a revealed epoch refuses them.
    if (state_ == EpochState::revealed) {
      pending_.erase(it);
      return reject_locked(wire::RejectReason::epoch, nonce);
    }
    auto eval = dpf::dpf2_eval_full(it->second.key);
    xor_into(table_, eval);
    applied_++;
    accept_locked(nonce);
    pending_.erase(it);
    return {true, wire::RejectReason::none, nonce, {}};
  }

  WriteStatus abort_write(const Nonce& nonce, wire::RejectReason reason) {
    std::lock_guard lock(mu_);
    pending_.erase(nonce);
    return reject_locked(reason, nonce);
  }

  std::vector<Nonce> expired_pending(uint64_t now_ms) const {
    std::lock_guard lock(mu_);
    std::vector<Nonce> out;
    for (const auto& [nonce, p] : pending_)
      if (p.deadline_ms <= now_ms) out.push_back(nonce);
    std::sort(out.begin(), out.end());
    return out;
  }

  size_t pending_count() const {
    std::lock_guard lock(mu_);
    return pending_.size();
  }

  void set_audit_deadline(uint64_t ms) { audit_deadline_ms_ = ms; }

  // ------------------------------------------------------------- close

  wire::ShareXfer export_share() const {
    std::lock_guard lock(mu_);
    require(state_ == EpochState::closing, Errc::protocol_violation,
            "share export before close");
    require(pending_.empty(), Errc::protocol_violation,
            "share export with validations in flight");
    return wire::ShareXfer{epoch_id_, index_, applied_, table_};
  }

  EpochReport reveal_with(const wire::ShareXfer& peer) {
    std::lock_guard lock(mu_);
    require(state_ == EpochState::closing, Errc::protocol_violation, "reveal before close");
    require(peer.epoch_id == epoch_id_, Errc::invalid_argument, "share from a different epoch");
    require(peer.server_index == 1 - index_, Errc::invalid_argument, "unexpected server index");
    require(peer.rows.size() == table_.size(), Errc::invalid_argument,
            "share geometry mismatch");
    Bytes combined = table_;
    xor_into(combined, peer.rows);

    EpochReport rep;
    rep.epoch_id = epoch_id_;
    rep.accepted = accepted_;
    rep.rejected = rejected_;
    uint32_t width = cfg_.geom.row_bytes;
    for (uint32_t l = 0; l < cfg_.geom.L; l++) {
      std::span<const uint8_t> row(combined.data() + static_cast<size_t>(l) * width, width);
      detail::count_row(rep, detail::decode_xor_row(l, row, cfg_.msg_bytes));
    }
    state_ = EpochState::revealed;
    return rep;
  }

  void advance_epoch(uint64_t now_ms) {
    std::lock_guard lock(mu_);
    require(state_ == EpochState::revealed, Errc::protocol_violation,
            "advancing an unrevealed epoch");
    require(pending_.empty(), Errc::protocol_violation, "pending writes across epochs");
    table_.assign(table_.size(), 0);
    applied_ = 0;
    advance_epoch_locked(now_ms);
  }

  // On-disk snapshot of everything that survives the epoch.
  void write_snapshot(const std::string& path) const {
    std::lock_guard lock(mu_);
    ByteWriter w;
    w.put_bytes(to_bytes("RPSNAP1\n"));
    w.put_lp_bytes(config::epoch_info(cfg_, epoch_id_).serialize());
    w.put_u64le(accepted_);
    w.put_u64le(rejected_);
    w.put_u64le(applied_);
    w.put_lp_bytes(table_);
    auto nonces = sorted_nonces();
    w.put_u32le(static_cast<uint32_t>(nonces.size()));
    for (const auto& n : nonces) w.put_bytes(n);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), Errc::io_failure, "cannot write snapshot: " + path);
    auto bytes = w.take();
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
    require(out.good(), Errc::io_failure, "snapshot write failed: " + path);
  }

 private:
  struct Pending {
    audit::Key key;
    std::optional<audit::Contribution> contribution;
    std::optional<hashing::Digest> peer_commitment;
    std::optional<audit::CoinFlip> cf;
    uint64_t deadline_ms = 0;
  };

  Pending& pending_entry(const Nonce& nonce) {
    auto it = pending_.find(nonce);
    require(it != pending_.end(), Errc::protocol_violation, "no pending write for nonce");
    return it->second;
  }

  Bytes table_;  // x*y rows of row_bytes each; rows past L are padding
  uint64_t applied_ = 0;
  std::unordered_map<Nonce, Pending, NonceHash> pending_;
  std::mt19937_64 rng_;
  uint64_t audit_deadline_ms_ = 30'000;
};

// Epoch snapshot reader, the inverse of AuditedNode/ZkNode::write_snapshot.
struct Snapshot {
  config::EpochConfig epoch;
  Bytes epoch_id;
  uint64_t accepted = 0;
  uint64_t rejected = 0;
  uint64_t applied = 0;
  Bytes table;
  std::vector<Nonce> nonces;

  static Snapshot load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), Errc::io_failure, "cannot open snapshot: " + path);
    Bytes raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ByteReader r(raw);
    require(r.get_bytes(8) == to_bytes("RPSNAP1\n"), Errc::decode_error, "bad snapshot magic");
    Snapshot s;
    wire::EpochInfo info = wire::EpochInfo::parse(r.get_lp_bytes());
    s.epoch = config::epoch_from_info(info);
    s.epoch_id = info.epoch_id;
    s.accepted = r.get_u64le();
    s.rejected = r.get_u64le();
    s.applied = r.get_u64le();
    s.table = r.get_lp_bytes();
    uint32_t n = r.get_u32le();
    require(n <= wire::kMaxNonceList, Errc::decode_error, "nonce list too long");
    for (uint32_t i = 0; i < n; i++) s.nonces.push_back(r.get_array<16>());
    r.expect_done();
    return s;
  }
};

// --------------------------------------------------------- proof-carrying

// s-server variant: each server verifies its slice of the write proof
// locally, then all servers cross-check that they verified the same bundle
// (equal replay nonces imply equal bundles) before applying.
template <class G>
class ZkNode : public NodeBase {
 public:
  ZkNode(config::EpochConfig cfg, uint32_t index, uint32_t n_servers, uint64_t now_ms = 0)
      : NodeBase(std::move(cfg), index, n_servers, now_ms),
        params_(pedersen::Params<G>::derive(grp_, cfg_.geom.y)) {
    require(cfg_.validation() == config::Validation::zkproof, Errc::invalid_argument,
            "proof-carrying node wants the s-server-zk variant");
    require(n_servers >= 2, Errc::invalid_argument, "need at least two servers");
    table_.assign(cfg_.geom.cells(), grp_.identity());
  }

  const G& group() const { return grp_; }
  const pedersen::Params<G>& params() const { return params_; }

  // Parse, gate, verify. A passing write is staged until the digest
  // cross-check with the other servers lands.
  WriteStatus begin_write(const wire::ZkWrite& msg, uint64_t now_ms) {
    std::lock_guard lock(mu_);
    hashing::Digest digest = hashing::sha256(msg.bundle);
    Nonce nonce = wire::zk_write_nonce(msg.epoch_id, digest);
    if (auto gated = gate_locked(msg.epoch_id, nonce)) return *gated;
    seen_nonces_.insert(nonce);

    dpf::DpfsKey<G> key;
    zk::Bundle<G> bundle;
    zk::Opening<G> opening;
    try {
      key = dpf::dpfs_parse(grp_, msg.key);
      bundle = zk::parse_bundle(grp_, msg.bundle);
      opening = zk::parse_opening(grp_, msg.opening);
    } catch (const Error&) {
      return reject_locked(wire::RejectReason::parse, nonce);
    }
    key.geom.L = cfg_.geom.L;
    if (key.geom != cfg_.geom) return reject_locked(wire::RejectReason::parse, nonce);
    zk::Result res = zk::verify_write_share(grp_, params_, msg.epoch_id, index_, key, bundle,
                                            opening);
    if (!res.accepted) return reject_locked(wire::RejectReason::proof, nonce);

    pending_.emplace(nonce, Pending{std::move(key), now_ms + confirm_deadline_ms_});
    return {true, wire::RejectReason::none, nonce, digest};
  }

  // All peers confirmed the same bundle: apply.
  WriteStatus commit_write(const Nonce& nonce) {
    std::lock_guard lock(mu_);
    auto it = pending_.find(nonce);
    require(it != pending_.end(), Errc::protocol_violation, "commit without pending write");
    if (state_ == EpochState::revealed) {
      pending_.erase(it);
      return reject_locked(wire::RejectReason::epoch, nonce);
    }
    auto eval = dpf::dpfs_eval_full(grp_, params_, it->second.key);
    for (size_t i = 0; i < table_.size(); i++) table_[i] = grp_.add(table_[i], eval[i]);
    applied_++;
    accept_locked(nonce);
    pending_.erase(it);
    return {true, wire::RejectReason::none, nonce, {}};
  }

  WriteStatus abort_write(const Nonce& nonce, wire::RejectReason reason) {
    std::lock_guard lock(mu_);
    pending_.erase(nonce);
    return reject_locked(reason, nonce);
  }

  std::vector<Nonce> expired_pending(uint64_t now_ms) const {
    std::lock_guard lock(mu_);
    std::vector<Nonce> out;
    for (const auto& [nonce, p] : pending_)
      if (p.deadline_ms <= now_ms) out.push_back(nonce);
    std::sort(out.begin(), out.end());
    return out;
  }

  size_t pending_count() const {
    std::lock_guard lock(mu_);
    return pending_.size();
  }

  void set_confirm_deadline(uint64_t ms) { confirm_deadline_ms_ = ms; }

  wire::ShareXfer export_share() const {
    std::lock_guard lock(mu_);
    require(state_ == EpochState::closing, Errc::protocol_violation,
            "share export before close");
    require(pending_.empty(), Errc::protocol_violation,
            "share export with validations in flight");
    ByteWriter w;
    for (const auto& e : table_) w.put_bytes(grp_.serialize(e));
    return wire::ShareXfer{epoch_id_, index_, applied_, w.take()};
  }

  EpochReport reveal_with(const std::vector<wire::ShareXfer>& peers) {
    std::lock_guard lock(mu_);
    require(state_ == EpochState::closing, Errc::protocol_violation, "reveal before close");
    require(peers.size() == n_servers_ - 1, Errc::invalid_argument,
            "need one share from every other server");
    std::vector<typename G::Element> combined = table_;
    std::vector<bool> seen(n_servers_, false);
    seen[index_] = true;
    size_t elem = grp_.element_size();
    for (const auto& x : peers) {
      require(x.epoch_id == epoch_id_, Errc::invalid_argument, "share from a different epoch");
      require(x.server_index < n_servers_ && !seen[x.server_index], Errc::invalid_argument,
              "unexpected server index");
      seen[x.server_index] = true;
      require(x.rows.size() == combined.size() * elem, Errc::invalid_argument,
              "share geometry mismatch");
      ByteReader r(x.rows);
      for (auto& cell : combined) cell = grp_.add(cell, grp_.parse(r.get_bytes(elem)));
    }

    EpochReport rep;
    rep.epoch_id = epoch_id_;
    rep.accepted = accepted_;
    rep.rejected = rejected_;
    size_t chunks = cfg_.geom.row_bytes / elem;
    uint32_t rows_per_col = cfg_.geom.y / static_cast<uint32_t>(chunks);
    uint64_t logical_rows = static_cast<uint64_t>(cfg_.geom.x) * rows_per_col;
    for (uint32_t l = 0; l < cfg_.geom.L && l < logical_rows; l++) {
      std::span<const typename G::Element> cells(combined.data() + static_cast<size_t>(l) * chunks,
                                                 chunks);
      detail::count_row(rep, detail::decode_group_row(grp_, l, cells, cfg_.msg_bytes));
    }
    state_ = EpochState::revealed;
    return rep;
  }

  void advance_epoch(uint64_t now_ms) {
    std::lock_guard lock(mu_);
    require(state_ == EpochState::revealed, Errc::protocol_violation,
            "advancing an unrevealed epoch");
    require(pending_.empty(), Errc::protocol_violation, "pending writes across epochs");
    table_.assign(table_.size(), grp_.identity());
    applied_ = 0;
    advance_epoch_locked(now_ms);
  }

  void write_snapshot(const std::string& path) const {
    std::lock_guard lock(mu_);
    ByteWriter w;
    w.put_bytes(to_bytes("RPSNAP1\n"));
    w.put_lp_bytes(config::epoch_info(cfg_, epoch_id_).serialize());
    w.put_u64le(accepted_);
    w.put_u64le(rejected_);
    w.put_u64le(applied_);
    ByteWriter cells;
    for (const auto& e : table_) cells.put_bytes(grp_.serialize(e));
    w.put_lp_bytes(cells.take());
    auto nonces = sorted_nonces();
    w.put_u32le(static_cast<uint32_t>(nonces.size()));
    for (const auto& n : nonces) w.put_bytes(n);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), Errc::io_failure, "cannot write snapshot: " + path);
    auto bytes = w.take();
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
    require(out.good(), Errc::io_failure, "snapshot write failed: " + path);
  }

 private:
  struct Pending {
    dpf::DpfsKey<G> key;
    uint64_t deadline_ms = 0;
  };

  G grp_;
  pedersen::Params<G> params_;
  std::vector<typename G::Element> table_;
  uint64_t applied_ = 0;
  std::unordered_map<Nonce, Pending, NonceHash> pending_;
  uint64_t confirm_deadline_ms_ = 30'000;
};

// ------------------------------------------------------- field-table reveal

// Reveal for the simulator's prime-field recovery pipeline: shares are
// combined by role-signed addition (the first share minus the second)
// matching the key construction, then each row runs the coded-cell decoder.
inline EpochReport reveal_coded(const config::EpochConfig& cfg, const Bytes& epoch_id,
                                const std::vector<std::vector<uint64_t>>& shares,
                                uint64_t accepted, uint64_t rejected) {
  require(cfg.variant == dpf::Variant::two_fp, Errc::invalid_argument,
          "coded reveal is the prime-field pipeline");
  require(shares.size() == 2, Errc::invalid_argument, "two shares");
  size_t cells_per_row = rows::FpField::cells_for_bytes(cfg.geom.row_bytes);
  size_t total = cfg.geom.cells() * cells_per_row;
  require(shares[0].size() == total && shares[1].size() == total, Errc::invalid_argument,
          "share geometry mismatch");
  std::vector<uint64_t> combined(total);
  for (size_t i = 0; i < total; i++) combined[i] = fp::sub(shares[0][i], shares[1][i]);

  EpochReport rep;
  rep.epoch_id = epoch_id;
  rep.accepted = accepted;
  rep.rejected = rejected;
  for (uint32_t l = 0; l < cfg.geom.L; l++) {
    std::span<const uint64_t> row(combined.data() + static_cast<size_t>(l) * cells_per_row,
                                  cells_per_row);
    detail::count_row(rep, detail::decode_coded_row(l, row, cfg.msg_bytes));
  }
  return rep;
}

}  // namespace riposte::server
