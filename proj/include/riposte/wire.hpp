#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "riposte/audit.hpp"
#include "riposte/bytes.hpp"
#include "riposte/errors.hpp"
#include "riposte/hashing.hpp"

// Frame vocabulary shared by every link in the system. A frame is
//   magic "RPST" | version 0x01 | msg_type | length (u32 big-endian) | payload
// and each message type below owns its payload layout. Serialization is
// strict both ways: parsers reject trailing bytes, out-of-range counts, and
// unknown types, so a frame either round-trips bit-exactly or throws.
namespace riposte::wire {

inline constexpr std::array<uint8_t, 4> kMagic = {'R', 'P', 'S', 'T'};
inline constexpr uint8_t kVersion = 1;
inline constexpr size_t kHeaderSize = 10;
// Largest payload any link accepts; sized for a full table transfer at the
// geometries this artifact targets.
inline constexpr uint32_t kMaxPayload = 1u << 28;

enum class MsgType : uint8_t {
  write_share = 0x01,
  write_ack = 0x02,
  epoch_req = 0x05,
  epoch_info = 0x06,
  audit_req = 0x10,
  audit_resp = 0x11,
  coinflip_commit = 0x20,
  coinflip_reveal = 0x21,
  close_epoch = 0x30,
  close_ack = 0x31,
  share_xfer = 0x40,
  zk_bundle = 0x50,
  zk_confirm = 0x51,
};

inline bool known_type(uint8_t t) {
  switch (static_cast<MsgType>(t)) {
    case MsgType::write_share:
    case MsgType::write_ack:
    case MsgType::epoch_req:
    case MsgType::epoch_info:
    case MsgType::audit_req:
    case MsgType::audit_resp:
    case MsgType::coinflip_commit:
    case MsgType::coinflip_reveal:
    case MsgType::close_epoch:
    case MsgType::close_ack:
    case MsgType::share_xfer:
    case MsgType::zk_bundle:
    case MsgType::zk_confirm:
      return true;
  }
  return false;
}

struct Frame {
  MsgType type;
  Bytes payload;
};

inline Bytes encode_frame(MsgType type, std::span<const uint8_t> payload) {
  require(payload.size() <= kMaxPayload, Errc::invalid_argument, "payload too large");
  ByteWriter w;
  w.put_bytes(kMagic);
  w.put_u8(kVersion);
  w.put_u8(static_cast<uint8_t>(type));
  w.put_u32be(static_cast<uint32_t>(payload.size()));
  w.put_bytes(payload);
  return w.take();
}

// Validates the 10-byte prefix and returns (type, payload length); the caller
// then reads exactly that many payload bytes.
inline std::pair<MsgType, uint32_t> parse_frame_header(std::span<const uint8_t> h) {
  require(h.size() == kHeaderSize, Errc::invalid_argument, "frame header is 10 bytes");
  require(std::equal(kMagic.begin(), kMagic.end(), h.begin()), Errc::protocol_violation,
          "bad frame magic");
  require(h[4] == kVersion, Errc::protocol_violation, "unsupported frame version");
  require(known_type(h[5]), Errc::protocol_violation, "unknown message type");
  uint32_t len = 0;
  for (int i = 6; i < 10; i++) len = len << 8 | h[i];
  require(len <= kMaxPayload, Errc::protocol_violation, "frame length out of range");
  return {static_cast<MsgType>(h[5]), len};
}

inline Frame decode_frame(std::span<const uint8_t> buf) {
  require(buf.size() >= kHeaderSize, Errc::decode_error, "short frame");
  auto [type, len] = parse_frame_header(buf.first(kHeaderSize));
  require(buf.size() == kHeaderSize + len, Errc::decode_error, "frame length mismatch");
  return {type, Bytes(buf.begin() + kHeaderSize, buf.end())};
}

// ------------------------------------------------------------ messages

// Caps on variable-length fields, far above anything legitimate but small
// enough that a hostile length prefix cannot balloon allocation.
inline constexpr size_t kMaxEpochId = 64;
inline constexpr size_t kMaxNonceList = 1u << 20;

namespace detail {

inline Bytes get_epoch_id(ByteReader& r) {
  Bytes id = r.get_lp_bytes();
  require(!id.empty() && id.size() <= kMaxEpochId, Errc::decode_error,
          "epoch id length out of range");
  return id;
}

}  // namespace detail

// One half of a client write under the audited variant: this server's key
// share plus the digest of the share the client mailed to the peer.
struct WriteShare {
  Bytes epoch_id;
  Bytes key;
  hashing::Digest peer_hash;

  Bytes serialize() const {
    ByteWriter w;
    w.put_lp_bytes(epoch_id);
    w.put_lp_bytes(key);
    w.put_bytes(peer_hash);
    return w.take();
  }
  static WriteShare parse(std::span<const uint8_t> in) {
    ByteReader r(in);
    WriteShare m;
    m.epoch_id = detail::get_epoch_id(r);
    m.key = r.get_lp_bytes();
    m.peer_hash = r.get_array<32>();
    r.expect_done();
    return m;
  }
};

// The proof-carrying variant has no cross-hash, so its replay nonce binds
// the commitment bundle, which is identical for every server and fresh per
// request through the commitment randomness.
inline audit::Nonce zk_write_nonce(std::span<const uint8_t> epoch_id,
                                   const hashing::Digest& bundle_digest) {
  hashing::Sha256 h;
  h.update(epoch_id);
  h.update(bundle_digest);
  return hashing::truncated<16>(h.finish());
}

// One server's slice of an s-server write: its key share, the commitment
// bundle shared by all servers, and the opening for this server alone.
struct ZkWrite {
  Bytes epoch_id;
  Bytes key;
  Bytes bundle;
  Bytes opening;

  Bytes serialize() const {
    ByteWriter w;
    w.put_lp_bytes(epoch_id);
    w.put_lp_bytes(key);
    w.put_lp_bytes(bundle);
    w.put_lp_bytes(opening);
    return w.take();
  }
  static ZkWrite parse(std::span<const uint8_t> in) {
    ByteReader r(in);
    ZkWrite m;
    m.epoch_id = detail::get_epoch_id(r);
    m.key = r.get_lp_bytes();
    m.bundle = r.get_lp_bytes();
    m.opening = r.get_lp_bytes();
    r.expect_done();
    return m;
  }
};

enum class RejectReason : uint8_t {
  none = 0,
  parse = 1,
  audit = 2,
  proof = 3,
  epoch = 4,
  replay = 5,
  internal = 6,
};

inline const char* reject_name(RejectReason r) {
  switch (r) {
    case RejectReason::none: return "None";
    case RejectReason::parse: return "Parse";
    case RejectReason::audit: return "Audit";
    case RejectReason::proof: return "Proof";
    case RejectReason::epoch: return "Epoch";
    case RejectReason::replay: return "Replay";
    case RejectReason::internal: return "Internal";
  }
  return "Unknown";
}

struct WriteAck {
  audit::Nonce nonce;
  bool accepted = false;
  RejectReason reason = RejectReason::none;

  Bytes serialize() const {
    ByteWriter w;
    w.put_bytes(nonce);
    w.put_u8(accepted ? 1 : 0);
    w.put_u8(static_cast<uint8_t>(reason));
    return w.take();
  }
  static WriteAck parse(std::span<const uint8_t> in) {
    ByteReader r(in);
    WriteAck m;
    m.nonce = r.get_array<16>();
    uint8_t acc = r.get_u8();
    require(acc <= 1, Errc::decode_error, "bad ack flag");
    m.accepted = acc == 1;
    uint8_t reason = r.get_u8();
    require(reason <= static_cast<uint8_t>(RejectReason::internal), Errc::decode_error,
            "bad reject reason");
    m.reason = static_cast<RejectReason>(reason);
    r.expect_done();
    require(m.accepted == (m.reason == RejectReason::none), Errc::decode_error,
            "ack flag contradicts reason");
    return m;
  }
};

// EPOCH_REQ carries no payload.
inline Bytes serialize_epoch_req() { return {}; }
inline void parse_epoch_req(std::span<const uint8_t> in) {
  require(in.empty(), Errc::decode_error, "epoch request carries no payload");
}

// Answer to epoch discovery: the open epoch plus enough of its configuration
// for the client to cross-check the geometry it was configured with.
struct EpochInfo {
  Bytes epoch_id;
  uint8_t variant = 0;  // dpf::Variant value
  uint8_t recovery = 0;
  uint32_t rows = 0;  // L
  uint32_t x = 0;
  uint32_t y = 0;
  uint32_t row_bytes = 0;
  uint32_t msg_bytes = 0;
  uint64_t threshold = 0;
  uint64_t duration_ms = 0;

  Bytes serialize() const {
    ByteWriter w;
    w.put_lp_bytes(epoch_id);
    w.put_u8(variant);
    w.put_u8(recovery);
    w.put_u32le(rows);
    w.put_u32le(x);
    w.put_u32le(y);
    w.put_u32le(row_bytes);
    w.put_u32le(msg_bytes);
    w.put_u64le(threshold);
    w.put_u64le(duration_ms);
    return w.take();
  }
  static EpochInfo parse(std::span<const uint8_t> in) {
    ByteReader r(in);
    EpochInfo m;
    m.epoch_id = detail::get_epoch_id(r);
    m.variant = r.get_u8();
    m.recovery = r.get_u8();
    require(m.recovery <= 1, Errc::decode_error, "bad recovery flag");
    m.rows = r.get_u32le();
    m.x = r.get_u32le();
    m.y = r.get_u32le();
    m.row_bytes = r.get_u32le();
    m.msg_bytes = r.get_u32le();
    m.threshold = r.get_u64le();
    m.duration_ms = r.get_u64le();
    r.expect_done();
    return m;
  }
};

// One server's half of one audit phase. The role byte tells the auditor
// which side complemented the parity tag; roles are public (server indices).
struct AuditReq {
  audit::Nonce nonce;
  audit::Phase phase = audit::Phase::t;
  audit::Role role = audit::Role::a;
  audit::MaskedVector masked;

  Bytes serialize() const {
    ByteWriter w;
    w.put_bytes(nonce);
    w.put_u8(static_cast<uint8_t>(phase));
    w.put_u8(static_cast<uint8_t>(role));
    w.put_bytes(audit::serialize_masked(masked));
    return w.take();
  }
  static AuditReq parse(std::span<const uint8_t> in) {
    ByteReader r(in);
    AuditReq m;
    m.nonce = r.get_array<16>();
    uint8_t phase = r.get_u8();
    require(phase <= 1, Errc::decode_error, "bad audit phase");
    m.phase = static_cast<audit::Phase>(phase);
    uint8_t role = r.get_u8();
    require(role <= 1, Errc::decode_error, "bad audit role");
    m.role = static_cast<audit::Role>(role);
    m.masked = audit::parse_masked(r);
    r.expect_done();
    return m;
  }
};

struct AuditResp {
  audit::Nonce nonce;
  audit::Phase phase = audit::Phase::t;
  audit::Verdict verdict = audit::Verdict::reject;

  Bytes serialize() const {
    ByteWriter w;
    w.put_bytes(nonce);
    w.put_u8(static_cast<uint8_t>(phase));
    w.put_u8(static_cast<uint8_t>(verdict));
    return w.take();
  }
  static AuditResp parse(std::span<const uint8_t> in) {
    ByteReader r(in);
    AuditResp m;
    m.nonce = r.get_array<16>();
    uint8_t phase = r.get_u8();
    require(phase <= 1, Errc::decode_error, "bad audit phase");
    m.phase = static_cast<audit::Phase>(phase);
    uint8_t verdict = r.get_u8();
    require(verdict <= 1, Errc::decode_error, "bad verdict");
    m.verdict = static_cast<audit::Verdict>(verdict);
    r.expect_done();
    return m;
  }
};

struct CoinflipCommit {
  audit::Nonce nonce;
  hashing::Digest commitment;

  Bytes serialize() const {
    ByteWriter w;
    w.put_bytes(nonce);
    w.put_bytes(commitment);
    return w.take();
  }
  static CoinflipCommit parse(std::span<const uint8_t> in) {
    ByteReader r(in);
    CoinflipCommit m;
    m.nonce = r.get_array<16>();
    m.commitment = r.get_array<32>();
    r.expect_done();
    return m;
  }
};

struct CoinflipReveal {
  audit::Nonce nonce;
  audit::Contribution contribution;

  Bytes serialize() const {
    ByteWriter w;
    w.put_bytes(nonce);
    w.put_bytes(contribution);
    return w.take();
  }
  static CoinflipReveal parse(std::span<const uint8_t> in) {
    ByteReader r(in);
    CoinflipReveal m;
    m.nonce = r.get_array<16>();
    m.contribution = r.get_array<32>();
    r.expect_done();
    return m;
  }
};

// Server-to-server: the clause of the proof-carrying write that must be
// identical everywhere. Equal nonces already imply equal bundles, so peers
// only confirm the digest they derived it from.
struct ZkConfirm {
  audit::Nonce nonce;
  uint32_t server_index = 0;
  hashing::Digest digest;

  Bytes serialize() const {
    ByteWriter w;
    w.put_bytes(nonce);
    w.put_u32le(server_index);
    w.put_bytes(digest);
    return w.take();
  }
  static ZkConfirm parse(std::span<const uint8_t> in) {
    ByteReader r(in);
    ZkConfirm m;
    m.nonce = r.get_array<16>();
    m.server_index = r.get_u32le();
    m.digest = r.get_array<32>();
    r.expect_done();
    return m;
  }
};

// Sent by the lowest-indexed server once the epoch policy fires; peers ack
// when their accepted counts agree.
struct CloseEpoch {
  Bytes epoch_id;
  uint64_t final_count = 0;

  Bytes serialize() const {
    ByteWriter w;
    w.put_lp_bytes(epoch_id);
    w.put_u64le(final_count);
    return w.take();
  }
  static CloseEpoch parse(std::span<const uint8_t> in) {
    ByteReader r(in);
    CloseEpoch m;
    m.epoch_id = detail::get_epoch_id(r);
    m.final_count = r.get_u64le();
    r.expect_done();
    return m;
  }
};

// A disagreeing ack carries the responder's accepted-nonce set so the closer
// can tell in-flight drain apart from hard divergence.
struct CloseAck {
  Bytes epoch_id;
  bool agreed = false;
  uint64_t count = 0;
  std::vector<audit::Nonce> nonces;

  Bytes serialize() const {
    ByteWriter w;
    w.put_lp_bytes(epoch_id);
    w.put_u8(agreed ? 1 : 0);
    w.put_u64le(count);
    w.put_u32le(static_cast<uint32_t>(nonces.size()));
    for (const auto& n : nonces) w.put_bytes(n);
    return w.take();
  }
  static CloseAck parse(std::span<const uint8_t> in) {
    ByteReader r(in);
    CloseAck m;
    m.epoch_id = detail::get_epoch_id(r);
    uint8_t agreed = r.get_u8();
    require(agreed <= 1, Errc::decode_error, "bad agreement flag");
    m.agreed = agreed == 1;
    m.count = r.get_u64le();
    uint32_t n = r.get_u32le();
    require(n <= kMaxNonceList, Errc::decode_error, "nonce list too long");
    require(m.agreed ? n == 0 : true, Errc::decode_error, "agreeing ack carries nonces");
    m.nonces.reserve(n);
    for (uint32_t i = 0; i < n; i++) m.nonces.push_back(r.get_array<16>());
    r.expect_done();
    return m;
  }
};

// One server's accumulated table share, exchanged at epoch close so every
// server can reveal locally. The rows field is the table serialization owned
// by the server module; the wire treats it as opaque.
struct ShareXfer {
  Bytes epoch_id;
  uint32_t server_index = 0;
  uint64_t applied_count = 0;
  Bytes rows;

  Bytes serialize() const {
    ByteWriter w;
    w.put_lp_bytes(epoch_id);
    w.put_u32le(server_index);
    w.put_u64le(applied_count);
    w.put_lp_bytes(rows);
    return w.take();
  }
  static ShareXfer parse(std::span<const uint8_t> in) {
    ByteReader r(in);
    ShareXfer m;
    m.epoch_id = detail::get_epoch_id(r);
    m.server_index = r.get_u32le();
    m.applied_count = r.get_u64le();
    m.rows = r.get_lp_bytes();
    r.expect_done();
    return m;
  }
};

template <class M>
Bytes encode(MsgType type, const M& msg) {
  return encode_frame(type, msg.serialize());
}

}  // namespace riposte::wire
