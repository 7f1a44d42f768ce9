#pragma once

#include <cstdint>
#include <cstdio>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "riposte/audit.hpp"
#include "riposte/bytes.hpp"
#include "riposte/client.hpp"
#include "riposte/config.hpp"
#include "riposte/dpf.hpp"
#include "riposte/errors.hpp"
#include "riposte/group_p256.hpp"
#include "riposte/group_schnorr.hpp"
#include "riposte/rows.hpp"
#include "riposte/server.hpp"
#include "riposte/wire.hpp"

// In-process epoch simulator. Real server nodes, real validation, a virtual
// clock, and a single seeded RNG consumed in submission order, so one
// (spec, seed) pair reproduces the run byte for byte. Malicious clients
// start from an honest submission and damage it in transit.
namespace riposte::sim {

enum class Mutation : uint8_t { bitflip, index, payload, zero, arbitrary };

inline Mutation parse_mutation(const std::string& s) {
  if (s == "bitflip") return Mutation::bitflip;
  if (s == "index") return Mutation::index;
  if (s == "payload") return Mutation::payload;
  if (s == "zero") return Mutation::zero;
  if (s == "arbitrary") return Mutation::arbitrary;
  fail(Errc::invalid_argument, "unknown mutation strategy: " + s);
}

struct SimReport {
  uint64_t clients = 0;
  uint64_t malicious = 0;
  uint64_t accepted = 0;   // request outcomes, counted at the client
  uint64_t rejected = 0;
  uint64_t intents = 0;    // honest messages submitted
  uint64_t delivered = 0;  // honest messages readable in their row at reveal
  std::vector<server::EpochReport> epochs;

  double success_rate() const {
    return intents == 0 ? 1.0 : static_cast<double>(delivered) / static_cast<double>(intents);
  }

  std::string text() const {
    char rate[32];
    std::snprintf(rate, sizeof(rate), "%.4f", success_rate());
    std::string out;
    out += "clients " + std::to_string(clients) + "\n";
    out += "malicious " + std::to_string(malicious) + "\n";
    out += "accepted " + std::to_string(accepted) + "\n";
    out += "rejected " + std::to_string(rejected) + "\n";
    out += "delivered " + std::to_string(delivered) + " of " + std::to_string(intents) +
           " rate=" + rate + "\n";
    for (const auto& e : epochs) out += e.text();
    return out;
  }
};

namespace detail {

// One honest write the reveal is expected to reproduce.
struct Intent {
  uint32_t row = 0;
  Bytes msg;
};

inline Bytes random_bytes(std::mt19937_64& rng, size_t n) {
  Bytes out(n);
  for (auto& b : out) b = static_cast<uint8_t>(rng());
  return out;
}

inline void flip_random_bit(Bytes& buf, std::mt19937_64& rng) {
  if (buf.empty()) return;
  size_t bit = rng() % (buf.size() * 8);
  buf[bit / 8] ^= static_cast<uint8_t>(1u << (bit % 8));
}

inline Mutation concrete_mutation(Mutation m, std::mt19937_64& rng) {
  if (m != Mutation::arbitrary) return m;
  // arbitrary keeps one extra arm: total garbage, drawn in mutate_*.
  switch (rng() % 5) {
    case 0: return Mutation::bitflip;
    case 1: return Mutation::index;
    case 2: return Mutation::payload;
    case 3: return Mutation::zero;
    default: return Mutation::arbitrary;
  }
}

// Counts delivered intents against one epoch's revealed rows.
inline void score_intents(const std::vector<Intent>& intents, const server::EpochReport& rep,
                          SimReport& out) {
  for (const auto& in : intents) {
    out.intents++;
    for (const auto& r : rep.rows) {
      if (r.row != in.row) continue;
      if (r.status != server::RowStatus::single && r.status != server::RowStatus::pair) break;
      for (const auto& m : r.messages)
        if (m == in.msg) {
          out.delivered++;
          break;
        }
      break;
    }
  }
}

// ------------------------------------------------------- two-server audited

// Rebuilds a two-share submission from raw key bytes with consistent
// envelope hashes, the way a malicious client that controls both shares
// would.
inline client::Submission assemble_two(const Bytes& epoch_id, Bytes key_a, Bytes key_b) {
  hashing::Digest ha = hashing::sha256(key_a);
  hashing::Digest hb = hashing::sha256(key_b);
  client::Submission sub;
  sub.type = wire::MsgType::write_share;
  sub.payloads.push_back(wire::WriteShare{epoch_id, std::move(key_a), hb}.serialize());
  sub.payloads.push_back(wire::WriteShare{epoch_id, std::move(key_b), ha}.serialize());
  sub.nonce = audit::derive_nonce(epoch_id, ha, hb);
  return sub;
}

inline void mutate_two(client::Submission& sub, Mutation strategy,
                       const config::EpochConfig& cfg, const Bytes& epoch_id,
                       std::mt19937_64& rng) {
  Mutation m = concrete_mutation(strategy, rng);
  wire::WriteShare w0 = wire::WriteShare::parse(sub.payloads[0]);
  wire::WriteShare w1 = wire::WriteShare::parse(sub.payloads[1]);
  switch (m) {
    case Mutation::bitflip:
      flip_random_bit(sub.payloads[rng() % 2], rng);
      return;
    case Mutation::index: {
      // Shares from two unrelated generations, stitched into one envelope.
      auto other = client::make_write_request(cfg, epoch_id, 2,
                                              client::choose_row(rng, cfg.geom.L),
                                              random_bytes(rng, cfg.msg_bytes), rng);
      wire::WriteShare o1 = wire::WriteShare::parse(other.payloads[1]);
      sub = assemble_two(epoch_id, std::move(w0.key), std::move(o1.key));
      return;
    }
    case Mutation::payload: {
      // Corrupt one patch cell; the envelope stays self-consistent.
      auto key = dpf::dpf2_parse<rows::XorField>(w1.key);
      key.v[rng() % key.v.size()] ^= static_cast<uint8_t>(1 + rng() % 255);
      sub = assemble_two(epoch_id, std::move(w0.key), dpf::dpf2_serialize(key));
      return;
    }
    case Mutation::zero: {
      // Structurally honest keys whose hidden message is zero.
      Bytes none(cfg.geom.row_bytes, 0);
      auto [ka, kb] = dpf::dpf2_gen<rows::XorField>(client::choose_row(rng, cfg.geom.L), none,
                                                    cfg.geom, rng);
      sub = assemble_two(epoch_id, dpf::dpf2_serialize(ka), dpf::dpf2_serialize(kb));
      return;
    }
    case Mutation::arbitrary: {
      // Unparseable garbage of a plausible size for one server.
      size_t side = rng() % 2;
      sub.payloads[side] = random_bytes(rng, sub.payloads[side].size());
      return;
    }
  }
}

class AuditedDriver {
 public:
  AuditedDriver(const config::SimSpec& spec)
      : spec_(spec),
        rng_(spec.seed),
        a_(spec.epoch, 0, spec.seed ^ 0xa5a5a5a5ull),
        b_(spec.epoch, 1, spec.seed ^ 0x5a5a5a5aull) {}

  SimReport run() {
    uint64_t n_mal = static_cast<uint64_t>(static_cast<double>(spec_.n_clients) *
                                           spec_.malicious_fraction);
    rep_.clients = spec_.n_clients;
    rep_.malicious = n_mal;
    for (uint32_t i = 0; i < spec_.n_clients; i++) {
      submit_one(i < n_mal);
      if (a_.policy_met(now_)) close_epoch();
    }
    if (writes_since_close_ > 0) close_epoch();
    return std::move(rep_);
  }

 private:
  void submit_one(bool malicious) {
    now_ += 1;
    writes_since_close_++;
    Bytes epoch_id = a_.epoch_id();
    Bytes msg = random_bytes(rng_, spec_.epoch.msg_bytes);
    uint32_t row = client::choose_row(rng_, spec_.epoch.geom.L);
    auto sub = client::make_write_request(spec_.epoch, epoch_id, 2, row, msg, rng_);
    if (malicious) {
      mutate_two(sub, parse_mutation(spec_.mutation), spec_.epoch, epoch_id, rng_);
    } else {
      intents_.push_back({row, msg});
    }
    bool ok = deliver(sub);
    (ok ? rep_.accepted : rep_.rejected)++;
  }

  // Plays both servers and the auditor for one submission. True only if
  // both servers accepted and applied the write.
  bool deliver(const client::Submission& sub) {
    std::optional<wire::WriteShare> w0 = try_parse(sub.payloads[0]);
    std::optional<wire::WriteShare> w1 = try_parse(sub.payloads[1]);
    server::WriteStatus s0 = w0 ? a_.begin_write(*w0, now_)
                                : server::WriteStatus::rejected(wire::RejectReason::parse);
    server::WriteStatus s1 = w1 ? b_.begin_write(*w1, now_)
                                : server::WriteStatus::rejected(wire::RejectReason::parse);
    if (!s0.ok || !s1.ok || s0.nonce != s1.nonce) {
      // A one-sided or mismatched intake can never pair at the auditor;
      // the surviving side times out and drops its half.
      if (s0.ok) a_.abort_write(s0.nonce, wire::RejectReason::audit);
      if (s1.ok) b_.abort_write(s1.nonce, wire::RejectReason::audit);
      return false;
    }
    const audit::Nonce& nonce = s0.nonce;

    hashing::Digest c0 = a_.coinflip_commitment(nonce);
    hashing::Digest c1 = b_.coinflip_commitment(nonce);
    a_.on_peer_commitment(nonce, c1);
    b_.on_peer_commitment(nonce, c0);
    bool f0 = a_.on_peer_opening(nonce, b_.opening(nonce));
    bool f1 = b_.on_peer_opening(nonce, a_.opening(nonce));
    if (!f0 || !f1) {
      a_.abort_write(nonce, wire::RejectReason::audit);
      b_.abort_write(nonce, wire::RejectReason::audit);
      return false;
    }

    auto [t0, u0] = a_.masked_vectors(nonce);
    auto [t1, u1] = b_.masked_vectors(nonce);
    audit::Verdict vt = audit::Verdict::reject;
    audit::Verdict vu = audit::Verdict::reject;
    auto absorb = [&](const std::vector<audit::Auditor::Outcome>& outs) {
      for (const auto& o : outs) (o.phase == audit::Phase::t ? vt : vu) = o.verdict;
    };
    absorb(auditor_.submit(nonce, audit::Phase::t, audit::Role::a, std::move(t0), now_));
    absorb(auditor_.submit(nonce, audit::Phase::t, audit::Role::b, std::move(t1), now_));
    absorb(auditor_.submit(nonce, audit::Phase::u, audit::Role::a, std::move(u0), now_));
    absorb(auditor_.submit(nonce, audit::Phase::u, audit::Role::b, std::move(u1), now_));

    server::WriteStatus r0 = a_.finish(nonce, vt, vu);
    server::WriteStatus r1 = b_.finish(nonce, vt, vu);
    require(r0.ok == r1.ok, Errc::protocol_violation, "servers disagree on a finished write");
    return r0.ok;
  }

  void close_epoch() {
    a_.enter_closing();
    b_.enter_closing();
    wire::CloseAck ack = b_.handle_close(a_.make_close());
    require(a_.evaluate_close_ack(ack) == server::CloseOutcome::agreed, Errc::protocol_violation,
            "lossless close did not agree");
    wire::ShareXfer xa = a_.export_share();
    wire::ShareXfer xb = b_.export_share();
    server::EpochReport rep = a_.reveal_with(xb);
    server::EpochReport mirror = b_.reveal_with(xa);
    // Reject counts are per-server views (a malformed share may never reach
    // the peer); the revealed rows and the accepted count must agree.
    require(rep.records_text() == mirror.records_text() && rep.accepted == mirror.accepted,
            Errc::protocol_violation, "reveal mismatch between servers");
    score_intents(intents_, rep, rep_);
    rep_.epochs.push_back(std::move(rep));
    intents_.clear();
    writes_since_close_ = 0;
    a_.advance_epoch(now_);
    b_.advance_epoch(now_);
  }

  static std::optional<wire::WriteShare> try_parse(const Bytes& payload) {
    try {
      return wire::WriteShare::parse(payload);
    } catch (const Error&) {
      return std::nullopt;
    }
  }

  const config::SimSpec& spec_;
  std::mt19937_64 rng_;
  uint64_t now_ = 0;
  server::AuditedNode a_;
  server::AuditedNode b_;
  audit::Auditor auditor_;
  SimReport rep_;
  std::vector<Intent> intents_;
  uint64_t writes_since_close_ = 0;
};

// --------------------------------------------------------- s-server proofs

template <class G>
void mutate_group(const G& g, client::Submission& sub, Mutation strategy,
                  const config::EpochConfig& cfg, const Bytes& epoch_id, uint32_t n_servers,
                  std::mt19937_64& rng) {
  Mutation m = concrete_mutation(strategy, rng);
  switch (m) {
    case Mutation::bitflip:
      flip_random_bit(sub.payloads[rng() % sub.payloads.size()], rng);
      return;
    case Mutation::index: {
      // One server gets a share of an unrelated write; its bundle digest
      // will not match the others.
      auto other = client::make_write_request(cfg, epoch_id, n_servers,
                                              client::choose_row(rng, cfg.geom.L),
                                              random_bytes(rng, cfg.msg_bytes), rng);
      size_t victim = rng() % sub.payloads.size();
      sub.payloads[victim] = other.payloads[victim];
      return;
    }
    case Mutation::payload: {
      // Corrupt one patch element behind an untouched proof.
      size_t victim = rng() % sub.payloads.size();
      wire::ZkWrite w = wire::ZkWrite::parse(sub.payloads[victim]);
      auto key = dpf::dpfs_parse(g, w.key);
      Bytes one(1, 0x01);
      size_t at = rng() % key.v.size();
      key.v[at] = g.add(key.v[at], g.encode_message(one));
      w.key = dpf::dpfs_serialize(g, key);
      sub.payloads[victim] = w.serialize();
      return;
    }
    case Mutation::zero: {
      // Same damaged bundle to every server: digests agree, proofs fail.
      wire::ZkWrite w0 = wire::ZkWrite::parse(sub.payloads[0]);
      flip_random_bit(w0.bundle, rng);
      for (auto& p : sub.payloads) {
        wire::ZkWrite w = wire::ZkWrite::parse(p);
        w.bundle = w0.bundle;
        p = w.serialize();
      }
      return;
    }
    case Mutation::arbitrary: {
      size_t victim = rng() % sub.payloads.size();
      sub.payloads[victim] = random_bytes(rng, sub.payloads[victim].size());
      return;
    }
  }
}

template <class G>
class GroupDriver {
 public:
  GroupDriver(const config::SimSpec& spec) : spec_(spec), rng_(spec.seed) {
    for (uint32_t i = 0; i < spec.n_servers; i++)
      nodes_.push_back(std::make_unique<server::ZkNode<G>>(spec.epoch, i, spec.n_servers));
  }

  SimReport run() {
    uint64_t n_mal = static_cast<uint64_t>(static_cast<double>(spec_.n_clients) *
                                           spec_.malicious_fraction);
    rep_.clients = spec_.n_clients;
    rep_.malicious = n_mal;
    for (uint32_t i = 0; i < spec_.n_clients; i++) {
      submit_one(i < n_mal);
      if (nodes_[0]->policy_met(now_)) close_epoch();
    }
    if (writes_since_close_ > 0) close_epoch();
    return std::move(rep_);
  }

 private:
  void submit_one(bool malicious) {
    now_ += 1;
    writes_since_close_++;
    Bytes epoch_id = nodes_[0]->epoch_id();
    Bytes msg = random_bytes(rng_, spec_.epoch.msg_bytes);
    uint32_t row = client::choose_row(rng_, spec_.epoch.geom.L);
    auto sub = client::make_write_request(spec_.epoch, epoch_id, spec_.n_servers, row, msg, rng_);
    if (malicious) {
      mutate_group(grp_, sub, parse_mutation(spec_.mutation), spec_.epoch, epoch_id,
                   spec_.n_servers, rng_);
    } else {
      intents_.push_back({row, msg});
    }
    bool ok = deliver(sub);
    (ok ? rep_.accepted : rep_.rejected)++;
  }

  bool deliver(const client::Submission& sub) {
    std::vector<server::WriteStatus> st;
    for (size_t i = 0; i < nodes_.size(); i++) {
      std::optional<wire::ZkWrite> w;
      try {
        w = wire::ZkWrite::parse(sub.payloads[i]);
      } catch (const Error&) {
      }
      st.push_back(w ? nodes_[i]->begin_write(*w, now_)
                     : server::WriteStatus::rejected(wire::RejectReason::parse));
    }
    bool all_ok = true;
    bool digests_match = true;
    for (size_t i = 0; i < st.size(); i++) {
      if (!st[i].ok) all_ok = false;
      if (st[i].digest != st[0].digest || st[i].nonce != st[0].nonce) digests_match = false;
    }
    if (!all_ok || !digests_match) {
      for (size_t i = 0; i < st.size(); i++)
        if (st[i].ok) nodes_[i]->abort_write(st[i].nonce, wire::RejectReason::proof);
      return false;
    }
    bool accepted = true;
    for (size_t i = 0; i < st.size(); i++) {
      server::WriteStatus fin = nodes_[i]->commit_write(st[i].nonce);
      require(fin.ok == (i == 0 ? fin.ok : accepted), Errc::protocol_violation,
              "servers disagree on a committed write");
      accepted = fin.ok;
    }
    return accepted;
  }

  void close_epoch() {
    for (auto& n : nodes_) n->enter_closing();
    wire::CloseEpoch close = nodes_[0]->make_close();
    for (size_t i = 1; i < nodes_.size(); i++) {
      wire::CloseAck ack = nodes_[i]->handle_close(close);
      require(nodes_[0]->evaluate_close_ack(ack) == server::CloseOutcome::agreed, Errc::protocol_violation,
              "lossless close did not agree");
    }
    std::vector<wire::ShareXfer> xfers;
    for (auto& n : nodes_) xfers.push_back(n->export_share());
    std::vector<wire::ShareXfer> others(xfers.begin() + 1, xfers.end());
    server::EpochReport rep = nodes_[0]->reveal_with(others);
    for (size_t i = 1; i < nodes_.size(); i++) {
      std::vector<wire::ShareXfer> rest;
      for (size_t j = 0; j < xfers.size(); j++)
        if (j != i) rest.push_back(xfers[j]);
      server::EpochReport mirror = nodes_[i]->reveal_with(rest);
      require(rep.records_text() == mirror.records_text() && rep.accepted == mirror.accepted,
              Errc::protocol_violation, "reveal mismatch between servers");
    }
    score_intents(intents_, rep, rep_);
    rep_.epochs.push_back(std::move(rep));
    intents_.clear();
    writes_since_close_ = 0;
    for (auto& n : nodes_) n->advance_epoch(now_);
  }

  const config::SimSpec& spec_;
  std::mt19937_64 rng_;
  uint64_t now_ = 0;
  G grp_;
  std::vector<std::unique_ptr<server::ZkNode<G>>> nodes_;
  SimReport rep_;
  std::vector<Intent> intents_;
  uint64_t writes_since_close_ = 0;
};

// ------------------------------------------------- two-server with recovery

// Parse-only pipeline for the collision-recovery variant: shares are
// applied without validation, trading disruption resistance for capacity,
// so it runs in the simulator but not behind the network service.
class RecoveryDriver {
 public:
  RecoveryDriver(const config::SimSpec& spec)
      : spec_(spec),
        rng_(spec.seed),
        epoch_id_(server::initial_epoch_id(spec.epoch)),
        cells_(spec.epoch.geom.cells() * rows::FpField::cells_for_bytes(spec.epoch.geom.row_bytes)) {
    shares_[0].assign(cells_, 0);
    shares_[1].assign(cells_, 0);
  }

  SimReport run() {
    uint64_t n_mal = static_cast<uint64_t>(static_cast<double>(spec_.n_clients) *
                                           spec_.malicious_fraction);
    rep_.clients = spec_.n_clients;
    rep_.malicious = n_mal;
    for (uint32_t i = 0; i < spec_.n_clients; i++) {
      submit_one(i < n_mal);
      if (accepted_ >= spec_.epoch.threshold) close_epoch();
    }
    if (writes_since_close_ > 0) close_epoch();
    return std::move(rep_);
  }

 private:
  void submit_one(bool malicious) {
    now_ += 1;
    writes_since_close_++;
    Bytes msg = random_bytes(rng_, spec_.epoch.msg_bytes);
    uint32_t row = client::choose_row(rng_, spec_.epoch.geom.L);
    auto sub = client::make_write_request(spec_.epoch, epoch_id_, 2, row, msg, rng_);
    if (malicious) {
      // Recovery accepts anything that parses; only byte damage is left.
      flip_random_bit(sub.payloads[rng_() % 2], rng_);
    } else {
      intents_.push_back({row, msg});
    }
    bool ok = deliver(sub);
    (ok ? rep_.accepted : rep_.rejected)++;
  }

  bool deliver(const client::Submission& sub) {
    std::array<std::optional<dpf::Dpf2Key<rows::FpField>>, 2> keys;
    std::array<audit::Nonce, 2> nonces{};
    for (size_t i = 0; i < 2; i++) {
      try {
        wire::WriteShare w = wire::WriteShare::parse(sub.payloads[i]);
        if (w.epoch_id != epoch_id_) return false;
        auto key = dpf::dpf2_parse<rows::FpField>(w.key);
        key.geom.L = spec_.epoch.geom.L;
        if (key.geom != spec_.epoch.geom) return false;
        hashing::Digest own = hashing::sha256(w.key);
        nonces[i] = i == 0 ? audit::derive_nonce(w.epoch_id, own, w.peer_hash)
                           : audit::derive_nonce(w.epoch_id, w.peer_hash, own);
        keys[i] = std::move(key);
      } catch (const Error&) {
        return false;
      }
    }
    if (nonces[0] != nonces[1] || seen_.count(nonces[0])) return false;
    seen_.insert(nonces[0]);
    for (size_t i = 0; i < 2; i++) {
      auto eval = dpf::dpf2_eval_full(*keys[i]);
      rows::FpField::add_into(shares_[i], eval);
    }
    accepted_++;
    return true;
  }

  void close_epoch() {
    server::EpochReport rep = server::reveal_coded(spec_.epoch, epoch_id_,
                                                   {shares_[0], shares_[1]}, accepted_,
                                                   rep_.rejected - rejected_at_close_);
    score_intents(intents_, rep, rep_);
    rep_.epochs.push_back(std::move(rep));
    intents_.clear();
    writes_since_close_ = 0;
    rejected_at_close_ = rep_.rejected;
    accepted_ = 0;
    shares_[0].assign(cells_, 0);
    shares_[1].assign(cells_, 0);
    seen_.clear();
    epoch_id_ = server::next_epoch_id(epoch_id_);
  }

  const config::SimSpec& spec_;
  std::mt19937_64 rng_;
  uint64_t now_ = 0;
  Bytes epoch_id_;
  size_t cells_;
  std::array<std::vector<uint64_t>, 2> shares_;
  std::unordered_set<audit::Nonce, audit::NonceHash> seen_;
  uint64_t accepted_ = 0;
  uint64_t rejected_at_close_ = 0;
  SimReport rep_;
  std::vector<Intent> intents_;
  uint64_t writes_since_close_ = 0;
};

}  // namespace detail

inline SimReport run_simulation(const config::SimSpec& spec) {
  config::validate_epoch(spec.epoch);
  switch (spec.epoch.variant) {
    case dpf::Variant::two_xor:
      return detail::AuditedDriver(spec).run();
    case dpf::Variant::two_fp:
      return detail::RecoveryDriver(spec).run();
    case dpf::Variant::s_schnorr:
      return detail::GroupDriver<group::SchnorrGroup>(spec).run();
    case dpf::Variant::s_p256:
      return detail::GroupDriver<group::P256Group>(spec).run();
    default:
      fail(Errc::invalid_argument, "variant has no simulator pipeline");
  }
}

}  // namespace riposte::sim
