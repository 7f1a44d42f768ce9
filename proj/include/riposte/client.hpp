#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "riposte/audit.hpp"
#include "riposte/collision.hpp"
#include "riposte/config.hpp"
#include "riposte/dpf.hpp"
#include "riposte/errors.hpp"
#include "riposte/group_p256.hpp"
#include "riposte/group_schnorr.hpp"
#include "riposte/hashing.hpp"
#include "riposte/pedersen.hpp"
#include "riposte/wire.hpp"
#include "riposte/zk.hpp"

// Write-request construction: split a message into per-server key shares,
// attach the material each server needs for validation, and keep covers
// bytewise format-identical to real writes. Row 0 is reserved as the
// cover-traffic sink; real writes land in [1, L).
namespace riposte::client {

template <class Rng>
uint32_t choose_row(Rng& rng, uint32_t L) {
  require(L >= 2, Errc::invalid_argument, "table too small for a reserved row");
  return std::uniform_int_distribution<uint32_t>(1, L - 1)(rng);
}

// 0x01 prefix guarantees a nonzero payload (the audit rejects m = 0) and
// gives the reveal decoder an unambiguous marker; zeros fill to width.
inline Bytes pad_message(std::span<const uint8_t> msg, uint32_t width) {
  require(msg.size() + 1 <= width, Errc::invalid_argument, "message exceeds row capacity");
  Bytes out(width, 0);
  out[0] = 0x01;
  std::copy(msg.begin(), msg.end(), out.begin() + 1);
  return out;
}

// One write split into per-server messages: payloads[i] goes to server i,
// framed as `type`. The nonce is what the servers will derive, so acks can
// be correlated.
struct Submission {
  wire::MsgType type = wire::MsgType::write_share;
  std::vector<Bytes> payloads;
  audit::Nonce nonce{};
};

namespace detail {

template <class F, class Rng>
Submission two_server_submission(const config::EpochConfig& cfg, const Bytes& epoch_id,
                                 uint32_t row, std::span<const typename F::Cell> payload,
                                 Rng& rng) {
  auto [ka, kb] = dpf::dpf2_gen<F>(row, payload, cfg.geom, rng);
  Bytes bytes_a = dpf::dpf2_serialize(ka);
  Bytes bytes_b = dpf::dpf2_serialize(kb);
  hashing::Digest ha = hashing::sha256(bytes_a);
  hashing::Digest hb = hashing::sha256(bytes_b);
  Submission sub;
  sub.type = wire::MsgType::write_share;
  sub.payloads.push_back(wire::WriteShare{epoch_id, std::move(bytes_a), hb}.serialize());
  sub.payloads.push_back(wire::WriteShare{epoch_id, std::move(bytes_b), ha}.serialize());
  sub.nonce = audit::derive_nonce(epoch_id, ha, hb);
  return sub;
}

// Group-element payload for one row: 0x01 | msg | zeros across the chunk
// embedding capacity, one element per chunk.
template <class G>
std::vector<typename G::Element> encode_group_row(const G& g, const config::EpochConfig& cfg,
                                                  std::span<const uint8_t> padded) {
  size_t chunks = cfg.geom.row_bytes / g.element_size();
  std::vector<typename G::Element> out;
  out.reserve(chunks);
  for (size_t c = 0; c < chunks; c++)
    out.push_back(g.encode_message(
        std::span(padded).subspan(c * g.embed_capacity(), g.embed_capacity())));
  return out;
}

template <class G, class Rng>
Submission group_submission(const G& g, const pedersen::Params<G>& params,
                            const config::EpochConfig& cfg, const Bytes& epoch_id, uint32_t row,
                            std::span<const uint8_t> padded, uint32_t n_servers, Rng& rng) {
  auto msg = encode_group_row(g, cfg, padded);
  auto keys = dpf::dpfs_gen(g, params, row, std::span<const typename G::Element>(msg), cfg.geom,
                            n_servers, rng);
  auto proof = zk::prove_write_valid(g, params, epoch_id, keys, row, msg[0], rng);
  Bytes bundle = zk::serialize_bundle(g, proof.bundle);
  hashing::Digest digest = hashing::sha256(bundle);
  Submission sub;
  sub.type = wire::MsgType::zk_bundle;
  for (uint32_t i = 0; i < n_servers; i++)
    sub.payloads.push_back(wire::ZkWrite{epoch_id, dpf::dpfs_serialize(g, keys[i]), bundle,
                                         zk::serialize_opening(g, proof.openings[i])}
                               .serialize());
  sub.nonce = wire::zk_write_nonce(epoch_id, digest);
  return sub;
}

}  // namespace detail

// Builds the per-server write messages for one (row, message) pair. The
// message is padded to the epoch's fixed capacity so every request is the
// same size on the wire.
template <class Rng>
Submission make_write_request(const config::EpochConfig& cfg, const Bytes& epoch_id,
                              uint32_t n_servers, uint32_t row, std::span<const uint8_t> msg,
                              Rng& rng) {
  require(row >= 1 && row < cfg.geom.L, Errc::invalid_argument,
          "row 0 is reserved and rows stop at L");
  require(msg.size() >= 1 && msg.size() <= cfg.msg_bytes, Errc::invalid_argument,
          "message size out of range");

  switch (cfg.variant) {
    case dpf::Variant::two_xor: {
      Bytes padded = pad_message(msg, cfg.geom.row_bytes);
      return detail::two_server_submission<rows::XorField>(
          cfg, epoch_id, row, std::span<const uint8_t>(padded), rng);
    }
    case dpf::Variant::two_fp: {
      Bytes full(cfg.msg_bytes, 0);  // chunk markers keep coded cells nonzero
      std::copy(msg.begin(), msg.end(), full.begin());
      std::vector<uint64_t> cells = collision::encode_row(full);
      return detail::two_server_submission<rows::FpField>(
          cfg, epoch_id, row, std::span<const uint64_t>(cells), rng);
    }
    case dpf::Variant::s_schnorr: {
      group::SchnorrGroup g;
      auto params = pedersen::Params<group::SchnorrGroup>::derive(g, cfg.geom.y);
      Bytes padded = pad_message(
          msg, static_cast<uint32_t>((cfg.geom.row_bytes / g.element_size()) *
                                     g.embed_capacity()));
      return detail::group_submission(g, params, cfg, epoch_id, row, padded, n_servers, rng);
    }
    case dpf::Variant::s_p256: {
      group::P256Group g;
      auto params = pedersen::Params<group::P256Group>::derive(g, cfg.geom.y);
      Bytes padded = pad_message(
          msg, static_cast<uint32_t>((cfg.geom.row_bytes / g.element_size()) *
                                     g.embed_capacity()));
      return detail::group_submission(g, params, cfg, epoch_id, row, padded, n_servers, rng);
    }
    default:
      fail(Errc::invalid_argument, "toy keys have no request pipeline");
  }
}

// Cover write: uniformly random nonzero payload aimed at the reserved row.
// Same key sizes, same message layout, so a network observer cannot tell it
// from a real write.
template <class Rng>
Submission make_cover_request(const config::EpochConfig& cfg, const Bytes& epoch_id,
                              uint32_t n_servers, Rng& rng) {
  switch (cfg.variant) {
    case dpf::Variant::two_xor: {
      Bytes payload(cfg.geom.row_bytes);
      do {
        for (auto& b : payload) b = static_cast<uint8_t>(rng());
      } while (all_zero(payload));
      return detail::two_server_submission<rows::XorField>(
          cfg, epoch_id, 0, std::span<const uint8_t>(payload), rng);
    }
    case dpf::Variant::two_fp: {
      size_t cells = rows::FpField::cells_for_bytes(cfg.geom.row_bytes);
      std::vector<uint64_t> payload(cells);
      bool zero = true;
      do {
        for (auto& c : payload) c = rows::FpField::random_cell(rng);
        zero = true;
        for (uint64_t c : payload) zero &= c == 0;
      } while (zero);
      return detail::two_server_submission<rows::FpField>(
          cfg, epoch_id, 0, std::span<const uint64_t>(payload), rng);
    }
    case dpf::Variant::s_schnorr: {
      group::SchnorrGroup g;
      auto params = pedersen::Params<group::SchnorrGroup>::derive(g, cfg.geom.y);
      Bytes chunk((cfg.geom.row_bytes / g.element_size()) * g.embed_capacity());
      for (auto& b : chunk) b = static_cast<uint8_t>(rng());
      return detail::group_submission(g, params, cfg, epoch_id, 0, chunk, n_servers, rng);
    }
    case dpf::Variant::s_p256: {
      group::P256Group g;
      auto params = pedersen::Params<group::P256Group>::derive(g, cfg.geom.y);
      Bytes chunk((cfg.geom.row_bytes / g.element_size()) * g.embed_capacity());
      for (auto& b : chunk) b = static_cast<uint8_t>(rng());
      return detail::group_submission(g, params, cfg, epoch_id, 0, chunk, n_servers, rng);
    }
    default:
      fail(Errc::invalid_argument, "toy keys have no request pipeline");
  }
}

}  // namespace riposte::client
