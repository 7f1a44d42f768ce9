#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "riposte/audit.hpp"
#include "riposte/bytes.hpp"
#include "riposte/client.hpp"
#include "riposte/config.hpp"
#include "riposte/errors.hpp"
#include "riposte/server.hpp"
#include "riposte/transport.hpp"
#include "riposte/wire.hpp"

// Network daemons around the server nodes. Every inter-party link is a
// pinned TLS connection carrying frames; a reader thread per link routes
// responses into keyed mailboxes so request threads can block on exactly
// the message they are waiting for.
namespace riposte::service {

inline uint64_t now_ms() {
  return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                   std::chrono::steady_clock::now().time_since_epoch())
                                   .count());
}

// Keyed rendezvous between link readers and request threads. shutdown()
// wakes every waiter with an empty result.
class Mailbox {
 public:
  void deliver(std::string key, Bytes payload) {
    {
      std::lock_guard lock(mu_);
      slots_[std::move(key)].push_back(std::move(payload));
    }
    cv_.notify_all();
  }

  std::optional<Bytes> await(const std::string& key, int timeout_ms) {
    std::unique_lock lock(mu_);
    auto ready = [&] {
      if (down_) return true;
      auto it = slots_.find(key);
      return it != slots_.end() && !it->second.empty();
    };
    if (!cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms), ready)) return std::nullopt;
    if (down_) return std::nullopt;
    auto it = slots_.find(key);
    Bytes out = std::move(it->second.front());
    it->second.pop_front();
    if (it->second.empty()) slots_.erase(it);
    return out;
  }

  void shutdown() {
    {
      std::lock_guard lock(mu_);
      down_ = true;
    }
    cv_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::unordered_map<std::string, std::deque<Bytes>> slots_;
  bool down_ = false;
};

inline std::string route_key(wire::MsgType type, std::span<const uint8_t> tag = {}) {
  std::string key(1, static_cast<char>(type));
  key.append(reinterpret_cast<const char*>(tag.data()), tag.size());
  return key;
}

// A pinned connection to one fixed peer plus the reader thread that routes
// its frames. Request/response pairs rendezvous in the mailbox; messages
// that start a flow of their own (a peer's close) go to the handler.
class Link {
 public:
  Link(std::shared_ptr<transport::Conn> conn, Mailbox& mailbox,
       std::function<void(wire::Frame)> handler)
      : conn_(std::move(conn)), mailbox_(mailbox), handler_(std::move(handler)) {
    reader_ = std::thread([this] { read_loop(); });
  }

  ~Link() {
    close();
    if (reader_.joinable()) reader_.join();
  }

  const hashing::Digest& peer_pin() const { return conn_->peer_pin(); }

  template <class M>
  void send(wire::MsgType type, const M& msg) {
    conn_->write_msg(type, msg);
  }

  void close() { conn_->close(); }

 private:
  void read_loop() {
    try {
      for (;;) {
        wire::Frame f = conn_->read_frame(-1);
        switch (f.type) {
          case wire::MsgType::coinflip_commit:
          case wire::MsgType::coinflip_reveal:
          case wire::MsgType::zk_confirm:
            // All three lead with the 16-byte write nonce.
            require(f.payload.size() >= 16, Errc::decode_error, "runt routed message");
            {
              // Key first: the argument move below empties the payload.
              std::string key = route_key(f.type, std::span(f.payload).first(16));
              mailbox_.deliver(std::move(key), std::move(f.payload));
            }
            break;
          case wire::MsgType::audit_resp: {
            auto resp = wire::AuditResp::parse(f.payload);
            ByteWriter tag;
            tag.put_bytes(resp.nonce);
            tag.put_u8(static_cast<uint8_t>(resp.phase));
            mailbox_.deliver(route_key(f.type, tag.view()), std::move(f.payload));
            break;
          }
          case wire::MsgType::close_ack:
          case wire::MsgType::share_xfer:
            // One close is in flight at a time, so the type alone routes.
            mailbox_.deliver(route_key(f.type), std::move(f.payload));
            break;
          default:
            if (handler_) {
              handler_(std::move(f));
              break;
            }
            fail(Errc::protocol_violation, "unexpected message on link");
        }
      }
    } catch (const Error&) {
      // Link torn down (or broke); waiters time out individually.
    }
  }

  std::shared_ptr<transport::Conn> conn_;
  Mailbox& mailbox_;
  std::function<void(wire::Frame)> handler_;
  std::thread reader_;
};

namespace detail {

// Lists every pending nonce regardless of deadline.
template <class Node>
std::vector<audit::Nonce> all_pending(const Node& node) {
  return node.expired_pending(~uint64_t{0});
}

// Lets in-flight validations finish, then aborts whatever is left.
template <class Node>
void drain_pending(Node& node, int budget_ms) {
  uint64_t deadline = now_ms() + static_cast<uint64_t>(budget_ms);
  while (node.pending_count() > 0 && now_ms() < deadline)
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  for (const auto& nonce : all_pending(node))
    node.abort_write(nonce, wire::RejectReason::internal);
}

inline std::string epoch_tag(const Bytes& epoch_id) { return hex_encode(epoch_id); }

template <class Node>
void write_epoch_outputs(Node& node, const std::string& data_dir,
                         const server::EpochReport& rep) {
  std::filesystem::create_directories(data_dir);
  std::string tag = epoch_tag(rep.epoch_id);
  node.write_snapshot(data_dir + "/snapshot-" + tag + ".bin");
  std::string path = data_dir + "/reveal-" + tag + ".txt";
  std::FILE* out = std::fopen(path.c_str(), "w");
  require(out != nullptr, Errc::io_failure, "cannot write " + path);
  std::string text = rep.records_text();
  std::fwrite(text.data(), 1, text.size(), out);
  std::fclose(out);
}

inline void log_line(const std::string& who, const std::string& what) {
  std::fprintf(stderr, "[%s] %s\n", who.c_str(), what.c_str());
}

}  // namespace detail

// ------------------------------------------------------------ audited pair

// Daemon for one of the two audited servers. A single listener takes both
// client connections and the peer's link; the presented certificate pin
// decides which one just arrived.
class AuditedServer {
 public:
  explicit AuditedServer(config::ServerConfig cfg)
      : cfg_(std::move(cfg)),
        identity_(transport::load_identity(cfg_.creds)),
        server_ctx_(transport::TlsContext::server(identity_)),
        client_ctx_(transport::TlsContext::client(identity_)),
        node_(cfg_.epoch, cfg_.index, fresh_seed(), now_ms()),
        listener_(cfg_.listen.host, cfg_.listen.port) {
    node_.set_audit_deadline(cfg_.audit_deadline_ms);
  }

  ~AuditedServer() { stop(); }

  uint16_t port() const { return listener_.port(); }
  server::AuditedNode& node() { return node_; }
  const transport::Identity& identity() const { return identity_; }
  bool halted() const { return halted_; }

  void start() {
    threads_.emplace_back([this] { accept_loop(); });
    threads_.emplace_back([this] { connect_links(); });
    if (cfg_.index == 0) threads_.emplace_back([this] { policy_loop(); });
  }

  void stop() {
    if (stopping_.exchange(true)) return;
    listener_.close();
    mailbox_.shutdown();
    {
      std::lock_guard lock(links_mu_);
      if (peer_) peer_->close();
      if (auditor_) auditor_->close();
    }
    {
      std::lock_guard lock(conns_mu_);
      for (auto& c : conns_) c->close();
    }
    for (auto& t : threads_)
      if (t.joinable()) t.join();
    std::lock_guard lock(workers_mu_);
    for (auto& t : workers_)
      if (t.joinable()) t.join();
  }

 private:
  static uint64_t fresh_seed() {
    std::random_device rd;
    return (static_cast<uint64_t>(rd()) << 32) | rd();
  }

  std::string who() const { return "server " + std::to_string(cfg_.index); }

  // The peer with the higher index dials; the lower one recognizes it among
  // inbound connections by its pinned certificate.
  void connect_links() {
    try {
      connect_auditor();
      if (cfg_.index == 1) dial_peer();
    } catch (const Error& e) {
      detail::log_line(who(), std::string("link setup failed: ") + e.what());
    }
  }

  void connect_auditor() {
    for (int attempt = 0; !stopping_ && attempt < 100; attempt++) {
      try {
        auto conn = transport::dial(client_ctx_, *cfg_.auditor, *cfg_.auditor_pin, 2000);
        std::lock_guard lock(links_mu_);
        auditor_ = std::make_unique<Link>(std::move(conn), mailbox_, nullptr);
        return;
      } catch (const Error&) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
      }
    }
    fail(Errc::io_failure, "auditor unreachable");
  }

  void dial_peer() {
    for (int attempt = 0; !stopping_ && attempt < 100; attempt++) {
      try {
        auto conn = transport::dial(client_ctx_, cfg_.servers[0], cfg_.server_pins[0], 2000);
        install_peer(std::move(conn));
        return;
      } catch (const Error&) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
      }
    }
    fail(Errc::io_failure, "peer server unreachable");
  }

  void install_peer(std::shared_ptr<transport::Conn> conn) {
    std::lock_guard lock(links_mu_);
    peer_ = std::make_unique<Link>(std::move(conn), mailbox_,
                                   [this](wire::Frame f) { on_peer_frame(std::move(f)); });
  }

  void accept_loop() {
    while (!stopping_) {
      std::shared_ptr<transport::Conn> conn;
      try {
        conn = listener_.accept(server_ctx_);
      } catch (const Error&) {
        if (stopping_) return;
        continue;  // failed handshake (or plaintext); listener stays up
      }
      uint32_t other = cfg_.index == 0 ? 1 : 0;
      if (conn->peer_pin() == cfg_.server_pins[other]) {
        install_peer(conn);
        continue;
      }
      {
        std::lock_guard lock(conns_mu_);
        conns_.push_back(conn);
      }
      std::lock_guard lock(workers_mu_);
      workers_.emplace_back([this, conn] { serve_client(conn); });
    }
  }

  void serve_client(std::shared_ptr<transport::Conn> conn) {
    try {
      for (;;) {
        wire::Frame f = conn->read_frame(-1);
        switch (f.type) {
          case wire::MsgType::epoch_req:
            conn->write_msg(wire::MsgType::epoch_info, node_.epoch_info());
            break;
          case wire::MsgType::write_share: {
            wire::WriteAck ack = drive_write(f.payload);
            conn->write_msg(wire::MsgType::write_ack, ack);
            break;
          }
          default:
            fail(Errc::protocol_violation, "unexpected client message");
        }
      }
    } catch (const Error&) {
      conn->close();
    }
  }

  // Full validation pipeline for one share: intake, coin flip with the
  // peer, both audit phases, verdicts, apply or reject.
  wire::WriteAck drive_write(const Bytes& payload) {
    wire::WriteShare msg;
    try {
      msg = wire::WriteShare::parse(payload);
    } catch (const Error&) {
      return {audit::Nonce{}, false, wire::RejectReason::parse};
    }
    server::WriteStatus st = node_.begin_write(msg, now_ms());
    if (!st.ok) return {st.nonce, false, st.reason};
    const audit::Nonce& nonce = st.nonce;
    int deadline = static_cast<int>(cfg_.audit_deadline_ms);

    try {
      Link* peer = peer_link();
      Link* auditor = auditor_link();
      require(peer != nullptr && auditor != nullptr, Errc::io_failure, "links not ready");

      peer->send(wire::MsgType::coinflip_commit,
                 wire::CoinflipCommit{nonce, node_.coinflip_commitment(nonce)});
      auto raw = mailbox_.await(route_key(wire::MsgType::coinflip_commit, nonce), deadline);
      require(raw.has_value(), Errc::timeout, "peer commitment missing");
      node_.on_peer_commitment(nonce, wire::CoinflipCommit::parse(*raw).commitment);

      peer->send(wire::MsgType::coinflip_reveal, wire::CoinflipReveal{nonce, node_.opening(nonce)});
      raw = mailbox_.await(route_key(wire::MsgType::coinflip_reveal, nonce), deadline);
      require(raw.has_value(), Errc::timeout, "peer opening missing");
      if (!node_.on_peer_opening(nonce, wire::CoinflipReveal::parse(*raw).contribution)) {
        node_.abort_write(nonce, wire::RejectReason::audit);
        return {nonce, false, wire::RejectReason::audit};
      }

      auto [t, u] = node_.masked_vectors(nonce);
      audit::Role role = node_.role();
      auditor->send(wire::MsgType::audit_req,
                    wire::AuditReq{nonce, audit::Phase::t, role, std::move(t)});
      auditor->send(wire::MsgType::audit_req,
                    wire::AuditReq{nonce, audit::Phase::u, role, std::move(u)});

      audit::Verdict verdicts[2] = {audit::Verdict::reject, audit::Verdict::reject};
      for (audit::Phase phase : {audit::Phase::t, audit::Phase::u}) {
        ByteWriter tag;
        tag.put_bytes(nonce);
        tag.put_u8(static_cast<uint8_t>(phase));
        raw = mailbox_.await(route_key(wire::MsgType::audit_resp, tag.view()), deadline);
        require(raw.has_value(), Errc::timeout, "audit verdict missing");
        verdicts[static_cast<size_t>(phase)] = wire::AuditResp::parse(*raw).verdict;
      }

      server::WriteStatus fin = node_.finish(nonce, verdicts[0], verdicts[1]);
      return {nonce, fin.ok, fin.reason};
    } catch (const Error& e) {
      detail::log_line(who(), std::string("write pipeline failed: ") + e.what());
      node_.abort_write(nonce, wire::RejectReason::internal);
      return {nonce, false, wire::RejectReason::internal};
    }
  }

  Link* peer_link() {
    std::lock_guard lock(links_mu_);
    return peer_.get();
  }
  Link* auditor_link() {
    std::lock_guard lock(links_mu_);
    return auditor_.get();
  }

  // ------------------------------------------------------------- closing

  void policy_loop() {
    while (!stopping_) {
      std::this_thread::sleep_for(std::chrono::milliseconds(25));
      if (!stopping_ && node_.state() == server::EpochState::open && node_.policy_met(now_ms())) {
        try {
          run_close();
        } catch (const Error& e) {
          detail::log_line(who(), std::string("close failed: ") + e.what());
          halted_ = true;
          return;
        }
      }
    }
  }

  void run_close() {
    Link* peer = peer_link();
    require(peer != nullptr, Errc::io_failure, "close without a peer link");
    node_.enter_closing();
    detail::drain_pending(node_, 2000);
    for (int attempt = 0; attempt < 10; attempt++) {
      peer->send(wire::MsgType::close_epoch, node_.make_close());
      auto raw = mailbox_.await(route_key(wire::MsgType::close_ack), 5000);
      require(raw.has_value(), Errc::timeout, "no close ack");
      wire::CloseAck ack = wire::CloseAck::parse(*raw);
      switch (node_.evaluate_close_ack(ack)) {
        case server::CloseOutcome::agreed: {
          peer->send(wire::MsgType::share_xfer, node_.export_share());
          auto share = mailbox_.await(route_key(wire::MsgType::share_xfer), 5000);
          require(share.has_value(), Errc::timeout, "no peer share");
          finish_reveal(wire::ShareXfer::parse(*share));
          return;
        }
        case server::CloseOutcome::retry:
          std::this_thread::sleep_for(std::chrono::milliseconds(200));
          break;
        case server::CloseOutcome::diverged:
          halt_diverged(ack);
          return;
      }
    }
    fail(Errc::timeout, "close retries exhausted");
  }

  void on_peer_frame(wire::Frame f) {
    if (f.type != wire::MsgType::close_epoch) return;
    wire::CloseEpoch msg = wire::CloseEpoch::parse(f.payload);
    std::lock_guard lock(workers_mu_);
    workers_.emplace_back([this, msg] { peer_close(msg); });
  }

  // Peer side of the close handshake, off the link reader thread so
  // in-flight validations can still route their messages while draining.
  void peer_close(const wire::CloseEpoch& msg) {
    try {
      Link* peer = peer_link();
      if (node_.state() == server::EpochState::open) {
        node_.enter_closing();
        detail::drain_pending(node_, 2000);
      }
      wire::CloseAck ack = node_.handle_close(msg);
      peer->send(wire::MsgType::close_ack, ack);
      if (!ack.agreed) return;
      peer->send(wire::MsgType::share_xfer, node_.export_share());
      auto share = mailbox_.await(route_key(wire::MsgType::share_xfer), 5000);
      require(share.has_value(), Errc::timeout, "no peer share");
      finish_reveal(wire::ShareXfer::parse(*share));
    } catch (const Error& e) {
      detail::log_line(who(), std::string("peer close failed: ") + e.what());
      halted_ = true;
    }
  }

  void finish_reveal(const wire::ShareXfer& peer_share) {
    server::EpochReport rep = node_.reveal_with(peer_share);
    detail::write_epoch_outputs(node_, cfg_.data_dir, rep);
    detail::log_line(who(), "epoch " + detail::epoch_tag(rep.epoch_id) + " revealed: accepted " +
                                std::to_string(rep.accepted));
    node_.advance_epoch(now_ms());
  }

  void halt_diverged(const wire::CloseAck& ack) {
    std::string diag = "close diverged: local accepted " + std::to_string(node_.accepted()) +
                       ", peer reported " + std::to_string(ack.count) + " for epoch " +
                       detail::epoch_tag(ack.epoch_id);
    detail::log_line(who(), diag);
    std::filesystem::create_directories(cfg_.data_dir);
    std::string path = cfg_.data_dir + "/diverged-" + detail::epoch_tag(node_.epoch_id()) + ".txt";
    std::FILE* out = std::fopen(path.c_str(), "w");
    if (out != nullptr) {
      std::fwrite(diag.data(), 1, diag.size(), out);
      std::fclose(out);
    }
    halted_ = true;
  }

  config::ServerConfig cfg_;
  transport::Identity identity_;
  transport::TlsContext server_ctx_;
  transport::TlsContext client_ctx_;
  server::AuditedNode node_;
  transport::Listener listener_;
  Mailbox mailbox_;
  std::unique_ptr<Link> peer_;
  std::unique_ptr<Link> auditor_;
  std::mutex links_mu_;
  std::vector<std::shared_ptr<transport::Conn>> conns_;
  std::mutex conns_mu_;
  std::vector<std::thread> threads_;
  std::vector<std::thread> workers_;
  std::mutex workers_mu_;
  std::atomic<bool> stopping_{false};
  std::atomic<bool> halted_{false};
};

// ----------------------------------------------------- proof-carrying mesh

// Daemon for one of s proof-carrying servers. Peers form a full mesh: each
// server dials every lower-indexed peer and recognizes higher-indexed ones
// among inbound connections by pin. A write applies only after every peer
// confirms the same bundle digest, which blocks split-bundle equivocation.
template <class G>
class ZkServer {
 public:
  explicit ZkServer(config::ServerConfig cfg)
      : cfg_(std::move(cfg)),
        identity_(transport::load_identity(cfg_.creds)),
        server_ctx_(transport::TlsContext::server(identity_)),
        client_ctx_(transport::TlsContext::client(identity_)),
        node_(cfg_.epoch, cfg_.index, static_cast<uint32_t>(cfg_.servers.size()), now_ms()),
        listener_(cfg_.listen.host, cfg_.listen.port) {
    node_.set_confirm_deadline(cfg_.audit_deadline_ms);
    peers_.resize(cfg_.servers.size());
  }

  ~ZkServer() { stop(); }

  uint16_t port() const { return listener_.port(); }
  server::ZkNode<G>& node() { return node_; }
  const transport::Identity& identity() const { return identity_; }
  bool halted() const { return halted_; }

  void start() {
    threads_.emplace_back([this] { accept_loop(); });
    threads_.emplace_back([this] { connect_links(); });
    if (cfg_.index == 0) threads_.emplace_back([this] { policy_loop(); });
  }

  void stop() {
    if (stopping_.exchange(true)) return;
    listener_.close();
    mailbox_.shutdown();
    {
      std::lock_guard lock(links_mu_);
      for (auto& p : peers_)
        if (p) p->close();
    }
    {
      std::lock_guard lock(conns_mu_);
      for (auto& c : conns_) c->close();
    }
    for (auto& t : threads_)
      if (t.joinable()) t.join();
    std::lock_guard lock(workers_mu_);
    for (auto& t : workers_)
      if (t.joinable()) t.join();
  }

 private:
  std::string who() const { return "server " + std::to_string(cfg_.index); }

  void connect_links() {
    for (uint32_t j = 0; j < cfg_.index; j++) {
      bool up = false;
      for (int attempt = 0; !stopping_ && attempt < 100 && !up; attempt++) {
        try {
          auto conn = transport::dial(client_ctx_, cfg_.servers[j], cfg_.server_pins[j], 2000);
          install_peer(j, std::move(conn));
          up = true;
        } catch (const Error&) {
          std::this_thread::sleep_for(std::chrono::milliseconds(100));
        }
      }
      if (!up) detail::log_line(who(), "peer " + std::to_string(j) + " unreachable");
    }
  }

  void install_peer(uint32_t index, std::shared_ptr<transport::Conn> conn) {
    std::lock_guard lock(links_mu_);
    peers_[index] = std::make_unique<Link>(
        std::move(conn), mailbox_, [this](wire::Frame f) { on_peer_frame(std::move(f)); });
  }

  void accept_loop() {
    while (!stopping_) {
      std::shared_ptr<transport::Conn> conn;
      try {
        conn = listener_.accept(server_ctx_);
      } catch (const Error&) {
        if (stopping_) return;
        continue;
      }
      std::optional<uint32_t> peer_index;
      for (uint32_t j = 0; j < cfg_.servers.size(); j++)
        if (j != cfg_.index && conn->peer_pin() == cfg_.server_pins[j]) peer_index = j;
      if (peer_index) {
        install_peer(*peer_index, conn);
        continue;
      }
      {
        std::lock_guard lock(conns_mu_);
        conns_.push_back(conn);
      }
      std::lock_guard lock(workers_mu_);
      workers_.emplace_back([this, conn] { serve_client(conn); });
    }
  }

  void serve_client(std::shared_ptr<transport::Conn> conn) {
    try {
      for (;;) {
        wire::Frame f = conn->read_frame(-1);
        switch (f.type) {
          case wire::MsgType::epoch_req:
            conn->write_msg(wire::MsgType::epoch_info, node_.epoch_info());
            break;
          case wire::MsgType::zk_bundle: {
            wire::WriteAck ack = drive_write(f.payload);
            conn->write_msg(wire::MsgType::write_ack, ack);
            break;
          }
          default:
            fail(Errc::protocol_violation, "unexpected client message");
        }
      }
    } catch (const Error&) {
      conn->close();
    }
  }

  // Verify locally, cross-confirm the bundle digest with every peer, then
  // apply. Any mismatch or absence is an abort, never an accept.
  wire::WriteAck drive_write(const Bytes& payload) {
    wire::ZkWrite msg;
    try {
      msg = wire::ZkWrite::parse(payload);
    } catch (const Error&) {
      return {audit::Nonce{}, false, wire::RejectReason::parse};
    }
    server::WriteStatus st = node_.begin_write(msg, now_ms());
    if (!st.ok) return {st.nonce, false, st.reason};
    const audit::Nonce& nonce = st.nonce;
    int deadline = static_cast<int>(cfg_.audit_deadline_ms);
    size_t n = cfg_.servers.size();

    try {
      wire::ZkConfirm mine{nonce, cfg_.index, st.digest};
      for (size_t j = 0; j < n; j++) {
        if (j == cfg_.index) continue;
        Link* peer = peer_link(j);
        require(peer != nullptr, Errc::io_failure, "peer link not ready");
        peer->send(wire::MsgType::zk_confirm, mine);
      }
      std::vector<bool> confirmed(n, false);
      confirmed[cfg_.index] = true;
      for (size_t got = 1; got < n; got++) {
        auto raw = mailbox_.await(route_key(wire::MsgType::zk_confirm, nonce), deadline);
        require(raw.has_value(), Errc::timeout, "peer confirmation missing");
        wire::ZkConfirm c = wire::ZkConfirm::parse(*raw);
        require(c.server_index < n && !confirmed[c.server_index], Errc::protocol_violation,
                "duplicate confirmation");
        confirmed[c.server_index] = true;
        if (c.digest != st.digest) {
          node_.abort_write(nonce, wire::RejectReason::proof);
          return {nonce, false, wire::RejectReason::proof};
        }
      }
      server::WriteStatus fin = node_.commit_write(nonce);
      return {nonce, fin.ok, fin.reason};
    } catch (const Error& e) {
      detail::log_line(who(), std::string("write pipeline failed: ") + e.what());
      node_.abort_write(nonce, wire::RejectReason::internal);
      return {nonce, false, wire::RejectReason::internal};
    }
  }

  Link* peer_link(size_t index) {
    std::lock_guard lock(links_mu_);
    return peers_[index].get();
  }

  // ------------------------------------------------------------- closing

  void policy_loop() {
    while (!stopping_) {
      std::this_thread::sleep_for(std::chrono::milliseconds(25));
      if (!stopping_ && node_.state() == server::EpochState::open && node_.policy_met(now_ms())) {
        try {
          run_close();
        } catch (const Error& e) {
          detail::log_line(who(), std::string("close failed: ") + e.what());
          halted_ = true;
          return;
        }
      }
    }
  }

  void run_close() {
    node_.enter_closing();
    detail::drain_pending(node_, 2000);
    size_t n = cfg_.servers.size();
    for (int attempt = 0; attempt < 10; attempt++) {
      wire::CloseEpoch close = node_.make_close();
      for (size_t j = 1; j < n; j++) {
        Link* peer = peer_link(j);
        require(peer != nullptr, Errc::io_failure, "close without a peer link");
        peer->send(wire::MsgType::close_epoch, close);
      }
      bool all_agreed = true;
      for (size_t j = 1; j < n; j++) {
        auto raw = mailbox_.await(route_key(wire::MsgType::close_ack), 5000);
        require(raw.has_value(), Errc::timeout, "no close ack");
        wire::CloseAck ack = wire::CloseAck::parse(*raw);
        switch (node_.evaluate_close_ack(ack)) {
          case server::CloseOutcome::agreed:
            break;
          case server::CloseOutcome::retry:
            all_agreed = false;
            break;
          case server::CloseOutcome::diverged:
            halt_diverged(ack);
            return;
        }
      }
      if (all_agreed) {
        broadcast_share();
        finish_reveal();
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(200));
    }
    fail(Errc::timeout, "close retries exhausted");
  }

  void on_peer_frame(wire::Frame f) {
    if (f.type != wire::MsgType::close_epoch) return;
    wire::CloseEpoch msg = wire::CloseEpoch::parse(f.payload);
    std::lock_guard lock(workers_mu_);
    workers_.emplace_back([this, msg] { peer_close(msg); });
  }

  void peer_close(const wire::CloseEpoch& msg) {
    try {
      if (node_.state() == server::EpochState::open) {
        node_.enter_closing();
        detail::drain_pending(node_, 2000);
      }
      wire::CloseAck ack = node_.handle_close(msg);
      Link* closer = peer_link(0);
      require(closer != nullptr, Errc::io_failure, "no link to the closing server");
      closer->send(wire::MsgType::close_ack, ack);
      if (!ack.agreed) return;
      broadcast_share();
      finish_reveal();
    } catch (const Error& e) {
      detail::log_line(who(), std::string("peer close failed: ") + e.what());
      halted_ = true;
    }
  }

  void broadcast_share() {
    wire::ShareXfer mine = node_.export_share();
    for (size_t j = 0; j < cfg_.servers.size(); j++) {
      if (j == cfg_.index) continue;
      Link* peer = peer_link(j);
      require(peer != nullptr, Errc::io_failure, "share broadcast without a peer link");
      peer->send(wire::MsgType::share_xfer, mine);
    }
  }

  void finish_reveal() {
    size_t n = cfg_.servers.size();
    std::vector<wire::ShareXfer> shares;
    for (size_t got = 1; got < n; got++) {
      auto raw = mailbox_.await(route_key(wire::MsgType::share_xfer), 5000);
      require(raw.has_value(), Errc::timeout, "missing peer share");
      shares.push_back(wire::ShareXfer::parse(*raw));
    }
    server::EpochReport rep = node_.reveal_with(shares);
    detail::write_epoch_outputs(node_, cfg_.data_dir, rep);
    detail::log_line(who(), "epoch " + detail::epoch_tag(rep.epoch_id) + " revealed: accepted " +
                                std::to_string(rep.accepted));
    node_.advance_epoch(now_ms());
  }

  void halt_diverged(const wire::CloseAck& ack) {
    std::string diag = "close diverged: local accepted " + std::to_string(node_.accepted()) +
                       ", peer reported " + std::to_string(ack.count) + " for epoch " +
                       detail::epoch_tag(ack.epoch_id);
    detail::log_line(who(), diag);
    std::filesystem::create_directories(cfg_.data_dir);
    std::string path = cfg_.data_dir + "/diverged-" + detail::epoch_tag(node_.epoch_id()) + ".txt";
    std::FILE* out = std::fopen(path.c_str(), "w");
    if (out != nullptr) {
      std::fwrite(diag.data(), 1, diag.size(), out);
      std::fclose(out);
    }
    halted_ = true;
  }

  config::ServerConfig cfg_;
  transport::Identity identity_;
  transport::TlsContext server_ctx_;
  transport::TlsContext client_ctx_;
  server::ZkNode<G> node_;
  transport::Listener listener_;
  Mailbox mailbox_;
  std::vector<std::unique_ptr<Link>> peers_;
  std::mutex links_mu_;
  std::vector<std::shared_ptr<transport::Conn>> conns_;
  std::mutex conns_mu_;
  std::vector<std::thread> threads_;
  std::vector<std::thread> workers_;
  std::mutex workers_mu_;
  std::atomic<bool> stopping_{false};
  std::atomic<bool> halted_{false};
};

// ------------------------------------------------------------- the auditor

// Terminates one pinned link per database server and runs the pairing
// table. Every decided phase is broadcast to both servers.
class AuditorDaemon {
 public:
  explicit AuditorDaemon(config::AuditorConfig cfg)
      : cfg_(std::move(cfg)),
        identity_(transport::load_identity(cfg_.creds)),
        server_ctx_(transport::TlsContext::server(identity_)),
        auditor_(cfg_.deadline_ms),
        listener_(cfg_.listen.host, cfg_.listen.port) {}

  ~AuditorDaemon() { stop(); }

  uint16_t port() const { return listener_.port(); }
  const transport::Identity& identity() const { return identity_; }

  void start() {
    threads_.emplace_back([this] { accept_loop(); });
    threads_.emplace_back([this] { expiry_loop(); });
  }

  void stop() {
    if (stopping_.exchange(true)) return;
    listener_.close();
    {
      std::lock_guard lock(mu_);
      for (auto& c : conns_)
        if (c) c->close();
    }
    for (auto& t : threads_)
      if (t.joinable()) t.join();
    std::lock_guard lock(workers_mu_);
    for (auto& t : workers_)
      if (t.joinable()) t.join();
  }

 private:
  void accept_loop() {
    while (!stopping_) {
      std::shared_ptr<transport::Conn> conn;
      try {
        conn = listener_.accept(server_ctx_);
      } catch (const Error&) {
        if (stopping_) return;
        continue;
      }
      std::optional<size_t> index;
      for (size_t i = 0; i < cfg_.server_pins.size(); i++)
        if (conn->peer_pin() == cfg_.server_pins[i]) index = i;
      if (!index) {
        conn->close();  // only the pinned servers may speak here
        continue;
      }
      {
        std::lock_guard lock(mu_);
        conns_[*index] = conn;
      }
      std::lock_guard lock(workers_mu_);
      workers_.emplace_back([this, conn, i = *index] { serve_server(conn, i); });
    }
  }

  void serve_server(std::shared_ptr<transport::Conn> conn, size_t index) {
    try {
      for (;;) {
        wire::Frame f = conn->read_frame(-1);
        require(f.type == wire::MsgType::audit_req, Errc::protocol_violation,
                "auditor accepts audit requests only");
        wire::AuditReq req = wire::AuditReq::parse(f.payload);
        audit::Role role = index == 0 ? audit::Role::a : audit::Role::b;
        require(req.role == role, Errc::protocol_violation, "role does not match the pinned link");
        broadcast(auditor_.submit(req.nonce, req.phase, req.role, std::move(req.masked),
                                  now_ms()));
      }
    } catch (const Error&) {
      conn->close();
    }
  }

  void expiry_loop() {
    while (!stopping_) {
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
      broadcast(auditor_.expire(now_ms()));
    }
  }

  void broadcast(const std::vector<audit::Auditor::Outcome>& outcomes) {
    if (outcomes.empty()) return;
    std::lock_guard lock(mu_);
    for (const auto& o : outcomes) {
      wire::AuditResp resp{o.nonce, o.phase, o.verdict};
      for (auto& c : conns_) {
        if (!c) continue;
        try {
          c->write_msg(wire::MsgType::audit_resp, resp);
        } catch (const Error&) {
          // Server link gone; its writes will expire on its side.
        }
      }
    }
  }

  config::AuditorConfig cfg_;
  transport::Identity identity_;
  transport::TlsContext server_ctx_;
  audit::Auditor auditor_;
  transport::Listener listener_;
  std::array<std::shared_ptr<transport::Conn>, 2> conns_{};
  std::mutex mu_;
  std::vector<std::thread> threads_;
  std::vector<std::thread> workers_;
  std::mutex workers_mu_;
  std::atomic<bool> stopping_{false};
};

// --------------------------------------------------------------- client side

struct ServerReply {
  wire::WriteAck ack{};
  std::string error;  // transport failure, if any; ack is meaningless then
};

// Sends one submission to every server in parallel. The audited pipeline
// needs both servers working the same write concurrently, so the dials and
// acks overlap by construction.
inline std::vector<ServerReply> client_submit(const config::ClientConfig& cfg,
                                              const transport::TlsContext& ctx,
                                              const client::Submission& sub,
                                              int timeout_ms = 30'000) {
  std::vector<ServerReply> replies(cfg.servers.size());
  std::vector<std::thread> threads;
  for (size_t i = 0; i < cfg.servers.size(); i++) {
    threads.emplace_back([&, i] {
      try {
        auto conn = transport::dial(ctx, cfg.servers[i], cfg.server_pins[i], timeout_ms);
        conn->write_frame(sub.type, sub.payloads[i], timeout_ms);
        wire::Frame f = conn->read_frame(timeout_ms);
        require(f.type == wire::MsgType::write_ack, Errc::protocol_violation,
                "expected a write ack");
        replies[i].ack = wire::WriteAck::parse(f.payload);
      } catch (const Error& e) {
        replies[i].error = e.what();
      }
    });
  }
  for (auto& t : threads) t.join();
  return replies;
}

inline wire::EpochInfo client_fetch_epoch(const config::ClientConfig& cfg,
                                          const transport::TlsContext& ctx,
                                          int timeout_ms = 10'000) {
  size_t index = 0;
  for (size_t i = 0; i < cfg.servers.size(); i++)
    if (cfg.servers[i].host == cfg.epoch_endpoint.host &&
        cfg.servers[i].port == cfg.epoch_endpoint.port)
      index = i;
  auto conn = transport::dial(ctx, cfg.epoch_endpoint, cfg.server_pins[index], timeout_ms);
  conn->write_frame(wire::MsgType::epoch_req, {});
  wire::Frame f = conn->read_frame(timeout_ms);
  require(f.type == wire::MsgType::epoch_info, Errc::protocol_violation, "expected epoch info");
  return wire::EpochInfo::parse(f.payload);
}

}  // namespace riposte::service
