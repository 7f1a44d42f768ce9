#pragma once

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <openssl/bio.h>
#include <openssl/err.h>
#include <openssl/evp.h>
#include <openssl/pem.h>
#include <openssl/rand.h>
#include <openssl/ssl.h>
#include <openssl/x509.h>

#include <csignal>
#include <cstdint>
#include <fstream>
#include <memory>
#include <mutex>
#include <string>
#include <utility>

#include "riposte/bytes.hpp"
#include "riposte/config.hpp"
#include "riposte/errors.hpp"
#include "riposte/hashing.hpp"
#include "riposte/wire.hpp"

// TLS 1.3 framed transport. There is no PKI: every party holds a
// self-signed certificate and peers are authenticated by comparing the
// SHA-256 of the presented certificate against a configured pin. Client
// certificates are required but unpinned; their hash is the client's
// transport identity and nothing more.
namespace riposte::transport {

namespace detail {

struct SslCtxFree {
  void operator()(SSL_CTX* p) const { SSL_CTX_free(p); }
};
struct SslFree {
  void operator()(SSL* p) const { SSL_free(p); }
};
struct X509Free {
  void operator()(X509* p) const { X509_free(p); }
};
struct PkeyFree {
  void operator()(EVP_PKEY* p) const { EVP_PKEY_free(p); }
};
struct BioFree {
  void operator()(BIO* p) const { BIO_free(p); }
};

inline std::string ssl_error_text(const char* what) {
  std::string out = what;
  unsigned long code = ERR_get_error();
  if (code != 0) {
    char buf[256];
    ERR_error_string_n(code, buf, sizeof(buf));
    out += ": ";
    out += buf;
  }
  ERR_clear_error();
  return out;
}

// Any chain is "valid"; authenticity comes from the pin check afterwards.
inline int accept_any_cert(int, X509_STORE_CTX*) { return 1; }

// A peer tearing down mid-write must surface as an SSL error, not a signal.
inline void ignore_sigpipe() {
  static const bool done = [] {
    ::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)done;
}

inline void set_nonblocking(int fd) {
  int flags = fcntl(fd, F_GETFL, 0);
  require(flags >= 0 && fcntl(fd, F_SETFL, flags | O_NONBLOCK) == 0, Errc::io_failure,
          "fcntl O_NONBLOCK failed");
}

inline void wait_io(int fd, short events, int timeout_ms) {
  pollfd p{fd, events, 0};
  int rc = ::poll(&p, 1, timeout_ms);
  require(rc >= 0 || errno == EINTR, Errc::io_failure, "poll failed");
  require(rc != 0, Errc::timeout, "peer did not respond in time");
}

}  // namespace detail

inline hashing::Digest cert_pin(X509* cert) {
  unsigned char* der = nullptr;
  int len = i2d_X509(cert, &der);
  require(len > 0, Errc::crypto_failure, "certificate encode failed");
  hashing::Digest d = hashing::sha256(std::span<const uint8_t>(der, static_cast<size_t>(len)));
  OPENSSL_free(der);
  return d;
}

// Self-signed P-256 credentials, generated fresh per party.
struct Identity {
  Bytes cert_pem;
  Bytes key_pem;
  hashing::Digest pin{};
};

inline Identity make_identity(const std::string& common_name) {
  std::unique_ptr<EVP_PKEY, detail::PkeyFree> key(EVP_EC_gen("P-256"));
  require(key != nullptr, Errc::crypto_failure, detail::ssl_error_text("key generation failed"));

  std::unique_ptr<X509, detail::X509Free> cert(X509_new());
  require(cert != nullptr, Errc::crypto_failure, "X509_new failed");
  X509_set_version(cert.get(), 2);
  uint64_t serial = 0;
  require(RAND_bytes(reinterpret_cast<unsigned char*>(&serial), sizeof(serial)) == 1,
          Errc::crypto_failure, "RAND_bytes failed");
  ASN1_INTEGER_set_uint64(X509_get_serialNumber(cert.get()), serial | 1);
  X509_gmtime_adj(X509_getm_notBefore(cert.get()), -3600);
  X509_gmtime_adj(X509_getm_notAfter(cert.get()), 3650L * 24 * 3600);
  X509_NAME* name = X509_get_subject_name(cert.get());
  X509_NAME_add_entry_by_txt(name, "CN", MBSTRING_ASC,
                             reinterpret_cast<const unsigned char*>(common_name.c_str()), -1, -1,
                             0);
  X509_set_issuer_name(cert.get(), name);
  require(X509_set_pubkey(cert.get(), key.get()) == 1, Errc::crypto_failure,
          "X509_set_pubkey failed");
  require(X509_sign(cert.get(), key.get(), EVP_sha256()) > 0, Errc::crypto_failure,
          detail::ssl_error_text("certificate signing failed"));

  auto pem_of = [](auto writer) {
    std::unique_ptr<BIO, detail::BioFree> bio(BIO_new(BIO_s_mem()));
    require(bio != nullptr && writer(bio.get()) == 1, Errc::crypto_failure, "PEM encode failed");
    char* data = nullptr;
    long len = BIO_get_mem_data(bio.get(), &data);
    return Bytes(data, data + len);
  };
  Identity id;
  id.cert_pem = pem_of([&](BIO* b) { return PEM_write_bio_X509(b, cert.get()); });
  id.key_pem = pem_of([&](BIO* b) {
    return PEM_write_bio_PrivateKey(b, key.get(), nullptr, nullptr, 0, nullptr, nullptr);
  });
  id.pin = cert_pin(cert.get());
  return id;
}

inline void write_identity(const Identity& id, const std::string& cert_path,
                           const std::string& key_path) {
  auto dump = [](const std::string& path, const Bytes& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), Errc::io_failure, "cannot write " + path);
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    require(out.good(), Errc::io_failure, "short write to " + path);
  };
  dump(cert_path, id.cert_pem);
  dump(key_path, id.key_pem);
}

inline Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io_failure, "cannot read " + path);
  return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline Identity load_identity(const config::Credentials& creds) {
  Identity id;
  id.cert_pem = read_file(creds.cert_path);
  id.key_pem = read_file(creds.key_path);
  std::unique_ptr<BIO, detail::BioFree> bio(
      BIO_new_mem_buf(id.cert_pem.data(), static_cast<int>(id.cert_pem.size())));
  std::unique_ptr<X509, detail::X509Free> cert(
      PEM_read_bio_X509(bio.get(), nullptr, nullptr, nullptr));
  require(cert != nullptr, Errc::decode_error, "bad PEM certificate: " + creds.cert_path);
  id.pin = cert_pin(cert.get());
  return id;
}

// One SSL_CTX per role. TLS 1.3 only; both sides always present a
// certificate.
class TlsContext {
 public:
  static TlsContext server(const Identity& id) { return TlsContext(id, true); }
  static TlsContext client(const Identity& id) { return TlsContext(id, false); }

  SSL_CTX* get() const { return ctx_.get(); }

 private:
  TlsContext(const Identity& id, bool is_server) : ctx_(SSL_CTX_new(TLS_method())) {
    detail::ignore_sigpipe();
    require(ctx_ != nullptr, Errc::crypto_failure, "SSL_CTX_new failed");
    SSL_CTX* ctx = ctx_.get();
    require(SSL_CTX_set_min_proto_version(ctx, TLS1_3_VERSION) == 1, Errc::crypto_failure,
            "TLS 1.3 unavailable");

    std::unique_ptr<BIO, detail::BioFree> cbio(
        BIO_new_mem_buf(id.cert_pem.data(), static_cast<int>(id.cert_pem.size())));
    std::unique_ptr<X509, detail::X509Free> cert(
        PEM_read_bio_X509(cbio.get(), nullptr, nullptr, nullptr));
    std::unique_ptr<BIO, detail::BioFree> kbio(
        BIO_new_mem_buf(id.key_pem.data(), static_cast<int>(id.key_pem.size())));
    std::unique_ptr<EVP_PKEY, detail::PkeyFree> key(
        PEM_read_bio_PrivateKey(kbio.get(), nullptr, nullptr, nullptr));
    require(cert != nullptr && key != nullptr, Errc::decode_error, "bad PEM credentials");
    require(SSL_CTX_use_certificate(ctx, cert.get()) == 1 &&
                SSL_CTX_use_PrivateKey(ctx, key.get()) == 1 &&
                SSL_CTX_check_private_key(ctx) == 1,
            Errc::crypto_failure, detail::ssl_error_text("credential setup failed"));

    int mode = SSL_VERIFY_PEER | (is_server ? SSL_VERIFY_FAIL_IF_NO_PEER_CERT : 0);
    SSL_CTX_set_verify(ctx, mode, detail::accept_any_cert);
    SSL_CTX_set_mode(ctx, SSL_MODE_ENABLE_PARTIAL_WRITE | SSL_MODE_ACCEPT_MOVING_WRITE_BUFFER);
  }

  std::unique_ptr<SSL_CTX, detail::SslCtxFree> ctx_;
};

// A framed TLS connection over a nonblocking socket. One internal lock
// serializes every SSL call, and poll waits happen outside it, so a
// dedicated reader thread and any number of writer threads can share the
// connection.
class Conn {
 public:
  Conn(SSL* ssl, int fd, hashing::Digest peer_pin)
      : ssl_(ssl), fd_(fd), peer_pin_(peer_pin) {}

  Conn(const Conn&) = delete;
  Conn& operator=(const Conn&) = delete;

  ~Conn() { close(); }

  const hashing::Digest& peer_pin() const { return peer_pin_; }

  // Reads one complete frame. Throws timeout if the deadline passes between
  // bytes, io_failure on EOF or socket errors, decode_error on a bad header.
  wire::Frame read_frame(int timeout_ms = kDefaultTimeoutMs) {
    Bytes header = read_exact(wire::kHeaderSize, timeout_ms);
    auto [type, length] = wire::parse_frame_header(header);
    Bytes payload = read_exact(length, timeout_ms);
    return wire::Frame{type, std::move(payload)};
  }

  void write_frame(wire::MsgType type, std::span<const uint8_t> payload,
                   int timeout_ms = kDefaultTimeoutMs) {
    write_all(wire::encode_frame(type, payload), timeout_ms);
  }

  template <class M>
  void write_msg(wire::MsgType type, const M& msg, int timeout_ms = kDefaultTimeoutMs) {
    write_all(wire::encode(type, msg), timeout_ms);
  }

  // Raw bytes, for tests that need to violate the framing.
  void write_all(std::span<const uint8_t> data, int timeout_ms = kDefaultTimeoutMs) {
    size_t off = 0;
    while (off < data.size()) {
      int want = 0;
      {
        std::lock_guard lock(mu_);
        if (closed_) fail(Errc::io_failure, "connection closed");
        int n = SSL_write(ssl_.get(), data.data() + off, static_cast<int>(data.size() - off));
        if (n > 0) {
          off += static_cast<size_t>(n);
          continue;
        }
        want = SSL_get_error(ssl_.get(), n);
      }
      wait_want(want, timeout_ms, "write");
    }
  }

  void close() {
    std::lock_guard lock(mu_);
    if (closed_) return;
    closed_ = true;
    SSL_shutdown(ssl_.get());  // best effort, single round
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
  }

  static constexpr int kDefaultTimeoutMs = 30'000;

 private:
  Bytes read_exact(size_t len, int timeout_ms) {
    Bytes out(len);
    size_t off = 0;
    while (off < len) {
      int want = 0;
      {
        std::lock_guard lock(mu_);
        if (closed_) fail(Errc::io_failure, "connection closed");
        int n = SSL_read(ssl_.get(), out.data() + off, static_cast<int>(len - off));
        if (n > 0) {
          off += static_cast<size_t>(n);
          continue;
        }
        want = SSL_get_error(ssl_.get(), n);
      }
      wait_want(want, timeout_ms, "read");
    }
    return out;
  }

  void wait_want(int want, int timeout_ms, const char* op) {
    switch (want) {
      case SSL_ERROR_WANT_READ:
        detail::wait_io(fd_, POLLIN, timeout_ms);
        return;
      case SSL_ERROR_WANT_WRITE:
        detail::wait_io(fd_, POLLOUT, timeout_ms);
        return;
      case SSL_ERROR_ZERO_RETURN:
        fail(Errc::io_failure, std::string("connection closed during ") + op);
      default:
        fail(Errc::io_failure, detail::ssl_error_text(op));
    }
  }

  std::unique_ptr<SSL, detail::SslFree> ssl_;
  int fd_;
  hashing::Digest peer_pin_;
  bool closed_ = false;
  std::mutex mu_;
};

namespace detail {

inline SSL* run_handshake(SSL_CTX* ctx, int fd, bool is_server, int timeout_ms) {
  set_nonblocking(fd);
  int one = 1;
  setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  std::unique_ptr<SSL, SslFree> ssl(SSL_new(ctx));
  require(ssl != nullptr, Errc::crypto_failure, "SSL_new failed");
  require(SSL_set_fd(ssl.get(), fd) == 1, Errc::crypto_failure, "SSL_set_fd failed");
  for (;;) {
    int rc = is_server ? SSL_accept(ssl.get()) : SSL_connect(ssl.get());
    if (rc == 1) return ssl.release();
    int want = SSL_get_error(ssl.get(), rc);
    if (want == SSL_ERROR_WANT_READ)
      wait_io(fd, POLLIN, timeout_ms);
    else if (want == SSL_ERROR_WANT_WRITE)
      wait_io(fd, POLLOUT, timeout_ms);
    else
      fail(Errc::io_failure, ssl_error_text("tls handshake failed"));
  }
}

inline hashing::Digest peer_pin_of(SSL* ssl) {
  std::unique_ptr<X509, X509Free> cert(SSL_get1_peer_certificate(ssl));
  require(cert != nullptr, Errc::crypto_failure, "peer presented no certificate");
  return cert_pin(cert.get());
}

}  // namespace detail

// Dials host:port, completes the handshake, and verifies the server's
// certificate against the expected pin before any frame moves.
inline std::unique_ptr<Conn> dial(const TlsContext& ctx, const config::Endpoint& ep,
                                  const hashing::Digest& expected_pin,
                                  int timeout_ms = Conn::kDefaultTimeoutMs) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  int rc = getaddrinfo(ep.host.c_str(), std::to_string(ep.port).c_str(), &hints, &res);
  require(rc == 0, Errc::io_failure, "cannot resolve " + ep.host);
  int fd = -1;
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  freeaddrinfo(res);
  require(fd >= 0, Errc::io_failure, "cannot connect to " + ep.host + ":" +
                                         std::to_string(ep.port));
  SSL* ssl = nullptr;
  try {
    ssl = detail::run_handshake(ctx.get(), fd, false, timeout_ms);
  } catch (...) {
    ::close(fd);
    throw;
  }
  hashing::Digest pin = detail::peer_pin_of(ssl);
  auto conn = std::make_unique<Conn>(ssl, fd, pin);
  require(pin == expected_pin, Errc::crypto_failure, "certificate pin mismatch");
  return conn;
}

// Accepts TCP connections and completes TLS handshakes. The peer's pin is
// captured for the caller to authorize; a failed handshake (for example a
// plaintext client) is reported, not fatal to the listener.
class Listener {
 public:
  Listener(const std::string& host, uint16_t port) {
    detail::ignore_sigpipe();
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    require(fd_ >= 0, Errc::io_failure, "socket failed");
    int one = 1;
    setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    require(inet_pton(AF_INET, host == "localhost" ? "127.0.0.1" : host.c_str(),
                      &addr.sin_addr) == 1,
            Errc::invalid_argument, "listen host wants an IPv4 address");
    require(::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0, Errc::io_failure,
            "cannot bind " + host + ":" + std::to_string(port));
    require(::listen(fd_, 64) == 0, Errc::io_failure, "listen failed");
    socklen_t len = sizeof(addr);
    require(getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len) == 0, Errc::io_failure,
            "getsockname failed");
    port_ = ntohs(addr.sin_port);
  }

  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;

  ~Listener() { close(); }

  uint16_t port() const { return port_; }

  // Blocks until a connection handshakes or the listener is closed
  // (io_failure). A connection that fails its handshake throws but leaves
  // the listener usable.
  std::unique_ptr<Conn> accept(const TlsContext& ctx, int timeout_ms = Conn::kDefaultTimeoutMs) {
    int fd = ::accept(fd_, nullptr, nullptr);
    require(fd >= 0, Errc::io_failure, "listener closed");
    SSL* ssl = nullptr;
    try {
      ssl = detail::run_handshake(ctx.get(), fd, true, timeout_ms);
    } catch (...) {
      ::close(fd);
      throw;
    }
    return std::make_unique<Conn>(ssl, fd, detail::peer_pin_of(ssl));
  }

  void close() {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_ = -1;
  uint16_t port_ = 0;
};

}  // namespace riposte::transport
