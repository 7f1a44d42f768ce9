#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "riposte/collision.hpp"
#include "riposte/dpf.hpp"
#include "riposte/errors.hpp"
#include "riposte/geometry.hpp"
#include "riposte/wire.hpp"

// Config files are plain key-value text: one `key = value` per line, '#'
// starts a comment, blank lines ignored, keys may repeat never. Keys are
// lower-case with '.' for indexed entries (server.0, pin.server.1). The
// format is shared by all four binaries; each loader consumes the keys it
// knows and rejects leftovers, so a typo fails loudly instead of silently
// defaulting.
//
// Epoch keys (shared):
//   variant        = 2-server-audited | s-server-zk | 2-server-fp
//   group          = schnorr | p256            (s-server-zk only)
//   recovery       = on | off                  (2-server-fp only)
//   rows           = table length L
//   row-bytes      = payload width per row     (derived for fp/group variants)
//   msg-bytes      = plaintext message bytes per write
//   cols, strip    = key matrix dimensions     (optional; optimizer fills them)
//   epoch-threshold   = close after this many accepted writes (>= 1)
//   epoch-duration-ms = additionally close after this much time (0 = off)
//
// The 2-server-fp variant exists for the recovery-coding pipeline, which has
// no sound audit over a prime field; it is accepted by the simulator only
// and validated at parse level. The networked server refuses it.
namespace riposte::config {

// ------------------------------------------------------------- kv file

class KvFile {
 public:
  static KvFile parse_text(std::string_view text) {
    KvFile kv;
    size_t line_no = 0, pos = 0;
    while (pos <= text.size()) {
      size_t eol = text.find('\n', pos);
      std::string_view line = text.substr(pos, eol == std::string_view::npos ? eol : eol - pos);
      pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
      line_no++;
      if (size_t hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      size_t eq = line.find('=');
      require(eq != std::string_view::npos, Errc::invalid_argument,
              "config line " + std::to_string(line_no) + " is not key = value");
      std::string key(trim(line.substr(0, eq)));
      std::string value(trim(line.substr(eq + 1)));
      require(!key.empty(), Errc::invalid_argument,
              "empty key on config line " + std::to_string(line_no));
      require(kv.values_.emplace(key, value).second, Errc::invalid_argument,
              "duplicate config key: " + key);
    }
    return kv;
  }

  static KvFile load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), Errc::io_failure, "cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_text(buf.str());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_str(const std::string& key) {
    auto v = try_get(key);
    require(v.has_value(), Errc::invalid_argument, "missing config key: " + key);
    return *v;
  }
  std::string get_str_or(const std::string& key, const std::string& fallback) {
    return try_get(key).value_or(fallback);
  }
  std::optional<std::string> try_get(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    consumed_.insert(key);
    return it->second;
  }

  uint64_t get_u64(const std::string& key) { return parse_u64(key, get_str(key)); }
  uint64_t get_u64_or(const std::string& key, uint64_t fallback) {
    auto v = try_get(key);
    return v ? parse_u64(key, *v) : fallback;
  }
  bool get_bool_or(const std::string& key, bool fallback) {
    auto v = try_get(key);
    if (!v) return fallback;
    if (*v == "on" || *v == "true" || *v == "1") return true;
    if (*v == "off" || *v == "false" || *v == "0") return false;
    fail(Errc::invalid_argument, "config key " + key + " wants on/off");
  }
  double get_double(const std::string& key) {
    std::string v = get_str(key);
    size_t used = 0;
    double out = std::stod(v, &used);
    require(used == v.size(), Errc::invalid_argument, "config key " + key + " is not a number");
    return out;
  }

  // Collects key.0, key.1, ... contiguously from zero.
  std::vector<std::string> get_indexed(const std::string& key) {
    std::vector<std::string> out;
    for (size_t i = 0;; i++) {
      auto v = try_get(key + "." + std::to_string(i));
      if (!v) break;
      out.push_back(*v);
    }
    return out;
  }

  // Every key must have been consumed by a getter; call after loading.
  void expect_no_leftovers() const {
    for (const auto& [key, value] : values_)
      require(consumed_.count(key) != 0, Errc::invalid_argument, "unknown config key: " + key);
  }

 private:
  static std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
      s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
      s.remove_suffix(1);
    return s;
  }
  static uint64_t parse_u64(const std::string& key, const std::string& v) {
    require(!v.empty() && v.find_first_not_of("0123456789") == std::string::npos,
            Errc::invalid_argument, "config key " + key + " is not an unsigned integer");
    try {
      return std::stoull(v);
    } catch (const std::exception&) {
      fail(Errc::invalid_argument, "config key " + key + " out of range");
    }
  }

  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

// ------------------------------------------------------------ endpoint

struct Endpoint {
  std::string host;
  uint16_t port = 0;

  std::string str() const { return host + ":" + std::to_string(port); }
  bool operator==(const Endpoint&) const = default;
};

inline Endpoint parse_endpoint(const std::string& s) {
  size_t colon = s.rfind(':');
  require(colon != std::string::npos && colon > 0 && colon + 1 < s.size(),
          Errc::invalid_argument, "endpoint wants host:port, got: " + s);
  std::string port_str = s.substr(colon + 1);
  require(port_str.find_first_not_of("0123456789") == std::string::npos, Errc::invalid_argument,
          "endpoint port is not a number: " + s);
  unsigned long port = std::stoul(port_str);
  require(port >= 1 && port <= 65535, Errc::invalid_argument, "endpoint port out of range: " + s);
  return Endpoint{s.substr(0, colon), static_cast<uint16_t>(port)};
}

// ---------------------------------------------------------- epoch config

// Element widths of the two reference groups, pinned here so config
// validation needs no crypto context; the group classes assert the same
// numbers where they are instantiated.
inline constexpr uint32_t kSchnorrElementBytes = 8;
inline constexpr uint32_t kSchnorrEmbedBytes = 4;
inline constexpr uint32_t kP256ElementBytes = 33;
inline constexpr uint32_t kP256EmbedBytes = 28;

enum class Validation : uint8_t { audit, zkproof, parse_only };

struct EpochConfig {
  dpf::Variant variant = dpf::Variant::two_xor;
  bool recovery = false;
  Geometry geom;
  uint32_t msg_bytes = 0;
  uint64_t threshold = 1;
  uint64_t duration_ms = 0;

  bool operator==(const EpochConfig&) const = default;

  Validation validation() const {
    if (variant == dpf::Variant::two_xor) return Validation::audit;
    if (dpf::is_group(variant)) return Validation::zkproof;
    return Validation::parse_only;
  }
  uint32_t element_bytes() const {
    return variant == dpf::Variant::s_p256 ? kP256ElementBytes : kSchnorrElementBytes;
  }
  uint32_t embed_bytes() const {
    return variant == dpf::Variant::s_p256 ? kP256EmbedBytes : kSchnorrEmbedBytes;
  }
};

// The supported variant/payload/recovery combinations; anything else is a
// config error, never a silent downgrade.
inline void validate_epoch(const EpochConfig& c) {
  require(c.geom.valid(), Errc::invalid_argument, "epoch geometry is invalid");
  require(c.threshold >= 1, Errc::invalid_argument, "epoch threshold must be >= 1");
  require(c.msg_bytes >= 1, Errc::invalid_argument, "msg-bytes must be >= 1");
  switch (c.variant) {
    case dpf::Variant::two_xor:
      require(!c.recovery, Errc::invalid_argument,
              "recovery coding needs prime-field rows; the audited variant is XOR");
      require(c.msg_bytes + 1 <= c.geom.row_bytes, Errc::invalid_argument,
              "message plus prefix byte exceeds row width");
      break;
    case dpf::Variant::two_fp:
      require(c.recovery, Errc::invalid_argument,
              "the prime-field variant exists for recovery coding; turn it on");
      require(c.geom.row_bytes == collision::coded_row_bytes(c.msg_bytes), Errc::invalid_argument,
              "row width must match the coded-cell layout for msg-bytes");
      break;
    case dpf::Variant::s_schnorr:
    case dpf::Variant::s_p256:
      require(!c.recovery, Errc::invalid_argument, "recovery coding needs prime-field rows");
      require(c.geom.row_bytes == c.element_bytes(), Errc::invalid_argument,
              "proof-carrying writes cover single-element rows");
      require(c.msg_bytes + 1 <= c.embed_bytes(), Errc::invalid_argument,
              "message plus prefix byte exceeds element embedding capacity");
      break;
    default:
      fail(Errc::invalid_argument, "toy keys have no epoch pipeline");
  }
}

// Converts to/from the wire's epoch-discovery message.
inline wire::EpochInfo epoch_info(const EpochConfig& c, const Bytes& epoch_id) {
  wire::EpochInfo info;
  info.epoch_id = epoch_id;
  info.variant = static_cast<uint8_t>(c.variant);
  info.recovery = c.recovery ? 1 : 0;
  info.rows = c.geom.L;
  info.x = c.geom.x;
  info.y = c.geom.y;
  info.row_bytes = c.geom.row_bytes;
  info.msg_bytes = c.msg_bytes;
  info.threshold = c.threshold;
  info.duration_ms = c.duration_ms;
  return info;
}

inline EpochConfig epoch_from_info(const wire::EpochInfo& info) {
  require(info.variant >= static_cast<uint8_t>(dpf::Variant::toy_xor) &&
              info.variant <= static_cast<uint8_t>(dpf::Variant::s_p256),
          Errc::decode_error, "unknown key variant in epoch info");
  EpochConfig c;
  c.variant = static_cast<dpf::Variant>(info.variant);
  c.recovery = info.recovery == 1;
  c.geom = Geometry{info.rows, info.x, info.y, info.row_bytes};
  c.msg_bytes = info.msg_bytes;
  c.threshold = info.threshold;
  c.duration_ms = info.duration_ms;
  validate_epoch(c);
  return c;
}

namespace detail {

// Seed bits per column for the two-server keys (one 128-bit seed plus the
// b bit is the paper's 1 + alpha); scalar shares cost 2 * 256 bits per
// column for the s-server keys.
inline uint32_t key_alpha(dpf::Variant v) { return dpf::is_group(v) ? 512 : 128; }

inline EpochConfig epoch_from_kv(KvFile& kv) {
  EpochConfig c;
  std::string variant = kv.get_str("variant");
  if (variant == "2-server-audited") {
    c.variant = dpf::Variant::two_xor;
  } else if (variant == "2-server-fp") {
    c.variant = dpf::Variant::two_fp;
  } else if (variant == "s-server-zk") {
    std::string group = kv.get_str_or("group", "p256");
    require(group == "schnorr" || group == "p256", Errc::invalid_argument,
            "group wants schnorr or p256");
    c.variant = group == "schnorr" ? dpf::Variant::s_schnorr : dpf::Variant::s_p256;
  } else {
    fail(Errc::invalid_argument, "variant wants 2-server-audited, s-server-zk or 2-server-fp");
  }
  c.recovery = kv.get_bool_or("recovery", c.variant == dpf::Variant::two_fp);
  c.msg_bytes = static_cast<uint32_t>(kv.get_u64("msg-bytes"));
  uint32_t L = static_cast<uint32_t>(kv.get_u64("rows"));

  uint32_t row_bytes;
  switch (c.variant) {
    case dpf::Variant::two_xor:
      row_bytes = static_cast<uint32_t>(kv.get_u64_or("row-bytes", c.msg_bytes + 1));
      break;
    case dpf::Variant::two_fp:
      row_bytes = collision::coded_row_bytes(c.msg_bytes);
      break;
    default:
      row_bytes = c.element_bytes();
      break;
  }
  uint32_t cols = static_cast<uint32_t>(kv.get_u64_or("cols", 0));
  uint32_t strip = static_cast<uint32_t>(kv.get_u64_or("strip", 0));
  if (cols == 0 && strip == 0) {
    c.geom = optimize_geometry(L, key_alpha(c.variant), 8 * row_bytes, row_bytes);
  } else {
    require(cols >= 1 && strip >= 1, Errc::invalid_argument,
            "cols and strip must be given together");
    c.geom = Geometry{L, cols, strip, row_bytes};
  }
  c.threshold = kv.get_u64_or("epoch-threshold", 1);
  c.duration_ms = kv.get_u64_or("epoch-duration-ms", 0);
  validate_epoch(c);
  return c;
}

inline hashing::Digest parse_pin(const std::string& hex) {
  Bytes raw = hex_decode(hex);
  require(raw.size() == 32, Errc::invalid_argument, "credential pin wants 32 hex bytes");
  hashing::Digest d;
  std::copy(raw.begin(), raw.end(), d.begin());
  return d;
}

}  // namespace detail

// ------------------------------------------------------------- per role

// Shared TLS material: this party's PEM credentials plus the SHA-256 pins it
// requires of its peers' certificates.
struct Credentials {
  std::string cert_path;  // PEM certificate
  std::string key_path;   // PEM private key
};

struct ServerConfig {
  uint32_t index = 0;
  Endpoint listen;
  std::vector<Endpoint> servers;  // all database servers, by index
  std::optional<Endpoint> auditor;
  Credentials creds;
  std::vector<hashing::Digest> server_pins;  // pins for every server, by index
  std::optional<hashing::Digest> auditor_pin;
  EpochConfig epoch;
  std::string data_dir;  // epoch snapshots and reveal output
  uint64_t audit_deadline_ms = 30'000;

  static ServerConfig from_kv(KvFile kv) {
    ServerConfig c;
    c.index = static_cast<uint32_t>(kv.get_u64("index"));
    c.listen = parse_endpoint(kv.get_str("listen"));
    for (const auto& ep : kv.get_indexed("server")) c.servers.push_back(parse_endpoint(ep));
    c.creds = Credentials{kv.get_str("cert"), kv.get_str("key")};
    for (const auto& pin : kv.get_indexed("pin.server"))
      c.server_pins.push_back(detail::parse_pin(pin));
    c.epoch = detail::epoch_from_kv(kv);
    if (auto ep = kv.try_get("auditor")) c.auditor = parse_endpoint(*ep);
    if (auto pin = kv.try_get("pin.auditor")) c.auditor_pin = detail::parse_pin(*pin);
    c.data_dir = kv.get_str_or("data-dir", ".");
    c.audit_deadline_ms = kv.get_u64_or("audit-deadline-ms", 30'000);
    kv.expect_no_leftovers();

    require(c.servers.size() >= 2, Errc::invalid_argument, "need at least two database servers");
    require(c.index < c.servers.size(), Errc::invalid_argument, "server index out of range");
    require(c.server_pins.size() == c.servers.size(), Errc::invalid_argument,
            "need one pin.server.N per server");
    bool audited = c.epoch.validation() == Validation::audit;
    require(c.epoch.validation() != Validation::parse_only, Errc::invalid_argument,
            "the networked server runs validated variants only");
    require(audited == c.auditor.has_value(), Errc::invalid_argument,
            "auditor endpoint present iff variant is 2-server-audited");
    require(c.auditor.has_value() == c.auditor_pin.has_value(), Errc::invalid_argument,
            "auditor endpoint and pin go together");
    if (audited)
      require(c.servers.size() == 2, Errc::invalid_argument,
              "the audited variant runs exactly two database servers");
    return c;
  }
  static ServerConfig load(const std::string& path) { return from_kv(KvFile::load(path)); }
};

struct AuditorConfig {
  Endpoint listen;
  Credentials creds;
  std::vector<hashing::Digest> server_pins;  // both database servers, by index
  uint64_t deadline_ms = 30'000;

  static AuditorConfig from_kv(KvFile kv) {
    AuditorConfig c;
    c.listen = parse_endpoint(kv.get_str("listen"));
    c.creds = Credentials{kv.get_str("cert"), kv.get_str("key")};
    for (const auto& pin : kv.get_indexed("pin.server"))
      c.server_pins.push_back(detail::parse_pin(pin));
    c.deadline_ms = kv.get_u64_or("audit-deadline-ms", 30'000);
    kv.expect_no_leftovers();
    require(c.server_pins.size() == 2, Errc::invalid_argument,
            "auditor pins exactly the two database servers");
    return c;
  }
  static AuditorConfig load(const std::string& path) { return from_kv(KvFile::load(path)); }
};

struct ClientConfig {
  std::vector<Endpoint> servers;
  std::optional<Endpoint> auditor;  // present iff 2-server-audited, never dialed
  Endpoint epoch_endpoint;          // where EPOCH_REQ goes (normally server 0)
  std::vector<hashing::Digest> server_pins;
  EpochConfig epoch;  // policy fields unused by clients

  static ClientConfig from_kv(KvFile kv) {
    ClientConfig c;
    for (const auto& ep : kv.get_indexed("server")) c.servers.push_back(parse_endpoint(ep));
    for (const auto& pin : kv.get_indexed("pin.server"))
      c.server_pins.push_back(detail::parse_pin(pin));
    c.epoch = detail::epoch_from_kv(kv);
    if (auto ep = kv.try_get("auditor")) c.auditor = parse_endpoint(*ep);
    if (auto ep = kv.try_get("epoch-endpoint"))
      c.epoch_endpoint = parse_endpoint(*ep);
    else if (!c.servers.empty())
      c.epoch_endpoint = c.servers[0];
    kv.expect_no_leftovers();

    require(c.servers.size() >= 2, Errc::invalid_argument, "need at least two database servers");
    require(c.server_pins.size() == c.servers.size(), Errc::invalid_argument,
            "need one pin.server.N per server");
    bool audited = c.epoch.validation() == Validation::audit;
    require(audited == c.auditor.has_value(), Errc::invalid_argument,
            "auditor endpoint present iff variant is 2-server-audited");
    if (audited)
      require(c.servers.size() == 2, Errc::invalid_argument,
              "the audited variant runs exactly two database servers");
    return c;
  }
  static ClientConfig load(const std::string& path) { return from_kv(KvFile::load(path)); }
};

// Simulation spec: same epoch keys plus the client population. Epochs run
// back to back until every honest client has submitted once.
struct SimSpec {
  uint32_t n_clients = 0;
  uint32_t n_servers = 2;
  double malicious_fraction = 0.0;
  std::string mutation = "arbitrary";  // bitflip | index | payload | zero | arbitrary
  EpochConfig epoch;
  uint64_t seed = 0;  // set from the command line, not the file

  static SimSpec from_kv(KvFile kv) {
    SimSpec s;
    s.n_clients = static_cast<uint32_t>(kv.get_u64("clients"));
    if (kv.has("malicious-fraction")) s.malicious_fraction = kv.get_double("malicious-fraction");
    s.mutation = kv.get_str_or("mutation", "arbitrary");
    s.epoch = detail::epoch_from_kv(kv);
    s.n_servers = static_cast<uint32_t>(kv.get_u64_or("servers", 2));
    kv.expect_no_leftovers();
    require(s.malicious_fraction >= 0.0 && s.malicious_fraction <= 1.0, Errc::invalid_argument,
            "malicious-fraction wants [0, 1]");
    require(s.mutation == "bitflip" || s.mutation == "index" || s.mutation == "payload" ||
                s.mutation == "zero" || s.mutation == "arbitrary",
            Errc::invalid_argument, "unknown mutation strategy: " + s.mutation);
    if (dpf::is_group(s.epoch.variant))
      require(s.n_servers >= 2, Errc::invalid_argument, "need at least two servers");
    else
      require(s.n_servers == 2, Errc::invalid_argument,
              "two-server variants run exactly two servers");
    return s;
  }
  static SimSpec load(const std::string& path) { return from_kv(KvFile::load(path)); }
};

}  // namespace riposte::config
