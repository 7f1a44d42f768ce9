#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "riposte/audit.hpp"
#include "riposte/client.hpp"
#include "riposte/config.hpp"
#include "riposte/dpf.hpp"
#include "riposte/geometry.hpp"
#include "riposte/prg.hpp"
#include "riposte/rows.hpp"
#include "riposte/server.hpp"

// Throughput measurements for the write pipeline, anchored to the PRG rate.
// Every full evaluation streams the whole table once per server, so the PRG
// rate divided by the table size is the hard ceiling on accepted writes per
// second; the report states how close the real pipeline gets.
namespace riposte::bench {

struct BenchConfig {
  uint32_t rows = 1u << 16;
  uint32_t row_bytes = 64;
  double duration_s = 2.0;  // budget per measurement, three measurements total
  uint64_t seed = 1;
};

struct BenchReport {
  Geometry geom;
  uint64_t table_bytes = 0;
  double prg_bytes_per_s = 0;
  double eval_bytes_per_s = 0;
  double writes_per_s = 0;
  double ceiling_writes_per_s = 0;
  double ceiling_ratio = 0;  // ceiling / measured, 1.0 is the PRG bound itself
  uint64_t writes_measured = 0;
  double rtt_p50_ms = 0;
  double rtt_p90_ms = 0;
  double rtt_p99_ms = 0;

  std::string text() const {
    char buf[640];
    std::snprintf(buf, sizeof(buf),
                  "rows: %u\n"
                  "geometry: %ux%u\n"
                  "row_bytes: %u\n"
                  "table_bytes: %llu\n"
                  "prg_bytes_per_s: %.3e\n"
                  "eval_bytes_per_s: %.3e\n"
                  "ceiling_writes_per_s: %.1f\n"
                  "writes_per_s: %.1f\n"
                  "ceiling_ratio: %.2f\n"
                  "writes_measured: %llu\n"
                  "audit_rtt_p50_ms: %.3f\n"
                  "audit_rtt_p90_ms: %.3f\n"
                  "audit_rtt_p99_ms: %.3f\n",
                  geom.L, geom.x, geom.y, geom.row_bytes,
                  static_cast<unsigned long long>(table_bytes), prg_bytes_per_s, eval_bytes_per_s,
                  ceiling_writes_per_s, writes_per_s, ceiling_ratio,
                  static_cast<unsigned long long>(writes_measured), rtt_p50_ms, rtt_p90_ms,
                  rtt_p99_ms);
    return buf;
  }
};

namespace detail {

inline double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

inline double percentile(std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0;
  size_t at = static_cast<size_t>(q * static_cast<double>(sorted.size() - 1));
  return sorted[at];
}

}  // namespace detail

// Raw AES-CTR rate over a buffer comparable to one column strip.
inline double measure_prg(double budget_s) {
  std::vector<uint8_t> buf(1u << 20);
  prg::Seed seed{};
  seed[0] = 1;
  uint64_t n = 0;
  double start = detail::now_s();
  do {
    prg::expand_into(seed, buf);
    n++;
  } while (detail::now_s() - start < budget_s);
  return static_cast<double>(n) * static_cast<double>(buf.size()) / (detail::now_s() - start);
}

// Full-table evaluation rate in emitted table bytes per second.
inline double measure_eval(const Geometry& g, double budget_s, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<uint8_t> payload(g.row_bytes, 0xa5);
  auto [ka, kb] = dpf::dpf2_gen<rows::XorField>(g.L / 2, std::span<const uint8_t>(payload), g, rng);
  uint64_t n = 0;
  uint8_t sink = 0;
  double start = detail::now_s();
  do {
    auto table = dpf::dpf2_eval_full(ka);
    sink ^= table[n % table.size()];
    n++;
  } while (detail::now_s() - start < budget_s);
  double elapsed = detail::now_s() - start;
  if (sink == 0xff) std::fprintf(stderr, "%c", sink);  // keep the loop observable
  return static_cast<double>(n) * static_cast<double>(g.cells()) * g.row_bytes / elapsed;
}

// Accepted writes per second through the in-process audited pipeline: both
// server nodes plus the pairing auditor, full coin flip and both phases per
// write. Also collects per-write latency for the percentile lines.
inline void measure_pipeline(const config::EpochConfig& cfg, double budget_s, uint64_t seed,
                             BenchReport& rep) {
  server::AuditedNode a(cfg, 0, seed ^ 0xa5a5a5a5ull);
  server::AuditedNode b(cfg, 1, seed ^ 0x5a5a5a5aull);
  audit::Auditor auditor(30'000);
  std::mt19937_64 rng(seed);
  Bytes msg(cfg.msg_bytes, 0x42);

  std::vector<double> lat;
  uint64_t now = 0;
  double start = detail::now_s();
  do {
    uint32_t row = client::choose_row(rng, cfg.geom.L);
    auto sub = client::make_write_request(cfg, a.epoch_id(), 2, row, msg, rng);
    double t0 = detail::now_s();
    now++;
    auto w0 = wire::WriteShare::parse(sub.payloads[0]);
    auto w1 = wire::WriteShare::parse(sub.payloads[1]);
    server::WriteStatus s0 = a.begin_write(w0, now);
    server::WriteStatus s1 = b.begin_write(w1, now);
    require(s0.ok && s1.ok, Errc::protocol_violation, "honest write refused");
    const audit::Nonce& nonce = s0.nonce;
    a.on_peer_commitment(nonce, b.coinflip_commitment(nonce));
    b.on_peer_commitment(nonce, a.coinflip_commitment(nonce));
    require(a.on_peer_opening(nonce, b.opening(nonce)) &&
                b.on_peer_opening(nonce, a.opening(nonce)),
            Errc::protocol_violation, "coin flip refused");
    auto [t0v, u0v] = a.masked_vectors(nonce);
    auto [t1v, u1v] = b.masked_vectors(nonce);
    auditor.submit(nonce, audit::Phase::t, audit::Role::a, std::move(t0v), now);
    auto tout = auditor.submit(nonce, audit::Phase::t, audit::Role::b, std::move(t1v), now);
    auditor.submit(nonce, audit::Phase::u, audit::Role::a, std::move(u0v), now);
    auto uout = auditor.submit(nonce, audit::Phase::u, audit::Role::b, std::move(u1v), now);
    require(tout.size() == 1 && uout.size() == 1, Errc::protocol_violation, "auditor stalled");
    server::WriteStatus f0 = a.finish(nonce, tout[0].verdict, uout[0].verdict);
    server::WriteStatus f1 = b.finish(nonce, tout[0].verdict, uout[0].verdict);
    require(f0.ok && f1.ok, Errc::protocol_violation, "honest write rejected");
    lat.push_back((detail::now_s() - t0) * 1e3);
  } while (detail::now_s() - start < budget_s);
  double elapsed = detail::now_s() - start;

  rep.writes_measured = lat.size();
  rep.writes_per_s = static_cast<double>(lat.size()) / elapsed;
  std::sort(lat.begin(), lat.end());
  rep.rtt_p50_ms = detail::percentile(lat, 0.50);
  rep.rtt_p90_ms = detail::percentile(lat, 0.90);
  rep.rtt_p99_ms = detail::percentile(lat, 0.99);
}

inline BenchReport run_bench(const BenchConfig& bc) {
  require(bc.rows >= 2 && bc.row_bytes >= 2, Errc::invalid_argument, "bench wants a real table");
  config::EpochConfig cfg;
  cfg.variant = dpf::Variant::two_xor;
  cfg.msg_bytes = bc.row_bytes - 1;
  cfg.geom = optimize_geometry(bc.rows, config::detail::key_alpha(cfg.variant), 8 * bc.row_bytes,
                               bc.row_bytes);
  cfg.threshold = ~uint64_t{0};  // the bench closes nothing
  cfg.duration_ms = 0;

  BenchReport rep;
  rep.geom = cfg.geom;
  rep.table_bytes = cfg.geom.cells() * cfg.geom.row_bytes;
  rep.prg_bytes_per_s = measure_prg(bc.duration_s);
  rep.eval_bytes_per_s = measure_eval(cfg.geom, bc.duration_s, bc.seed);
  measure_pipeline(cfg, bc.duration_s, bc.seed, rep);
  rep.ceiling_writes_per_s = rep.prg_bytes_per_s / static_cast<double>(rep.table_bytes);
  rep.ceiling_ratio = rep.ceiling_writes_per_s / rep.writes_per_s;
  return rep;
}

}  // namespace riposte::bench
