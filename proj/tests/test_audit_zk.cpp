#include <catch2/catch_amalgamated.hpp>
#include <algorithm>
#include <random>

#include "riposte/audit.hpp"
#include "riposte/group_p256.hpp"
#include "riposte/group_schnorr.hpp"
#include "riposte/zk.hpp"

using namespace riposte;
using group::P256Group;
using group::SchnorrGroup;

namespace {

std::mt19937_64 seeded(uint64_t s) { return std::mt19937_64(s); }

audit::Contribution random_contribution(std::mt19937_64& rng) {
  audit::Contribution c;
  for (auto& b : c) b = static_cast<uint8_t>(rng());
  return c;
}

audit::Nonce random_nonce(std::mt19937_64& rng) {
  audit::Nonce n;
  for (auto& b : n) b = static_cast<uint8_t>(rng());
  return n;
}

audit::CoinFlip random_coinflip(std::mt19937_64& rng) {
  return audit::finish_coinflip(random_contribution(rng), random_contribution(rng),
                                random_nonce(rng));
}

Bytes random_payload(size_t n, std::mt19937_64& rng) {
  Bytes b(n);
  for (auto& c : b) c = static_cast<uint8_t>(rng());
  if (all_zero(b)) b[0] = 1;
  return b;
}

std::pair<audit::Key, audit::Key> honest_pair(const Geometry& g, uint32_t l,
                                              std::mt19937_64& rng) {
  Bytes m = random_payload(g.row_bytes, rng);
  return dpf::dpf2_gen<rows::XorField>(l, m, g, rng);
}

double chi_square(std::span<const size_t> counts, double expected) {
  double stat = 0;
  for (size_t c : counts) {
    double d = static_cast<double>(c) - expected;
    stat += d * d / expected;
  }
  return stat;
}

size_t count_tag_diffs(const audit::MaskedVector& a, const audit::MaskedVector& b) {
  return audit::count_diffs(a.tags, b.tags);
}

}  // namespace

// -------------------------------------------------------------- audit

TEST_CASE("audit nonces are deterministic and bind every input") {
  auto rng = seeded(101);
  hashing::Digest ha = hashing::sha256(random_payload(40, rng));
  hashing::Digest hb = hashing::sha256(random_payload(40, rng));
  Bytes epoch = to_bytes("epoch-1");

  auto n1 = audit::derive_nonce(epoch, ha, hb);
  auto n2 = audit::derive_nonce(epoch, ha, hb);
  CHECK(n1 == n2);

  CHECK(audit::derive_nonce(to_bytes("epoch-2"), ha, hb) != n1);
  CHECK(audit::derive_nonce(epoch, hb, ha) != n1);
  hashing::Digest ha2 = ha;
  ha2[0] ^= 1;
  CHECK(audit::derive_nonce(epoch, ha2, hb) != n1);
}

TEST_CASE("coin flip commit-reveal detects tampered openings") {
  auto rng = seeded(102);
  auto ca = random_contribution(rng);
  auto cb = random_contribution(rng);
  auto nonce = random_nonce(rng);

  auto commit_a = audit::commit_contribution(ca);
  CHECK(audit::opening_matches(commit_a, ca));
  auto tampered = ca;
  tampered[7] ^= 0x10;
  CHECK_FALSE(audit::opening_matches(commit_a, tampered));

  // both sides derive the same kappa from the same transcript
  auto cf1 = audit::finish_coinflip(ca, cb, nonce);
  auto cf2 = audit::finish_coinflip(ca, cb, nonce);
  CHECK(cf1.kappa == cf2.kappa);
  auto other = audit::finish_coinflip(ca, cb, random_nonce(rng));
  CHECK(other.kappa != cf1.kappa);

  // phases draw independent shifts from one kappa
  size_t equal = 0, trials = 512;
  for (size_t i = 0; i < trials; i++) {
    auto cf = random_coinflip(rng);
    equal += audit::phase_shift(cf, audit::Phase::t, 256) ==
             audit::phase_shift(cf, audit::Phase::u, 256);
  }
  CHECK(equal < trials / 10);
}

TEST_CASE("derived shifts are uniform") {
  auto rng = seeded(103);
  constexpr size_t kBuckets = 16, kTrials = 10'000;
  std::array<size_t, kBuckets> t_counts{}, u_counts{};
  for (size_t i = 0; i < kTrials; i++) {
    auto cf = random_coinflip(rng);
    t_counts[audit::phase_shift(cf, audit::Phase::t, kBuckets)]++;
    u_counts[audit::phase_shift(cf, audit::Phase::u, kBuckets)]++;
  }
  // chi-square, 15 degrees of freedom: 37.70 is the p = 0.001 quantile
  CHECK(chi_square(t_counts, double(kTrials) / kBuckets) < 37.70);
  CHECK(chi_square(u_counts, double(kTrials) / kBuckets) < 37.70);
}

TEST_CASE("t vectors differ exactly at the target column") {
  auto rng = seeded(104);
  Geometry g{30, 6, 5, 4};
  for (uint32_t l : {0u, 7u, 29u}) {
    auto [ka, kb] = honest_pair(g, l, rng);
    auto ta = audit::build_t_vector(ka);
    auto tb = audit::build_t_vector(kb);
    REQUIRE(ta.size() == g.x);
    size_t diffs = 0, at = 0;
    for (size_t i = 0; i < ta.size(); i++)
      if (ta[i] != tb[i]) diffs++, at = i;
    CHECK(diffs == 1);
    CHECK(at == g.col_of(l));

    // equal keys agree everywhere; a corrupted off-target seed adds a second
    auto tc = audit::build_t_vector(ka);
    CHECK(std::equal(ta.begin(), ta.end(), tc.begin()));
    auto kc = kb;
    uint32_t j = (g.col_of(l) + 1) % g.x;
    kc.seeds[j][3] ^= 0x40;
    auto td = audit::build_t_vector(kc);
    size_t diffs2 = 0;
    for (size_t i = 0; i < ta.size(); i++) diffs2 += ta[i] != td[i];
    CHECK(diffs2 == 2);
  }
}

TEST_CASE("u vectors differ exactly at the target row") {
  auto rng = seeded(105);
  Geometry g{30, 6, 5, 4};
  uint32_t l = 13;
  auto [ka, kb] = honest_pair(g, l, rng);
  auto ua = audit::build_u_vector(ka, audit::Role::a);
  auto ub = audit::build_u_vector(kb, audit::Role::b);
  REQUIRE(ua.size() == g.y);
  size_t diffs = 0, at = 0;
  for (size_t i = 0; i < ua.size(); i++)
    if (ua[i] != ub[i]) diffs++, at = i;
  CHECK(diffs == 1);
  CHECK(at == g.row_of(l));

  // corrupting one off-target coordinate of v doubles the difference count
  auto kc = kb;
  uint32_t j = (g.row_of(l) + 2) % g.y;
  kc.v[static_cast<size_t>(j) * g.row_bytes] ^= 1;
  auto uc = audit::build_u_vector(kc, audit::Role::b);
  size_t diffs2 = 0;
  for (size_t i = 0; i < ua.size(); i++) diffs2 += ua[i] != uc[i];
  CHECK(diffs2 == 2);
}

TEST_CASE("a zero message cancels the u-phase difference and is rejected") {
  auto rng = seeded(106);
  Geometry g{30, 6, 5, 4};
  uint32_t l = 17;
  Bytes m = random_payload(g.row_bytes, rng);
  auto [ka, kb] = dpf::dpf2_gen<rows::XorField>(l, m, g, rng);
  // cancel m inside the shared strip: the pair now encodes the zero message
  for (uint32_t i = 0; i < g.row_bytes; i++) {
    ka.v[static_cast<size_t>(g.row_of(l)) * g.row_bytes + i] ^= m[i];
    kb.v[static_cast<size_t>(g.row_of(l)) * g.row_bytes + i] ^= m[i];
  }
  auto ua = audit::build_u_vector(ka, audit::Role::a);
  auto ub = audit::build_u_vector(kb, audit::Role::b);
  size_t diffs = 0;
  for (size_t i = 0; i < ua.size(); i++) diffs += ua[i] != ub[i];
  CHECK(diffs == 0);
  CHECK(audit::run_audit(ka, kb, random_coinflip(rng)) == audit::Verdict::reject);
}

TEST_CASE("masking rotates differences by the derived shift") {
  auto rng = seeded(107);
  constexpr size_t kLen = 11;
  std::vector<Bytes> entries;
  for (size_t i = 0; i < kLen; i++) entries.push_back(random_payload(9, rng));

  auto cf = random_coinflip(rng);
  auto m1 = audit::mask_phase_u(cf, entries);
  auto m2 = audit::mask_phase_u(cf, entries);
  CHECK(m1.tags == m2.tags);

  size_t j = 6;
  auto tweaked = entries;
  tweaked[j][0] ^= 0xff;
  auto m3 = audit::mask_phase_u(cf, tweaked);
  uint64_t f = audit::phase_shift(cf, audit::Phase::u, kLen);
  for (size_t i = 0; i < kLen; i++) {
    bool expect_diff = i == (j + kLen - f) % kLen;
    CHECK((m1.tags[i] != m3.tags[i]) == expect_diff);
  }
}

TEST_CASE("t-phase parity tags expose equalized bit vectors") {
  auto rng = seeded(108);
  Geometry g{30, 6, 5, 4};
  uint32_t l = 8;
  auto [ka, kb] = honest_pair(g, l, rng);
  auto cf = random_coinflip(rng);

  auto ta = audit::mask_phase_t(cf, audit::build_t_vector(ka), audit::Role::a, audit::b_parity(ka),
                                hashing::sha256(ka.v));
  auto tb = audit::mask_phase_t(cf, audit::build_t_vector(kb), audit::Role::b, audit::b_parity(kb),
                                hashing::sha256(kb.v));
  REQUIRE(ta.tags.size() == g.x + 2);
  // honest bit vectors differ in exactly one position, so the complemented
  // parity on role A lines the appended tags up
  CHECK(ta.tags[g.x] == tb.tags[g.x]);
  CHECK(ta.tags[g.x + 1] == tb.tags[g.x + 1]);
  CHECK(audit::decide(audit::Phase::t, ta, tb) == audit::Verdict::accept);

  // flipping the target bit makes b equal on both sides: the per-column tags
  // still differ only at the seed column, but the parity tag now differs
  auto kc = ka;
  kc.b[g.col_of(l)] ^= 1;
  auto tc = audit::mask_phase_t(cf, audit::build_t_vector(kc), audit::Role::a, audit::b_parity(kc),
                                hashing::sha256(kc.v));
  CHECK(audit::count_diffs(std::span(tc.tags).first(g.x), std::span(tb.tags).first(g.x)) == 1);
  CHECK(tc.tags[g.x] != tb.tags[g.x]);
  CHECK(audit::decide(audit::Phase::t, tc, tb) == audit::Verdict::reject);
}

TEST_CASE("the audit decision is exactly-one-difference") {
  auto rng = seeded(109);
  constexpr size_t kLen = 7;
  std::vector<Bytes> base;
  for (size_t i = 0; i < kLen; i++) base.push_back(random_payload(5, rng));
  auto cf = random_coinflip(rng);
  auto mb = audit::mask_phase_u(cf, base);

  auto one = base;
  one[2][0] ^= 1;
  CHECK(audit::decide(audit::Phase::u, audit::mask_phase_u(cf, one), mb) ==
        audit::Verdict::accept);
  CHECK(audit::decide(audit::Phase::u, mb, mb) == audit::Verdict::reject);
  auto two = one;
  two[5][1] ^= 1;
  CHECK(audit::decide(audit::Phase::u, audit::mask_phase_u(cf, two), mb) ==
        audit::Verdict::reject);

  auto short_mv = mb;
  short_mv.tags.pop_back();
  CHECK(audit::decide(audit::Phase::u, short_mv, mb) == audit::Verdict::reject);
  audit::MaskedVector empty;
  CHECK(audit::decide(audit::Phase::u, empty, empty) == audit::Verdict::reject);
}

TEST_CASE("audits accept every honest request") {
  auto rng = seeded(110);
  const Geometry geoms[] = {{30, 6, 5, 4}, {28, 6, 5, 1}};  // second one pads rows past L
  constexpr size_t kTrials = 10'000;
  size_t accepted = 0;
  for (size_t i = 0; i < kTrials; i++) {
    const Geometry& g = geoms[i % 2];
    uint32_t l = static_cast<uint32_t>(rng() % g.L);
    auto [ka, kb] = honest_pair(g, l, rng);
    accepted += audit::run_audit(ka, kb, random_coinflip(rng)) == audit::Verdict::accept;
  }
  CHECK(accepted == kTrials);
}

TEST_CASE("audits reject every single-bit corruption of a key") {
  auto rng = seeded(111);
  Geometry g{30, 6, 5, 4};
  constexpr size_t kTrials = 100'000;
  size_t accepted = 0, parse_rejected = 0;
  uint32_t l = static_cast<uint32_t>(rng() % g.L);
  auto [ka, kb] = honest_pair(g, l, rng);
  Bytes sa = dpf::dpf2_serialize(ka);
  Bytes sb = dpf::dpf2_serialize(kb);
  for (size_t i = 0; i < kTrials; i++) {
    if (i % 1024 == 0) {  // fresh pair now and then so l and payload vary
      l = static_cast<uint32_t>(rng() % g.L);
      std::tie(ka, kb) = honest_pair(g, l, rng);
      sa = dpf::dpf2_serialize(ka);
      sb = dpf::dpf2_serialize(kb);
    }
    bool mutate_a = rng() & 1;
    Bytes mutated = mutate_a ? sa : sb;
    size_t bit = rng() % (mutated.size() * 8);
    mutated[bit / 8] ^= static_cast<uint8_t>(1u << (bit % 8));
    audit::Key parsed;
    try {
      parsed = dpf::dpf2_parse<rows::XorField>(mutated);
    } catch (const Error&) {
      parse_rejected++;
      continue;
    }
    parsed.geom.L = g.L;
    auto verdict = mutate_a ? audit::run_audit(parsed, kb, random_coinflip(rng))
                            : audit::run_audit(ka, parsed, random_coinflip(rng));
    accepted += verdict == audit::Verdict::accept;
  }
  CHECK(accepted == 0);
  // most flips land in key material rather than the header, so the bulk must
  // reach the audit itself
  CHECK(parse_rejected < kTrials / 4);
}

// A request whose two copies of the shared strip disagree audits cleanly in
// both difference phases, because only role B's u vector folds v in; applied,
// it would smear the disagreement across every column where both b bits are
// set. The appended strip tag is what rejects it.
TEST_CASE("audits reject requests whose strip copies disagree") {
  auto rng = seeded(117);
  Geometry g{30, 6, 5, 4};
  uint32_t l = 12;
  auto [ka, kb] = honest_pair(g, l, rng);
  auto kc = ka;
  kc.v[3] ^= 0x80;  // role A will apply a different strip than role B audits

  auto cf = random_coinflip(rng);
  auto ua = audit::mask_phase_u(cf, audit::build_u_vector(kc, audit::Role::a));
  auto ub = audit::mask_phase_u(cf, audit::build_u_vector(kb, audit::Role::b));
  CHECK(audit::decide(audit::Phase::u, ua, ub) == audit::Verdict::accept);  // u alone is blind
  CHECK(audit::run_audit(kc, kb, cf) == audit::Verdict::reject);
}

TEST_CASE("audits reject keys aimed at different targets") {
  auto rng = seeded(112);
  Geometry g{30, 6, 5, 4};
  auto [ka, kb] = honest_pair(g, 4, rng);
  auto [kc, kd] = honest_pair(g, 21, rng);
  CHECK(audit::run_audit(ka, kd, random_coinflip(rng)) == audit::Verdict::reject);
  CHECK(audit::run_audit(kc, kb, random_coinflip(rng)) == audit::Verdict::reject);
  // geometry mismatch is rejected before any masking
  auto [ke, kf] = honest_pair(Geometry{24, 4, 6, 4}, 3, rng);
  CHECK(audit::run_audit(ka, kf, random_coinflip(rng)) == audit::Verdict::reject);
}

TEST_CASE("the rotated difference position leaks nothing about the target") {
  auto rng = seeded(113);
  Geometry g{32, 4, 8, 2};
  uint32_t l = 11;  // fixed target; the observed position must still be uniform
  auto [ka, kb] = honest_pair(g, l, rng);
  auto ua = audit::build_u_vector(ka, audit::Role::a);
  auto ub = audit::build_u_vector(kb, audit::Role::b);

  constexpr size_t kTrials = 4096;
  std::array<size_t, 8> counts{};
  for (size_t i = 0; i < kTrials; i++) {
    auto cf = random_coinflip(rng);
    auto ma = audit::mask_phase_u(cf, ua);
    auto mb = audit::mask_phase_u(cf, ub);
    for (size_t j = 0; j < ma.tags.size(); j++)
      if (ma.tags[j] != mb.tags[j]) counts[j]++;
  }
  // chi-square, 7 degrees of freedom: 24.32 is the p = 0.001 quantile
  CHECK(chi_square(counts, double(kTrials) / 8) < 24.32);
}

TEST_CASE("masked vectors survive the wire and reject malformed counts") {
  auto rng = seeded(114);
  audit::MaskedVector mv;
  for (int i = 0; i < 9; i++) {
    hashing::Tag t;
    for (auto& b : t) b = static_cast<uint8_t>(rng());
    mv.tags.push_back(t);
  }
  Bytes wire = audit::serialize_masked(mv);
  ByteReader r(wire);
  auto back = audit::parse_masked(r);
  r.expect_done();
  CHECK(back.tags == mv.tags);

  Bytes zero_count = audit::serialize_masked(mv);
  zero_count[0] = zero_count[1] = zero_count[2] = zero_count[3] = 0;
  ByteReader zr(zero_count);
  CHECK_THROWS_AS(audit::parse_masked(zr), Error);

  Bytes truncated(wire.begin(), wire.end() - 5);
  ByteReader tr(truncated);
  CHECK_THROWS_AS(audit::parse_masked(tr), Error);
}

TEST_CASE("the auditor pairs halves by nonce in any order") {
  auto rng = seeded(115);
  Geometry g{30, 6, 5, 4};
  auto [ka, kb] = honest_pair(g, 9, rng);
  auto cf = random_coinflip(rng);
  auto nonce = random_nonce(rng);

  auto ta = audit::mask_phase_t(cf, audit::build_t_vector(ka), audit::Role::a, audit::b_parity(ka),
                                hashing::sha256(ka.v));
  auto tb = audit::mask_phase_t(cf, audit::build_t_vector(kb), audit::Role::b, audit::b_parity(kb),
                                hashing::sha256(kb.v));
  auto ua = audit::mask_phase_u(cf, audit::build_u_vector(ka, audit::Role::a));
  auto ub = audit::mask_phase_u(cf, audit::build_u_vector(kb, audit::Role::b));

  audit::Auditor auditor(1000);
  // u-phase halves may arrive before the t-phase ones
  CHECK(auditor.submit(nonce, audit::Phase::u, audit::Role::b, ub, 10).empty());
  CHECK(auditor.submit(nonce, audit::Phase::t, audit::Role::a, ta, 11).empty());
  auto r1 = auditor.submit(nonce, audit::Phase::u, audit::Role::a, ua, 12);
  REQUIRE(r1.size() == 1);
  CHECK(r1[0].verdict == audit::Verdict::accept);
  CHECK(r1[0].phase == audit::Phase::u);
  CHECK(auditor.pending_count() == 1);
  auto r2 = auditor.submit(nonce, audit::Phase::t, audit::Role::b, tb, 13);
  REQUIRE(r2.size() == 1);
  CHECK(r2[0].verdict == audit::Verdict::accept);
  CHECK(auditor.pending_count() == 0);  // both phases decided, entry dropped
}

TEST_CASE("the auditor rejects duplicates and expires stale audits") {
  auto rng = seeded(116);
  Geometry g{30, 6, 5, 4};
  auto [ka, kb] = honest_pair(g, 3, rng);
  auto cf = random_coinflip(rng);
  auto ta = audit::mask_phase_t(cf, audit::build_t_vector(ka), audit::Role::a, audit::b_parity(ka),
                                hashing::sha256(ka.v));

  audit::Auditor auditor(100);
  auto n1 = random_nonce(rng);
  CHECK(auditor.submit(n1, audit::Phase::t, audit::Role::a, ta, 0).empty());
  auto dup = auditor.submit(n1, audit::Phase::t, audit::Role::a, ta, 1);
  REQUIRE(dup.size() == 1);
  CHECK(dup[0].verdict == audit::Verdict::reject);

  auto n2 = random_nonce(rng);
  CHECK(auditor.submit(n2, audit::Phase::u, audit::Role::a,
                       audit::mask_phase_u(cf, audit::build_u_vector(ka, audit::Role::a)), 50)
            .empty());
  CHECK(auditor.expire(99).empty());  // neither entry due yet
  // n1 (deadline 100) owes only its u phase; the duplicate closed its t phase
  auto exp1 = auditor.expire(120);
  REQUIRE(exp1.size() == 1);
  CHECK(exp1[0].verdict == audit::Verdict::reject);
  CHECK(auditor.pending_count() == 1);
  // n2 (deadline 150) owes both phases
  auto exp2 = auditor.expire(151);
  CHECK(exp2.size() == 2);
  for (const auto& o : exp2) CHECK(o.verdict == audit::Verdict::reject);
  CHECK(auditor.pending_count() == 0);
}

// ----------------------------------------------------------------- zk

namespace {

template <class G>
pedersen::Params<G> params_for(const G& g, size_t y) {
  return pedersen::Params<G>::derive(g, y);
}

template <class G>
typename G::Element random_message(const G& g, const pedersen::Params<G>& pp,
                                   std::mt19937_64& rng) {
  auto s = g.random_scalar(rng);
  while (s == g.scalar_zero()) s = g.random_scalar(rng);
  return g.mul(s, pp.P);
}

}  // namespace

TEST_CASE("write proofs verify at every server across the whole table") {
  SchnorrGroup g;
  auto pp = params_for(g, 4);
  Geometry geom{16, 4, 4, 0};
  Bytes epoch = to_bytes("epoch-zk-1");
  auto rng = seeded(201);

  constexpr size_t kTrials = 1000;
  size_t accepted = 0, checked = 0;
  for (size_t i = 0; i < kTrials; i++) {
    uint32_t l = static_cast<uint32_t>(i % geom.L);  // covers both boundaries
    uint32_t servers = 2 + static_cast<uint32_t>(i % 2);
    std::vector<SchnorrGroup::Element> msg{random_message(g, pp, rng)};
    auto keys = dpf::dpfs_gen(g, pp, l, msg, geom, servers, rng);
    auto proof = zk::prove_write_valid(g, pp, epoch, keys, l, msg[0], rng);
    // every server the first few rounds, then one rotating server
    uint32_t lo = i < 100 ? 0 : static_cast<uint32_t>(i % servers);
    uint32_t hi = i < 100 ? servers : lo + 1;
    for (uint32_t s = lo; s < hi; s++) {
      auto res = zk::verify_write_share(g, pp, epoch, s, keys[s], proof.bundle,
                                        proof.openings[s]);
      accepted += res.accepted;
      checked++;
    }
  }
  CHECK(accepted == checked);
}

TEST_CASE("write proofs verify over the production curve") {
  P256Group g;
  auto pp = params_for(g, 3);
  Geometry geom{9, 3, 3, 0};
  Bytes epoch = to_bytes("epoch-zk-p256");
  auto rng = seeded(202);

  for (uint32_t l : {0u, 4u, 8u}) {
    std::vector<P256Group::Element> msg{random_message(g, pp, rng)};
    auto keys = dpf::dpfs_gen(g, pp, l, msg, geom, 2, rng);
    auto proof = zk::prove_write_valid(g, pp, epoch, keys, l, msg[0], rng);
    for (uint32_t s = 0; s < 2; s++) {
      auto res =
          zk::verify_write_share(g, pp, epoch, s, keys[s], proof.bundle, proof.openings[s]);
      CHECK(res.accepted);
    }
  }
}

TEST_CASE("proof transcripts are randomized per run") {
  SchnorrGroup g;
  auto pp = params_for(g, 2);
  Geometry geom{4, 2, 2, 0};
  Bytes epoch = to_bytes("epoch-zk-2");
  auto rng = seeded(203);
  std::vector<SchnorrGroup::Element> msg{random_message(g, pp, rng)};
  auto keys = dpf::dpfs_gen(g, pp, 1, msg, geom, 2, rng);
  auto p1 = zk::prove_write_valid(g, pp, epoch, keys, 1, msg[0], rng);
  auto p2 = zk::prove_write_valid(g, pp, epoch, keys, 1, msg[0], rng);
  CHECK(zk::serialize_bundle(g, p1.bundle) != zk::serialize_bundle(g, p2.bundle));
}

TEST_CASE("mutated proof bytes are never accepted") {
  SchnorrGroup g;
  auto pp = params_for(g, 2);
  Geometry geom{4, 2, 2, 0};
  Bytes epoch = to_bytes("epoch-zk-3");
  auto rng = seeded(204);

  std::vector<SchnorrGroup::Element> msg{random_message(g, pp, rng)};
  auto keys = dpf::dpfs_gen(g, pp, 2, msg, geom, 2, rng);
  auto proof = zk::prove_write_valid(g, pp, epoch, keys, 2, msg[0], rng);
  Bytes bundle_bytes = zk::serialize_bundle(g, proof.bundle);
  Bytes opening_bytes = zk::serialize_opening(g, proof.openings[0]);

  constexpr size_t kTrials = 10'000;
  size_t accepted = 0, reached_verify = 0;
  for (size_t i = 0; i < kTrials; i++) {
    bool hit_opening = rng() % 10 == 0;
    Bytes target = hit_opening ? opening_bytes : bundle_bytes;
    size_t flips = 1 + rng() % 3;
    for (size_t f = 0; f < flips; f++) {
      size_t bit = rng() % (target.size() * 8);
      target[bit / 8] ^= static_cast<uint8_t>(1u << (bit % 8));
    }
    try {
      auto bundle = hit_opening ? proof.bundle : zk::parse_bundle(g, target);
      auto opening = hit_opening ? zk::parse_opening(g, target) : proof.openings[0];
      reached_verify++;
      auto res = zk::verify_write_share(g, pp, epoch, 0, keys[0], bundle, opening);
      accepted += res.accepted;
    } catch (const Error&) {
      // malformed bytes rejected at parse; that counts as a rejection
    }
  }
  CHECK(accepted == 0);
  CHECK(reached_verify > kTrials / 20);  // the fuzz must exercise verification itself
}

TEST_CASE("verification failures carry the failing check") {
  SchnorrGroup g;
  auto pp = params_for(g, 4);
  Geometry geom{16, 4, 4, 0};
  Bytes epoch = to_bytes("epoch-zk-4");
  auto rng = seeded(205);

  std::vector<SchnorrGroup::Element> msg{random_message(g, pp, rng)};
  uint32_t l = 6;
  auto keys = dpf::dpfs_gen(g, pp, l, msg, geom, 3, rng);
  auto proof = zk::prove_write_valid(g, pp, epoch, keys, l, msg[0], rng);
  auto ok = zk::verify_write_share(g, pp, epoch, 1, keys[1], proof.bundle, proof.openings[1]);
  REQUIRE(ok.accepted);
  CHECK(ok.reason == zk::Reason::ok);

  auto one = g.scalar_from_u64(1);

  // opening for the wrong server
  auto r = zk::verify_write_share(g, pp, epoch, 1, keys[1], proof.bundle, proof.openings[2]);
  CHECK_FALSE(r.accepted);
  CHECK(r.reason == zk::Reason::opening_mismatch);

  // server index outside the bundle
  r = zk::verify_write_share(g, pp, epoch, 5, keys[1], proof.bundle, proof.openings[1]);
  CHECK(r.reason == zk::Reason::shape);

  // key with a different geometry
  {
    auto other = dpf::dpfs_gen(g, pp, 1, msg, Geometry{8, 4, 2, 0}, 3, rng);
    r = zk::verify_write_share(g, pp, epoch, 1, other[1], proof.bundle, proof.openings[1]);
    CHECK(r.reason == zk::Reason::shape);
  }

  // each sub-proof reports under its own name
  auto tamper = [&](auto mutate, zk::Reason expect) {
    auto b = proof.bundle;
    mutate(b);
    auto res = zk::verify_write_share(g, pp, epoch, 1, keys[1], b, proof.openings[1]);
    CHECK_FALSE(res.accepted);
    CHECK(res.reason == expect);
  };
  tamper([&](auto& b) { b.bits[2].z0 = g.scalar_add(b.bits[2].z0, one); }, zk::Reason::bit_proof);
  tamper([&](auto& b) { b.sum_to_one.z = g.scalar_add(b.sum_to_one.z, one); },
         zk::Reason::sum_proof);
  tamper([&](auto& b) { b.links[0].z1 = g.scalar_add(b.links[0].z1, one); },
         zk::Reason::link_proof);
  tamper([&](auto& b) { b.rows[3].z0g = g.scalar_add(b.rows[3].z0g, one); },
         zk::Reason::row_proof);
  tamper([&](auto& b) { b.vbind[1].z0s = g.scalar_add(b.vbind[1].z0s, one); },
         zk::Reason::vbind_proof);
  tamper([&](auto& b) { b.row_sum_to_one.z = g.scalar_add(b.row_sum_to_one.z, one); },
         zk::Reason::rowsum_proof);

  // a server whose v was corrupted sees the row proofs fail
  {
    auto bad_key = keys[1];
    bad_key.v[2] = g.add(bad_key.v[2], pp.P);
    r = zk::verify_write_share(g, pp, epoch, 1, bad_key, proof.bundle, proof.openings[1]);
    CHECK_FALSE(r.accepted);
    CHECK(r.reason == zk::Reason::row_proof);
  }

  // proofs are bound to the epoch
  r = zk::verify_write_share(g, pp, to_bytes("epoch-other"), 1, keys[1], proof.bundle,
                             proof.openings[1]);
  CHECK_FALSE(r.accepted);
}

// A cheating client plants a Q-multiple on an off-message row of the shared
// strip and adjusts the row-proof witnesses to absorb it. Every sub-proof of
// the plain row decomposition still verifies, which is exactly why v needs
// its own binding proof; only that proof can fail, and it must.
TEST_CASE("proofs bind v itself, not just its commitment coset") {
  SchnorrGroup g;
  auto pp = params_for(g, 2);
  Geometry geom{4, 2, 2, 0};
  Bytes epoch = to_bytes("epoch-zk-5");
  auto rng = seeded(206);
  using El = SchnorrGroup::Element;
  using Sc = SchnorrGroup::Scalar;

  uint32_t l = 2, x = 2, y = 2, lx = 1, ly = 0, s_count = 2;
  std::vector<El> msg{random_message(g, pp, rng)};
  auto keys = dpf::dpfs_gen(g, pp, l, msg, geom, s_count, rng);
  // the cheat: row 1 of the strip picks up Q, landing garbage at column lx
  for (auto& k : keys) k.v[1] = g.add(k.v[1], pp.Q);

  zk::Bundle<SchnorrGroup> bundle;
  bundle.x = x;
  bundle.y = y;
  bundle.servers = s_count;
  std::vector<zk::Opening<SchnorrGroup>> openings(s_count);
  for (uint32_t i = 0; i < s_count; i++) {
    auto& op = openings[i];
    std::vector<El> bc(x), sc(x), gc(y);
    op.rb.resize(x);
    op.rs.resize(x);
    op.rg.resize(y);
    Sc sigma = g.scalar_zero();
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
  std::vector<Sc> rd(y);
  for (uint32_t j = 0; j < y; j++) {
    rd[j] = g.random_scalar(rng);
    bundle.d_com.push_back(pedersen::commit(g, pp, g.scalar_from_u64(j == ly ? 1 : 0), rd[j]));
  }
  auto r_mu = g.random_scalar(rng);
  bundle.mu = g.add(msg[0], g.mul(r_mu, pp.Q));

  auto stmt = zk::detail::statement_digest(g, epoch, bundle);

  std::vector<Sc> rB(x, g.scalar_zero()), rS(x, g.scalar_zero()), rG(y, g.scalar_zero());
  Sc sstar = g.scalar_zero();
  for (uint32_t i = 0; i < s_count; i++)
    for (uint32_t j = 0; j < x; j++) {
      rB[j] = g.scalar_add(rB[j], openings[i].rb[j]);
      rS[j] = g.scalar_add(rS[j], openings[i].rs[j]);
      sstar = g.scalar_add(sstar, keys[i].s[j]);
    }
  for (uint32_t i = 0; i < s_count; i++)
    for (uint32_t j = 0; j < y; j++) rG[j] = g.scalar_add(rG[j], openings[i].rg[j]);

  std::vector<El> b_sum(x, g.identity()), s_sum(x, g.identity()), g_sum(y, g.identity());
  for (uint32_t i = 0; i < s_count; i++)
    for (uint32_t j = 0; j < x; j++) {
      b_sum[j] = g.add(b_sum[j], bundle.b_com[i][j]);
      s_sum[j] = g.add(s_sum[j], bundle.s_com[i][j]);
    }
  for (uint32_t i = 0; i < s_count; i++)
    for (uint32_t j = 0; j < y; j++) g_sum[j] = g.add(g_sum[j], bundle.g_com[i][j]);
  for (uint32_t j = 0; j < y; j++) g_sum[j] = g.add(g_sum[j], keys[0].v[j]);

  auto one = g.scalar_from_u64(1);
  for (uint32_t j = 0; j < x; j++) {
    int real = j == lx ? 1 : 0;
    bundle.bits.push_back(zk::detail::or2_prove(g, pp, stmt, "riposte/zk/bit", j, b_sum[j],
                                                g.sub(b_sum[j], pp.P), real, rB[j], rng));
    bundle.links.push_back(zk::detail::or2_prove(g, pp, stmt, "riposte/zk/link", j, s_sum[j],
                                                 g.sub(b_sum[j], pp.P), real,
                                                 j == lx ? rB[j] : rS[j], rng));
  }
  {
    El sum = g.identity();
    Sc w = g.scalar_zero();
    for (uint32_t j = 0; j < x; j++) {
      sum = g.add(sum, b_sum[j]);
      w = g.scalar_add(w, rB[j]);
    }
    bundle.sum_to_one =
        zk::detail::schnorr_prove(g, pp, stmt, "riposte/zk/sum1", g.sub(sum, pp.P), w, rng);
  }
  // the doctored row witnesses: row 1 absorbs the planted Q into rG[1] + 1
  for (uint32_t j = 0; j < y; j++) {
    int real = j == ly ? 1 : 0;
    Sc wg = j == ly ? g.scalar_sub(rG[j], r_mu) : g.scalar_add(rG[j], one);
    bundle.rows.push_back(zk::detail::row_prove(g, pp, stmt, j, bundle.d_com[j], g_sum[j],
                                                bundle.mu, real, rd[j], wg, rng));
  }
  {
    El s2 = g.identity();
    Sc r2 = g.scalar_zero();
    for (uint32_t j = 0; j < x; j++) {
      s2 = g.add(s2, s_sum[j]);
      r2 = g.scalar_add(r2, rS[j]);
    }
    for (uint32_t j = 0; j < y; j++) {
      int real = j == ly ? 1 : 0;
      bundle.vbind.push_back(zk::detail::vbind_prove(g, pp, stmt, j, bundle.d_com[j],
                                                     g.neg(keys[0].v[j]), s2, real, rd[j], sstar,
                                                     r2, rng));
    }
  }
  {
    El sum = g.identity();
    Sc w = g.scalar_zero();
    for (uint32_t j = 0; j < y; j++) {
      sum = g.add(sum, bundle.d_com[j]);
      w = g.scalar_add(w, rd[j]);
    }
    bundle.row_sum_to_one =
        zk::detail::schnorr_prove(g, pp, stmt, "riposte/zk/rowsum", g.sub(sum, pp.P), w, rng);
  }

  // without the binding proof the doctored request is airtight
  for (uint32_t j = 0; j < y; j++)
    CHECK(zk::detail::row_verify(g, pp, stmt, j, bundle.d_com[j], g_sum[j], bundle.mu,
                                 bundle.rows[j]));
  // with it, the cheat has no witness: -v[1] is s**P_1 - Q, not s**P_1
  for (uint32_t s = 0; s < s_count; s++) {
    auto res = zk::verify_write_share(g, pp, epoch, s, keys[s], bundle, openings[s]);
    CHECK_FALSE(res.accepted);
    CHECK(res.reason == zk::Reason::vbind_proof);
  }
}

TEST_CASE("statement digests bind epoch, geometry, and commitments") {
  SchnorrGroup g;
  auto pp = params_for(g, 2);
  Geometry geom{4, 2, 2, 0};
  auto rng = seeded(207);
  std::vector<SchnorrGroup::Element> msg{random_message(g, pp, rng)};
  auto keys = dpf::dpfs_gen(g, pp, 1, msg, geom, 2, rng);
  auto proof = zk::prove_write_valid(g, pp, to_bytes("e"), keys, 1, msg[0], rng);

  auto base = zk::detail::statement_digest(g, to_bytes("e"), proof.bundle);
  CHECK(zk::detail::statement_digest(g, to_bytes("e"), proof.bundle) == base);
  CHECK(zk::detail::statement_digest(g, to_bytes("f"), proof.bundle) != base);

  auto dims = proof.bundle;
  dims.servers = 3;
  CHECK(zk::detail::statement_digest(g, to_bytes("e"), dims) != base);
  auto com = proof.bundle;
  com.b_com[0][1] = g.add(com.b_com[0][1], pp.P);
  CHECK(zk::detail::statement_digest(g, to_bytes("e"), com) != base);
  auto blind = proof.bundle;
  blind.mu = g.add(blind.mu, pp.Q);
  CHECK(zk::detail::statement_digest(g, to_bytes("e"), blind) != base);

  // labels separate sub-proof challenges drawn from one digest
  auto c1 = zk::detail::challenge(g, base, "riposte/zk/bit", 0, pp.P);
  auto c2 = zk::detail::challenge(g, base, "riposte/zk/link", 0, pp.P);
  auto c3 = zk::detail::challenge(g, base, "riposte/zk/bit", 1, pp.P);
  CHECK(c1 != c2);
  CHECK(c1 != c3);
}

TEST_CASE("commitments open additively and hide the value") {
  SchnorrGroup g;
  auto pp = params_for(g, 1);
  auto rng = seeded(208);

  CHECK(g.is_identity(pedersen::commit(g, pp, g.scalar_zero(), g.scalar_zero())));

  // one fixed message under fresh randomness spreads uniformly
  auto m = g.scalar_from_u64(42);
  constexpr size_t kTrials = 8192, kBuckets = 16;
  std::array<size_t, kBuckets> counts{};
  for (size_t i = 0; i < kTrials; i++) {
    auto c = pedersen::commit(g, pp, m, g.random_scalar(rng));
    counts[g.serialize(c)[0] % kBuckets]++;
  }
  // chi-square, 15 degrees of freedom: 37.70 is the p = 0.001 quantile
  CHECK(chi_square(counts, double(kTrials) / kBuckets) < 37.70);
}

TEST_CASE("proof bundles survive the wire byte-exactly") {
  SchnorrGroup g;
  auto pp = params_for(g, 2);
  Geometry geom{4, 2, 2, 0};
  Bytes epoch = to_bytes("epoch-zk-6");
  auto rng = seeded(209);
  std::vector<SchnorrGroup::Element> msg{random_message(g, pp, rng)};
  auto keys = dpf::dpfs_gen(g, pp, 3, msg, geom, 2, rng);
  auto proof = zk::prove_write_valid(g, pp, epoch, keys, 3, msg[0], rng);

  Bytes wire = zk::serialize_bundle(g, proof.bundle);
  auto back = zk::parse_bundle(g, wire);
  CHECK(zk::serialize_bundle(g, back) == wire);
  auto res = zk::verify_write_share(g, pp, epoch, 0, keys[0], back, proof.openings[0]);
  CHECK(res.accepted);

  Bytes op_wire = zk::serialize_opening(g, proof.openings[1]);
  auto op_back = zk::parse_opening(g, op_wire);
  CHECK(zk::serialize_opening(g, op_back) == op_wire);

  Bytes truncated(wire.begin(), wire.end() - 3);
  CHECK_THROWS_AS(zk::parse_bundle(g, truncated), Error);
  Bytes trailing = wire;
  trailing.push_back(0);
  CHECK_THROWS_AS(zk::parse_bundle(g, trailing), Error);
  Bytes retagged = wire;
  retagged[0] = 9;  // header section must come first
  CHECK_THROWS_AS(zk::parse_bundle(g, retagged), Error);
  Bytes oversized = wire;
  oversized[8] = 0x40;  // x blown past the dimension cap
  CHECK_THROWS_AS(zk::parse_bundle(g, oversized), Error);
}
