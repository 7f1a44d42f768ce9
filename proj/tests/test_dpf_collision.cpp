#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "riposte/collision.hpp"
#include "riposte/dpf.hpp"
#include "riposte/group_p256.hpp"
#include "riposte/group_schnorr.hpp"

using namespace riposte;
using group::P256Group;
using group::SchnorrGroup;

namespace {

template <class F>
std::vector<typename F::Cell> random_row(size_t cells, std::mt19937_64& rng, bool nonzero = false) {
  std::vector<typename F::Cell> row(cells);
  for (auto& c : row) c = F::random_cell(rng);
  if (nonzero && F::is_zero(row)) row[0] = 1;
  return row;
}

// The defining property, checked against nothing but the definition: summing
// every server's evaluation at every index reproduces m*e_l exactly.
template <class F>
void check_point_function(std::span<const std::vector<typename F::Cell>> evals_by_row, uint32_t l,
                          std::span<const typename F::Cell> m) {
  for (uint32_t i = 0; i < evals_by_row.size(); i++) {
    if (i == l) {
      CHECK(std::equal(evals_by_row[i].begin(), evals_by_row[i].end(), m.begin(), m.end()));
    } else {
      CHECK(F::is_zero(evals_by_row[i]));
    }
  }
}

}  // namespace

TEMPLATE_TEST_CASE("toy keys sum to the point function", "", rows::XorField, rows::FpField) {
  using F = TestType;
  std::mt19937_64 rng(41);
  const uint32_t L = 64;
  const size_t cells = F::cells_for_bytes(8);
  for (uint32_t n_servers : {2u, 3u, 5u}) {
    uint32_t l = rng() % L;
    auto m = random_row<F>(cells, rng, true);
    auto keys = dpf::toy_gen<F>(l, m, L, n_servers, rng);
    std::vector<std::vector<typename F::Cell>> sums(L);
    for (uint32_t i = 0; i < L; i++) {
      sums[i].assign(cells, typename F::Cell{});
      for (const auto& k : keys) F::add_into(sums[i], dpf::toy_eval(k, i));
    }
    check_point_function<F>(sums, l, m);
    // single shares look uniform enough to at least not be the message
    CHECK_FALSE(std::equal(keys[0].row(l).begin(), keys[0].row(l).end(), m.begin()));
  }
}

TEMPLATE_TEST_CASE("two-server keys combine to the point function at every target", "",
                   rows::XorField, rows::FpField) {
  using F = TestType;
  std::mt19937_64 rng(43);
  Geometry g{30, 6, 5, F::self_inverse ? 3u : 16u};
  REQUIRE(g.valid());
  size_t cells = F::cells_for_bytes(g.row_bytes);
  for (uint32_t l = 0; l < g.L; l++) {
    auto m = random_row<F>(cells, rng, true);
    auto [ka, kb] = dpf::dpf2_gen<F>(l, m, g, rng);
    auto ta = dpf::dpf2_eval_full(ka);
    auto tb = dpf::dpf2_eval_full(kb);
    F::sub_into(ta, tb);  // combination rule: A minus B
    std::vector<std::vector<typename F::Cell>> by_row(g.L);
    for (uint32_t i = 0; i < g.L; i++) {
      uint32_t cell_index = g.col_of(i) * g.y + g.row_of(i);
      auto s = std::span(ta).subspan(static_cast<size_t>(cell_index) * cells, cells);
      by_row[i].assign(s.begin(), s.end());
    }
    check_point_function<F>(by_row, l, m);
  }
}

TEMPLATE_TEST_CASE("two-server pointwise eval matches full expansion", "", rows::XorField,
                   rows::FpField) {
  using F = TestType;
  std::mt19937_64 rng(47);
  Geometry g{30, 6, 5, F::self_inverse ? 3u : 16u};
  size_t cells = F::cells_for_bytes(g.row_bytes);
  auto m = random_row<F>(cells, rng, true);
  auto [ka, kb] = dpf::dpf2_gen<F>(7, m, g, rng);
  auto full = dpf::dpf2_eval_full(ka);
  for (uint32_t l = 0; l < g.L; l++) {
    auto one = dpf::dpf2_eval(ka, l);
    uint32_t cell_index = g.col_of(l) * g.y + g.row_of(l);
    auto s = std::span(full).subspan(static_cast<size_t>(cell_index) * cells, cells);
    CHECK(std::equal(one.begin(), one.end(), s.begin(), s.end()));
  }
}

TEMPLATE_TEST_CASE("two-server key serialization roundtrips", "", rows::XorField, rows::FpField) {
  using F = TestType;
  std::mt19937_64 rng(53);
  Geometry g{30, 6, 5, F::self_inverse ? 3u : 16u};
  auto m = random_row<F>(F::cells_for_bytes(g.row_bytes), rng, true);
  auto [ka, kb] = dpf::dpf2_gen<F>(11, m, g, rng);
  Bytes ser = dpf::dpf2_serialize(ka);
  // header(13) + packed bits + per-column seeds + v strip
  CHECK(ser.size() == 13 + (g.x + 7) / 8 + 16 * g.x + static_cast<size_t>(g.y) * g.row_bytes);
  auto back = dpf::dpf2_parse<F>(ser);
  back.geom.L = g.L;
  CHECK(dpf::dpf2_serialize(back) == ser);
  CHECK(back.b == ka.b);
  CHECK(back.seeds == ka.seeds);
  CHECK(back.v == ka.v);

  Bytes truncated(ser.begin(), ser.end() - 1);
  CHECK_THROWS_AS(dpf::dpf2_parse<F>(truncated), Error);
  Bytes trailing = ser;
  trailing.push_back(0);
  CHECK_THROWS_AS(dpf::dpf2_parse<F>(trailing), Error);
  Bytes wrong = ser;
  wrong[0] ^= 0xFF;
  CHECK_THROWS_AS(dpf::dpf2_parse<F>(wrong), Error);
}

namespace {

template <class G>
void dpfs_suite(const G& grp, unsigned seed) {
  std::mt19937_64 rng(seed);
  auto params = pedersen::Params<G>::derive(grp, 8);
  for (uint32_t n_servers : {2u, 3u, 5u}) {
    for (size_t chunks : {1u, 2u}) {
      Geometry g{0, 4, 8, 0};
      uint32_t rows_per_col = g.y / static_cast<uint32_t>(chunks);
      g.L = g.x * rows_per_col;
      uint32_t l = rng() % g.L;
      std::vector<typename G::Element> msg;
      for (size_t c = 0; c < chunks; c++)
        msg.push_back(grp.mul(grp.random_scalar(rng), params.P));
      auto keys = dpf::dpfs_gen(grp, params, l, msg, g, n_servers, rng);

      // group-sum the full tables across servers
      std::vector<typename G::Element> sum(g.x * g.y, grp.identity());
      for (const auto& k : keys) {
        auto t = dpf::dpfs_eval_full(grp, params, k);
        for (size_t i = 0; i < sum.size(); i++) sum[i] = grp.add(sum[i], t[i]);
      }
      for (uint32_t row = 0; row < g.L; row++) {
        uint32_t lx = row / rows_per_col, lrow = row % rows_per_col;
        for (size_t c = 0; c < chunks; c++) {
          auto& cell = sum[static_cast<size_t>(lx) * g.y + lrow * chunks + c];
          if (row == l) {
            CHECK(cell == msg[c]);
          } else {
            CHECK(grp.is_identity(cell));
          }
        }
      }
      // pointwise eval agrees with the summed claim at the target
      std::vector<typename G::Element> at_l(chunks, grp.identity());
      for (const auto& k : keys) {
        auto e = dpf::dpfs_eval(grp, params, k, l);
        for (size_t c = 0; c < chunks; c++) at_l[c] = grp.add(at_l[c], e[c]);
      }
      for (size_t c = 0; c < chunks; c++) CHECK(at_l[c] == msg[c]);
    }
  }
}

template <class G>
void dpfs_serial_suite(const G& grp, unsigned seed) {
  std::mt19937_64 rng(seed);
  auto params = pedersen::Params<G>::derive(grp, 6);
  Geometry g{24, 4, 6, 0};
  std::vector<typename G::Element> msg{grp.mul(grp.random_scalar(rng), params.P)};
  auto keys = dpf::dpfs_gen(grp, params, 5, msg, g, 3, rng);
  for (const auto& k : keys) {
    Bytes ser = dpf::dpfs_serialize(grp, k);
    CHECK(ser.size() == 13 + 32 * g.x * 2 + grp.element_size() * g.y);
    auto back = dpf::dpfs_parse(grp, ser);
    CHECK(dpf::dpfs_serialize(grp, back) == ser);
    Bytes truncated(ser.begin(), ser.end() - 1);
    CHECK_THROWS_AS(dpf::dpfs_parse(grp, truncated), Error);
  }
}

}  // namespace

TEST_CASE("s-server keys over the small group sum to the point function") {
  SchnorrGroup g;
  dpfs_suite(g, 59);
}

TEST_CASE("s-server keys over p256 sum to the point function") {
  P256Group g;
  dpfs_suite(g, 61);
}

TEST_CASE("s-server key serialization roundtrips") {
  SchnorrGroup gs;
  dpfs_serial_suite(gs, 67);
  P256Group gp;
  dpfs_serial_suite(gp, 71);
}

TEST_CASE("sizing formulas match frozen evaluations") {
  using collision::expected_success_rate;
  using collision::required_table_size;
  using collision::SizingQuery;
  CHECK_THAT(expected_success_rate(1024, 19968, false),
             Catch::Matchers::WithinAbs(0.9500328731097961, 1e-12));
  CHECK(expected_success_rate(1024, 1024 * 1024, false) > 0.999);
  CHECK(required_table_size({1024, 0, 0.95, false}) == 19955);
  CHECK(required_table_size({1024, 0, 0.95, true}) == 2819);
  CHECK(required_table_size({1024, 100, 0.95, false}) == 20055);
  CHECK(required_table_size({1024, 0, 0.5, true}) == 1024);
  CHECK(required_table_size({1, 0, 0.999, false}) == 1000);
  CHECK_THROWS_AS(required_table_size({1024, 0, 1.0, false}), Error);
  CHECK_THROWS_AS(required_table_size({1024, 0, 0.0, false}), Error);
  CHECK_THROWS_AS(required_table_size({0, 0, 0.5, false}), Error);
}

TEST_CASE("sizing is monotone in target and malicious count") {
  using collision::required_table_size;
  uint64_t prev = 0;
  for (double target : {0.5, 0.8, 0.9, 0.95, 0.99, 0.999}) {
    uint64_t n = required_table_size({500, 0, target, false});
    CHECK(n >= prev);
    prev = n;
  }
  for (uint64_t mal : {0ull, 10ull, 100ull, 1000ull}) {
    CHECK(required_table_size({500, mal, 0.9, true}) ==
          required_table_size({500, 0, 0.9, true}) + mal);
  }
}

TEST_CASE("success-rate formula agrees with balls-in-bins simulation") {
  std::mt19937_64 rng(73);
  struct Case {
    uint64_t m, n;
  };
  // without recovery the truncated series carries an O((m/n)^3) error that
  // passes 1% near m/n = 0.4, so the load is capped lower there
  for (Case c : {Case{128, 4096}, Case{512, 2048}, Case{512, 4096}}) {
    double predicted = collision::expected_success_rate(c.m, c.n, false);
    double simulated = collision::simulate_success_rate(c.m, c.n, false, 4000, rng);
    CAPTURE(c.m, c.n);
    CHECK_THAT(simulated, Catch::Matchers::WithinAbs(predicted, 0.01));
  }
  for (Case c : {Case{128, 4096}, Case{512, 2048}, Case{256, 512}}) {
    double predicted = collision::expected_success_rate(c.m, c.n, true);
    double simulated = collision::simulate_success_rate(c.m, c.n, true, 4000, rng);
    CAPTURE(c.m, c.n);
    CHECK_THAT(simulated, Catch::Matchers::WithinAbs(predicted, 0.01));
  }
}

TEST_CASE("cell coding matches the defining algebra") {
  using namespace collision;
  CHECK(encode_with_recovery(3).s1 == 3);
  CHECK(encode_with_recovery(3).s2 == 9);
  CHECK(encode_with_recovery(fp::kPrime - 1).s1 == fp::kPrime - 1);
  CHECK(encode_with_recovery(fp::kPrime - 1).s2 == 1);
  CHECK_THROWS_AS(encode_with_recovery(0), Error);
  CHECK_THROWS_AS(encode_with_recovery(fp::kPrime), Error);

  CHECK(decode_cell({0, 0}).status == CellStatus::empty);

  std::mt19937_64 rng(79);
  for (int i = 0; i < 10000; i++) {
    uint64_t a = rng() % fp::kPrime, b = rng() % fp::kPrime;
    if (a == 0 || b == 0 || a == b) continue;
    auto ca = encode_with_recovery(a);
    auto cb = encode_with_recovery(b);
    CodedCell sum{fp::add(ca.s1, cb.s1), fp::add(ca.s2, cb.s2)};
    auto dec = decode_cell(sum);
    REQUIRE(dec.status == CellStatus::pair);
    CHECK(dec.a == std::min(a, b));
    CHECK(dec.b == std::max(a, b));
    auto single = decode_cell(ca);
    REQUIRE(single.status == CellStatus::single);
    CHECK(single.a == a);
  }
}

TEST_CASE("duplicate values in a cell decode as an equal pair") {
  using namespace collision;
  auto c = encode_with_recovery(42);
  CodedCell sum{fp::add(c.s1, c.s1), fp::add(c.s2, c.s2)};
  auto dec = decode_cell(sum);
  REQUIRE(dec.status == CellStatus::pair);
  CHECK(dec.a == 42);
  CHECK(dec.b == 42);
}

TEST_CASE("three-way cell collisions never silently decode as a member") {
  using namespace collision;
  std::mt19937_64 rng(83);
  int unrecoverable = 0, bogus_pair = 0;
  const int trials = 2000;
  for (int i = 0; i < trials; i++) {
    uint64_t s1 = 0, s2 = 0;
    std::array<uint64_t, 3> vals{};
    for (auto& v : vals) {
      v = 1 + rng() % (fp::kPrime - 1);
      auto c = encode_with_recovery(v);
      s1 = fp::add(s1, c.s1);
      s2 = fp::add(s2, c.s2);
    }
    auto dec = decode_cell({s1, s2});
    if (dec.status == CellStatus::unrecoverable) {
      unrecoverable++;
    } else if (dec.status == CellStatus::pair) {
      bogus_pair++;  // algebra can't tell; the row checksum layer catches it
    }
  }
  CHECK(unrecoverable + bogus_pair == trials);
  // the discriminant is a square about half the time
  CHECK(unrecoverable > trials / 3);
  CHECK(bogus_pair > trials / 3);
}

TEST_CASE("row codec roundtrips single writers across sizes") {
  using namespace collision;
  std::mt19937_64 rng(89);
  for (uint32_t msg_bytes : {1u, 6u, 7u, 8u, 13u, 14u, 64u, 160u, 161u}) {
    Bytes msg(msg_bytes);
    for (auto& b : msg) b = static_cast<uint8_t>(rng());
    auto cells = encode_row(msg);
    REQUIRE(cells.size() == coded_cells(msg_bytes));
    auto dec = decode_row(cells, msg_bytes);
    REQUIRE(dec.status == RowStatus::single);
    REQUIRE(dec.messages.size() == 1);
    CHECK(dec.messages[0] == msg);
  }
  CHECK(coded_row_bytes(160) == 8 * (3 * 23 + 2));
}

TEST_CASE("row codec recovers both colliding writers") {
  using namespace collision;
  std::mt19937_64 rng(97);
  for (int trial = 0; trial < 300; trial++) {
    uint32_t msg_bytes = 1 + rng() % 64;
    Bytes ma(msg_bytes), mb(msg_bytes);
    for (auto& b : ma) b = static_cast<uint8_t>(rng());
    for (auto& b : mb) b = static_cast<uint8_t>(rng());
    if (ma == mb) continue;
    auto ca = encode_row(ma);
    auto cb = encode_row(mb);
    std::vector<uint64_t> sum(ca.size());
    for (size_t i = 0; i < sum.size(); i++) sum[i] = fp::add(ca[i], cb[i]);
    auto dec = decode_row(sum, msg_bytes);
    REQUIRE(dec.status == RowStatus::pair);
    REQUIRE(dec.messages.size() == 2);
    CHECK(((dec.messages[0] == ma && dec.messages[1] == mb) ||
           (dec.messages[0] == mb && dec.messages[1] == ma)));
  }
}

TEST_CASE("row codec flags identical colliding messages as a pair of copies") {
  using namespace collision;
  Bytes msg = to_bytes("same message twice");
  auto c = encode_row(msg);
  std::vector<uint64_t> sum(c.size());
  for (size_t i = 0; i < sum.size(); i++) sum[i] = fp::add(c[i], c[i]);
  auto dec = decode_row(sum, static_cast<uint32_t>(msg.size()));
  REQUIRE(dec.status == RowStatus::pair);
  CHECK(dec.messages[0] == msg);
  CHECK(dec.messages[1] == msg);
}

TEST_CASE("row codec classifies empty and garbage rows") {
  using namespace collision;
  uint32_t msg_bytes = 32;
  std::vector<uint64_t> zero(coded_cells(msg_bytes), 0);
  CHECK(decode_row(zero, msg_bytes).status == RowStatus::empty);

  std::mt19937_64 rng(101);
  Bytes msg(msg_bytes);
  for (auto& b : msg) b = static_cast<uint8_t>(rng());
  auto cells = encode_row(msg);

  SECTION("tampered link cell") {
    cells[cells.size() - 1] = fp::add(cells[cells.size() - 1], 1);
    CHECK(decode_row(cells, msg_bytes).status == RowStatus::unrecoverable);
  }
  SECTION("tampered checksum") {
    size_t k = chunks_for(msg_bytes);
    cells[2 * k] = fp::add(cells[2 * k], 1);
    CHECK(decode_row(cells, msg_bytes).status == RowStatus::unrecoverable);
  }
  SECTION("random garbage cells") {
    for (auto& c : cells) c = rng() % fp::kPrime;
    auto st = decode_row(cells, msg_bytes).status;
    CHECK(st == RowStatus::unrecoverable);
  }
  SECTION("three colliding writers") {
    Bytes m2(msg_bytes), m3(msg_bytes);
    for (auto& b : m2) b = static_cast<uint8_t>(rng());
    for (auto& b : m3) b = static_cast<uint8_t>(rng());
    auto c2 = encode_row(m2);
    auto c3 = encode_row(m3);
    for (size_t i = 0; i < cells.size(); i++)
      cells[i] = fp::add(cells[i], fp::add(c2[i], c3[i]));
    CHECK(decode_row(cells, msg_bytes).status == RowStatus::unrecoverable);
  }
}
