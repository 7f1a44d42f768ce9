#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "riposte/bytes.hpp"
#include "riposte/fp.hpp"
#include "riposte/geometry.hpp"
#include "riposte/group_p256.hpp"
#include "riposte/group_schnorr.hpp"
#include "riposte/hashing.hpp"
#include "riposte/pedersen.hpp"
#include "riposte/prg.hpp"
#include "riposte/rows.hpp"

using namespace riposte;
using group::P256Group;
using group::SchnorrGroup;

namespace {

// Deterministic Miller-Rabin, exact for all 64-bit inputs with these bases.
bool is_prime_u64(uint64_t n) {
  if (n < 2) return false;
  for (uint64_t p : {2ull, 3ull, 5ull, 7ull, 11ull, 13ull, 17ull, 19ull, 23ull, 29ull, 31ull, 37ull}) {
    if (n == p) return true;
    if (n % p == 0) return false;
  }
  uint64_t d = n - 1;
  int r = 0;
  while ((d & 1) == 0) d >>= 1, r++;
  auto mulm = [&](uint64_t a, uint64_t b) {
    return static_cast<uint64_t>(static_cast<unsigned __int128>(a) * b % n);
  };
  auto powm = [&](uint64_t b, uint64_t e) {
    uint64_t acc = 1;
    for (; e; e >>= 1, b = mulm(b, b))
      if (e & 1) acc = mulm(acc, b);
    return acc;
  };
  for (uint64_t a : {2ull, 3ull, 5ull, 7ull, 11ull, 13ull, 17ull, 19ull, 23ull, 29ull, 31ull, 37ull}) {
    uint64_t x = powm(a, d);
    if (x == 1 || x == n - 1) continue;
    bool witness = true;
    for (int i = 0; i + 1 < r && witness; i++) {
      x = mulm(x, x);
      if (x == n - 1) witness = false;
    }
    if (witness) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("byte writer and reader roundtrip") {
  ByteWriter w;
  w.put_u8(0xAB);
  w.put_u32le(0x12345678);
  w.put_u64le(0xDEADBEEFCAFEBABEull);
  w.put_u32be(0x01020304);
  w.put_lp_bytes(to_bytes("hello"));
  Bytes buf = w.take();

  ByteReader r(buf);
  CHECK(r.get_u8() == 0xAB);
  CHECK(r.get_u32le() == 0x12345678);
  CHECK(r.get_u64le() == 0xDEADBEEFCAFEBABEull);
  CHECK(r.get_u32be() == 0x01020304);
  CHECK(r.get_lp_bytes() == to_bytes("hello"));
  CHECK(r.done());
  r.expect_done();
}

TEST_CASE("byte reader rejects truncation and trailing bytes") {
  Bytes buf = {1, 2, 3};
  ByteReader r(buf);
  CHECK_THROWS_AS(r.get_u32le(), Error);
  ByteReader r2(buf);
  r2.get_u8();
  CHECK_THROWS_AS(r2.expect_done(), Error);
}

TEST_CASE("hex encoding roundtrip") {
  Bytes b = {0x00, 0xFF, 0x12, 0xAB};
  CHECK(hex_encode(b) == "00ff12ab");
  CHECK(hex_decode("00ff12ab") == b);
  CHECK(hex_decode("00FF12AB") == b);
  CHECK_THROWS_AS(hex_decode("abc"), Error);   // odd length
  CHECK_THROWS_AS(hex_decode("zz"), Error);    // bad digit
}

TEST_CASE("field modulus is the largest prime below 2^64") {
  CHECK(is_prime_u64(fp::kPrime));
  for (uint64_t v = fp::kPrime + 1; v != 0; v++) CHECK_FALSE(is_prime_u64(v));
}

TEST_CASE("field arithmetic matches independent values") {
  uint64_t a = 0x123456789ABCDEF0ull, b = 0xFEDCBA9876543210ull;
  CHECK(fp::mul(a, b) == 0x50b76b7e000293c2ull);
  CHECK(fp::inv(a) == 0x4fe97e97e97e97d7ull);
  CHECK(fp::pow(a, b) == 0xf693ca11b688a5f0ull);
  CHECK(fp::sqrt(0x568ff66e092052ebull) == 0x2152411035014507ull);
  CHECK_FALSE(fp::sqrt(0x1234567812345678ull).has_value());
  CHECK(fp::sqrt(0) == 0);
}

TEST_CASE("field algebra properties hold on random values") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 2000; i++) {
    uint64_t a = rng() % fp::kPrime, b = rng() % fp::kPrime;
    CHECK(fp::sub(fp::add(a, b), b) == a);
    CHECK(fp::add(a, fp::neg(a)) == 0);
    if (a != 0) CHECK(fp::mul(a, fp::inv(a)) == 1);
    uint64_t sq = fp::mul(a, a);
    auto root = fp::sqrt(sq);
    REQUIRE(root.has_value());
    uint64_t canonical = std::min(a, fp::neg(a));
    CHECK(*root == canonical);
  }
}

TEST_CASE("prg matches aes-128-ctr keystream") {
  prg::Seed seed;
  for (int i = 0; i < 16; i++) seed[i] = static_cast<uint8_t>(i);
  CHECK(hex_encode(prg::expand(seed, 48)) ==
        "c6a13b37878f5b826f4f8162a1c8d8797346139595c0b41e497bbde365f42d0a"
        "49d68753999ba68ce3897a686081b09d");
  prg::Seed zero{};
  CHECK(hex_encode(prg::expand(zero, 32)) ==
        "66e94bd4ef8a2c3b884cfa59ca342b2e58e2fccefa7e3061367f1d57a4e7455a");
}

TEST_CASE("prg field expansion reduces 16-byte blocks") {
  prg::Seed seed;
  for (int i = 0; i < 16; i++) seed[i] = static_cast<uint8_t>(i);
  auto v = prg::expand_fp(seed, 4);
  REQUIRE(v.size() == 4);
  CHECK(v[0] == 0x9751ccb8eb08f6cfull);
  CHECK(v[1] == 0x774c141111beb0bcull);
  CHECK(v[2] == 0xe4546cd167c5a5e6ull);
  CHECK(v[3] == 0x4500bb3de4b333c5ull);
  for (uint64_t e : v) CHECK(e < fp::kPrime);
}

TEST_CASE("sha256 matches published vectors") {
  auto abc = hashing::sha256(to_bytes("abc"));
  CHECK(hex_encode(Bytes(abc.begin(), abc.end())) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  auto empty = hashing::sha256({});
  CHECK(hex_encode(Bytes(empty.begin(), empty.end())) ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("incremental sha256 equals one-shot") {
  Bytes data(1000);
  std::mt19937_64 rng(3);
  for (auto& b : data) b = static_cast<uint8_t>(rng());
  hashing::Sha256 inc;
  inc.update(std::span<const uint8_t>(data).subspan(0, 100));
  inc.update(std::span<const uint8_t>(data).subspan(100));
  CHECK(inc.finish() == hashing::sha256(data));
}

TEST_CASE("labelled derivation is stable") {
  Bytes key(3, 0);
  auto d = hashing::derive(key, "riposte/test");
  CHECK(hex_encode(Bytes(d.begin(), d.end())) ==
        "54a97c69c7007f2a685de207b4f2f50f7223cf13c0eae03ba3aabccccdde0b0b");
  auto s = hashing::derive_seed(key, "riposte/test");
  CHECK(hex_encode(Bytes(s.begin(), s.end())) == "54a97c69c7007f2a685de207b4f2f50f");
  CHECK(hashing::derive_u64(key, "riposte/test") == 0x54a97c69c7007f2aull);
}

TEST_CASE("poly1305 matches rfc 8439 vector") {
  std::array<uint8_t, 32> key{};
  Bytes kb = hex_decode("85d6be7857556d337f4452fe42d506a80103808afb0db2fd4abff6af4149f51b");
  std::copy(kb.begin(), kb.end(), key.begin());
  auto tag = hashing::poly1305(key, to_bytes("Cryptographic Forum Research Group"));
  CHECK(hex_encode(Bytes(tag.begin(), tag.end())) == "a8061dc1305136c6c22b8baf0c0127a9");
}

TEST_CASE("geometry optimizer matches brute force") {
  struct Case {
    uint32_t L, alpha, beta, x, y;
    uint64_t bits;
  };
  // brute-force minima for (1+alpha)x + beta*y subject to x*y >= L
  const Case cases[] = {
      {1u << 20, 128, 8192, 8192, 128, 2105344},
      {1000, 128, 8192, 250, 4, 65018},
      {4096, 64, 64, 64, 64, 8256},
      {100, 1, 1, 6, 17, 29},
      {1, 128, 8192, 1, 1, 8321},
      {1u << 20, 128, 1288, 3197, 328, 834877},
      {65536, 256, 1024, 512, 128, 262656},
      {12345, 333, 4567, 412, 30, 274618},
  };
  for (const auto& c : cases) {
    Geometry g = optimize_geometry(c.L, c.alpha, c.beta, 8);
    CAPTURE(c.L, c.alpha, c.beta);
    CHECK(g.x == c.x);
    CHECK(g.y == c.y);
    CHECK(key_bits(g.x, g.y, c.alpha, c.beta) == c.bits);
    CHECK(g.valid());
  }
}

TEST_CASE("geometry index split roundtrips") {
  Geometry g{100, 12, 9, 8};
  REQUIRE(g.valid());
  for (uint32_t l = 0; l < g.L; l++) {
    CHECK(g.col_of(l) * g.y + g.row_of(l) == l);
    CHECK(g.col_of(l) < g.x);
    CHECK(g.row_of(l) < g.y);
  }
}

TEST_CASE("schnorr group parameters are a safe prime pair") {
  CHECK(is_prime_u64(SchnorrGroup::kModulus));
  CHECK(is_prime_u64(SchnorrGroup::kOrder));
  CHECK(SchnorrGroup::kModulus == 2 * SchnorrGroup::kOrder + 1);
}

TEST_CASE("schnorr generators match frozen derivations") {
  SchnorrGroup g;
  CHECK(g.element_from_label("riposte/P").v == 0x63cb93d87d994dfeull);
  CHECK(g.element_from_label("riposte/Q").v == 0x215f768bc2a3a605ull);
  CHECK(g.element_from_label("riposte/G/0").v == 0xd27357522930e7e5ull);
  CHECK(g.element_from_label("riposte/G/1").v == 0x0a6a31fc69f4ebf4ull);
  CHECK(g.element_from_label("riposte/G/127").v == 0xf6e6043df5e77636ull);
}

template <class G>
void group_law_suite(const G& g, unsigned seed) {
  std::mt19937_64 rng(seed);
  auto P = g.element_from_label("riposte/P");
  auto Q = g.element_from_label("riposte/Q");
  for (int i = 0; i < 64; i++) {
    auto k1 = g.random_scalar(rng);
    auto k2 = g.random_scalar(rng);
    auto A = g.mul(k1, P);
    auto B = g.mul(k2, Q);
    // commutativity and associativity of the group operation
    CHECK(g.add(A, B) == g.add(B, A));
    CHECK(g.add(g.add(A, B), P) == g.add(A, g.add(B, P)));
    // identity and inverses
    CHECK(g.add(A, g.identity()) == A);
    CHECK(g.is_identity(g.add(A, g.neg(A))));
    CHECK(g.is_identity(g.sub(A, A)));
    // scalar action is a module: (k1+k2)P = k1P + k2P, (k1k2)P = k1(k2P)
    CHECK(g.mul(g.scalar_add(k1, k2), P) == g.add(g.mul(k1, P), g.mul(k2, P)));
    CHECK(g.mul(g.scalar_mul(k1, k2), P) == g.mul(k1, g.mul(k2, P)));
    // serialization roundtrips
    CHECK(g.parse(g.serialize(A)) == A);
    auto ks = g.serialize_scalar(k1);
    CHECK(g.serialize_scalar(g.parse_scalar(ks)) == ks);
  }
  // scalar ring sanity
  auto one = g.scalar_from_u64(1);
  auto k = g.random_scalar(rng);
  CHECK(g.mul(g.scalar_mul(k, one), P) == g.mul(k, P));
  CHECK(g.is_identity(g.mul(g.scalar_zero(), P)));
}

TEST_CASE("schnorr group laws") {
  SchnorrGroup g;
  group_law_suite(g, 11);
}

TEST_CASE("p256 group laws") {
  P256Group g;
  group_law_suite(g, 13);
}

TEST_CASE("schnorr parse rejects values outside the subgroup") {
  SchnorrGroup g;
  // -1 mod t generates the order-2 part of Z_t*, never the QR subgroup
  uint64_t bad = SchnorrGroup::kModulus - 1;
  Bytes b(8);
  for (int i = 0; i < 8; i++) b[i] = static_cast<uint8_t>(bad >> (8 * i));
  CHECK_THROWS_AS(g.parse(b), Error);
}

TEST_CASE("p256 parse rejects garbage") {
  P256Group g;
  Bytes b(33, 0x5A);
  b[0] = 0x05;  // not a valid point-compression tag
  CHECK_THROWS_AS(g.parse(b), Error);
  CHECK_THROWS_AS(g.parse(Bytes(32, 0x02)), Error);  // wrong length
}

template <class G>
void embed_suite(const G& g, unsigned seed) {
  std::mt19937_64 rng(seed);
  for (size_t len = 1; len <= g.embed_capacity(); len++) {
    Bytes chunk(len);
    for (auto& c : chunk) c = static_cast<uint8_t>(rng());
    auto e = g.encode_message(chunk);
    CHECK(g.decode_message(e) == chunk);
    CHECK(g.parse(g.serialize(e)) == e);
  }
  Bytes too_big(g.embed_capacity() + 1, 1);
  CHECK_THROWS_AS(g.encode_message(too_big), Error);
}

TEST_CASE("schnorr message embedding roundtrips") {
  SchnorrGroup g;
  embed_suite(g, 17);
}

TEST_CASE("p256 message embedding roundtrips") {
  P256Group g;
  embed_suite(g, 19);
}

TEST_CASE("pedersen commitments are additively homomorphic") {
  SchnorrGroup g;
  auto params = pedersen::Params<SchnorrGroup>::derive(g, 4);
  std::mt19937_64 rng(23);
  for (int i = 0; i < 32; i++) {
    auto m1 = g.random_scalar(rng), r1 = g.random_scalar(rng);
    auto m2 = g.random_scalar(rng), r2 = g.random_scalar(rng);
    auto lhs = g.add(pedersen::commit(g, params, m1, r1), pedersen::commit(g, params, m2, r2));
    auto rhs = pedersen::commit(g, params, g.scalar_add(m1, m2), g.scalar_add(r1, r2));
    CHECK(lhs == rhs);
  }
}

TEST_CASE("seed-homomorphic expansion distributes over seed addition") {
  SchnorrGroup g;
  auto params = pedersen::Params<SchnorrGroup>::derive(g, 8);
  std::mt19937_64 rng(29);
  auto s1 = g.random_scalar(rng), s2 = g.random_scalar(rng);
  auto e1 = pedersen::shprg_expand(g, params, s1, 8);
  auto e2 = pedersen::shprg_expand(g, params, s2, 8);
  auto esum = pedersen::shprg_expand(g, params, g.scalar_add(s1, s2), 8);
  for (size_t i = 0; i < 8; i++) CHECK(g.add(e1[i], e2[i]) == esum[i]);
}

TEST_CASE("xor row field accumulates and serializes") {
  std::mt19937_64 rng(31);
  std::vector<uint8_t> a(16), b(16);
  for (auto& v : a) v = static_cast<uint8_t>(rng());
  for (auto& v : b) v = static_cast<uint8_t>(rng());
  auto orig = a;
  rows::XorField::add_into(a, b);
  rows::XorField::sub_into(a, b);
  CHECK(a == orig);
  ByteWriter w;
  rows::XorField::serialize_cells(w, a);
  ByteReader r(w.view());
  CHECK(rows::XorField::parse_cells(r, 16) == a);
}

TEST_CASE("fp row field accumulates and serializes") {
  std::mt19937_64 rng(37);
  std::vector<uint64_t> a(8), b(8);
  for (auto& v : a) v = rng() % fp::kPrime;
  for (auto& v : b) v = rng() % fp::kPrime;
  auto orig = a;
  rows::FpField::add_into(a, b);
  rows::FpField::sub_into(a, b);
  CHECK(a == orig);
  ByteWriter w;
  rows::FpField::serialize_cells(w, a);
  ByteReader r(w.view());
  CHECK(rows::FpField::parse_cells(r, 8) == a);
  // out-of-range cells are rejected on parse
  ByteWriter w2;
  w2.put_u64le(fp::kPrime);
  ByteReader r2(w2.view());
  CHECK_THROWS_AS(rows::FpField::parse_cells(r2, 1), Error);
  CHECK(rows::FpField::cells_for_bytes(64) == 8);
  CHECK_THROWS_AS(rows::FpField::cells_for_bytes(63), Error);
}

TEST_CASE("prg expansion is deterministic and seed-separated") {
  prg::Seed s1{}, s2{};
  s2[0] = 1;
  CHECK(prg::expand(s1, 64) == prg::expand(s1, 64));
  CHECK(prg::expand(s1, 64) != prg::expand(s2, 64));
}
