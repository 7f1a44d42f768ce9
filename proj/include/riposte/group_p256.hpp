#pragma once

#include <openssl/bn.h>
#include <openssl/ec.h>
#include <openssl/obj_mac.h>

#include <memory>
#include <span>

#include "riposte/bytes.hpp"
#include "riposte/errors.hpp"
#include "riposte/hashing.hpp"

// NIST P-256 as the reference group, wrapped behind the same API as the test
// group. Elements serialize to the 33-byte compressed point encoding; scalars
// are values mod the (prime) group order, serialized 32-byte little-endian.
namespace riposte::group {

namespace detail {
struct BnDeleter {
  void operator()(BIGNUM* p) const { BN_free(p); }
};
struct BnCtxDeleter {
  void operator()(BN_CTX* p) const { BN_CTX_free(p); }
};
struct EcPointDeleter {
  void operator()(EC_POINT* p) const { EC_POINT_free(p); }
};
using BnPtr = std::unique_ptr<BIGNUM, BnDeleter>;
using BnCtxPtr = std::unique_ptr<BN_CTX, BnCtxDeleter>;
}  // namespace detail

class P256Group {
 public:
  struct Element {
    std::shared_ptr<EC_POINT> pt;
    bool operator==(const Element& o) const {
      thread_local detail::BnCtxPtr ctx(BN_CTX_new());
      return EC_POINT_cmp(shared_group(), pt.get(), o.pt.get(), ctx.get()) == 0;
    }
  };
  struct Scalar {
    std::array<uint8_t, 32> le{};  // little-endian canonical value < order
    bool operator==(const Scalar&) const = default;
  };

  static constexpr const char* name() { return "p256"; }

  P256Group() : ctx_(BN_CTX_new()) {
    require(ctx_ != nullptr, Errc::crypto_failure, "BN_CTX_new");
    order_.reset(BN_new());
    require(EC_GROUP_get_order(shared_group(), order_.get(), ctx_.get()) == 1,
            Errc::crypto_failure, "group order");
  }

  Element identity() const {
    Element e = make();
    require(EC_POINT_set_to_infinity(shared_group(), e.pt.get()) == 1, Errc::crypto_failure,
            "set_to_infinity");
    return e;
  }
  bool is_identity(const Element& e) const {
    return EC_POINT_is_at_infinity(shared_group(), e.pt.get()) == 1;
  }

  Element add(const Element& a, const Element& b) const {
    Element e = make();
    require(EC_POINT_add(shared_group(), e.pt.get(), a.pt.get(), b.pt.get(), ctx_.get()) == 1,
            Errc::crypto_failure, "point add");
    return e;
  }
  Element neg(const Element& a) const {
    Element e = copy(a);
    require(EC_POINT_invert(shared_group(), e.pt.get(), ctx_.get()) == 1, Errc::crypto_failure,
            "point invert");
    return e;
  }
  Element sub(const Element& a, const Element& b) const { return add(a, neg(b)); }

  Element mul(const Scalar& k, const Element& a) const {
    detail::BnPtr bk(to_bn(k));
    Element e = make();
    require(EC_POINT_mul(shared_group(), e.pt.get(), nullptr, a.pt.get(), bk.get(), ctx_.get()) == 1,
            Errc::crypto_failure, "point mul");
    return e;
  }

  Scalar scalar_zero() const { return Scalar{}; }
  Scalar scalar_from_u64(uint64_t v) const {
    Scalar s;
    for (int i = 0; i < 8; i++) s.le[i] = static_cast<uint8_t>(v >> (8 * i));
    return s;
  }
  Scalar scalar_add(const Scalar& a, const Scalar& b) const { return mod_op(a, b, BN_add); }
  Scalar scalar_sub(const Scalar& a, const Scalar& b) const { return mod_op(a, b, BN_sub); }
  Scalar scalar_mul(const Scalar& a, const Scalar& b) const {
    detail::BnPtr ba(to_bn(a)), bb(to_bn(b)), r(BN_new());
    require(BN_mod_mul(r.get(), ba.get(), bb.get(), order_.get(), ctx_.get()) == 1,
            Errc::crypto_failure, "scalar mul");
    return from_bn(r.get());
  }
  Scalar scalar_neg(const Scalar& a) const { return scalar_sub(scalar_zero(), a); }

  template <class Rng>
  Scalar random_scalar(Rng& rng) const {
    std::array<uint8_t, 40> wide;  // 64 extra bits flatten the mod bias
    for (auto& b : wide) b = static_cast<uint8_t>(rng());
    return reduce_wide(wide);
  }
  Scalar scalar_from_hash(const hashing::Digest& d) const {
    std::array<uint8_t, 40> wide{};
    std::copy(d.begin(), d.end(), wide.begin());
    return reduce_wide(wide);
  }

  Bytes serialize(const Element& e) const {
    size_t n = EC_POINT_point2oct(shared_group(), e.pt.get(), POINT_CONVERSION_COMPRESSED, nullptr,
                                  0, ctx_.get());
    require(n > 0, Errc::crypto_failure, "point2oct size");
    Bytes out(n);
    require(EC_POINT_point2oct(shared_group(), e.pt.get(), POINT_CONVERSION_COMPRESSED, out.data(),
                               n, ctx_.get()) == n,
            Errc::crypto_failure, "point2oct");
    return out;
  }
  Element parse(std::span<const uint8_t> b) const {
    Element e = make();
    if (EC_POINT_oct2point(shared_group(), e.pt.get(), b.data(), b.size(), ctx_.get()) != 1)
      fail(Errc::decode_error, "invalid point encoding");
    return e;
  }
  size_t element_size() const { return 33; }

  Bytes serialize_scalar(const Scalar& s) const { return Bytes(s.le.begin(), s.le.end()); }
  Scalar parse_scalar(std::span<const uint8_t> b) const {
    require(b.size() == 32, Errc::decode_error, "scalar must be 32 bytes");
    Scalar s;
    std::copy(b.begin(), b.end(), s.le.begin());
    detail::BnPtr bn(to_bn(s));
    require(BN_cmp(bn.get(), order_.get()) < 0, Errc::decode_error, "scalar exceeds order");
    return s;
  }

  Element element_from_label(std::string_view label) const {
    for (uint32_t ctr = 0;; ctr++) {
      ByteWriter w;
      w.put_bytes(to_bytes(label));
      w.put_u32le(ctr);
      hashing::Digest d = hashing::sha256(w.view());
      detail::BnPtr x(BN_bin2bn(d.data(), d.size(), nullptr));
      Element e = make();
      if (EC_POINT_set_compressed_coordinates(shared_group(), e.pt.get(), x.get(), 0, ctx_.get()) ==
          1)
        return e;
    }
  }

  // x-coordinate embedding: 0x00 | counter(2B) | len(1B) | data(28B); the
  // counter is bumped until the x lies on the curve (success rate ~1/2).
  size_t embed_capacity() const { return 28; }
  Element encode_message(std::span<const uint8_t> chunk) const {
    require(chunk.size() <= embed_capacity(), Errc::invalid_argument, "chunk exceeds capacity");
    std::array<uint8_t, 32> buf{};
    buf[3] = static_cast<uint8_t>(chunk.size());
    std::copy(chunk.begin(), chunk.end(), buf.begin() + 4);
    for (uint32_t ctr = 0; ctr < 0x10000; ctr++) {
      buf[1] = static_cast<uint8_t>(ctr >> 8);
      buf[2] = static_cast<uint8_t>(ctr);
      detail::BnPtr x(BN_bin2bn(buf.data(), buf.size(), nullptr));
      Element e = make();
      if (EC_POINT_set_compressed_coordinates(shared_group(), e.pt.get(), x.get(), 0, ctx_.get()) ==
          1)
        return e;
    }
    fail(Errc::crypto_failure, "embedding exhausted counters");
  }
  Bytes decode_message(const Element& e) const {
    require(!is_identity(e), Errc::decode_error, "identity is not a message");
    detail::BnPtr x(BN_new()), y(BN_new());
    require(EC_POINT_get_affine_coordinates(shared_group(), e.pt.get(), x.get(), y.get(),
                                            ctx_.get()) == 1,
            Errc::crypto_failure, "affine coordinates");
    std::array<uint8_t, 32> buf{};
    require(BN_bn2binpad(x.get(), buf.data(), buf.size()) == static_cast<int>(buf.size()),
            Errc::crypto_failure, "bn2bin");
    require(buf[0] == 0 && buf[3] <= embed_capacity(), Errc::decode_error,
            "element is not an embedded message");
    return Bytes(buf.begin() + 4, buf.begin() + 4 + buf[3]);
  }

 private:
  static EC_GROUP* shared_group() {
    static EC_GROUP* g = EC_GROUP_new_by_curve_name(NID_X9_62_prime256v1);
    return g;
  }
  Element make() const {
    EC_POINT* p = EC_POINT_new(shared_group());
    require(p != nullptr, Errc::crypto_failure, "EC_POINT_new");
    return Element{std::shared_ptr<EC_POINT>(p, detail::EcPointDeleter{})};
  }
  Element copy(const Element& a) const {
    Element e = make();
    require(EC_POINT_copy(e.pt.get(), a.pt.get()) == 1, Errc::crypto_failure, "EC_POINT_copy");
    return e;
  }
  static BIGNUM* to_bn(const Scalar& s) {
    std::array<uint8_t, 32> be;
    for (int i = 0; i < 32; i++) be[i] = s.le[31 - i];
    return BN_bin2bn(be.data(), be.size(), nullptr);
  }
  Scalar from_bn(const BIGNUM* bn) const {
    std::array<uint8_t, 32> be{};
    require(BN_bn2binpad(bn, be.data(), be.size()) == 32, Errc::crypto_failure, "scalar width");
    Scalar s;
    for (int i = 0; i < 32; i++) s.le[i] = be[31 - i];
    return s;
  }
  Scalar mod_op(const Scalar& a, const Scalar& b, int (*op)(BIGNUM*, const BIGNUM*, const BIGNUM*)) const {
    detail::BnPtr ba(to_bn(a)), bb(to_bn(b)), r(BN_new());
    require(op(r.get(), ba.get(), bb.get()) == 1, Errc::crypto_failure, "scalar op");
    require(BN_nnmod(r.get(), r.get(), order_.get(), ctx_.get()) == 1, Errc::crypto_failure,
            "scalar mod");
    return from_bn(r.get());
  }
  Scalar reduce_wide(std::span<const uint8_t> le_wide) const {
    Bytes be(le_wide.rbegin(), le_wide.rend());
    detail::BnPtr w(BN_bin2bn(be.data(), be.size(), nullptr)), r(BN_new());
    require(BN_nnmod(r.get(), w.get(), order_.get(), ctx_.get()) == 1, Errc::crypto_failure,
            "wide reduce");
    return from_bn(r.get());
  }

  detail::BnCtxPtr ctx_;
  detail::BnPtr order_;
};

}  // namespace riposte::group
