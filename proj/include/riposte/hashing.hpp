#pragma once

#include <openssl/core_names.h>
#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string_view>

#include "riposte/bytes.hpp"
#include "riposte/errors.hpp"
#include "riposte/prg.hpp"

namespace riposte::hashing {

using Digest = std::array<uint8_t, 32>;
using Tag = std::array<uint8_t, 16>;

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    require(ctx_ && EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) == 1, Errc::crypto_failure,
            "sha256 init");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(std::span<const uint8_t> data) {
    require(EVP_DigestUpdate(ctx_, data.data(), data.size()) == 1, Errc::crypto_failure,
            "sha256 update");
    return *this;
  }
  Sha256& update(std::string_view s) {
    return update(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(s.data()), s.size()));
  }
  Digest finish() {
    Digest out;
    unsigned int len = 0;
    require(EVP_DigestFinal_ex(ctx_, out.data(), &len) == 1 && len == out.size(),
            Errc::crypto_failure, "sha256 final");
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

inline Digest sha256(std::span<const uint8_t> data) { return Sha256().update(data).finish(); }

template <size_t N>
inline std::array<uint8_t, N> truncated(const Digest& d) {
  static_assert(N <= 32);
  std::array<uint8_t, N> out;
  std::copy_n(d.begin(), N, out.begin());
  return out;
}

// Domain-separated derivations: value = SHA256(key material || ascii label).
inline Digest derive(std::span<const uint8_t> key, std::string_view label) {
  return Sha256().update(key).update(label).finish();
}

inline prg::Seed derive_seed(std::span<const uint8_t> key, std::string_view label) {
  return truncated<16>(derive(key, label));
}

inline uint64_t derive_u64(std::span<const uint8_t> key, std::string_view label) {
  Digest d = derive(key, label);
  uint64_t v = 0;
  for (int i = 0; i < 8; i++) v = v << 8 | d[i];  // big-endian of the first 8 bytes
  return v;
}

// One-time Poly1305 under a fresh 32-byte key; per-key use-once discipline is
// the caller's contract (each audit tag gets its own key). The MAC context is
// reused per thread: re-keying via init is far cheaper than rebuilding it for
// the hundreds of per-column tags in one audit.
inline Tag poly1305(const std::array<uint8_t, 32>& key, std::span<const uint8_t> msg) {
  static EVP_MAC* mac = EVP_MAC_fetch(nullptr, "POLY1305", nullptr);
  require(mac != nullptr, Errc::crypto_failure, "poly1305 fetch");
  thread_local std::unique_ptr<EVP_MAC_CTX, decltype(&EVP_MAC_CTX_free)> ctx(
      EVP_MAC_CTX_new(mac), EVP_MAC_CTX_free);
  require(ctx != nullptr, Errc::crypto_failure, "poly1305 ctx");
  Tag out{};
  size_t outl = 0;
  int ok = EVP_MAC_init(ctx.get(), key.data(), key.size(), nullptr) == 1 &&
           EVP_MAC_update(ctx.get(), msg.data(), msg.size()) == 1 &&
           EVP_MAC_final(ctx.get(), out.data(), &outl, out.size()) == 1 && outl == out.size();
  require(ok, Errc::crypto_failure, "poly1305");
  return out;
}

}  // namespace riposte::hashing
