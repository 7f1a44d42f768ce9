#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "riposte/errors.hpp"
#include "riposte/fp.hpp"

// Length-doubling PRG: AES-128 in counter mode keyed by the seed, zero nonce,
// 128-bit block counter starting at 0. The stream for a given seed is a fixed
// infinite sequence, so expansions of different lengths agree on their common
// prefix, and outputs are bit-exact across implementations of AES-CTR.
namespace riposte::prg {

using Seed = std::array<uint8_t, 16>;

inline void expand_into(const Seed& seed, std::span<uint8_t> out) {
  if (out.empty()) return;
  // Re-keying a per-thread context keeps short expansions (one per table
  // column on the evaluation hot path) from paying a context setup each.
  thread_local std::unique_ptr<EVP_CIPHER_CTX, decltype(&EVP_CIPHER_CTX_free)> ctx(
      EVP_CIPHER_CTX_new(), EVP_CIPHER_CTX_free);
  require(ctx != nullptr, Errc::crypto_failure, "EVP_CIPHER_CTX_new");
  static const uint8_t kZeroIv[16] = {0};
  int ok = EVP_EncryptInit_ex(ctx.get(), EVP_aes_128_ctr(), nullptr, seed.data(), kZeroIv);
  if (ok == 1) {
    std::fill(out.begin(), out.end(), 0);
    int len = 0;
    ok = EVP_EncryptUpdate(ctx.get(), out.data(), &len, out.data(), static_cast<int>(out.size()));
  }
  require(ok == 1, Errc::crypto_failure, "AES-CTR expand failed");
}

inline std::vector<uint8_t> expand(const Seed& seed, size_t n) {
  std::vector<uint8_t> out(n);
  expand_into(seed, out);
  return out;
}

// count field elements, one 128-bit block reduced mod p per element; the
// statistical distance from uniform per element is < 2^-64.
inline std::vector<uint64_t> expand_fp(const Seed& seed, size_t count) {
  std::vector<uint8_t> raw = expand(seed, count * 16);
  std::vector<uint64_t> out(count);
  for (size_t i = 0; i < count; i++) {
    unsigned __int128 v = 0;
    for (int b = 15; b >= 0; b--) v = v << 8 | raw[i * 16 + b];  // little-endian block
    out[i] = fp::reduce128(v);
  }
  return out;
}

}  // namespace riposte::prg
