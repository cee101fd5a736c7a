#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>

#include "cbu/error.hpp"

namespace cbu {

// Incremental SHA-256. Fields fed through add_field() are length-prefixed so
// that ("ab","c") and ("a","bc") never collide.
class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      throw Error(ErrorKind::integrity, "sha256 init failed");
    }
  }

  Sha256& add(std::string_view bytes) {
    if (EVP_DigestUpdate(ctx_.get(), bytes.data(), bytes.size()) != 1) {
      throw Error(ErrorKind::integrity, "sha256 update failed");
    }
    return *this;
  }

  Sha256& add_field(std::string_view bytes) {
    std::uint64_t n = bytes.size();
    std::array<char, 8> len{};
    for (int i = 0; i < 8; ++i) len[i] = static_cast<char>((n >> (8 * i)) & 0xff);
    add(std::string_view(len.data(), len.size()));
    return add(bytes);
  }

  std::array<unsigned char, 32> finish() {
    std::array<unsigned char, 32> out{};
    unsigned int size = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), out.data(), &size) != 1 || size != out.size()) {
      throw Error(ErrorKind::integrity, "sha256 final failed");
    }
    return out;
  }

  std::string hex() {
    static constexpr char digits[] = "0123456789abcdef";
    auto raw = finish();
    std::string s;
    s.reserve(64);
    for (unsigned char b : raw) {
      s.push_back(digits[b >> 4]);
      s.push_back(digits[b & 0xf]);
    }
    return s;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline std::string sha256_hex(std::string_view bytes) { return Sha256().add(bytes).hex(); }

// First 8 bytes of a hex digest as an integer, used to derive PRNG seeds.
inline std::uint64_t digest_prefix64(std::string_view hex) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 16 && i < hex.size(); ++i) {
    char c = hex[i];
    std::uint64_t d = (c >= '0' && c <= '9') ? c - '0' : (c >= 'a' && c <= 'f') ? c - 'a' + 10 : 0;
    v = (v << 4) | d;
  }
  return v;
}

}  // namespace cbu
