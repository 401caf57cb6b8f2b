#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include <openssl/evp.h>
#include <openssl/sha.h>

#include "cole/common.hpp"

namespace cole {

struct Digest {
  std::array<std::uint8_t, 32> bytes{};

  auto operator<=>(const Digest&) const = default;

  std::string hex() const {
    static const char* d = "0123456789abcdef";
    std::string s;
    s.reserve(64);
    for (auto b : bytes) {
      s.push_back(d[b >> 4]);
      s.push_back(d[b & 0xf]);
    }
    return s;
  }
};

inline Digest sha256(std::span<const std::uint8_t> data) {
  Digest d;
  SHA256(data.data(), data.size(), d.bytes.data());
  return d;
}

class Sha256Stream {
 public:
  Sha256Stream() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
      throw std::runtime_error("sha256 init failed");
  }
  ~Sha256Stream() { EVP_MD_CTX_free(ctx_); }
  Sha256Stream(const Sha256Stream&) = delete;
  Sha256Stream& operator=(const Sha256Stream&) = delete;

  void update(std::span<const std::uint8_t> data) {
    EVP_DigestUpdate(ctx_, data.data(), data.size());
  }
  void update(const Digest& d) { update(std::span(d.bytes)); }
  Digest finish() {
    Digest d;
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, d.bytes.data(), &len);
    return d;
  }

 private:
  EVP_MD_CTX* ctx_;
};

// Leaf preimage: addr || blk || value.
inline Digest hash_leaf(const CompoundKey& k, const Value& v) {
  std::array<std::uint8_t, kRecordSize> buf;
  k.encode_to(buf.data());
  std::memcpy(buf.data() + kKeyLen, v.bytes.data(), kValueLen);
  return sha256(buf);
}

// Internal preimage: concatenated child digests, in order.
inline Digest hash_internal(std::span<const Digest> children) {
  if (children.empty()) throw std::invalid_argument("hash_internal: empty child list");
  Sha256Stream s;
  for (const auto& c : children) s.update(c);
  return s.finish();
}

}  // namespace cole
