#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cole/hasher.hpp"

namespace cole {

inline constexpr std::uint64_t kBloomMagic = 0x434f4c45424c4f4dULL;  // "COLEBLOM"

// Address Bloom filter. Bit positions come from double hashing over the two
// 64-bit halves of SHA-256(addr), so membership is deterministic across
// platforms; the filter's digest participates in H_state.
class BloomFilter {
 public:
  BloomFilter() = default;

  BloomFilter(std::uint64_t expected_keys, double target_fpr) {
    if (target_fpr <= 0.0 || target_fpr >= 1.0) target_fpr = 0.5;
    if (expected_keys == 0) expected_keys = 1;
    double bits_per_key = -std::log(target_fpr) / (std::log(2.0) * std::log(2.0));
    std::uint64_t nbits = static_cast<std::uint64_t>(
        std::ceil(bits_per_key * static_cast<double>(expected_keys)));
    if (nbits < 64) nbits = 64;
    nbits_ = nbits;
    k_ = static_cast<std::uint32_t>(std::lround(bits_per_key * std::log(2.0)));
    if (k_ < 1) k_ = 1;
    if (k_ > 30) k_ = 30;
    bits_.assign((nbits_ + 7) / 8, 0);
  }

  void insert(const Address& addr) {
    auto [h1, h2] = hash_pair(addr);
    for (std::uint32_t i = 0; i < k_; ++i) {
      std::uint64_t bit = (h1 + i * h2) % nbits_;
      bits_[bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
    }
  }

  bool may_contain(const Address& addr) const {
    if (nbits_ == 0) return false;
    auto [h1, h2] = hash_pair(addr);
    for (std::uint32_t i = 0; i < k_; ++i) {
      std::uint64_t bit = (h1 + i * h2) % nbits_;
      if (!(bits_[bit / 8] & (1u << (bit % 8)))) return false;
    }
    return true;
  }

  std::vector<std::uint8_t> serialize() const {
    std::vector<std::uint8_t> out(24 + bits_.size());
    put_u64(out.data(), kBloomMagic);
    put_u64(out.data() + 8, nbits_);
    put_u64(out.data() + 16, k_);
    std::memcpy(out.data() + 24, bits_.data(), bits_.size());
    return out;
  }

  static BloomFilter deserialize(std::span<const std::uint8_t> in) {
    if (in.size() < 24) throw std::runtime_error("bloom: short buffer");
    if (get_u64(in.data()) != kBloomMagic) throw std::runtime_error("bloom: bad magic");
    BloomFilter b;
    b.nbits_ = get_u64(in.data() + 8);
    std::uint64_t k = get_u64(in.data() + 16);
    if (k < 1 || k > 30) throw std::runtime_error("bloom: bad hash count");
    b.k_ = static_cast<std::uint32_t>(k);
    std::uint64_t nbytes = (b.nbits_ + 7) / 8;
    if (in.size() != 24 + nbytes)
      throw std::runtime_error("bloom: bad layout");
    b.bits_.assign(in.begin() + 24, in.end());
    return b;
  }

  Digest digest() const {
    auto bytes = serialize();
    return sha256(bytes);
  }

  std::uint64_t bit_count() const { return nbits_; }
  std::uint32_t hash_count() const { return k_; }

  // Per-level Monkey-style target: smaller (younger) runs get exponentially
  // lower false positive rates.
  static double level_fpr(double base_fpr, std::size_t level, std::size_t size_ratio) {
    double fpr = base_fpr;
    for (std::size_t i = 1; i < level; ++i) fpr *= static_cast<double>(size_ratio);
    return std::min(fpr, 0.5);
  }

 private:
  static std::pair<std::uint64_t, std::uint64_t> hash_pair(const Address& addr) {
    Digest d = sha256(addr.bytes);
    std::uint64_t h1 = get_u64(d.bytes.data());
    std::uint64_t h2 = get_u64(d.bytes.data() + 8) | 1;  // odd stride
    return {h1, h2};
  }
  static void put_u64(std::uint8_t* p, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * (7 - i)));
  }
  static std::uint64_t get_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | p[i];
    return v;
  }

  std::uint64_t nbits_ = 0;
  std::uint32_t k_ = 0;
  std::vector<std::uint8_t> bits_;
};

}  // namespace cole
