#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>

#include <boost/multiprecision/cpp_int.hpp>

namespace cole {

// Record geometry. A compound key-value record is addr || blk || value,
// 88 bytes, so 46 records (= 2 * epsilon) fit in a 4 KB page.
inline constexpr std::size_t kAddrLen = 32;
inline constexpr std::size_t kValueLen = 48;
inline constexpr std::size_t kKeyLen = kAddrLen + 8;
inline constexpr std::size_t kRecordSize = kKeyLen + kValueLen;  // 88
inline constexpr std::size_t kPageSize = 4096;
inline constexpr std::size_t kRecordsPerPage = kPageSize / kRecordSize;  // 46
inline constexpr std::uint64_t kMaxHeight = ~std::uint64_t{0};

static_assert(kRecordsPerPage == 46);

using BigNum = boost::multiprecision::cpp_int;

struct Address {
  std::array<std::uint8_t, kAddrLen> bytes{};

  auto operator<=>(const Address&) const = default;

  static Address from_u64(std::uint64_t v) {
    Address a;
    for (int i = 0; i < 8; ++i)
      a.bytes[kAddrLen - 1 - i] = static_cast<std::uint8_t>(v >> (8 * i));
    return a;
  }

  std::string hex() const {
    static const char* d = "0123456789abcdef";
    std::string s;
    s.reserve(kAddrLen * 2);
    for (auto b : bytes) {
      s.push_back(d[b >> 4]);
      s.push_back(d[b & 0xf]);
    }
    return s;
  }
};

struct Value {
  std::array<std::uint8_t, kValueLen> bytes{};

  auto operator<=>(const Value&) const = default;

  static Value from_u64(std::uint64_t v) {
    Value x;
    for (int i = 0; i < 8; ++i)
      x.bytes[kValueLen - 1 - i] = static_cast<std::uint8_t>(v >> (8 * i));
    return x;
  }
};

// (addr, blk) compound key, ordered lexicographically. The encoded form is
// addr || blk with blk big-endian, so bytewise order equals logical order.
struct CompoundKey {
  Address addr;
  std::uint64_t blk = 0;

  auto operator<=>(const CompoundKey&) const = default;

  void encode_to(std::uint8_t* out) const {
    std::memcpy(out, addr.bytes.data(), kAddrLen);
    for (int i = 0; i < 8; ++i)
      out[kAddrLen + i] = static_cast<std::uint8_t>(blk >> (8 * (7 - i)));
  }

  std::array<std::uint8_t, kKeyLen> encode() const {
    std::array<std::uint8_t, kKeyLen> out;
    encode_to(out.data());
    return out;
  }

  static CompoundKey decode(const std::uint8_t* in) {
    CompoundKey k;
    std::memcpy(k.addr.bytes.data(), in, kAddrLen);
    k.blk = 0;
    for (int i = 0; i < 8; ++i)
      k.blk = (k.blk << 8) | in[kAddrLen + i];
    return k;
  }
};

// Unbounded-integer view of a compound key: big-endian interpretation of
// addr || blk. Strictly monotone w.r.t. CompoundKey order.
inline BigNum encode_key(const CompoundKey& k) {
  auto bytes = k.encode();
  BigNum v;
  import_bits(v, bytes.begin(), bytes.end(), 8, true);
  return v;
}

struct EngineConfig {
  std::size_t size_ratio_T = 4;
  std::size_t mht_fanout_m = 4;
  std::size_t epsilon = kRecordsPerPage / 2;  // 23
  std::size_t mem_capacity_B = 4096;
  bool async_merge = false;
  double bloom_base_fpr = 0.001;

  void validate() const {
    if (size_ratio_T < 2) throw std::invalid_argument("size_ratio_T must be >= 2");
    if (mht_fanout_m < 2) throw std::invalid_argument("mht_fanout_m must be >= 2");
    if (epsilon < 1) throw std::invalid_argument("epsilon must be >= 1");
    if (mem_capacity_B < 1) throw std::invalid_argument("mem_capacity_B must be >= 1");
    if (!(bloom_base_fpr > 0.0 && bloom_base_fpr < 1.0))
      throw std::invalid_argument("bloom_base_fpr must be in (0,1)");
    if (2 * epsilon * kRecordSize > kPageSize)
      throw std::invalid_argument("2*epsilon records must fit in a page");
  }
};

}  // namespace cole
