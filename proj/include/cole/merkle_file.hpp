#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "cole/hasher.hpp"
#include "cole/paged_file.hpp"

namespace cole {

inline constexpr std::uint64_t kMerkleMagic = 0x434f4c454d524b4cULL;  // "COLEMRKL"
inline constexpr std::size_t kMerkleHeaderSize = 24;

// Layer sizes n, ceil(n/m), ..., 1 and the digest offset where each layer
// starts inside the file.
struct MerkleShape {
  std::vector<std::uint64_t> layer_size;
  std::vector<std::uint64_t> layer_start;
  std::uint64_t total = 0;

  MerkleShape() = default;
  MerkleShape(std::uint64_t n, std::uint64_t m) {
    std::uint64_t s = n;
    layer_size.push_back(s);
    while (s > 1) {
      s = (s + m - 1) / m;
      layer_size.push_back(s);
    }
    layer_start.resize(layer_size.size());
    std::uint64_t off = 0;
    for (std::size_t i = 0; i < layer_size.size(); ++i) {
      layer_start[i] = off;
      off += layer_size[i];
    }
    total = off;
  }

  std::size_t depth() const { return layer_size.size(); }

  std::size_t layer_of(std::uint64_t pos) const {
    for (std::size_t i = 0; i < layer_size.size(); ++i)
      if (pos < layer_start[i] + layer_size[i]) return i;
    throw std::out_of_range("merkle position out of range");
  }

  std::uint64_t parent_position(std::uint64_t pos, std::size_t layer, std::uint64_t m) const {
    if (layer + 1 >= depth()) throw std::out_of_range("root has no parent");
    if (pos < layer_start[layer] || pos >= layer_start[layer] + layer_size[layer])
      throw std::out_of_range("position not in layer");
    return (pos - layer_start[layer]) / m + layer_start[layer + 1];
  }

  // Children (file positions) of an internal node at file position pos.
  std::pair<std::uint64_t, std::uint64_t> child_range(std::uint64_t pos, std::size_t layer,
                                                      std::uint64_t m) const {
    std::uint64_t first = layer_start[layer - 1] + (pos - layer_start[layer]) * m;
    std::uint64_t last = std::min(first + m, layer_start[layer - 1] + layer_size[layer - 1]);
    return {first, last};
  }
};

// Single-pass construction per the known stream size n: one buffer per layer,
// flushed to its tracked offset whenever it holds m digests.
class MerkleFileBuilder {
 public:
  MerkleFileBuilder(FileHandle& file, std::uint64_t n, std::uint64_t m)
      : file_(&file), n_(n), m_(m), shape_(n, m), cache_(shape_.depth()),
        write_off_(shape_.layer_start) {
    if (n == 0) throw std::invalid_argument("merkle file needs n >= 1");
    std::uint8_t hdr[kMerkleHeaderSize];
    put_u64(hdr, kMerkleMagic);
    put_u64(hdr + 8, n);
    put_u64(hdr + 16, m);
    file_->pwrite_exact(hdr, sizeof(hdr), 0);
  }

  void add(const CompoundKey& k, const Value& v) { add_leaf(hash_leaf(k, v)); }

  void add_leaf(const Digest& d) {
    if (added_ == n_) throw std::logic_error("merkle stream longer than n");
    ++added_;
    cache_[0].push_back(d);
    for (std::size_t i = 0; i + 1 < shape_.depth(); ++i) {
      if (cache_[i].size() < m_) break;
      cache_[i + 1].push_back(hash_internal(cache_[i]));
      flush_buffer(i);
    }
  }

  Digest finish() {
    if (added_ != n_) throw std::logic_error("merkle stream shorter than n");
    for (std::size_t i = 0; i < shape_.depth(); ++i) {
      if (cache_[i].empty()) continue;
      if (i + 1 < shape_.depth()) cache_[i + 1].push_back(hash_internal(cache_[i]));
      if (i + 1 == shape_.depth()) root_ = cache_[i].back();
      flush_buffer(i);
    }
    if (shape_.depth() == 1) {
      // n == 1: the single leaf is the root.
      std::uint8_t buf[32];
      file_->pread_exact(buf, 32, kMerkleHeaderSize);
      std::memcpy(root_.bytes.data(), buf, 32);
    }
    file_->sync();
    return root_;
  }

  Digest root() const { return root_; }

 private:
  static void put_u64(std::uint8_t* p, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * (7 - i)));
  }

  void flush_buffer(std::size_t layer) {
    auto& buf = cache_[layer];
    file_->pwrite_exact(buf.data()->bytes.data(), buf.size() * 32,
                        kMerkleHeaderSize + write_off_[layer] * 32);
    write_off_[layer] += buf.size();
    buf.clear();
  }

  FileHandle* file_;
  std::uint64_t n_, m_;
  MerkleShape shape_;
  std::vector<std::vector<Digest>> cache_;
  std::vector<std::uint64_t> write_off_;
  std::uint64_t added_ = 0;
  Digest root_;
};

struct MerkleRangeProof {
  std::uint64_t n = 0;
  std::uint64_t m = 0;
  std::uint64_t pos_l = 0;
  std::uint64_t pos_u = 0;  // inclusive leaf range
  std::vector<std::pair<std::uint64_t, Digest>> siblings;  // (file position, digest)
};

class MerkleFile {
 public:
  explicit MerkleFile(const std::filesystem::path& path)
      : file_(FileHandle::open_readonly(path)) {
    std::uint8_t hdr[kMerkleHeaderSize];
    file_.pread_exact(hdr, sizeof(hdr), 0);
    if (get_u64(hdr) != kMerkleMagic) throw std::runtime_error("bad merkle file magic");
    n_ = get_u64(hdr + 8);
    m_ = get_u64(hdr + 16);
    shape_ = MerkleShape(n_, m_);
  }

  std::uint64_t leaf_count() const { return n_; }
  std::uint64_t fanout() const { return m_; }
  const MerkleShape& shape() const { return shape_; }

  Digest digest_at(std::uint64_t pos) const {
    if (pos >= shape_.total) throw std::out_of_range("merkle digest position");
    Digest d;
    file_.pread_exact(d.bytes.data(), 32, kMerkleHeaderSize + pos * 32);
    return d;
  }

  Digest root() const { return digest_at(shape_.total - 1); }

  MerkleRangeProof range_proof(std::uint64_t pos_l, std::uint64_t pos_u) const {
    if (pos_l > pos_u || pos_u >= n_) throw std::out_of_range("bad proof range");
    MerkleRangeProof proof{n_, m_, pos_l, pos_u, {}};
    std::uint64_t l = pos_l, r = pos_u;
    for (std::size_t i = 0; i + 1 < shape_.depth(); ++i) {
      std::uint64_t pl = shape_.parent_position(l, i, m_);
      std::uint64_t pr = shape_.parent_position(r, i, m_);
      auto [lb, le] = shape_.child_range(pl, i + 1, m_);
      for (std::uint64_t p = lb; p < le; ++p)
        if (p < l) proof.siblings.emplace_back(p, digest_at(p));
      auto [rb, re] = shape_.child_range(pr, i + 1, m_);
      for (std::uint64_t p = rb; p < re; ++p)
        if (p > r) proof.siblings.emplace_back(p, digest_at(p));
      l = pl;
      r = pr;
    }
    return proof;
  }

 private:
  static std::uint64_t get_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | p[i];
    return v;
  }

  FileHandle file_;
  std::uint64_t n_ = 0, m_ = 0;
  MerkleShape shape_;
};

// Replays a range proof against the claimed leaf digests. Strict: every
// supplied sibling must be consumed exactly once and no sibling may collide
// with a claimed leaf.
inline std::optional<Digest> replay_range_proof(const MerkleRangeProof& proof,
                                                std::span<const Digest> leaves) {
  if (proof.n == 0 || proof.m < 2) return std::nullopt;
  if (proof.pos_l > proof.pos_u || proof.pos_u >= proof.n) return std::nullopt;
  if (leaves.size() != proof.pos_u - proof.pos_l + 1) return std::nullopt;
  MerkleShape shape(proof.n, proof.m);

  std::map<std::uint64_t, Digest> known;
  for (std::size_t i = 0; i < leaves.size(); ++i) known[proof.pos_l + i] = leaves[i];
  std::set<std::uint64_t> unused;
  for (const auto& [pos, d] : proof.siblings) {
    if (pos >= shape.total) return std::nullopt;
    if (!known.emplace(pos, d).second) return std::nullopt;  // duplicate/collision
    unused.insert(pos);
  }

  std::uint64_t l = proof.pos_l, r = proof.pos_u;
  for (std::size_t i = 0; i + 1 < shape.depth(); ++i) {
    std::uint64_t pl = shape.parent_position(l, i, proof.m);
    std::uint64_t pr = shape.parent_position(r, i, proof.m);
    for (std::uint64_t p = pl; p <= pr; ++p) {
      auto [cb, ce] = shape.child_range(p, i + 1, proof.m);
      std::vector<Digest> children;
      for (std::uint64_t c = cb; c < ce; ++c) {
        auto it = known.find(c);
        if (it == known.end()) return std::nullopt;
        unused.erase(c);
        children.push_back(it->second);
      }
      if (unused.count(p)) return std::nullopt;  // sibling shadows a computed node
      known[p] = hash_internal(children);
    }
    l = pl;
    r = pr;
  }
  if (!unused.empty()) return std::nullopt;
  return known[shape.total - 1];
}

}  // namespace cole
