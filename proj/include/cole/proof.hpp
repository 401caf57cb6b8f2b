#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cole/bloom.hpp"
#include "cole/mbtree.hpp"
#include "cole/merkle_file.hpp"
#include "cole/run.hpp"

namespace cole {

inline constexpr std::uint64_t kProofMagic = 0x434f4c4550524f46ULL;  // "COLEPROF"
inline constexpr std::size_t kMaxProofDepth = 64;

// The committed structure of the store, as claimed by a prover. Hashing it in
// order (memory tree roots, then per level the writing runs oldest to newest
// followed by the merging runs oldest to newest, each run contributing
// root || bloom digest) must reproduce the trusted state digest.
struct CanonStructure {
  struct RunRef {
    Digest root;
    Digest bloom;
  };
  struct Level {
    std::vector<RunRef> writing;
    std::vector<RunRef> merging;
  };
  std::vector<Digest> mem_roots;  // one tree, or two when merges are async
  std::vector<Level> levels;

  Digest state_digest() const {
    Sha256Stream s;
    for (const auto& r : mem_roots) s.update(r.bytes);
    for (const auto& lvl : levels) {
      for (const auto& run : lvl.writing) {
        s.update(run.root.bytes);
        s.update(run.bloom.bytes);
      }
      for (const auto& run : lvl.merging) {
        s.update(run.root.bytes);
        s.update(run.bloom.bytes);
      }
    }
    return s.finish();
  }

  // Query order: memory trees, then per level writing newest to oldest
  // followed by merging newest to oldest. Entries reference mem_roots by
  // index (trees) or carry the run refs directly.
  struct OrderedUnit {
    bool is_tree;
    Digest root;
    Digest bloom;  // runs only
  };
  std::vector<OrderedUnit> search_order() const {
    std::vector<OrderedUnit> out;
    for (const auto& r : mem_roots) out.push_back({true, r, {}});
    for (const auto& lvl : levels) {
      for (std::size_t j = lvl.writing.size(); j-- > 0;)
        out.push_back({false, lvl.writing[j].root, lvl.writing[j].bloom});
      for (std::size_t j = lvl.merging.size(); j-- > 0;)
        out.push_back({false, lvl.merging[j].root, lvl.merging[j].bloom});
    }
    return out;
  }
};

// Per-unit evidence, in query order. A searched run carries a Merkle range
// proof plus the raw records of that leaf window; a run skipped by its Bloom
// filter carries the whole filter as a non-membership witness.
struct ProvUnit {
  enum class Kind : std::uint8_t { Tree = 0, RunSearched = 1, RunBloomSkip = 2 };
  Kind kind = Kind::Tree;
  MBTreeRangeProof tree_proof;     // Tree
  MerkleRangeProof merkle_proof;   // RunSearched
  std::vector<Record> window;      // RunSearched, leaves pos_l..pos_u
  BloomFilter bloom;               // RunBloomSkip
};

struct ProvenanceProof {
  Address addr;
  std::uint64_t blk_l = 0;
  std::uint64_t blk_u = 0;
  CanonStructure structure;
  std::vector<ProvUnit> units;  // prefix of the query order
};

// --- canonical byte serialization ---

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * (7 - i))));
  }
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void digest(const Digest& d) { bytes(d.bytes); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | data_[pos_++];
    return v;
  }
  void bytes(std::uint8_t* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  Digest digest() {
    Digest d;
    bytes(d.bytes.data(), 32);
    return d;
  }
  // Sanity bound for a count of elements each at least `unit` bytes long.
  std::uint64_t count(std::size_t unit) {
    std::uint64_t n = u64();
    if (unit > 0 && n > remaining() / unit) throw std::runtime_error("proof: count too large");
    return n;
  }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) {
    if (data_.size() - pos_ < n) throw std::runtime_error("proof: truncated");
  }
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

inline void write_mb_node(ByteWriter& w, const MBProofNode& n, std::size_t depth) {
  if (depth > kMaxProofDepth) throw std::runtime_error("proof: tree too deep");
  w.u8(static_cast<std::uint8_t>(n.kind));
  switch (n.kind) {
    case MBProofNode::Kind::Opaque:
      w.digest(n.digest);
      return;
    case MBProofNode::Kind::Leaf:
      w.u64(n.entries.size());
      for (const auto& [k, v] : n.entries) {
        std::uint8_t key[kKeyLen];
        k.encode_to(key);
        w.bytes(key);
        w.bytes(v.bytes);
      }
      return;
    case MBProofNode::Kind::Internal:
      w.u64(n.kids.size());
      for (const auto& c : n.kids) write_mb_node(w, c, depth + 1);
      return;
  }
  throw std::runtime_error("proof: bad node kind");
}

inline MBProofNode read_mb_node(ByteReader& r, std::size_t depth) {
  if (depth > kMaxProofDepth) throw std::runtime_error("proof: tree too deep");
  MBProofNode n;
  std::uint8_t kind = r.u8();
  switch (kind) {
    case 0:
      n.kind = MBProofNode::Kind::Opaque;
      n.digest = r.digest();
      return n;
    case 1: {
      n.kind = MBProofNode::Kind::Internal;
      std::uint64_t cnt = r.count(33);
      for (std::uint64_t i = 0; i < cnt; ++i) n.kids.push_back(read_mb_node(r, depth + 1));
      return n;
    }
    case 2: {
      n.kind = MBProofNode::Kind::Leaf;
      std::uint64_t cnt = r.count(kRecordSize);
      for (std::uint64_t i = 0; i < cnt; ++i) {
        std::uint8_t key[kKeyLen];
        r.bytes(key, kKeyLen);
        Value v;
        r.bytes(v.bytes.data(), kValueLen);
        n.entries.emplace_back(CompoundKey::decode(key), v);
      }
      return n;
    }
  }
  throw std::runtime_error("proof: bad node kind");
}

inline std::vector<std::uint8_t> serialize_proof(const ProvenanceProof& p) {
  ByteWriter w;
  w.u64(kProofMagic);
  w.bytes(p.addr.bytes);
  w.u64(p.blk_l);
  w.u64(p.blk_u);

  w.u64(p.structure.mem_roots.size());
  for (const auto& d : p.structure.mem_roots) w.digest(d);
  w.u64(p.structure.levels.size());
  for (const auto& lvl : p.structure.levels) {
    for (const auto* group : {&lvl.writing, &lvl.merging}) {
      w.u64(group->size());
      for (const auto& run : *group) {
        w.digest(run.root);
        w.digest(run.bloom);
      }
    }
  }

  w.u64(p.units.size());
  for (const auto& u : p.units) {
    w.u8(static_cast<std::uint8_t>(u.kind));
    switch (u.kind) {
      case ProvUnit::Kind::Tree:
        w.u8(u.tree_proof.empty_tree ? 1 : 0);
        if (!u.tree_proof.empty_tree) write_mb_node(w, u.tree_proof.root, 0);
        break;
      case ProvUnit::Kind::RunSearched: {
        const auto& m = u.merkle_proof;
        w.u64(m.n);
        w.u64(m.m);
        w.u64(m.pos_l);
        w.u64(m.pos_u);
        w.u64(m.siblings.size());
        for (const auto& [pos, d] : m.siblings) {
          w.u64(pos);
          w.digest(d);
        }
        w.u64(u.window.size());
        for (const auto& rec : u.window) {
          std::uint8_t buf[kRecordSize];
          encode_record(rec, buf);
          w.bytes(buf);
        }
        break;
      }
      case ProvUnit::Kind::RunBloomSkip: {
        auto b = u.bloom.serialize();
        w.u64(b.size());
        w.bytes(b);
        break;
      }
    }
  }
  return w.take();
}

// Throws on any malformed input; callers treat that as verification failure.
inline ProvenanceProof deserialize_proof(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  if (r.u64() != kProofMagic) throw std::runtime_error("proof: bad magic");
  ProvenanceProof p;
  r.bytes(p.addr.bytes.data(), kAddrLen);
  p.blk_l = r.u64();
  p.blk_u = r.u64();

  std::uint64_t nmem = r.count(32);
  if (nmem < 1 || nmem > 2) throw std::runtime_error("proof: bad memory root count");
  for (std::uint64_t i = 0; i < nmem; ++i) p.structure.mem_roots.push_back(r.digest());
  std::uint64_t nlevels = r.count(16);
  for (std::uint64_t i = 0; i < nlevels; ++i) {
    CanonStructure::Level lvl;
    for (auto* group : {&lvl.writing, &lvl.merging}) {
      std::uint64_t cnt = r.count(64);
      for (std::uint64_t j = 0; j < cnt; ++j)
        group->push_back({r.digest(), r.digest()});
    }
    p.structure.levels.push_back(std::move(lvl));
  }

  std::uint64_t nunits = r.count(1);
  for (std::uint64_t i = 0; i < nunits; ++i) {
    ProvUnit u;
    std::uint8_t kind = r.u8();
    switch (kind) {
      case 0: {
        u.kind = ProvUnit::Kind::Tree;
        std::uint8_t flag = r.u8();
        if (flag > 1) throw std::runtime_error("proof: bad empty-tree flag");
        u.tree_proof.empty_tree = flag != 0;
        if (!u.tree_proof.empty_tree) u.tree_proof.root = read_mb_node(r, 0);
        break;
      }
      case 1: {
        u.kind = ProvUnit::Kind::RunSearched;
        auto& m = u.merkle_proof;
        m.n = r.u64();
        m.m = r.u64();
        m.pos_l = r.u64();
        m.pos_u = r.u64();
        std::uint64_t ns = r.count(40);
        for (std::uint64_t j = 0; j < ns; ++j) {
          std::uint64_t pos = r.u64();
          m.siblings.emplace_back(pos, r.digest());
        }
        std::uint64_t nw = r.count(kRecordSize);
        for (std::uint64_t j = 0; j < nw; ++j) {
          std::uint8_t buf[kRecordSize];
          r.bytes(buf, kRecordSize);
          u.window.push_back(decode_record(buf));
        }
        break;
      }
      case 2: {
        u.kind = ProvUnit::Kind::RunBloomSkip;
        std::uint64_t len = r.count(1);
        std::vector<std::uint8_t> buf(len);
        r.bytes(buf.data(), len);
        u.bloom = BloomFilter::deserialize(buf);
        break;
      }
      default:
        throw std::runtime_error("proof: bad unit kind");
    }
    p.units.push_back(std::move(u));
  }
  if (!r.done()) throw std::runtime_error("proof: trailing bytes");
  return p;
}

}  // namespace cole
