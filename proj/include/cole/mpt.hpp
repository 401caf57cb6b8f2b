#pragma once

#include <filesystem>
#include <optional>
#include <unordered_map>
#include <vector>

#include "cole/hasher.hpp"
#include "cole/paged_file.hpp"

namespace cole {

// Simplified persistent Merkle Patricia Trie over the 64 hex nibbles of an
// address. Updates duplicate every node on the search path; obsolete nodes
// stay in the store, so every historical root remains resolvable.
struct MptNode {
  enum class Kind : std::uint8_t { Leaf = 0, Extension = 1, Branch = 2 };
  Kind kind = Kind::Leaf;
  std::vector<std::uint8_t> path;  // nibbles: leaf suffix or extension path
  Value value;                     // leaf, or branch value when has_value
  Digest child;                    // extension
  std::array<Digest, 16> children{};  // branch; zero digest = absent
  bool has_value = false;             // branch only (unused for fixed-size keys)

  std::vector<std::uint8_t> encode() const {
    std::vector<std::uint8_t> out;
    out.push_back(static_cast<std::uint8_t>(kind));
    switch (kind) {
      case Kind::Leaf:
        out.push_back(static_cast<std::uint8_t>(path.size()));
        out.insert(out.end(), path.begin(), path.end());
        out.insert(out.end(), value.bytes.begin(), value.bytes.end());
        break;
      case Kind::Extension:
        out.push_back(static_cast<std::uint8_t>(path.size()));
        out.insert(out.end(), path.begin(), path.end());
        out.insert(out.end(), child.bytes.begin(), child.bytes.end());
        break;
      case Kind::Branch: {
        std::uint16_t bitmap = 0;
        for (int i = 0; i < 16; ++i)
          if (children[i] != Digest{}) bitmap |= static_cast<std::uint16_t>(1u << i);
        out.push_back(static_cast<std::uint8_t>(bitmap >> 8));
        out.push_back(static_cast<std::uint8_t>(bitmap));
        for (int i = 0; i < 16; ++i)
          if (bitmap & (1u << i))
            out.insert(out.end(), children[i].bytes.begin(), children[i].bytes.end());
        out.push_back(has_value ? 1 : 0);
        if (has_value) out.insert(out.end(), value.bytes.begin(), value.bytes.end());
        break;
      }
    }
    return out;
  }

  static MptNode decode(std::span<const std::uint8_t> in) {
    auto need = [&](std::size_t at, std::size_t n) {
      if (in.size() < at + n) throw std::runtime_error("mpt: truncated node");
    };
    need(0, 1);
    MptNode n;
    std::size_t p = 1;
    switch (in[0]) {
      case 0: {
        n.kind = Kind::Leaf;
        need(p, 1);
        std::size_t len = in[p++];
        need(p, len + kValueLen);
        n.path.assign(in.begin() + p, in.begin() + p + len);
        p += len;
        std::memcpy(n.value.bytes.data(), in.data() + p, kValueLen);
        p += kValueLen;
        break;
      }
      case 1: {
        n.kind = Kind::Extension;
        need(p, 1);
        std::size_t len = in[p++];
        need(p, len + 32);
        n.path.assign(in.begin() + p, in.begin() + p + len);
        p += len;
        std::memcpy(n.child.bytes.data(), in.data() + p, 32);
        p += 32;
        break;
      }
      case 2: {
        n.kind = Kind::Branch;
        need(p, 2);
        std::uint16_t bitmap = static_cast<std::uint16_t>((in[p] << 8) | in[p + 1]);
        p += 2;
        for (int i = 0; i < 16; ++i) {
          if (bitmap & (1u << i)) {
            need(p, 32);
            std::memcpy(n.children[i].bytes.data(), in.data() + p, 32);
            p += 32;
          }
        }
        need(p, 1);
        n.has_value = in[p++] != 0;
        if (n.has_value) {
          need(p, kValueLen);
          std::memcpy(n.value.bytes.data(), in.data() + p, kValueLen);
          p += kValueLen;
        }
        break;
      }
      default:
        throw std::runtime_error("mpt: bad node kind");
    }
    if (p != in.size()) throw std::runtime_error("mpt: trailing node bytes");
    return n;
  }

  Digest digest() const {
    auto e = encode();
    return sha256(e);
  }
};

// Hash-addressed append-only node log with an in-memory offset map.
// Record layout: len(u32 BE) || digest(32) || encoding.
class MptNodeStore {
 public:
  explicit MptNodeStore(const std::filesystem::path& path)
      : file_(std::filesystem::exists(path) ? FileHandle::open_rw(path)
                                            : FileHandle::create(path)) {
    std::uint64_t size = file_.size(), off = 0;
    while (off < size) {
      std::uint8_t hdr[36];
      file_.pread_exact(hdr, sizeof(hdr), off);
      std::uint32_t len = (hdr[0] << 24) | (hdr[1] << 16) | (hdr[2] << 8) | hdr[3];
      offsets_.emplace(prefix_of(hdr + 4), off);
      off += 36 + len;
      ++count_;
    }
    end_ = off;
  }

  Digest put(const MptNode& node) {
    auto enc = node.encode();
    Digest d = sha256(enc);
    if (offsets_.count(prefix_of(d.bytes.data()))) return d;  // already stored
    std::vector<std::uint8_t> rec(36 + enc.size());
    rec[0] = static_cast<std::uint8_t>(enc.size() >> 24);
    rec[1] = static_cast<std::uint8_t>(enc.size() >> 16);
    rec[2] = static_cast<std::uint8_t>(enc.size() >> 8);
    rec[3] = static_cast<std::uint8_t>(enc.size());
    std::memcpy(rec.data() + 4, d.bytes.data(), 32);
    std::memcpy(rec.data() + 36, enc.data(), enc.size());
    file_.pwrite_exact(rec.data(), rec.size(), end_);
    offsets_.emplace(prefix_of(d.bytes.data()), end_);
    end_ += rec.size();
    ++count_;
    return d;
  }

  std::vector<std::uint8_t> get_encoding(const Digest& d) const {
    auto it = offsets_.find(prefix_of(d.bytes.data()));
    if (it == offsets_.end()) throw std::runtime_error("mpt: missing node");
    std::uint8_t hdr[36];
    file_.pread_exact(hdr, sizeof(hdr), it->second);
    if (std::memcmp(hdr + 4, d.bytes.data(), 32) != 0)
      throw std::runtime_error("mpt: node digest mismatch");
    std::uint32_t len = (hdr[0] << 24) | (hdr[1] << 16) | (hdr[2] << 8) | hdr[3];
    std::vector<std::uint8_t> enc(len);
    file_.pread_exact(enc.data(), len, it->second + 36);
    return enc;
  }

  MptNode get(const Digest& d) const { return MptNode::decode(get_encoding(d)); }

  std::uint64_t bytes() const { return end_; }
  std::uint64_t node_count() const { return count_; }
  void sync() { file_.sync(); }

 private:
  static std::uint64_t prefix_of(const std::uint8_t* d) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | d[i];
    return v;
  }

  FileHandle file_;
  std::unordered_map<std::uint64_t, std::uint64_t> offsets_;
  std::uint64_t end_ = 0;
  std::uint64_t count_ = 0;
};

struct MptPathProof {
  std::vector<std::vector<std::uint8_t>> nodes;  // root first, raw encodings
};

class Mpt {
 public:
  explicit Mpt(const std::filesystem::path& path) : store_(path) {}

  static Digest empty_root() { return Digest{}; }

  static std::vector<std::uint8_t> nibbles(const Address& addr) {
    std::vector<std::uint8_t> out;
    out.reserve(2 * kAddrLen);
    for (auto b : addr.bytes) {
      out.push_back(b >> 4);
      out.push_back(b & 0xf);
    }
    return out;
  }

  Digest put(const Digest& root, const Address& addr, const Value& v) {
    auto nib = nibbles(addr);
    return insert(root, std::span<const std::uint8_t>(nib), v);
  }

  std::optional<Value> get(const Digest& root, const Address& addr) const {
    MptPathProof unused;
    return lookup(root, addr, nullptr);
  }

  std::pair<std::optional<Value>, MptPathProof> get_with_proof(const Digest& root,
                                                               const Address& addr) const {
    MptPathProof proof;
    auto v = lookup(root, addr, &proof);
    return {v, std::move(proof)};
  }

  // Returns the proven lookup outcome (value or proven absence), or nullopt
  // if the proof does not reconstruct the root.
  static std::optional<std::optional<Value>> verify_path(const Digest& root, const Address& addr,
                                                         const MptPathProof& proof) {
    try {
      auto nib = nibbles(addr);
      std::size_t depth = 0;
      Digest expect = root;
      if (root == Digest{})
        return proof.nodes.empty() ? std::make_optional(std::optional<Value>{}) : std::nullopt;
      for (std::size_t i = 0; i < proof.nodes.size(); ++i) {
        if (sha256(proof.nodes[i]) != expect) return std::nullopt;
        MptNode n = MptNode::decode(proof.nodes[i]);
        bool last = i + 1 == proof.nodes.size();
        switch (n.kind) {
          case MptNode::Kind::Leaf: {
            if (!last) return std::nullopt;
            std::span<const std::uint8_t> rest(nib.data() + depth, nib.size() - depth);
            if (rest.size() == n.path.size() &&
                std::equal(rest.begin(), rest.end(), n.path.begin()))
              return std::make_optional(std::optional<Value>{n.value});
            return std::make_optional(std::optional<Value>{});  // divergent leaf
          }
          case MptNode::Kind::Extension: {
            if (depth + n.path.size() > nib.size()) return std::nullopt;
            if (!std::equal(n.path.begin(), n.path.end(), nib.begin() + depth)) {
              if (!last) return std::nullopt;
              return std::make_optional(std::optional<Value>{});  // divergent path
            }
            depth += n.path.size();
            expect = n.child;
            if (last) return std::nullopt;
            break;
          }
          case MptNode::Kind::Branch: {
            if (depth >= nib.size()) return std::nullopt;
            Digest c = n.children[nib[depth]];
            ++depth;
            if (c == Digest{})
              return last ? std::make_optional(std::optional<Value>{}) : std::nullopt;
            expect = c;
            if (last) return std::nullopt;
            break;
          }
        }
      }
      return std::nullopt;  // empty proof for nonempty root
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }

  std::uint64_t storage_bytes() const { return store_.bytes(); }
  std::uint64_t node_count() const { return store_.node_count(); }
  void sync() { store_.sync(); }

 private:
  Digest insert(const Digest& node, std::span<const std::uint8_t> rest, const Value& v) {
    if (node == Digest{}) {
      MptNode leaf;
      leaf.kind = MptNode::Kind::Leaf;
      leaf.path.assign(rest.begin(), rest.end());
      leaf.value = v;
      return store_.put(leaf);
    }
    MptNode n = store_.get(node);
    switch (n.kind) {
      case MptNode::Kind::Leaf: {
        std::size_t cp = common_prefix(n.path, rest);
        if (cp == rest.size()) {  // same key: replace value
          MptNode leaf = n;
          leaf.value = v;
          return store_.put(leaf);
        }
        MptNode branch;
        branch.kind = MptNode::Kind::Branch;
        branch.children[n.path[cp]] = store_.put(make_leaf(
            std::span<const std::uint8_t>(n.path.data() + cp + 1, n.path.size() - cp - 1),
            n.value));
        branch.children[rest[cp]] = store_.put(
            make_leaf(std::span<const std::uint8_t>(rest.data() + cp + 1, rest.size() - cp - 1),
                      v));
        return wrap_prefix(rest.first(cp), store_.put(branch));
      }
      case MptNode::Kind::Extension: {
        std::size_t cp = common_prefix(n.path, rest);
        if (cp == n.path.size()) {
          MptNode ext = n;
          ext.child = insert(n.child, rest.subspan(cp), v);
          return store_.put(ext);
        }
        MptNode branch;
        branch.kind = MptNode::Kind::Branch;
        // Existing subtree under its diverging nibble.
        if (n.path.size() - cp - 1 == 0) {
          branch.children[n.path[cp]] = n.child;
        } else {
          MptNode ext;
          ext.kind = MptNode::Kind::Extension;
          ext.path.assign(n.path.begin() + cp + 1, n.path.end());
          ext.child = n.child;
          branch.children[n.path[cp]] = store_.put(ext);
        }
        branch.children[rest[cp]] = store_.put(
            make_leaf(std::span<const std::uint8_t>(rest.data() + cp + 1, rest.size() - cp - 1),
                      v));
        return wrap_prefix(rest.first(cp), store_.put(branch));
      }
      case MptNode::Kind::Branch: {
        MptNode branch = n;
        std::uint8_t b = rest[0];
        branch.children[b] = insert(n.children[b], rest.subspan(1), v);
        return store_.put(branch);
      }
    }
    throw std::logic_error("mpt: bad node kind");
  }

  static MptNode make_leaf(std::span<const std::uint8_t> path, const Value& v) {
    MptNode leaf;
    leaf.kind = MptNode::Kind::Leaf;
    leaf.path.assign(path.begin(), path.end());
    leaf.value = v;
    return leaf;
  }

  Digest wrap_prefix(std::span<const std::uint8_t> prefix, const Digest& child) {
    if (prefix.empty()) return child;
    MptNode ext;
    ext.kind = MptNode::Kind::Extension;
    ext.path.assign(prefix.begin(), prefix.end());
    ext.child = child;
    return store_.put(ext);
  }

  template <typename A, typename B>
  static std::size_t common_prefix(const A& a, const B& b) {
    std::size_t i = 0;
    while (i < a.size() && i < b.size() && a[i] == b[i]) ++i;
    return i;
  }

  std::optional<Value> lookup(const Digest& root, const Address& addr,
                              MptPathProof* proof) const {
    if (root == Digest{}) return std::nullopt;
    auto nib = nibbles(addr);
    std::size_t depth = 0;
    Digest cur = root;
    for (;;) {
      auto enc = store_.get_encoding(cur);
      if (proof) proof->nodes.push_back(enc);
      MptNode n = MptNode::decode(enc);
      switch (n.kind) {
        case MptNode::Kind::Leaf: {
          std::span<const std::uint8_t> rest(nib.data() + depth, nib.size() - depth);
          if (rest.size() == n.path.size() &&
              std::equal(rest.begin(), rest.end(), n.path.begin()))
            return n.value;
          return std::nullopt;
        }
        case MptNode::Kind::Extension: {
          if (depth + n.path.size() > nib.size() ||
              !std::equal(n.path.begin(), n.path.end(), nib.begin() + depth))
            return std::nullopt;
          depth += n.path.size();
          cur = n.child;
          break;
        }
        case MptNode::Kind::Branch: {
          Digest c = n.children[nib[depth]];
          ++depth;
          if (c == Digest{}) return std::nullopt;
          cur = c;
          break;
        }
      }
    }
  }

  mutable MptNodeStore store_;
};

// Per-block root bookkeeping over an Mpt, mirroring the engine's block API.
class MptChain {
 public:
  explicit MptChain(const std::filesystem::path& dir)
      : dir_(dir),
        mpt_((std::filesystem::create_directories(dir), dir / "nodes.log")) {
    roots_path_ = dir / "roots.log";
    if (std::filesystem::exists(roots_path_)) {
      auto f = FileHandle::open_readonly(roots_path_);
      std::uint64_t size = f.size();
      for (std::uint64_t off = 0; off + 40 <= size; off += 40) {
        std::uint8_t rec[40];
        f.pread_exact(rec, 40, off);
        std::uint64_t h = 0;
        for (int i = 0; i < 8; ++i) h = (h << 8) | rec[i];
        Digest d;
        std::memcpy(d.bytes.data(), rec + 8, 32);
        roots_.emplace_back(h, d);
      }
      if (!roots_.empty()) current_ = roots_.back().second;
    }
  }

  void begin_block(std::uint64_t height) {
    if (in_block_) throw std::logic_error("block already open");
    if (!roots_.empty() && height <= roots_.back().first)
      throw std::invalid_argument("block height must increase");
    height_ = height;
    in_block_ = true;
  }

  void put(const Address& addr, const Value& v) {
    if (!in_block_) throw std::logic_error("no open block");
    current_ = mpt_.put(current_, addr, v);
  }

  Digest finalize_block() {
    if (!in_block_) throw std::logic_error("no open block");
    in_block_ = false;
    roots_.emplace_back(height_, current_);
    std::uint8_t rec[40];
    for (int i = 0; i < 8; ++i) rec[i] = static_cast<std::uint8_t>(height_ >> (8 * (7 - i)));
    std::memcpy(rec + 8, current_.bytes.data(), 32);
    auto f = std::filesystem::exists(roots_path_) ? FileHandle::open_rw(roots_path_)
                                                  : FileHandle::create(roots_path_);
    f.pwrite_exact(rec, 40, (roots_.size() - 1) * 40);
    return current_;
  }

  // Latest root at or below height; empty sentinel when no block qualifies.
  Digest root_at(std::uint64_t height) const {
    Digest d = Mpt::empty_root();
    for (const auto& [h, r] : roots_) {
      if (h > height) break;
      d = r;
    }
    return d;
  }

  std::optional<Value> get(const Address& addr) const { return mpt_.get(current_, addr); }
  std::optional<Value> get_at(const Address& addr, std::uint64_t height) const {
    return mpt_.get(root_at(height), addr);
  }

  // Historical values of addr over [blk_l, blk_u]: one traversal per recorded
  // block in the range (plus the predecessor block to anchor the first
  // version), which is what makes this baseline linear in the range width.
  struct ProvResult {
    std::vector<std::pair<std::uint64_t, Value>> versions;  // blocks where addr changed
    std::vector<std::pair<std::uint64_t, MptPathProof>> proofs;  // per traversed block
  };
  ProvResult prov(const Address& addr, std::uint64_t blk_l, std::uint64_t blk_u) const {
    ProvResult out;
    std::optional<Value> prev;
    Digest prev_root = blk_l > 0 ? root_at(blk_l - 1) : Mpt::empty_root();
    if (prev_root != Mpt::empty_root()) prev = mpt_.get(prev_root, addr);
    for (const auto& [h, root] : roots_) {
      if (h < blk_l || h > blk_u) continue;
      auto [v, proof] = mpt_.get_with_proof(root, addr);
      out.proofs.emplace_back(h, std::move(proof));
      if (v && v != prev) out.versions.emplace_back(h, *v);
      prev = v;
    }
    return out;
  }

  bool verify_prov(const Address& addr, const ProvResult& r) const {
    for (const auto& [h, proof] : r.proofs) {
      auto v = Mpt::verify_path(root_at(h), addr, proof);
      if (!v) return false;
    }
    return true;
  }

  const Mpt& mpt() const { return mpt_; }
  Mpt& mpt() { return mpt_; }
  std::uint64_t storage_bytes() const {
    std::uint64_t total = 0;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir_))
      if (e.is_regular_file()) total += e.file_size();
    return total;
  }
  Digest current_root() const { return current_; }
  std::uint64_t block_count() const { return roots_.size(); }

 private:
  std::filesystem::path dir_, roots_path_;
  Mpt mpt_;
  std::vector<std::pair<std::uint64_t, Digest>> roots_;
  Digest current_ = Mpt::empty_root();
  std::uint64_t height_ = 0;
  bool in_block_ = false;
};

}  // namespace cole
