#pragma once

#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "cole/hasher.hpp"

namespace cole {

inline constexpr std::size_t kMBTreeFanout = 16;

// Root hash of an empty tree; committed as-is in root_hash_list.
inline Digest empty_tree_digest() { return Digest{}; }

struct MBProofNode {
  enum class Kind : std::uint8_t { Opaque = 0, Internal = 1, Leaf = 2 };
  Kind kind = Kind::Opaque;
  Digest digest;                                       // Opaque only
  std::vector<MBProofNode> kids;                       // Internal only
  std::vector<std::pair<CompoundKey, Value>> entries;  // Leaf only
};

struct MBTreeRangeProof {
  bool empty_tree = false;
  MBProofNode root;
};

// Merkle B+-tree for the in-memory level: absorbs writes, answers
// predecessor/range lookups with proofs, drains sorted at flush time.
// Single writer; no deletes.
class MBTree {
 public:
  MBTree() = default;

  std::size_t size() const { return count_; }
  bool empty() const { return count_ == 0; }

  Digest root_hash() const { return root_ ? root_->dig : empty_tree_digest(); }

  void insert(const CompoundKey& k, const Value& v) {
    if (!root_) {
      root_ = std::make_unique<Node>(true);
      root_->keys.push_back(k);
      root_->values.push_back(v);
      root_->rehash();
      count_ = 1;
      return;
    }
    auto split = insert_rec(root_.get(), k, v);
    if (split) {
      auto new_root = std::make_unique<Node>(false);
      new_root->keys.push_back(root_->keys.front());
      new_root->keys.push_back(split->keys.front());
      new_root->kids.push_back(std::move(root_));
      new_root->kids.push_back(std::move(split));
      new_root->rehash();
      root_ = std::move(new_root);
    }
  }

  std::optional<std::pair<CompoundKey, Value>> search_predecessor(const CompoundKey& q) const {
    const Node* n = root_.get();
    if (!n) return std::nullopt;
    if (q < n->keys.front()) return std::nullopt;
    while (!n->leaf) {
      std::size_t i = child_index(n, q);
      n = n->kids[i].get();
    }
    std::size_t i = 0;
    while (i + 1 < n->keys.size() && n->keys[i + 1] <= q) ++i;
    if (n->keys[i] > q) return std::nullopt;
    return std::make_pair(n->keys[i], n->values[i]);
  }

  // Entries with lo <= key <= hi plus the predecessor of lo when one exists;
  // the proof reconstructs root_hash and witnesses completeness at both ends.
  std::pair<std::vector<std::pair<CompoundKey, Value>>, MBTreeRangeProof> search_range(
      const CompoundKey& lo, const CompoundKey& hi) const {
    MBTreeRangeProof proof;
    std::vector<std::pair<CompoundKey, Value>> results;
    if (!root_) {
      proof.empty_tree = true;
      return {results, proof};
    }
    // Widen the range to the boundary witness keys so the covering leaves
    // are included in full.
    CompoundKey a = lo, b = hi;
    if (auto p = search_predecessor(lo)) a = p->first;
    if (auto s = successor(hi)) b = s->first;
    proof.root = build_proof(root_.get(), a, b);
    collect_results(proof.root, lo, hi, a, results);
    return {results, proof};
  }

  std::optional<std::pair<CompoundKey, Value>> successor(const CompoundKey& q) const {
    const Node* n = root_.get();
    if (!n) return std::nullopt;
    std::optional<std::pair<CompoundKey, Value>> best;
    while (!n->leaf) {
      std::size_t i = child_index(n, q);
      // A strictly-greater key can also live in the next subtree.
      if (i + 1 < n->kids.size()) {
        const Node* r = n->kids[i + 1].get();
        while (!r->leaf) r = r->kids.front().get();
        best = std::make_pair(r->keys.front(), r->values.front());
      }
      n = n->kids[i].get();
    }
    for (std::size_t i = 0; i < n->keys.size(); ++i)
      if (n->keys[i] > q) return std::make_pair(n->keys[i], n->values[i]);
    return best;
  }

  std::vector<std::pair<CompoundKey, Value>> drain_sorted() {
    std::vector<std::pair<CompoundKey, Value>> out;
    out.reserve(count_);
    collect(root_.get(), out);
    root_.reset();
    count_ = 0;
    return out;
  }

  template <typename Fn>
  void for_each(Fn&& fn) const {
    for_each_rec(root_.get(), fn);
  }

 private:
  struct Node {
    explicit Node(bool is_leaf) : leaf(is_leaf) {}
    bool leaf;
    std::vector<CompoundKey> keys;  // leaf: entry keys; internal: child min keys
    std::vector<Value> values;
    std::vector<std::unique_ptr<Node>> kids;
    Digest dig;

    void rehash() {
      std::vector<Digest> ds;
      if (leaf) {
        ds.reserve(keys.size());
        for (std::size_t i = 0; i < keys.size(); ++i)
          ds.push_back(hash_leaf(keys[i], values[i]));
      } else {
        ds.reserve(kids.size());
        for (const auto& c : kids) ds.push_back(c->dig);
      }
      dig = hash_internal(ds);
    }
  };

  static std::size_t child_index(const Node* n, const CompoundKey& q) {
    std::size_t i = 0;
    while (i + 1 < n->keys.size() && n->keys[i + 1] <= q) ++i;
    return i;
  }

  // Returns the new right sibling when the child split.
  std::unique_ptr<Node> insert_rec(Node* n, const CompoundKey& k, const Value& v) {
    if (n->leaf) {
      std::size_t i = 0;
      while (i < n->keys.size() && n->keys[i] < k) ++i;
      if (i < n->keys.size() && n->keys[i] == k) {
        n->values[i] = v;  // same (addr, blk): last write wins
        n->rehash();
        return nullptr;
      }
      n->keys.insert(n->keys.begin() + i, k);
      n->values.insert(n->values.begin() + i, v);
      ++count_;
      if (n->keys.size() > kMBTreeFanout) {
        auto right = std::make_unique<Node>(true);
        std::size_t half = n->keys.size() / 2;
        right->keys.assign(n->keys.begin() + half, n->keys.end());
        right->values.assign(n->values.begin() + half, n->values.end());
        n->keys.resize(half);
        n->values.resize(half);
        n->rehash();
        right->rehash();
        return right;
      }
      n->rehash();
      return nullptr;
    }
    std::size_t i = (k < n->keys.front()) ? 0 : child_index(n, k);
    auto split = insert_rec(n->kids[i].get(), k, v);
    n->keys[i] = n->kids[i]->keys.front();
    if (split) {
      n->keys.insert(n->keys.begin() + i + 1, split->keys.front());
      n->kids.insert(n->kids.begin() + i + 1, std::move(split));
    }
    if (n->kids.size() > kMBTreeFanout) {
      auto right = std::make_unique<Node>(false);
      std::size_t half = n->kids.size() / 2;
      right->keys.assign(n->keys.begin() + half, n->keys.end());
      for (std::size_t j = half; j < n->kids.size(); ++j)
        right->kids.push_back(std::move(n->kids[j]));
      n->keys.resize(half);
      n->kids.resize(half);
      n->rehash();
      right->rehash();
      return right;
    }
    n->rehash();
    return nullptr;
  }

  // Include in full every subtree that may hold keys in [a, b]; everything
  // else collapses to its digest.
  MBProofNode build_proof(const Node* n, const CompoundKey& a, const CompoundKey& b) const {
    MBProofNode p;
    if (n->leaf) {
      if (n->keys.back() < a || n->keys.front() > b) {
        p.kind = MBProofNode::Kind::Opaque;
        p.digest = n->dig;
        return p;
      }
      p.kind = MBProofNode::Kind::Leaf;
      for (std::size_t i = 0; i < n->keys.size(); ++i)
        p.entries.emplace_back(n->keys[i], n->values[i]);
      return p;
    }
    if (n->keys.front() > b) {
      p.kind = MBProofNode::Kind::Opaque;
      p.digest = n->dig;
      return p;
    }
    p.kind = MBProofNode::Kind::Internal;
    bool any_open = false;
    for (std::size_t i = 0; i < n->kids.size(); ++i) {
      bool overlaps = !(n->keys[i] > b) && (i + 1 == n->kids.size() || !(n->keys[i + 1] <= a));
      if (overlaps) {
        p.kids.push_back(build_proof(n->kids[i].get(), a, b));
        any_open = any_open || p.kids.back().kind != MBProofNode::Kind::Opaque;
      } else {
        MBProofNode o;
        o.kind = MBProofNode::Kind::Opaque;
        o.digest = n->kids[i]->dig;
        p.kids.push_back(std::move(o));
      }
    }
    if (!any_open) {
      p = MBProofNode{};
      p.kind = MBProofNode::Kind::Opaque;
      p.digest = n->dig;
    }
    return p;
  }

  static void collect_results(const MBProofNode& p, const CompoundKey& lo, const CompoundKey& hi,
                              const CompoundKey& pred, std::vector<std::pair<CompoundKey, Value>>& out) {
    if (p.kind == MBProofNode::Kind::Leaf) {
      for (const auto& [k, v] : p.entries)
        if ((k >= lo && k <= hi) || (k == pred && pred < lo)) out.emplace_back(k, v);
    } else if (p.kind == MBProofNode::Kind::Internal) {
      for (const auto& c : p.kids) collect_results(c, lo, hi, pred, out);
    }
  }

  static void collect(const Node* n, std::vector<std::pair<CompoundKey, Value>>& out) {
    if (!n) return;
    if (n->leaf) {
      for (std::size_t i = 0; i < n->keys.size(); ++i) out.emplace_back(n->keys[i], n->values[i]);
      return;
    }
    for (const auto& c : n->kids) collect(c.get(), out);
  }

  template <typename Fn>
  static void for_each_rec(const Node* n, Fn& fn) {
    if (!n) return;
    if (n->leaf) {
      for (std::size_t i = 0; i < n->keys.size(); ++i) fn(n->keys[i], n->values[i]);
      return;
    }
    for (const auto& c : n->kids) for_each_rec(c.get(), fn);
  }

  std::unique_ptr<Node> root_;
  std::size_t count_ = 0;
};

// Recomputes the digest of a proof subtree.
inline Digest mb_proof_digest(const MBProofNode& p) {
  switch (p.kind) {
    case MBProofNode::Kind::Opaque:
      return p.digest;
    case MBProofNode::Kind::Leaf: {
      std::vector<Digest> ds;
      ds.reserve(p.entries.size());
      for (const auto& [k, v] : p.entries) ds.push_back(hash_leaf(k, v));
      if (ds.empty()) throw std::runtime_error("empty proof leaf");
      return hash_internal(ds);
    }
    case MBProofNode::Kind::Internal: {
      std::vector<Digest> ds;
      ds.reserve(p.kids.size());
      for (const auto& c : p.kids) ds.push_back(mb_proof_digest(c));
      if (ds.empty()) throw std::runtime_error("empty proof internal node");
      return hash_internal(ds);
    }
  }
  throw std::logic_error("bad proof node kind");
}

// Verifies an MB-tree range proof: returns the reconstructed root digest and
// the in-order entry list iff the proof is structurally sound and complete
// for [lo, hi]; nullopt otherwise. The caller compares the digest against the
// committed root hash.
inline std::optional<std::pair<Digest, std::vector<std::pair<CompoundKey, Value>>>>
mb_verify_range_proof(const MBTreeRangeProof& proof, const CompoundKey& lo,
                      const CompoundKey& hi) {
  if (proof.empty_tree) return std::make_pair(empty_tree_digest(),
                                              std::vector<std::pair<CompoundKey, Value>>{});
  struct Token {
    bool opaque;
    CompoundKey key;
    Value value;
  };
  std::vector<Token> tokens;
  bool ok = true;
  auto flatten = [&](auto&& self, const MBProofNode& p) -> void {
    if (!ok) return;
    switch (p.kind) {
      case MBProofNode::Kind::Opaque:
        tokens.push_back({true, {}, {}});
        return;
      case MBProofNode::Kind::Leaf:
        if (p.entries.empty() || p.entries.size() > kMBTreeFanout) ok = false;
        for (const auto& [k, v] : p.entries) tokens.push_back({false, k, v});
        return;
      case MBProofNode::Kind::Internal:
        if (p.kids.empty() || p.kids.size() > kMBTreeFanout) ok = false;
        for (const auto& c : p.kids) self(self, c);
        return;
    }
    ok = false;
  };
  Digest root;
  try {
    root = mb_proof_digest(proof.root);
  } catch (const std::exception&) {
    return std::nullopt;
  }
  flatten(flatten, proof.root);
  if (!ok) return std::nullopt;

  // Entries must be strictly sorted.
  std::vector<std::pair<CompoundKey, Value>> entries;
  for (const auto& t : tokens)
    if (!t.opaque) entries.emplace_back(t.key, t.value);
  for (std::size_t i = 1; i < entries.size(); ++i)
    if (!(entries[i - 1].first < entries[i].first)) return std::nullopt;

  // Completeness: no opaque subtree may sit strictly between the last
  // entry below lo and the first entry above hi.
  std::ptrdiff_t i_lo = -1;
  std::ptrdiff_t j_hi = static_cast<std::ptrdiff_t>(tokens.size());
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(tokens.size()); ++i) {
    if (!tokens[i].opaque && tokens[i].key < lo) i_lo = i;
    if (!tokens[i].opaque && tokens[i].key > hi && j_hi == static_cast<std::ptrdiff_t>(tokens.size()))
      j_hi = i;
  }
  for (std::ptrdiff_t i = i_lo + 1; i < j_hi; ++i)
    if (tokens[i].opaque) return std::nullopt;
  return std::make_pair(root, std::move(entries));
}

}  // namespace cole
