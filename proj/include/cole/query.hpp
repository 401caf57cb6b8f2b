#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <vector>

#include "cole/engine.hpp"
#include "cole/proof.hpp"

namespace cole {

// Latest value of addr written at or before blk. Units are visited freshest
// first; versions in a fresher unit always carry higher block heights than
// versions of the same address in older units, so the first hit wins.
inline std::optional<Value> get_at(const Engine& e, const Address& addr, std::uint64_t blk,
                                   IoCounter* io = nullptr) {
  CompoundKey q{addr, blk};
  for (const auto& u : e.search_units()) {
    if (u.tree) {
      auto p = u.tree->search_predecessor(q);
      if (p && p->first.addr == addr) return p->second;
    } else {
      auto r = u.run->search(q, io);
      if (r && r->first.key.addr == addr) return r->first.value;
    }
  }
  return std::nullopt;
}

inline std::optional<Value> get(const Engine& e, const Address& addr,
                                IoCounter* io = nullptr) {
  return get_at(e, addr, kMaxHeight, io);
}

namespace detail {

inline void note_results(const Address& addr, std::uint64_t blk_l, std::uint64_t blk_u,
                         const CompoundKey& k, const Value& v,
                         std::map<std::uint64_t, Value>& results, bool& witness) {
  if (k.addr != addr) return;
  if (k.blk < blk_l) witness = true;
  if (k.blk >= blk_l && k.blk <= blk_u) results.emplace(k.blk, v);  // freshest wins
}

inline void check_prov_range(std::uint64_t blk_l, std::uint64_t blk_u) {
  if (blk_l < 1 || blk_l > blk_u || blk_u >= kMaxHeight)
    throw std::invalid_argument("bad provenance block range");
}

}  // namespace detail

// All values of addr written in blocks [blk_l, blk_u], with a proof against
// the engine's current state digest. Units are searched freshest first with
// boundary keys (addr, blk_l - 1) and (addr, blk_u + 1); the search stops as
// soon as a unit reveals a version older than blk_l, since everything below
// it is older still.
inline std::pair<std::vector<std::pair<std::uint64_t, Value>>, ProvenanceProof> prov_query(
    const Engine& e, const Address& addr, std::uint64_t blk_l, std::uint64_t blk_u,
    IoCounter* io = nullptr) {
  detail::check_prov_range(blk_l, blk_u);
  CompoundKey k_l{addr, blk_l - 1}, k_u{addr, blk_u + 1};

  ProvenanceProof proof;
  proof.addr = addr;
  proof.blk_l = blk_l;
  proof.blk_u = blk_u;
  proof.structure.mem_roots.push_back(e.memtable().root_hash());
  if (e.config().async_merge)
    proof.structure.mem_roots.push_back(e.merging_memtable().root_hash());
  auto levels = e.level_snapshot();
  for (const auto& lvl : levels) {
    CanonStructure::Level cl;
    for (const auto& r : lvl.writing) cl.writing.push_back({r->root(), r->bloom_digest()});
    for (const auto& r : lvl.merging) cl.merging.push_back({r->root(), r->bloom_digest()});
    proof.structure.levels.push_back(std::move(cl));
  }

  std::map<std::uint64_t, Value> results;
  bool witness = false;

  auto search_tree = [&](const MBTree& t) {
    auto [entries, tproof] = t.search_range(k_l, k_u);
    ProvUnit u;
    u.kind = ProvUnit::Kind::Tree;
    u.tree_proof = std::move(tproof);
    proof.units.push_back(std::move(u));
    for (const auto& [k, v] : entries)
      detail::note_results(addr, blk_l, blk_u, k, v, results, witness);
  };

  auto search_run = [&](const std::shared_ptr<Run>& run) {
    if (!run->bloom().may_contain(addr)) {
      ProvUnit u;
      u.kind = ProvUnit::Kind::RunBloomSkip;
      u.bloom = run->bloom();
      proof.units.push_back(std::move(u));
      return;
    }
    auto s_l = run->search_no_bloom(k_l, io);
    auto s_u = run->search_no_bloom(k_u, io);
    std::uint64_t n = run->size();
    std::uint64_t pos_l = s_l ? s_l->second : 0;
    std::uint64_t pos_u = s_u ? std::min(s_u->second + 1, n - 1) : 0;
    if (pos_u < pos_l) pos_u = pos_l;
    ProvUnit u;
    u.kind = ProvUnit::Kind::RunSearched;
    u.merkle_proof = run->merkle().range_proof(pos_l, pos_u);
    for (auto sc = run->scan(pos_l, io); sc.position() <= pos_u; sc.advance())
      u.window.push_back(sc.current());
    for (const auto& rec : u.window)
      detail::note_results(addr, blk_l, blk_u, rec.key, rec.value, results, witness);
    proof.units.push_back(std::move(u));
  };

  search_tree(e.memtable());
  if (!witness && e.config().async_merge) search_tree(e.merging_memtable());
  for (const auto& lvl : levels) {
    if (witness) break;
    for (std::size_t j = lvl.writing.size(); j-- > 0 && !witness;) search_run(lvl.writing[j]);
    for (std::size_t j = lvl.merging.size(); j-- > 0 && !witness;) search_run(lvl.merging[j]);
  }

  std::vector<std::pair<std::uint64_t, Value>> out(results.begin(), results.end());
  return {std::move(out), std::move(proof)};
}

// Verifies a provenance proof against a trusted state digest. Returns the
// proven result set (block height ascending) or nullopt if any check fails:
// structure digest, unit alignment with the query order, per-unit root
// reconstruction, boundary completeness, and early-stop justification.
inline std::optional<std::vector<std::pair<std::uint64_t, Value>>> verify_prov(
    const ProvenanceProof& p, const Digest& trusted_state, const Address& addr,
    std::uint64_t blk_l, std::uint64_t blk_u) {
  if (p.addr != addr || p.blk_l != blk_l || p.blk_u != blk_u) return std::nullopt;
  if (blk_l < 1 || blk_l > blk_u || blk_u >= kMaxHeight) return std::nullopt;
  if (p.structure.state_digest() != trusted_state) return std::nullopt;

  auto order = p.structure.search_order();
  if (p.units.size() > order.size()) return std::nullopt;

  CompoundKey k_l{addr, blk_l - 1}, k_u{addr, blk_u + 1};
  std::map<std::uint64_t, Value> results;
  bool witness = false;

  for (std::size_t i = 0; i < p.units.size(); ++i) {
    const auto& u = p.units[i];
    const auto& slot = order[i];
    if (slot.is_tree != (u.kind == ProvUnit::Kind::Tree)) return std::nullopt;
    switch (u.kind) {
      case ProvUnit::Kind::Tree: {
        auto v = mb_verify_range_proof(u.tree_proof, k_l, k_u);
        if (!v || v->first != slot.root) return std::nullopt;
        for (const auto& [k, val] : v->second)
          detail::note_results(addr, blk_l, blk_u, k, val, results, witness);
        break;
      }
      case ProvUnit::Kind::RunSearched: {
        const auto& m = u.merkle_proof;
        if (m.pos_l > m.pos_u || m.pos_u >= m.n) return std::nullopt;
        if (u.window.size() != m.pos_u - m.pos_l + 1) return std::nullopt;
        std::vector<Digest> leaves;
        leaves.reserve(u.window.size());
        for (const auto& rec : u.window) leaves.push_back(hash_leaf(rec.key, rec.value));
        auto root = replay_range_proof(m, leaves);
        if (!root || *root != slot.root) return std::nullopt;
        for (std::size_t j = 1; j < u.window.size(); ++j)
          if (!(u.window[j - 1].key < u.window[j].key)) return std::nullopt;
        // Completeness at the window edges: a record at or below the lower
        // boundary key (or the first leaf), and one above the upper boundary
        // key (or the last leaf).
        if (!(u.window.front().key <= k_l || m.pos_l == 0)) return std::nullopt;
        if (!(u.window.back().key > k_u || m.pos_u == m.n - 1)) return std::nullopt;
        for (const auto& rec : u.window)
          detail::note_results(addr, blk_l, blk_u, rec.key, rec.value, results, witness);
        break;
      }
      case ProvUnit::Kind::RunBloomSkip: {
        if (u.bloom.digest() != slot.bloom) return std::nullopt;
        if (u.bloom.may_contain(addr)) return std::nullopt;
        break;
      }
      default:
        return std::nullopt;
    }
  }

  // Units may only be omitted past a proven version older than blk_l.
  if (p.units.size() < order.size() && !witness) return std::nullopt;

  return std::vector<std::pair<std::uint64_t, Value>>(results.begin(), results.end());
}

}  // namespace cole
