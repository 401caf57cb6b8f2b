#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <set>
#include <thread>
#include <vector>

#include <json.hpp>

#ifdef __linux__
#include <sys/resource.h>
#include <sys/syscall.h>
#include <unistd.h>
#endif

#include "cole/mbtree.hpp"
#include "cole/run.hpp"

namespace cole {

// Background merges yield the CPU to the write path: a put must never stall
// because a compaction thread is runnable.
inline void lower_merge_thread_priority() {
#ifdef __linux__
  setpriority(PRIO_PROCESS, static_cast<id_t>(syscall(SYS_gettid)), 15);
#endif
}

// One entry of the canonical root hash list that H_state commits to.
struct CanonUnit {
  bool is_tree;
  Digest root;
  Digest bloom;  // runs only
};

// One stop of the freshest-first query order.
struct SearchUnit {
  const MBTree* tree = nullptr;
  std::shared_ptr<Run> run;
  std::size_t canonical_index = 0;
};

inline Digest state_digest_of(const std::vector<CanonUnit>& units) {
  Sha256Stream s;
  for (const auto& u : units) {
    s.update(u.root.bytes);
    if (!u.is_tree) s.update(u.bloom.bytes);
  }
  return s.finish();
}

// Column-based LSM storage engine. Writes land in an in-memory Merkle B+-tree
// and migrate down through on-disk levels of immutable sorted runs, either
// inline with the write path or on background merge threads.
class Engine {
 public:
  Engine(std::filesystem::path dir, EngineConfig cfg)
      : dir_(std::move(dir)), cfg_(cfg) {
    cfg_.validate();
    std::filesystem::create_directories(dir_);
    if (std::filesystem::exists(manifest_path()))
      load_manifest();
    else
      persist_manifest();
    remove_orphans();
    block_log_.open(dir_ / "blocks.log", std::ios::binary | std::ios::app);
    // Resume any merge that was in flight when the manifest was written.
    for (std::size_t i = 1; i <= levels_.size(); ++i)
      if (!disk(i).merging.empty()) start_merge(i);
  }

  ~Engine() { join_all(); }

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  const EngineConfig& config() const { return cfg_; }
  const std::filesystem::path& dir() const { return dir_; }
  std::uint64_t current_height() const { return height_; }

  // Test hook: called on each merge thread right after it starts.
  void set_merge_delay_hook(std::function<void(std::size_t)> hook) {
    delay_hook_ = std::move(hook);
  }

  void begin_block(std::uint64_t height) {
    if (in_block_) throw std::logic_error("block already open");
    if (height <= height_ && !(height_ == 0 && block_count_ == 0))
      throw std::invalid_argument("block height must increase");
    height_ = height;
    in_block_ = true;
  }

  void put(const Address& addr, const Value& value) {
    if (!in_block_) throw std::logic_error("no open block");
    w0_.insert({addr, height_}, value);
    if (cfg_.async_merge)
      advance_async();
    else
      advance_sync();
  }

  Digest finalize_block() {
    if (!in_block_) throw std::logic_error("no open block");
    in_block_ = false;
    ++block_count_;
    Digest h = state_digest();
    std::uint8_t rec[40];
    for (int i = 0; i < 8; ++i) rec[i] = static_cast<std::uint8_t>(height_ >> (8 * (7 - i)));
    std::memcpy(rec + 8, h.bytes.data(), 32);
    block_log_.write(reinterpret_cast<const char*>(rec), sizeof(rec));
    block_log_.flush();
    return h;
  }

  std::vector<CanonUnit> canonical_units() const {
    std::vector<CanonUnit> out;
    out.push_back({true, w0_.root_hash(), {}});
    if (cfg_.async_merge) out.push_back({true, m0_.root_hash(), {}});
    for (const auto& lvl : levels_) {
      for (const auto& r : lvl.writing) out.push_back({false, r->root(), r->bloom_digest()});
      for (const auto& r : lvl.merging) out.push_back({false, r->root(), r->bloom_digest()});
    }
    return out;
  }

  Digest state_digest() const { return state_digest_of(canonical_units()); }

  // Freshest first: memory trees, then per level the writing runs newest to
  // oldest followed by the merging runs newest to oldest.
  std::vector<SearchUnit> search_units() const {
    std::vector<SearchUnit> canon;
    canon.push_back({&w0_, nullptr, canon.size()});
    if (cfg_.async_merge) canon.push_back({&m0_, nullptr, canon.size()});
    struct Span {
      std::size_t w_begin, w_count, m_begin, m_count;
    };
    std::vector<Span> spans;
    for (const auto& lvl : levels_) {
      Span sp{canon.size(), lvl.writing.size(), 0, lvl.merging.size()};
      for (const auto& r : lvl.writing) canon.push_back({nullptr, r, canon.size()});
      sp.m_begin = canon.size();
      for (const auto& r : lvl.merging) canon.push_back({nullptr, r, canon.size()});
      spans.push_back(sp);
    }
    std::vector<SearchUnit> out;
    out.reserve(canon.size());
    out.push_back(canon[0]);
    if (cfg_.async_merge) out.push_back(canon[1]);
    for (const auto& sp : spans) {
      for (std::size_t j = sp.w_count; j-- > 0;) out.push_back(canon[sp.w_begin + j]);
      for (std::size_t j = sp.m_count; j-- > 0;) out.push_back(canon[sp.m_begin + j]);
    }
    return out;
  }

  std::uint64_t total_storage_bytes() const {
    std::uint64_t total = 0;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir_))
      if (e.is_regular_file()) total += e.file_size();
    return total;
  }

  std::size_t level_count() const { return levels_.size(); }
  std::size_t memtable_size() const { return w0_.size(); }

  const MBTree& memtable() const { return w0_; }
  const MBTree& merging_memtable() const { return m0_; }

  struct LevelSnapshot {
    std::vector<std::shared_ptr<Run>> writing, merging;
  };
  std::vector<LevelSnapshot> level_snapshot() const {
    std::vector<LevelSnapshot> out;
    for (const auto& lvl : levels_) out.push_back({lvl.writing, lvl.merging});
    return out;
  }

 private:
  struct PendingRun {
    RunPaths paths;
    std::size_t level = 0;
    std::uint64_t seq = 0;
    std::uint64_t n = 0;
  };

  struct Level {
    std::vector<std::shared_ptr<Run>> writing;  // oldest..newest, committed
    std::vector<std::shared_ptr<Run>> merging;  // inputs of the active merge
    std::thread worker;
    bool worker_active = false;
    PendingRun pending;
  };

  std::filesystem::path manifest_path() const { return dir_ / "manifest.json"; }

  Level& disk(std::size_t level) {
    while (levels_.size() < level) levels_.emplace_back();
    return levels_[level - 1];
  }

  // --- synchronous write path ---

  void advance_sync() {
    if (w0_.size() < cfg_.mem_capacity_B) return;
    auto entries = w0_.drain_sorted();
    auto run = build_from_entries(entries, 1);
    disk(1).writing.push_back(std::move(run));
    std::size_t i = 1;
    while (disk(i).writing.size() >= cfg_.size_ratio_T) {
      auto inputs = std::move(disk(i).writing);
      disk(i).writing.clear();
      std::uint64_t n = merged_size(inputs);
      PendingRun p{RunPaths::at(dir_, i + 1, next_seq_), i + 1, next_seq_, n};
      ++next_seq_;
      RunBuilder b(p.paths, n, p.level, cfg_);
      merge_runs(inputs, [&](const CompoundKey& k, const Value& v) { b.add(k, v); });
      b.finish();
      disk(i + 1).writing.push_back(
          std::make_shared<Run>(p.paths, p.level, p.seq, cfg_.epsilon));
      for (const auto& r : inputs) r->paths().remove_all();
      ++i;
    }
    persist_manifest();
  }

  std::shared_ptr<Run> build_from_entries(
      const std::vector<std::pair<CompoundKey, Value>>& entries, std::size_t level) {
    PendingRun p{RunPaths::at(dir_, level, next_seq_), level, next_seq_,
                 entries.size()};
    ++next_seq_;
    RunBuilder b(p.paths, entries.size(), level, cfg_);
    for (const auto& [k, v] : entries) b.add(k, v);
    b.finish();
    return std::make_shared<Run>(p.paths, p.level, p.seq, cfg_.epsilon);
  }

  // --- asynchronous write path ---

  bool group_full(std::size_t i) {
    if (i == 0) return w0_.size() >= cfg_.mem_capacity_B;
    return i <= levels_.size() && disk(i).writing.size() >= cfg_.size_ratio_T;
  }

  void advance_async() {
    bool changed = false;
    for (std::size_t i = 0; group_full(i); ++i) {
      checkpoint(i);
      changed = true;
    }
    if (changed) persist_manifest();
  }

  // Commit the previous merge of group i (waiting for it if still running),
  // switch the writing and merging groups, and start merging the former
  // writing group in the background.
  void checkpoint(std::size_t i) {
    if (i == 0) {
      if (l0_active_) {
        l0_worker_.join();
        l0_active_ = false;
        commit_pending(l0_pending_);
        m0_ = MBTree();
      }
      std::swap(w0_, m0_);
      l0_pending_ = PendingRun{RunPaths::at(dir_, 1, next_seq_), 1, next_seq_, m0_.size()};
      ++next_seq_;
      l0_active_ = true;
      l0_worker_ = std::thread([this, p = l0_pending_] {
        lower_merge_thread_priority();
        if (delay_hook_) delay_hook_(0);
        RunBuilder b(p.paths, p.n, p.level, cfg_);
        m0_.for_each([&](const CompoundKey& k, const Value& v) { b.add(k, v); });
        b.finish();
      });
      return;
    }
    disk(i + 1);  // grow levels_ now so references below stay valid
    Level& lvl = disk(i);
    if (lvl.worker_active) {
      lvl.worker.join();
      lvl.worker_active = false;
      commit_pending(lvl.pending);
      for (const auto& r : lvl.merging) r->paths().remove_all();
      lvl.merging.clear();
    }
    lvl.writing.swap(lvl.merging);
    start_merge(i);
  }

  void start_merge(std::size_t i) {
    Level& lvl = disk(i);
    lvl.pending = PendingRun{RunPaths::at(dir_, i + 1, next_seq_), i + 1, next_seq_, 0};
    ++next_seq_;
    lvl.worker_active = true;
    lvl.worker = std::thread([this, i, p = lvl.pending,
                              inputs = lvl.merging] {
      lower_merge_thread_priority();
      if (delay_hook_) delay_hook_(i);
      RunBuilder b(p.paths, merged_size(inputs), p.level, cfg_);
      merge_runs(inputs, [&](const CompoundKey& k, const Value& v) { b.add(k, v); });
      b.finish();
    });
  }

  void commit_pending(const PendingRun& p) {
    disk(p.level).writing.push_back(
        std::make_shared<Run>(p.paths, p.level, p.seq, cfg_.epsilon));
  }

  void join_all() {
    if (l0_active_) {
      l0_worker_.join();
      l0_active_ = false;
    }
    for (auto& lvl : levels_) {
      if (lvl.worker_active) {
        lvl.worker.join();
        lvl.worker_active = false;
      }
    }
  }

  // --- manifest ---

  void persist_manifest() const {
    nlohmann::json j;
    j["next_seq"] = next_seq_;
    j["size_ratio"] = cfg_.size_ratio_T;
    j["fanout"] = cfg_.mht_fanout_m;
    j["epsilon"] = cfg_.epsilon;
    j["mem_capacity"] = cfg_.mem_capacity_B;
    auto dump = [](const std::vector<std::shared_ptr<Run>>& runs) {
      nlohmann::json a = nlohmann::json::array();
      for (const auto& r : runs) a.push_back({{"seq", r->seq()}, {"n", r->size()}});
      return a;
    };
    nlohmann::json lv = nlohmann::json::array();
    for (std::size_t i = 0; i < levels_.size(); ++i)
      lv.push_back({{"level", i + 1},
                    {"writing", dump(levels_[i].writing)},
                    {"merging", dump(levels_[i].merging)}});
    j["levels"] = lv;
    auto tmp = manifest_path();
    tmp += ".tmp";
    {
      std::ofstream f(tmp, std::ios::trunc);
      f << j.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, manifest_path());
  }

  void load_manifest() {
    std::ifstream f(manifest_path());
    nlohmann::json j = nlohmann::json::parse(f);
    next_seq_ = j.at("next_seq").get<std::uint64_t>();
    for (const auto& lv : j.at("levels")) {
      std::size_t level = lv.at("level").get<std::size_t>();
      Level& l = disk(level);
      auto open = [&](const nlohmann::json& a, std::vector<std::shared_ptr<Run>>& out) {
        for (const auto& r : a) {
          auto seq = r.at("seq").get<std::uint64_t>();
          out.push_back(std::make_shared<Run>(RunPaths::at(dir_, level, seq), level, seq,
                                              cfg_.epsilon));
        }
      };
      open(lv.at("writing"), l.writing);
      open(lv.at("merging"), l.merging);
    }
  }

  // Delete run files not referenced by the manifest (aborted merges).
  void remove_orphans() const {
    std::set<std::filesystem::path> live{manifest_path(), dir_ / "blocks.log"};
    for (const auto& lvl : levels_) {
      for (const auto& rs : {&lvl.writing, &lvl.merging})
        for (const auto& r : *rs) {
          live.insert(r->paths().value);
          live.insert(r->paths().index);
          live.insert(r->paths().merkle);
          live.insert(r->paths().bloom);
        }
    }
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir_)) {
      if (!e.is_regular_file()) continue;
      if (!live.count(e.path())) {
        std::error_code ec;
        std::filesystem::remove(e.path(), ec);
      }
    }
  }

  std::filesystem::path dir_;
  EngineConfig cfg_;
  MBTree w0_, m0_;
  std::vector<Level> levels_;  // levels_[i] is on-disk level i+1
  std::thread l0_worker_;
  bool l0_active_ = false;
  PendingRun l0_pending_;
  std::uint64_t next_seq_ = 0;
  std::uint64_t height_ = 0;
  std::uint64_t block_count_ = 0;
  bool in_block_ = false;
  std::ofstream block_log_;
  std::function<void(std::size_t)> delay_hook_;
};

}  // namespace cole
