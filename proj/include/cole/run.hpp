#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "cole/bloom.hpp"
#include "cole/index_file.hpp"
#include "cole/merkle_file.hpp"
#include "cole/paged_file.hpp"

namespace cole {

struct Record {
  CompoundKey key;
  Value value;
};

inline void encode_record(const Record& r, std::uint8_t* out) {
  r.key.encode_to(out);
  std::memcpy(out + kKeyLen, r.value.bytes.data(), kValueLen);
}

inline Record decode_record(const std::uint8_t* in) {
  Record r;
  r.key = CompoundKey::decode(in);
  std::memcpy(r.value.bytes.data(), in + kKeyLen, kValueLen);
  return r;
}

struct RunPaths {
  std::filesystem::path value, index, merkle, bloom;

  static RunPaths at(const std::filesystem::path& dir, std::size_t level, std::uint64_t seq) {
    auto base = dir / ("L" + std::to_string(level));
    auto stem = "R" + std::to_string(seq);
    return {base / (stem + ".val"), base / (stem + ".idx"), base / (stem + ".mrk"),
            base / (stem + ".blm")};
  }

  void remove_all() const {
    std::error_code ec;
    std::filesystem::remove(value, ec);
    std::filesystem::remove(index, ec);
    std::filesystem::remove(merkle, ec);
    std::filesystem::remove(bloom, ec);
  }
};

// Builds all four run components in one pass over a sorted record stream.
class RunBuilder {
 public:
  RunBuilder(const RunPaths& paths, std::uint64_t n, std::size_t level, const EngineConfig& cfg)
      : paths_(paths),
        n_(n),
        epsilon_(cfg.epsilon),
        value_fh_(FileHandle::create(ensure_dir(paths.value))),
        index_fh_(FileHandle::create(paths.index)),
        merkle_fh_(FileHandle::create(paths.merkle)),
        value_writer_(value_fh_, kPageSize, kRecordSize, 2 * cfg.epsilon),
        index_builder_(index_fh_, cfg.epsilon),
        merkle_builder_(merkle_fh_, n, cfg.mht_fanout_m),
        bloom_(n, BloomFilter::level_fpr(cfg.bloom_base_fpr, level, cfg.size_ratio_T)) {}

  void add(const CompoundKey& k, const Value& v) {
    if (pos_ > 0 && !(last_key_ < k)) throw std::invalid_argument("run stream not sorted");
    last_key_ = k;
    std::uint8_t rec[kRecordSize];
    encode_record({k, v}, rec);
    value_writer_.append(rec);
    index_builder_.add(k, pos_);
    merkle_builder_.add(k, v);
    bloom_.insert(k.addr);
    ++pos_;
  }

  // Returns (root hash, bloom digest).
  std::pair<Digest, Digest> finish() {
    if (pos_ != n_) throw std::logic_error("run stream length != n");
    value_writer_.finish();
    index_builder_.finish();
    Digest root = merkle_builder_.finish();
    auto bloom_bytes = bloom_.serialize();
    auto bf = FileHandle::create(paths_.bloom);
    bf.pwrite_exact(bloom_bytes.data(), bloom_bytes.size(), 0);
    bf.sync();
    return {root, bloom_.digest()};
  }

 private:
  static const std::filesystem::path& ensure_dir(const std::filesystem::path& p) {
    std::filesystem::create_directories(p.parent_path());
    return p;
  }

  RunPaths paths_;
  std::uint64_t n_;
  std::size_t epsilon_;
  FileHandle value_fh_, index_fh_, merkle_fh_;
  PagedRecordWriter value_writer_;
  IndexFileBuilder index_builder_;
  MerkleFileBuilder merkle_builder_;
  BloomFilter bloom_;
  CompoundKey last_key_{};
  std::uint64_t pos_ = 0;
};

// Immutable sorted run opened for reading.
class Run {
 public:
  Run(const RunPaths& paths, std::size_t level, std::uint64_t seq, std::size_t epsilon)
      : paths_(paths),
        level_(level),
        seq_(seq),
        mpp_(2 * epsilon),
        value_fh_(FileHandle::open_readonly(paths.value)),
        index_(paths.index),
        merkle_(paths.merkle) {
    auto bf = FileHandle::open_readonly(paths.bloom);
    std::vector<std::uint8_t> buf(bf.size());
    bf.pread_exact(buf.data(), buf.size(), 0);
    bloom_ = BloomFilter::deserialize(buf);
    root_ = merkle_.root();
    bloom_digest_ = bloom_.digest();
  }

  std::uint64_t size() const { return merkle_.leaf_count(); }
  std::size_t level() const { return level_; }
  std::uint64_t seq() const { return seq_; }
  Digest root() const { return root_; }
  Digest bloom_digest() const { return bloom_digest_; }
  const BloomFilter& bloom() const { return bloom_; }
  const IndexFile& index() const { return index_; }
  const MerkleFile& merkle() const { return merkle_; }
  const RunPaths& paths() const { return paths_; }

  // Predecessor search (greatest key <= q): bloom gate on q.addr, then the
  // learned index, then at most two value-file pages.
  std::optional<std::pair<Record, std::uint64_t>> search(const CompoundKey& q,
                                                         IoCounter* io) const {
    if (!bloom_.may_contain(q.addr)) return std::nullopt;
    return search_no_bloom(q, io);
  }

  std::optional<std::pair<Record, std::uint64_t>> search_no_bloom(const CompoundKey& q,
                                                                  IoCounter* io) const {
    auto model = index_.find_bottom_model(q, io);
    if (!model) return std::nullopt;
    PageReader pr(value_fh_, kPageSize);
    long double pred = model->predict(q);
    auto slot = locate_predecessor(pr, 0, size(), kRecordSize, mpp_, q, pred, io,
                                   [](const std::uint8_t* rec) { return CompoundKey::decode(rec); });
    if (!slot) return std::nullopt;
    auto page = pr.page(*slot / mpp_, io);  // cached
    return std::make_pair(decode_record(page.data() + (*slot % mpp_) * kRecordSize), *slot);
  }

  Record record_at(std::uint64_t pos, IoCounter* io) const {
    if (pos >= size()) throw std::out_of_range("record position");
    PageReader pr(value_fh_, kPageSize);
    auto page = pr.page(pos / mpp_, io);
    return decode_record(page.data() + (pos % mpp_) * kRecordSize);
  }

  // Sequential forward scanner over the value file.
  class Scanner {
   public:
    Scanner(const Run& run, std::uint64_t start, IoCounter* io)
        : run_(&run), reader_(run.value_fh_, kPageSize), pos_(start), io_(io) {}

    bool done() const { return pos_ >= run_->size(); }
    std::uint64_t position() const { return pos_; }

    Record current() {
      auto page = reader_.page(pos_ / run_->mpp_, io_);
      return decode_record(page.data() + (pos_ % run_->mpp_) * kRecordSize);
    }

    void advance() { ++pos_; }

   private:
    const Run* run_;
    PageReader reader_;
    std::uint64_t pos_;
    IoCounter* io_;
  };

  Scanner scan(std::uint64_t start = 0, IoCounter* io = nullptr) const {
    return Scanner(*this, start, io);
  }

 private:
  RunPaths paths_;
  std::size_t level_;
  std::uint64_t seq_;
  std::size_t mpp_;
  FileHandle value_fh_;
  IndexFile index_;
  MerkleFile merkle_;
  BloomFilter bloom_;
  Digest root_, bloom_digest_;
};

// K-way sort-merge of same-level runs into a sorted record stream. Runs are
// passed oldest to newest; when the same (addr, blk) key appears in several
// runs (a mid-block flush followed by another update) the newest value wins.
template <typename Sink>
void merge_runs(const std::vector<std::shared_ptr<Run>>& runs, Sink&& sink) {
  struct Head {
    Record rec;
    std::size_t src;
  };
  // Smallest key first; among equal keys the newest source first.
  auto cmp = [](const Head& a, const Head& b) {
    if (a.rec.key != b.rec.key) return b.rec.key < a.rec.key;
    return a.src < b.src;
  };
  std::priority_queue<Head, std::vector<Head>, decltype(cmp)> heap(cmp);
  std::vector<Run::Scanner> scanners;
  scanners.reserve(runs.size());
  for (std::size_t i = 0; i < runs.size(); ++i) {
    scanners.push_back(runs[i]->scan());
    if (!scanners[i].done()) heap.push({scanners[i].current(), i});
  }
  auto pop_advance = [&] {
    std::size_t src = heap.top().src;
    heap.pop();
    auto& sc = scanners[src];
    sc.advance();
    if (!sc.done()) heap.push({sc.current(), src});
  };
  while (!heap.empty()) {
    Head h = heap.top();
    sink(h.rec.key, h.rec.value);
    pop_advance();
    while (!heap.empty() && heap.top().rec.key == h.rec.key) pop_advance();  // stale versions
  }
}

inline std::uint64_t merged_size(const std::vector<std::shared_ptr<Run>>& runs) {
  std::uint64_t n = 0;
  merge_runs(runs, [&](const CompoundKey&, const Value&) { ++n; });
  return n;
}

}  // namespace cole
