#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "cole/paged_file.hpp"
#include "cole/pla.hpp"

namespace cole {

inline constexpr std::uint64_t kIndexMagic = 0x434f4c45494e4458ULL;  // "COLEINDX"
inline constexpr std::size_t kModelRecordSize = kRecordSize;  // 88, same page geometry

inline void put_u64be(std::uint8_t* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * (7 - i)));
}
inline std::uint64_t get_u64be(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | p[i];
  return v;
}

// Model record: k_min(40) | sl(8, IEEE bits) | ic(16, fixed point 2^-32) |
// p_max(8) | pad(16). All integers big-endian.
inline void encode_model(const Model& m, std::uint8_t* out) {
  std::memset(out, 0, kModelRecordSize);
  m.k_min.encode_to(out);
  std::uint64_t sl_bits;
  std::memcpy(&sl_bits, &m.sl, 8);
  put_u64be(out + 40, sl_bits);
  auto ic = static_cast<unsigned __int128>(m.ic_fp);
  put_u64be(out + 48, static_cast<std::uint64_t>(ic >> 64));
  put_u64be(out + 56, static_cast<std::uint64_t>(ic));
  put_u64be(out + 64, m.p_max);
}

inline Model decode_model(const std::uint8_t* in) {
  Model m;
  m.k_min = CompoundKey::decode(in);
  std::uint64_t sl_bits = get_u64be(in + 40);
  std::memcpy(&m.sl, &sl_bits, 8);
  unsigned __int128 ic = (static_cast<unsigned __int128>(get_u64be(in + 48)) << 64) |
                         get_u64be(in + 56);
  m.ic_fp = static_cast<__int128>(ic);
  m.p_max = get_u64be(in + 64);
  return m;
}

// Predecessor lookup in a paged file of sorted fixed-size records, guided by a
// model prediction: fetch the predicted page, correct by at most one adjacent
// page, binary-search inside. Never reads more than two pages.
//
// Slots [begin, end) are the valid record positions (one layer, or the whole
// value file); key_at decodes the key from a raw record.
template <typename KeyAt>
std::optional<std::uint64_t> locate_predecessor(PageReader& pr, std::uint64_t begin,
                                                std::uint64_t end, std::size_t record_size,
                                                std::size_t records_per_page,
                                                const CompoundKey& q, long double pos_pred,
                                                IoCounter* io, KeyAt key_at) {
  if (begin >= end) return std::nullopt;
  const std::uint64_t first_page = begin / records_per_page;
  const std::uint64_t last_page = (end - 1) / records_per_page;

  auto clamp_page = [&](long double p) {
    auto pg = static_cast<std::int64_t>(std::floor(p / static_cast<long double>(records_per_page)));
    if (pg < static_cast<std::int64_t>(first_page)) pg = static_cast<std::int64_t>(first_page);
    if (pg > static_cast<std::int64_t>(last_page)) pg = static_cast<std::int64_t>(last_page);
    return static_cast<std::uint64_t>(pg);
  };

  struct PageView {
    std::span<const std::uint8_t> data;
    std::uint64_t slot_begin, slot_end;  // global slot range in this page
  };
  auto fetch = [&](std::uint64_t page) {
    PageView v;
    v.data = pr.page(page, io);
    v.slot_begin = std::max<std::uint64_t>(begin, page * records_per_page);
    v.slot_end = std::min<std::uint64_t>(end, (page + 1) * records_per_page);
    return v;
  };
  auto key_of = [&](const PageView& v, std::uint64_t slot) {
    return key_at(v.data.data() + (slot % records_per_page) * record_size);
  };
  // Greatest slot in v with key <= q, or nullopt.
  auto bsearch = [&](const PageView& v) -> std::optional<std::uint64_t> {
    std::uint64_t lo = v.slot_begin, hi = v.slot_end;
    if (key_of(v, lo) > q) return std::nullopt;
    while (hi - lo > 1) {
      std::uint64_t mid = lo + (hi - lo) / 2;
      if (key_of(v, mid) <= q)
        lo = mid;
      else
        hi = mid;
    }
    return lo;
  };

  std::uint64_t page = clamp_page(pos_pred);
  PageView v = fetch(page);
  if (q < key_of(v, v.slot_begin)) {
    if (page == first_page) return std::nullopt;
    return bsearch(fetch(page - 1));
  }
  if (q > key_of(v, v.slot_end - 1)) {
    if (page == last_page) return v.slot_end - 1;
    std::uint64_t fallback = v.slot_end - 1;
    PageView next = fetch(page + 1);
    if (q < key_of(next, next.slot_begin)) return fallback;
    return bsearch(next);
  }
  return bsearch(v);
}

// Persistent layered learned index. Models are packed 2*epsilon to a page;
// each layer starts on a page boundary; the top layer fits in the last data
// page; a footer page records the layer table.
class IndexFileBuilder {
 public:
  IndexFileBuilder(FileHandle& file, std::size_t epsilon)
      : file_(&file),
        epsilon_(epsilon),
        mpp_(2 * epsilon),
        writer_(file, kPageSize, kModelRecordSize, mpp_),
        builder_(static_cast<std::int64_t>(epsilon),
                 [this](const Model& m) { write_model(m); }) {}

  void add(const CompoundKey& k, std::uint64_t pos) { builder_.add(k, pos); }

  void finish() {
    builder_.finish();
    layers_.push_back({layer_start_page_, cur_layer_.size()});
    while (cur_layer_.size() > mpp_) {
      std::uint64_t lower_start_pos = layers_.back().first * mpp_;
      writer_.pad_to_page();
      layer_start_page_ = writer_.page_count();
      std::vector<std::pair<CompoundKey, std::uint64_t>> lower;
      lower.swap(cur_layer_);
      std::uint64_t pos = lower_start_pos;
      ModelBuilder upper(static_cast<std::int64_t>(epsilon_),
                         [this](const Model& m) { write_model(m); });
      for (const auto& [k, unused_pos] : lower) upper.add(k, pos++);
      upper.finish();
      if (cur_layer_.size() >= lower.size())
        throw std::logic_error("index layer did not shrink");
      layers_.push_back({layer_start_page_, cur_layer_.size()});
    }
    writer_.pad_to_page();
    write_footer();
    file_->sync();
  }

  std::uint64_t model_count() const { return total_models_; }

 private:
  void write_model(const Model& m) {
    std::uint8_t rec[kModelRecordSize];
    encode_model(m, rec);
    writer_.append(rec);
    cur_layer_.emplace_back(m.k_min, 0);
    ++total_models_;
  }

  void write_footer() {
    std::vector<std::uint8_t> page(kPageSize, 0);
    put_u64be(page.data(), kIndexMagic);
    put_u64be(page.data() + 8, epsilon_);
    put_u64be(page.data() + 16, layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      put_u64be(page.data() + 24 + i * 16, layers_[i].first);
      put_u64be(page.data() + 32 + i * 16, layers_[i].second);
    }
    file_->pwrite_exact(page.data(), page.size(), writer_.page_count() * kPageSize);
  }

  FileHandle* file_;
  std::size_t epsilon_, mpp_;
  PagedRecordWriter writer_;
  ModelBuilder builder_;
  std::uint64_t layer_start_page_ = 0;
  std::vector<std::pair<CompoundKey, std::uint64_t>> cur_layer_;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> layers_;  // (start page, count)
  std::uint64_t total_models_ = 0;
};

class IndexFile {
 public:
  explicit IndexFile(const std::filesystem::path& path)
      : file_(FileHandle::open_readonly(path)) {
    std::uint64_t fsize = file_.size();
    if (fsize < kPageSize || fsize % kPageSize != 0)
      throw std::runtime_error("bad index file size");
    std::vector<std::uint8_t> footer(kPageSize);
    file_.pread_exact(footer.data(), kPageSize, fsize - kPageSize);
    if (get_u64be(footer.data()) != kIndexMagic)
      throw std::runtime_error("bad index file magic");
    epsilon_ = get_u64be(footer.data() + 8);
    mpp_ = 2 * epsilon_;
    std::uint64_t nlayers = get_u64be(footer.data() + 16);
    if (nlayers == 0 || 24 + nlayers * 16 > kPageSize)
      throw std::runtime_error("bad index layer table");
    for (std::uint64_t i = 0; i < nlayers; ++i) {
      layers_.push_back({get_u64be(footer.data() + 24 + i * 16),
                         get_u64be(footer.data() + 32 + i * 16)});
    }
  }

  std::size_t layer_count() const { return layers_.size(); }
  std::size_t epsilon() const { return epsilon_; }

  // Bottom-layer model covering q's predecessor, or nullopt when q precedes
  // every key in the run. Page reads <= 1 + 2 * (layer_count - 1).
  std::optional<Model> find_bottom_model(const CompoundKey& q, IoCounter* io) const {
    PageReader pr(file_, kPageSize);
    const auto& top = layers_.back();
    auto page = pr.page(top.start_page, io);
    // Binary search top-layer models by k_min.
    std::uint64_t lo = 0, hi = top.count;
    if (decode_model(page.data()).k_min > q) return std::nullopt;
    while (hi - lo > 1) {
      std::uint64_t mid = lo + (hi - lo) / 2;
      if (decode_model(page.data() + mid * kModelRecordSize).k_min <= q)
        lo = mid;
      else
        hi = mid;
    }
    Model m = decode_model(page.data() + lo * kModelRecordSize);
    for (std::size_t layer = layers_.size() - 1; layer > 0; --layer) {
      const auto& below = layers_[layer - 1];
      std::uint64_t begin = below.start_page * mpp_;
      std::uint64_t end = begin + below.count;
      long double pred = m.predict(q);
      auto slot = locate_predecessor(
          pr, begin, end, kModelRecordSize, mpp_, q, pred, io,
          [](const std::uint8_t* rec) { return CompoundKey::decode(rec); });
      if (!slot) return std::nullopt;
      auto spage = pr.page(*slot / mpp_, io);  // cached, free
      m = decode_model(spage.data() + (*slot % mpp_) * kModelRecordSize);
    }
    return m;
  }

 private:
  struct LayerInfo {
    std::uint64_t start_page;
    std::uint64_t count;
  };

  FileHandle file_;
  std::size_t epsilon_ = 0, mpp_ = 0;
  std::vector<LayerInfo> layers_;
};

}  // namespace cole
