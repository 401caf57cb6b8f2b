#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "cole/common.hpp"

namespace cole {

// Epsilon-bounded piecewise linear segment. The slope/intercept are stored
// rebased at k_min (x' = BigNum(key) - BigNum(k_min)); ic is fixed point with
// a 2^32 scale so the on-disk representation is exact.
struct Model {
  CompoundKey k_min;
  double sl = 0.0;
  __int128 ic_fp = 0;  // intercept * 2^32
  std::uint64_t p_max = 0;

  static constexpr long double kIcScale = 4294967296.0L;  // 2^32

  long double predict_rebased(const BigNum& dx) const {
    long double p = static_cast<long double>(sl) * dx.convert_to<long double>() +
                    static_cast<long double>(ic_fp) / kIcScale;
    if (p < 0.0L) p = 0.0L;
    if (p > static_cast<long double>(p_max)) p = static_cast<long double>(p_max);
    return p;
  }

  long double predict(const CompoundKey& q) const {
    if (q < k_min) throw std::invalid_argument("predict: key below model coverage");
    return predict_rebased(encode_key(q) - encode_key(k_min));
  }
};

// Streaming tracker for the set of lines y = a*x + b that pass within +-eps of
// every point added so far. Equivalently maintains the minimal parallelogram
// (with one vertical side) around the point set: a segment closes exactly when
// its height would exceed 2*eps. All geometry uses exact integer arithmetic.
class PlaOptimizer {
 public:
  explicit PlaOptimizer(std::int64_t epsilon) : eps_(epsilon) {
    if (epsilon < 1) throw std::invalid_argument("epsilon must be >= 1");
  }

  // Returns false when the point cannot join the current segment; the hull
  // state is left untouched in that case so line() still describes the
  // committed points.
  bool add(const BigNum& x, std::int64_t y) {
    if (n_ > 0 && x <= last_x_) throw std::invalid_argument("non-monotone key stream");
    Pt p1{x, BigNum(y) + eps_};
    Pt p2{x, BigNum(y) - eps_};
    if (n_ == 0) {
      first_x_ = x;
      last_x_ = x;
      rect_[0] = p1;
      rect_[1] = p2;
      upper_.assign({p1});
      lower_.assign({p2});
      upper_start_ = lower_start_ = 0;
      n_ = 1;
      return true;
    }
    if (n_ == 1) {
      last_x_ = x;
      rect_[2] = p2;
      rect_[3] = p1;
      upper_.push_back(p1);
      lower_.push_back(p2);
      n_ = 2;
      return true;
    }
    Slope slope1 = sub(rect_[2], rect_[0]);
    Slope slope2 = sub(rect_[3], rect_[1]);
    bool outside_line1 = less(sub(p1, rect_[2]), slope1);
    bool outside_line2 = greater(sub(p2, rect_[3]), slope2);
    if (outside_line1 || outside_line2) return false;
    last_x_ = x;

    if (less(sub(p1, rect_[1]), slope2)) {
      // Tighten the max-slope side.
      Slope min_s = sub(lower_[lower_start_], p1);
      std::size_t min_i = lower_start_;
      for (std::size_t i = lower_start_ + 1; i < lower_.size(); ++i) {
        Slope val = sub(lower_[i], p1);
        if (greater(val, min_s)) break;
        min_s = val;
        min_i = i;
      }
      rect_[1] = lower_[min_i];
      rect_[3] = p1;
      lower_start_ = min_i;

      std::size_t end = upper_.size();
      while (end >= upper_start_ + 2 && cross(upper_[end - 2], upper_[end - 1], p1) <= 0)
        --end;
      upper_.resize(end);
      upper_.push_back(p1);
    }

    if (greater(sub(p2, rect_[0]), slope1)) {
      // Tighten the min-slope side.
      Slope max_s = sub(upper_[upper_start_], p2);
      std::size_t max_i = upper_start_;
      for (std::size_t i = upper_start_ + 1; i < upper_.size(); ++i) {
        Slope val = sub(upper_[i], p2);
        if (less(val, max_s)) break;
        max_s = val;
        max_i = i;
      }
      rect_[0] = upper_[max_i];
      rect_[2] = p2;
      upper_start_ = max_i;

      std::size_t end = lower_.size();
      while (end >= lower_start_ + 2 && cross(lower_[end - 2], lower_[end - 1], p2) >= 0)
        --end;
      lower_.resize(end);
      lower_.push_back(p2);
    }

    ++n_;
    return true;
  }

  void reset() {
    n_ = 0;
    upper_.clear();
    lower_.clear();
    upper_start_ = lower_start_ = 0;
  }

  std::size_t size() const { return n_; }

  // Central line of the feasible region, rebased at origin: returns
  // (slope, intercept) with intercept = value of the line at x = origin.
  std::pair<long double, long double> line(const BigNum& origin) const {
    if (n_ == 0) throw std::logic_error("line() on empty hull");
    if (n_ == 1) {
      long double ic = ((rect_[0].y + rect_[1].y).convert_to<long double>()) / 2.0L;
      return {0.0L, ic};
    }
    Slope s1 = sub(rect_[2], rect_[0]);
    Slope s2 = sub(rect_[3], rect_[1]);
    long double slope =
        (to_ld(s1.dy) / to_ld(s1.dx) + to_ld(s2.dy) / to_ld(s2.dx)) / 2.0L;

    // Intersection of the two extreme lines (p0,p2) x (p1,p3); when parallel
    // any point of either line works, use p0.
    BigNum a = s1.dx * s2.dy - s1.dy * s2.dx;
    long double ix_minus_origin, iy;
    if (a == 0) {
      ix_minus_origin = to_ld(BigNum(rect_[0].x - origin));
      iy = to_ld(rect_[0].y);
    } else {
      Slope p0p1 = sub(rect_[1], rect_[0]);
      BigNum b_num = p0p1.dx * s2.dy - p0p1.dy * s2.dx;
      // i = p0 + (b_num / a) * s1
      BigNum tx_num = (rect_[0].x - origin) * a + b_num * s1.dx;
      BigNum ty_num = rect_[0].y * a + b_num * s1.dy;
      long double a_ld = to_ld(a);
      ix_minus_origin = to_ld(tx_num) / a_ld;
      iy = to_ld(ty_num) / a_ld;
    }
    long double intercept = iy - ix_minus_origin * slope;
    return {slope, intercept};
  }

 private:
  struct Pt {
    BigNum x, y;
  };
  struct Slope {
    BigNum dx, dy;
  };

  static Slope sub(const Pt& a, const Pt& b) { return {a.x - b.x, a.y - b.y}; }
  static bool less(const Slope& a, const Slope& b) { return a.dy * b.dx < b.dy * a.dx; }
  static bool greater(const Slope& a, const Slope& b) { return a.dy * b.dx > b.dy * a.dx; }
  static BigNum cross(const Pt& o, const Pt& a, const Pt& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
  }
  static long double to_ld(const BigNum& v) { return v.convert_to<long double>(); }

  std::int64_t eps_;
  std::vector<Pt> lower_, upper_;
  BigNum first_x_, last_x_;
  std::size_t lower_start_ = 0, upper_start_ = 0;
  std::size_t n_ = 0;
  Pt rect_[4];
};

// Streams (key, position) pairs into maximal epsilon-bounded models. The
// current segment's points are buffered so every emitted model is re-checked
// with its quantized on-disk representation; a model that fails the check is
// split at the first violating point.
class ModelBuilder {
 public:
  ModelBuilder(std::int64_t epsilon, std::function<void(const Model&)> emit)
      : eps_(epsilon), emit_(std::move(emit)), hull_(epsilon) {}

  void add(const CompoundKey& k, std::uint64_t pos) {
    BigNum x = encode_key(k);
    if (!pts_.empty() && pos != pts_.back().pos + 1)
      throw std::invalid_argument("positions must increase by 1");
    if (hull_.add(x, static_cast<std::int64_t>(pos))) {
      pts_.push_back({k, std::move(x), pos});
      return;
    }
    close_segment();
    hull_.reset();
    hull_.add(x, static_cast<std::int64_t>(pos));
    pts_.push_back({k, std::move(x), pos});
  }

  void finish() {
    if (!pts_.empty()) close_segment();
    hull_.reset();
  }

 private:
  struct Pt {
    CompoundKey key;
    BigNum x;
    std::uint64_t pos;
  };

  static __int128 to_fixed(long double v) {
    auto ip = static_cast<__int128>(truncl(v));
    long double rem = v - static_cast<long double>(ip);
    return ip * static_cast<__int128>(1) * (static_cast<__int128>(1) << 32) +
           static_cast<__int128>(llroundl(rem * Model::kIcScale));
  }

  void close_segment() {
    emit_range(0, pts_.size(), &hull_);
    pts_.clear();
  }

  // Fit pts_[begin, end); hull may be the already-built hull for the full
  // range or nullptr, in which case a fresh hull is built.
  void emit_range(std::size_t begin, std::size_t end, const PlaOptimizer* hull) {
    if (begin >= end) return;
    PlaOptimizer local(eps_);
    if (hull == nullptr) {
      for (std::size_t i = begin; i < end; ++i)
        if (!local.add(pts_[i].x, static_cast<std::int64_t>(pts_[i].pos)))
          throw std::logic_error("refit of feasible subset rejected a point");
      hull = &local;
    }
    auto [sl, ic] = hull->line(pts_[begin].x);
    Model m;
    m.k_min = pts_[begin].key;
    m.sl = static_cast<double>(sl);
    m.ic_fp = to_fixed(ic);
    m.p_max = pts_[end - 1].pos;

    // Re-verify with the stored representation.
    const BigNum& x0 = pts_[begin].x;
    for (std::size_t i = begin; i < end; ++i) {
      long double pred = m.predict_rebased(pts_[i].x - x0);
      long double err = pred - static_cast<long double>(pts_[i].pos);
      if (err > static_cast<long double>(eps_) || err < -static_cast<long double>(eps_)) {
        if (i == begin) {
          // Single-point fallback; always exact.
          Model one;
          one.k_min = pts_[begin].key;
          one.sl = 0.0;
          one.ic_fp = static_cast<__int128>(pts_[begin].pos) << 32;
          one.p_max = pts_[begin].pos;
          emit_(one);
          emit_range(begin + 1, end, nullptr);
          return;
        }
        emit_range(begin, i, nullptr);
        emit_range(i, end, nullptr);
        return;
      }
    }
    emit_(m);
  }

  std::int64_t eps_;
  std::function<void(const Model&)> emit_;
  PlaOptimizer hull_;
  std::vector<Pt> pts_;
};

}  // namespace cole
