#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "cole/common.hpp"

namespace cole {

struct WorkloadOp {
  bool is_put;
  Address addr;
  Value value;  // puts only
};

struct WorkloadConfig {
  std::string kind = "kvstore";  // kvstore | smallbank
  std::uint64_t blocks = 10;
  std::uint64_t block_size = 100;  // ops per block
  std::uint64_t keyspace = 10000;  // distinct addresses / accounts
  double read_ratio = 0.0;         // kvstore run phase
  double zipf_theta = 0.0;         // 0 = uniform
  std::uint64_t seed = 42;

  void validate() const {
    if (kind != "kvstore" && kind != "smallbank")
      throw std::invalid_argument("workload kind must be kvstore or smallbank");
    if (blocks == 0 || block_size == 0 || keyspace == 0)
      throw std::invalid_argument("workload sizes must be positive");
    if (read_ratio < 0.0 || read_ratio > 1.0)
      throw std::invalid_argument("read_ratio must be in [0,1]");
    if (zipf_theta < 0.0 || zipf_theta >= 1.0)
      throw std::invalid_argument("zipf_theta must be in [0,1)");
  }
};

// Zipfian(theta) over [0, n) with precomputed normalization; theta=0 degrades
// to uniform.
class ZipfSampler {
 public:
  ZipfSampler(std::uint64_t n, double theta) : n_(n), theta_(theta) {
    if (theta_ > 0.0) {
      cdf_.reserve(n_);
      double sum = 0.0;
      for (std::uint64_t i = 1; i <= n_; ++i) {
        sum += 1.0 / std::pow(static_cast<double>(i), theta_);
        cdf_.push_back(sum);
      }
    }
  }

  std::uint64_t sample(std::mt19937_64& rng) const {
    if (theta_ <= 0.0) return rng() % n_;
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    double u = u01(rng) * cdf_.back();
    auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
    return static_cast<std::uint64_t>(it - cdf_.begin());
  }

 private:
  std::uint64_t n_;
  double theta_;
  std::vector<double> cdf_;
};

// Deterministic per-block op streams: block h is a pure function of
// (config, h), so replays and cross-engine comparisons see identical inputs.
class WorkloadGen {
 public:
  explicit WorkloadGen(WorkloadConfig cfg) : cfg_(std::move(cfg)), zipf_(cfg_.keyspace, cfg_.zipf_theta) {
    cfg_.validate();
  }

  const WorkloadConfig& config() const { return cfg_; }

  static Address account_address(std::uint64_t id) {
    // Hash-spread so addresses cover the keyspace uniformly.
    std::uint64_t x = id * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL;
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    Address a = Address::from_u64(x);
    a.bytes[0] = static_cast<std::uint8_t>(id >> 8);
    a.bytes[1] = static_cast<std::uint8_t>(id);
    return a;
  }

  std::vector<WorkloadOp> block_ops(std::uint64_t height) const {
    std::mt19937_64 rng(cfg_.seed * 0x100000001b3ULL + height);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<WorkloadOp> ops;
    ops.reserve(cfg_.block_size * (cfg_.kind == "smallbank" ? 2 : 1));
    for (std::uint64_t t = 0; t < cfg_.block_size; ++t) {
      if (cfg_.kind == "smallbank") {
        // Two-account read-modify-write transfer.
        std::uint64_t a = zipf_.sample(rng), b = zipf_.sample(rng);
        if (b == a) b = (b + 1) % cfg_.keyspace;
        Value amount = Value::from_u64(rng());
        ops.push_back({true, account_address(a), amount});
        ops.push_back({true, account_address(b), Value::from_u64(rng())});
      } else {
        std::uint64_t k = zipf_.sample(rng);
        if (u01(rng) < cfg_.read_ratio)
          ops.push_back({false, account_address(k), {}});
        else
          ops.push_back({true, account_address(k), Value::from_u64(rng())});
      }
    }
    return ops;
  }

 private:
  WorkloadConfig cfg_;
  ZipfSampler zipf_;
};

}  // namespace cole
