#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "cole/run.hpp"

using namespace cole;

namespace {

std::filesystem::path tmp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "cole_run_tests";
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<std::pair<CompoundKey, Value>> sorted_records(std::mt19937_64& rng, std::size_t n,
                                                          std::uint64_t addr_space) {
  std::map<CompoundKey, Value> m;
  while (m.size() < n)
    m[{Address::from_u64(rng() % addr_space), rng() % 1000}] = Value::from_u64(rng());
  return {m.begin(), m.end()};
}

std::shared_ptr<Run> make_run(const std::vector<std::pair<CompoundKey, Value>>& recs,
                              std::uint64_t seq, const EngineConfig& cfg, std::size_t level = 1) {
  auto paths = RunPaths::at(tmp_dir(), level, seq);
  RunBuilder b(paths, recs.size(), level, cfg);
  for (const auto& [k, v] : recs) b.add(k, v);
  b.finish();
  return std::make_shared<Run>(paths, level, seq, cfg.epsilon);
}

}  // namespace

TEST_CASE("run search matches map predecessor oracle with bounded IO") {
  std::mt19937_64 rng(61);
  EngineConfig cfg;
  auto recs = sorted_records(rng, 20000, 400);
  auto run = make_run(recs, 1, cfg);
  CHECK(run->size() == recs.size());
  std::map<CompoundKey, Value> oracle(recs.begin(), recs.end());

  std::size_t layers = run->index().layer_count();
  for (int t = 0; t < 4000; ++t) {
    CompoundKey q{Address::from_u64(rng() % 450), rng() % 1100};
    IoCounter io;
    auto got = run->search_no_bloom(q, &io);
    CHECK(io.page_reads <= 1 + 2 * layers);
    auto it = oracle.upper_bound(q);
    if (it == oracle.begin()) {
      CHECK_FALSE(got.has_value());
    } else {
      --it;
      REQUIRE(got.has_value());
      CHECK(got->first.key == it->first);
      CHECK(got->first.value == it->second);
    }
  }
}

TEST_CASE("bloom filter short-circuits absent addresses") {
  std::mt19937_64 rng(62);
  EngineConfig cfg;
  std::map<CompoundKey, Value> m;
  for (std::uint64_t a = 0; a < 200; ++a)
    m[{Address::from_u64(a * 2), a}] = Value::from_u64(a);  // even addresses only
  std::vector<std::pair<CompoundKey, Value>> recs(m.begin(), m.end());
  auto run = make_run(recs, 2, cfg);
  std::size_t skipped = 0;
  for (std::uint64_t a = 1; a < 400; a += 2) {
    IoCounter io;
    auto got = run->search({Address::from_u64(a), 500}, &io);
    if (io.page_reads == 0) {
      ++skipped;
      CHECK_FALSE(got.has_value());
    }
  }
  // fpr 0.001 at this size: nearly all odd addresses skip without IO.
  CHECK(skipped >= 190);
}

TEST_CASE("record_at and scanner stream the value file in order") {
  std::mt19937_64 rng(63);
  EngineConfig cfg;
  auto recs = sorted_records(rng, 500, 50);
  auto run = make_run(recs, 3, cfg);
  for (std::size_t i = 0; i < recs.size(); i += 13) {
    auto r = run->record_at(i, nullptr);
    CHECK(r.key == recs[i].first);
    CHECK(r.value == recs[i].second);
  }
  std::size_t i = 0;
  for (auto sc = run->scan(); !sc.done(); sc.advance(), ++i) {
    CHECK(sc.current().key == recs[i].first);
  }
  CHECK(i == recs.size());
  CHECK_THROWS(run->record_at(recs.size(), nullptr));
}

TEST_CASE("merkle root is reproducible and bound to contents") {
  std::mt19937_64 rng(64);
  EngineConfig cfg;
  auto recs = sorted_records(rng, 300, 40);
  auto r1 = make_run(recs, 4, cfg);
  auto r2 = make_run(recs, 5, cfg);
  CHECK(r1->root() == r2->root());
  CHECK(r1->bloom_digest() == r2->bloom_digest());
  recs[17].second.bytes[0] ^= 1;
  auto r3 = make_run(recs, 6, cfg);
  CHECK(r3->root() != r1->root());
}

TEST_CASE("builder rejects unsorted input and wrong length") {
  EngineConfig cfg;
  auto paths = RunPaths::at(tmp_dir(), 1, 100);
  RunBuilder b(paths, 3, 1, cfg);
  b.add({Address::from_u64(5), 1}, Value::from_u64(1));
  CHECK_THROWS_AS(b.add({Address::from_u64(5), 1}, Value::from_u64(2)), std::invalid_argument);
  CHECK_THROWS_AS(b.add({Address::from_u64(4), 0}, Value::from_u64(2)), std::invalid_argument);
  b.add({Address::from_u64(6), 0}, Value::from_u64(3));
  CHECK_THROWS_AS(b.finish(), std::logic_error);  // 2 records, declared 3
}

TEST_CASE("merge interleaves runs and newest duplicate wins") {
  std::mt19937_64 rng(65);
  EngineConfig cfg;

  std::map<CompoundKey, Value> a_map, b_map;
  for (int i = 0; i < 800; ++i)
    a_map[{Address::from_u64(rng() % 100), rng() % 200}] = Value::from_u64(rng());
  for (int i = 0; i < 800; ++i)
    b_map[{Address::from_u64(rng() % 100), rng() % 200}] = Value::from_u64(rng());
  // Force overlapping keys so the duplicate rule is exercised.
  int dups = 0;
  for (const auto& [k, v] : a_map) {
    if (dups++ == 50) break;
    b_map[k] = Value::from_u64(rng());
  }

  std::vector<std::pair<CompoundKey, Value>> a(a_map.begin(), a_map.end());
  std::vector<std::pair<CompoundKey, Value>> b(b_map.begin(), b_map.end());
  auto older = make_run(a, 7, cfg);
  auto newer = make_run(b, 8, cfg);

  std::map<CompoundKey, Value> expect;
  for (const auto& [k, v] : a_map) expect[k] = v;
  for (const auto& [k, v] : b_map) expect[k] = v;  // newer overrides

  std::vector<std::shared_ptr<Run>> inputs{older, newer};
  CHECK(merged_size(inputs) == expect.size());
  std::vector<std::pair<CompoundKey, Value>> merged;
  merge_runs(inputs, [&](const CompoundKey& k, const Value& v) { merged.emplace_back(k, v); });
  REQUIRE(merged.size() == expect.size());
  auto it = expect.begin();
  for (const auto& [k, v] : merged) {
    CHECK(k == it->first);
    CHECK(v == it->second);
    ++it;
  }
}

TEST_CASE("merged output can build the next-level run") {
  std::mt19937_64 rng(66);
  EngineConfig cfg;
  auto a = sorted_records(rng, 1000, 80);
  auto b = sorted_records(rng, 1000, 80);
  auto ra = make_run(a, 9, cfg);
  auto rb = make_run(b, 10, cfg);
  std::vector<std::shared_ptr<Run>> inputs{ra, rb};
  std::uint64_t n = merged_size(inputs);
  auto paths = RunPaths::at(tmp_dir(), 2, 11);
  RunBuilder builder(paths, n, 2, cfg);
  merge_runs(inputs, [&](const CompoundKey& k, const Value& v) { builder.add(k, v); });
  builder.finish();
  Run merged(paths, 2, 11, cfg.epsilon);
  CHECK(merged.size() == n);
  // Spot-check searches against the combined oracle.
  std::map<CompoundKey, Value> oracle(a.begin(), a.end());
  for (const auto& [k, v] : b) oracle[k] = v;
  for (int t = 0; t < 500; ++t) {
    CompoundKey q{Address::from_u64(rng() % 90), rng() % 1100};
    auto got = merged.search_no_bloom(q, nullptr);
    auto it = oracle.upper_bound(q);
    if (it == oracle.begin()) {
      CHECK_FALSE(got.has_value());
    } else {
      CHECK(got->first.key == std::prev(it)->first);
    }
  }
}
