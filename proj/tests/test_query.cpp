#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <map>
#include <random>

#include "cole/query.hpp"
#include "cole/workload.hpp"

using namespace cole;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "cole_query_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Versioned-map oracle: per address, the (height, value) history.
using Oracle = std::map<Address, std::map<std::uint64_t, Value>>;

struct Fixture {
  std::unique_ptr<Engine> engine;
  Oracle oracle;
  Digest state;
  std::uint64_t blocks;

  Fixture(const std::string& name, bool async, std::uint64_t nblocks, std::uint64_t block_size,
          std::uint64_t seed, std::uint64_t keyspace = 150) : blocks(nblocks) {
    EngineConfig c;
    c.mem_capacity_B = 64;
    c.async_merge = async;
    engine = std::make_unique<Engine>(fresh_dir(name), c);
    std::mt19937_64 rng(seed);
    for (std::uint64_t h = 1; h <= nblocks; ++h) {
      engine->begin_block(h);
      for (std::uint64_t i = 0; i < block_size; ++i) {
        Address a = WorkloadGen::account_address(rng() % keyspace);
        Value v = Value::from_u64(rng());
        engine->put(a, v);
        oracle[a][h] = v;  // last write in a block wins
      }
      state = engine->finalize_block();
    }
  }

  std::optional<Value> oracle_get_at(const Address& a, std::uint64_t blk) const {
    auto it = oracle.find(a);
    if (it == oracle.end()) return std::nullopt;
    auto vit = it->second.upper_bound(blk);
    if (vit == it->second.begin()) return std::nullopt;
    return std::prev(vit)->second;
  }

  std::vector<std::pair<std::uint64_t, Value>> oracle_prov(const Address& a, std::uint64_t lo,
                                                           std::uint64_t hi) const {
    std::vector<std::pair<std::uint64_t, Value>> out;
    auto it = oracle.find(a);
    if (it == oracle.end()) return out;
    for (auto vit = it->second.lower_bound(lo); vit != it->second.end() && vit->first <= hi; ++vit)
      out.emplace_back(vit->first, vit->second);
    return out;
  }
};

}  // namespace

TEST_CASE("get and get_at match the versioned-map oracle") {
  for (bool async : {false, true}) {
    Fixture f(async ? "get_async" : "get_sync", async, 60, 40, 71);
    std::mt19937_64 rng(72);
    for (int t = 0; t < 1500; ++t) {
      Address a = WorkloadGen::account_address(rng() % 200);  // includes unseen addresses
      CHECK(get(*f.engine, a) == f.oracle_get_at(a, kMaxHeight));
      std::uint64_t blk = rng() % 70;
      CHECK(get_at(*f.engine, a, blk) == f.oracle_get_at(a, blk));
    }
  }
}

TEST_CASE("prov_query results match oracle and proofs verify") {
  for (bool async : {false, true}) {
    Fixture f(async ? "prov_async" : "prov_sync", async, 50, 40, 73);
    std::mt19937_64 rng(74);
    for (int t = 0; t < 300; ++t) {
      Address a = WorkloadGen::account_address(rng() % 180);
      std::uint64_t lo = 1 + rng() % f.blocks;
      std::uint64_t hi = lo + rng() % (f.blocks - lo + 1);
      auto [vals, proof] = prov_query(*f.engine, a, lo, hi);
      CHECK(vals == f.oracle_prov(a, lo, hi));
      auto blob = serialize_proof(proof);
      auto parsed = deserialize_proof(blob);
      auto verified = verify_prov(parsed, f.state, a, lo, hi);
      REQUIRE(verified.has_value());
      CHECK(*verified == vals);
    }
  }
}

TEST_CASE("proof serialization round-trips bit-exactly") {
  Fixture f("roundtrip", false, 30, 30, 75);
  std::mt19937_64 rng(76);
  for (int t = 0; t < 50; ++t) {
    Address a = WorkloadGen::account_address(rng() % 150);
    auto [vals, proof] = prov_query(*f.engine, a, 1, f.blocks);
    auto blob = serialize_proof(proof);
    auto parsed = deserialize_proof(blob);
    CHECK(serialize_proof(parsed) == blob);
  }
}

TEST_CASE("verification rejects wrong state digests and parameters") {
  Fixture f("rejects", false, 30, 30, 77);
  Address a = WorkloadGen::account_address(3);
  auto [vals, proof] = prov_query(*f.engine, a, 5, 20);
  REQUIRE(verify_prov(proof, f.state, a, 5, 20).has_value());

  Digest wrong = f.state;
  wrong.bytes[0] ^= 1;
  CHECK_FALSE(verify_prov(proof, wrong, a, 5, 20).has_value());
  CHECK_FALSE(verify_prov(proof, f.state, a, 5, 21).has_value());
  CHECK_FALSE(verify_prov(proof, f.state, a, 4, 20).has_value());
  Address other = WorkloadGen::account_address(4);
  CHECK_FALSE(verify_prov(proof, f.state, other, 5, 20).has_value());
}

TEST_CASE("verification rejects bit flips anywhere in the proof") {
  Fixture f("bitflips", false, 40, 30, 78);
  std::mt19937_64 rng(79);
  std::size_t rejected = 0, total = 0;
  for (int t = 0; t < 40; ++t) {
    Address a = WorkloadGen::account_address(rng() % 150);
    std::uint64_t lo = 1 + rng() % f.blocks;
    std::uint64_t hi = lo + rng() % (f.blocks - lo + 1);
    auto [vals, proof] = prov_query(*f.engine, a, lo, hi);
    auto blob = serialize_proof(proof);
    for (int m = 0; m < 25; ++m) {
      auto bad = blob;
      bad[rng() % bad.size()] ^= static_cast<std::uint8_t>(1u << (rng() % 8));
      ++total;
      std::optional<std::vector<std::pair<std::uint64_t, Value>>> out;
      try {
        out = verify_prov(deserialize_proof(bad), f.state, a, lo, hi);
      } catch (const std::exception&) {
        out = std::nullopt;
      }
      // A mutated proof must never change the accepted result set.
      if (!out || *out == vals) ++rejected;
    }
  }
  CHECK(rejected == total);
}

TEST_CASE("truncated and padded proofs are rejected") {
  Fixture f("truncate", false, 20, 30, 80);
  Address a = WorkloadGen::account_address(1);
  auto [vals, proof] = prov_query(*f.engine, a, 1, 20);
  auto blob = serialize_proof(proof);
  for (std::size_t cut : {std::size_t{1}, blob.size() / 2, blob.size() - 1}) {
    auto bad = std::vector<std::uint8_t>(blob.begin(), blob.begin() + cut);
    CHECK_THROWS(deserialize_proof(bad));
  }
  auto padded = blob;
  padded.push_back(0);
  CHECK_THROWS(deserialize_proof(padded));
}

TEST_CASE("early stop: deep history is skipped but justified") {
  // Heavy update history for one address; a narrow recent range must not
  // search every unit, and dropping the justification must fail verification.
  EngineConfig c;
  c.mem_capacity_B = 64;
  Engine e(fresh_dir("earlystop"), c);
  Address hot = WorkloadGen::account_address(0);
  std::uint64_t blocks = 80;
  Digest state;
  for (std::uint64_t h = 1; h <= blocks; ++h) {
    e.begin_block(h);
    for (int i = 0; i < 30; ++i) e.put(hot, Value::from_u64(h * 100 + i));
    state = e.finalize_block();
  }
  auto order_len = e.search_units().size();
  auto [vals, proof] = prov_query(e, hot, blocks - 1, blocks);
  REQUIRE(vals.size() == 2);
  CHECK(proof.units.size() < order_len);
  auto ok = verify_prov(proof, state, hot, blocks - 1, blocks);
  REQUIRE(ok.has_value());
  CHECK(*ok == vals);

  // Remove the last searched unit: the early stop is no longer justified by
  // a complete prefix, so verification must fail.
  auto bad = proof;
  bad.units.pop_back();
  CHECK_FALSE(verify_prov(bad, state, hot, blocks - 1, blocks).has_value());
}

TEST_CASE("prov rejects invalid ranges") {
  Fixture f("ranges", false, 10, 10, 81);
  Address a = WorkloadGen::account_address(0);
  CHECK_THROWS_AS(prov_query(*f.engine, a, 0, 5), std::invalid_argument);
  CHECK_THROWS_AS(prov_query(*f.engine, a, 6, 5), std::invalid_argument);
  CHECK_THROWS_AS(prov_query(*f.engine, a, 1, kMaxHeight), std::invalid_argument);
}
