#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "cole/merkle_file.hpp"

using namespace cole;

namespace {

std::filesystem::path tmp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "cole_merkle_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::vector<Digest> random_leaves(std::mt19937_64& rng, std::uint64_t n) {
  std::vector<Digest> leaves(n);
  for (auto& d : leaves)
    for (auto& b : d.bytes) b = static_cast<std::uint8_t>(rng());
  return leaves;
}

// Naive oracle: build every layer fully in memory, then serialize in the
// same flat layout (header, then layers bottom-up).
std::vector<std::uint8_t> naive_file_bytes(const std::vector<Digest>& leaves, std::uint64_t m) {
  std::vector<std::vector<Digest>> layers{leaves};
  while (layers.back().size() > 1) {
    const auto& below = layers.back();
    std::vector<Digest> up;
    for (std::size_t i = 0; i < below.size(); i += m) {
      std::size_t e = std::min(below.size(), i + m);
      up.push_back(hash_internal(std::span(below.data() + i, e - i)));
    }
    layers.push_back(std::move(up));
  }
  std::vector<std::uint8_t> out(kMerkleHeaderSize);
  auto put_u64 = [&](std::size_t at, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out[at + i] = static_cast<std::uint8_t>(v >> (8 * (7 - i)));
  };
  put_u64(0, kMerkleMagic);
  put_u64(8, leaves.size());
  put_u64(16, m);
  for (const auto& layer : layers)
    for (const auto& d : layer) out.insert(out.end(), d.bytes.begin(), d.bytes.end());
  return out;
}

std::vector<std::uint8_t> read_all(const std::filesystem::path& p) {
  auto f = FileHandle::open_readonly(p);
  std::vector<std::uint8_t> buf(f.size());
  f.pread_exact(buf.data(), buf.size(), 0);
  return buf;
}

std::filesystem::path build_file(const std::vector<Digest>& leaves, std::uint64_t m,
                                 const std::string& name) {
  auto path = tmp_file(name);
  auto fh = FileHandle::create(path);
  MerkleFileBuilder b(fh, leaves.size(), m);
  for (const auto& d : leaves) b.add_leaf(d);
  b.finish();
  return path;
}

}  // namespace

TEST_CASE("streamed file is byte-identical to naive oracle") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 40; ++trial) {
    std::uint64_t m = std::vector<std::uint64_t>{2, 3, 4, 8, 16}[rng() % 5];
    std::uint64_t n = 1 + rng() % 3000;
    auto leaves = random_leaves(rng, n);
    auto path = build_file(leaves, m, "stream_vs_naive.mrk");
    INFO("n=" << n << " m=" << m);
    REQUIRE(read_all(path) == naive_file_bytes(leaves, m));
  }
}

TEST_CASE("n=4 m=2 layer offsets are 0,4,6") {
  MerkleShape shape(4, 2);
  REQUIRE(shape.layer_start == std::vector<std::uint64_t>{0, 4, 6});
  REQUIRE(shape.layer_size == std::vector<std::uint64_t>{4, 2, 1});
  CHECK(shape.total == 7);
  // parent positions: leaves 0,1 -> 4; leaves 2,3 -> 5; nodes 4,5 -> 6
  CHECK(shape.parent_position(0, 0, 2) == 4);
  CHECK(shape.parent_position(1, 0, 2) == 4);
  CHECK(shape.parent_position(2, 0, 2) == 5);
  CHECK(shape.parent_position(3, 0, 2) == 5);
  CHECK(shape.parent_position(4, 1, 2) == 6);
  CHECK(shape.parent_position(5, 1, 2) == 6);
  CHECK_THROWS(shape.parent_position(6, 2, 2));
}

TEST_CASE("incomplete last group hashes only present children") {
  // n=5, m=4: second group of the leaf layer has a single child.
  std::mt19937_64 rng(22);
  auto leaves = random_leaves(rng, 5);
  auto path = build_file(leaves, 4, "ragged.mrk");
  MerkleFile f(path);
  Digest g0 = hash_internal(std::span(leaves.data(), 4));
  Digest g1 = hash_internal(std::span(leaves.data() + 4, 1));
  CHECK(f.digest_at(5) == g0);
  CHECK(f.digest_at(6) == g1);
  std::vector<Digest> top{g0, g1};
  CHECK(f.root() == hash_internal(top));
}

TEST_CASE("builder enforces the declared stream length") {
  auto path = tmp_file("short.mrk");
  auto fh = FileHandle::create(path);
  MerkleFileBuilder b(fh, 3, 2);
  b.add_leaf(Digest{});
  CHECK_THROWS_AS(b.finish(), std::logic_error);
  auto path2 = tmp_file("long.mrk");
  auto fh2 = FileHandle::create(path2);
  MerkleFileBuilder b2(fh2, 1, 2);
  b2.add_leaf(Digest{});
  CHECK_THROWS_AS(b2.add_leaf(Digest{}), std::logic_error);
}

TEST_CASE("range proofs verify and are strict") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 30; ++trial) {
    std::uint64_t m = std::vector<std::uint64_t>{2, 4, 7}[rng() % 3];
    std::uint64_t n = 1 + rng() % 500;
    auto leaves = random_leaves(rng, n);
    auto path = build_file(leaves, m, "proof.mrk");
    MerkleFile f(path);
    std::uint64_t pos_l = rng() % n;
    std::uint64_t pos_u = pos_l + rng() % (n - pos_l);
    auto proof = f.range_proof(pos_l, pos_u);
    std::vector<Digest> window(leaves.begin() + pos_l, leaves.begin() + pos_u + 1);
    auto root = replay_range_proof(proof, window);
    REQUIRE(root);
    CHECK(*root == f.root());

    // Any single-bit mutation of a window leaf or sibling digest must change
    // or break the replay.
    if (!proof.siblings.empty()) {
      auto bad = proof;
      bad.siblings[rng() % bad.siblings.size()].second.bytes[rng() % 32] ^= 1;
      auto r2 = replay_range_proof(bad, window);
      CHECK((!r2 || *r2 != f.root()));
    }
    auto bad_window = window;
    bad_window[rng() % bad_window.size()].bytes[rng() % 32] ^= 1;
    auto r3 = replay_range_proof(proof, bad_window);
    CHECK((!r3 || *r3 != f.root()));

    // Dropping a sibling must fail outright.
    if (!proof.siblings.empty()) {
      auto dropped = proof;
      dropped.siblings.pop_back();
      CHECK_FALSE(replay_range_proof(dropped, window));
    }
    // Extra unused sibling must fail.
    auto extra = proof;
    extra.siblings.emplace_back(pos_l, leaves[pos_l]);  // collides with a window leaf
    CHECK_FALSE(replay_range_proof(extra, window));
  }
}

TEST_CASE("replay rejects wrong window sizes and bad shapes") {
  std::mt19937_64 rng(24);
  auto leaves = random_leaves(rng, 20);
  auto path = build_file(leaves, 4, "shape.mrk");
  MerkleFile f(path);
  auto proof = f.range_proof(3, 7);
  std::vector<Digest> window(leaves.begin() + 3, leaves.begin() + 8);
  REQUIRE(replay_range_proof(proof, window));

  auto short_window = window;
  short_window.pop_back();
  CHECK_FALSE(replay_range_proof(proof, short_window));

  auto bad = proof;
  bad.m = 1;
  CHECK_FALSE(replay_range_proof(bad, window));
  bad = proof;
  bad.pos_u = bad.n;  // out of range
  CHECK_FALSE(replay_range_proof(bad, window));
  bad = proof;
  bad.n = 0;
  CHECK_FALSE(replay_range_proof(bad, window));
}
