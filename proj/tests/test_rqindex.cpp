#include "gream/error.hpp"
#include "gream/rqindex.hpp"
#include "gream/synthenv.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

using namespace gream;
using namespace gream::rqindex;

namespace {

RowMatrix random_points(int n, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  RowMatrix m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = g(rng);
  return m;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "gream_rqindex_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("Lloyd inertia never increases") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto pts = random_points(120, 5, s);
    auto res = kmeans(pts, 7, s);
    for (std::size_t i = 1; i < res.trace.inertia.size(); ++i)
      CHECK(res.trace.inertia[i] <= res.trace.inertia[i - 1] * (1 + 1e-12));
    REQUIRE(res.assignment.size() == 120);
    // Every point sits at its nearest centroid.
    for (int i = 0; i < 120; ++i) {
      Eigen::VectorXd x = pts.row(i).transpose();
      double best = (res.centroids.row(res.assignment[i]).transpose() - x).squaredNorm();
      for (int c = 0; c < 7; ++c) CHECK(best <= (res.centroids.row(c).transpose() - x).squaredNorm() + 1e-12);
    }
  }
}

TEST_CASE("duplicate points leave no cluster empty") {
  RowMatrix pts(6, 2);
  pts << 0, 0, 0, 0, 0, 0, 0, 0, 5, 5, 5, 5;
  auto res = kmeans(pts, 3, 1);
  std::vector<int> counts(3, 0);
  for (int a : res.assignment) ++counts[a];
  for (int c : counts) CHECK(c >= 0);
  CHECK(res.trace.inertia.back() == doctest::Approx(0.0));
}

TEST_CASE("nearest centroid ties go to the lowest id") {
  RowMatrix c(3, 1);
  c << 1.0, -1.0, 1.0;
  Vector x(1);
  x << 0.0;
  CHECK(nearest_centroid(c, x) == 0);
  x << 1.0;
  CHECK(nearest_centroid(c, x) == 0);
}

TEST_CASE("residual chain telescopes and each level is the greedy nearest code") {
  EmbeddingMatrix emb(random_points(200, 6, 11));
  const std::vector<int> sizes{8, 4, 4};
  auto books = fit_codebooks(emb, sizes, 3);
  auto codes = assign_levels(emb, books);
  for (std::size_t i = 0; i < emb.item_count(); ++i) {
    Vector r = emb.row(i);
    Vector sum = Vector::Zero(6);
    for (std::size_t l = 0; l < sizes.size(); ++l) {
      // Brute-force nearest with lowest-id ties.
      int best = 0;
      for (int k = 1; k < sizes[l]; ++k)
        if ((books.levels[l].row(k).transpose() - r).squaredNorm() <
            (books.levels[l].row(best).transpose() - r).squaredNorm())
          best = k;
      CHECK(codes[i][l] == best);
      sum += books.levels[l].row(best).transpose();
      r -= books.levels[l].row(best).transpose();
    }
    ItemIndex idx{codes[i], 0};
    CHECK((decode(idx, books) + r - emb.row(i)).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((decode(idx, books) - sum).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("planted coarse labels are recovered") {
  const std::vector<int> branching{4, 4};
  auto cat = synthenv::generate_catalog(256, branching, 0.05, 16, 5);
  auto books = fit_codebooks(cat.embeddings, branching, 9);
  auto codes = assign_levels(cat.embeddings, books);
  // Best agreement over all relabelings of the 4 clusters.
  std::vector<int> perm{0, 1, 2, 3};
  double best = 0;
  do {
    int agree = 0;
    for (std::size_t i = 0; i < 256; ++i) agree += perm[codes[i][0]] == cat.paths[i][0];
    best = std::max(best, agree / 256.0);
  } while (std::next_permutation(perm.begin(), perm.end()));
  CHECK(best > 0.95);
}

TEST_CASE("conflict codes follow item order and collisions match a pairwise count") {
  RowMatrix pts = random_points(40, 3, 2);
  pts.row(7) = pts.row(3);
  pts.row(19) = pts.row(3);
  EmbeddingMatrix emb(pts);
  auto books = fit_codebooks(emb, std::vector<int>{3, 2}, 4);
  auto idx = encode(emb, books);
  std::map<std::vector<int>, int> next;
  for (const auto& ix : idx) CHECK(ix.conflict == next[ix.levels]++);
  CHECK(idx[3].levels == idx[7].levels);
  CHECK(idx[7].conflict > idx[3].conflict);
  CHECK(idx[19].conflict > idx[7].conflict);
  auto stats = collision_stats(idx);
  REQUIRE(stats.size() == 2);
  for (std::size_t l = 0; l < 2; ++l) CHECK(stats[l] == oracle::collisions_pairwise(idx, l + 1));
  int largest = 0;
  for (const auto& [levels, count] : next) largest = std::max(largest, count);
  CHECK(conflict_vocab(idx) == largest);
}

TEST_CASE("capacity overflow names the prefix") {
  RowMatrix pts = RowMatrix::Zero(6, 2);
  pts(5, 0) = 3.0;
  EmbeddingMatrix emb(pts);
  auto books = fit_codebooks(emb, std::vector<int>{2}, 0);
  CHECK_THROWS_AS(encode(emb, books, 4), CapacityError);
  try {
    encode(emb, books, 4);
  } catch (const CapacityError& e) {
    CHECK(std::string(e.what()).find("prefix (") != std::string::npos);
  }
  CHECK_NOTHROW(encode(emb, books, 5));
}

TEST_CASE("invalid inputs") {
  RowMatrix bad = RowMatrix::Zero(3, 2);
  bad(1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(EmbeddingMatrix{bad}, InputError);
  EmbeddingMatrix emb(random_points(5, 2, 0));
  CHECK_THROWS_AS(fit_codebooks(emb, std::vector<int>{6}, 0), ConfigError);
  auto books = fit_codebooks(emb, std::vector<int>{2, 2}, 0);
  CHECK_THROWS_AS(decode(ItemIndex{{0, 2}, 0}, books), InputError);
  CHECK_THROWS_AS(decode(ItemIndex{{0}, 0}, books), InputError);
}

TEST_CASE("fitting is deterministic in the seed") {
  EmbeddingMatrix emb(random_points(60, 4, 8));
  auto a = fit_codebooks(emb, std::vector<int>{5, 3}, 42);
  auto b = fit_codebooks(emb, std::vector<int>{5, 3}, 42);
  for (std::size_t l = 0; l < 2; ++l) CHECK(a.levels[l] == b.levels[l]);
}

TEST_CASE("file round trips") {
  EmbeddingMatrix emb(random_points(30, 4, 3));
  write_embeddings(scratch("e.grem"), emb);
  {
    std::ifstream in(scratch("e.grem"), std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    CHECK(std::string(magic, 4) == "GREM");
  }
  auto back = read_embeddings(scratch("e.grem"));
  REQUIRE(back.item_count() == 30);
  for (std::size_t i = 0; i < 30; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(back.rows()(i, j) == static_cast<double>(static_cast<float>(emb.rows()(i, j))));

  auto books = fit_codebooks(emb, std::vector<int>{4, 2}, 1);
  auto idx = encode(emb, books);
  write_index(scratch("i.json"), idx);
  CHECK(read_index(scratch("i.json")) == idx);
  write_codebooks(scratch("c.json"), books);
  auto books2 = read_codebooks(scratch("c.json"));
  for (std::size_t l = 0; l < 2; ++l) CHECK(books2.levels[l] == books.levels[l]);

  std::ofstream(scratch("bad.grem"), std::ios::binary) << "NOPE0000";
  CHECK_THROWS_AS(read_embeddings(scratch("bad.grem")), IoError);
  CHECK_THROWS_AS(read_embeddings(scratch("missing.grem")), IoError);
}
