#include "gream/rqindex.hpp"

#include "binary_io.hpp"
#include "gream/error.hpp"
#include "gream/parallel.hpp"
#include "gream/random.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

namespace gream {

EmbeddingMatrix::EmbeddingMatrix(RowMatrix rows) : rows_(std::move(rows)) {
  if (rows_.rows() < 1 || rows_.cols() < 1) throw InputError("embedding matrix must have at least one row and column");
  for (Eigen::Index i = 0; i < rows_.rows(); ++i)
    for (Eigen::Index j = 0; j < rows_.cols(); ++j)
      if (!std::isfinite(rows_(i, j)))
        throw InputError(fmt::format("non-finite embedding value at item {}, dim {}", i, j));
}

ItemIndex ItemIndex::from_tokens(const std::vector<int>& tokens) {
  if (tokens.empty()) throw InputError("item index needs at least a conflict code");
  ItemIndex out;
  out.levels.assign(tokens.begin(), tokens.end() - 1);
  out.conflict = tokens.back();
  return out;
}

std::string to_string(const ItemIndex& index) {
  std::string s = "(";
  for (std::size_t l = 0; l < index.levels.size(); ++l) s += fmt::format("{}{}", l ? "," : "", index.levels[l]);
  return s + fmt::format("|{})", index.conflict);
}

namespace rqindex {

using json = nlohmann::json;

std::vector<int> CodebookSet::level_sizes() const {
  std::vector<int> out;
  for (const auto& c : levels) out.push_back(static_cast<int>(c.rows()));
  return out;
}

int nearest_centroid(const RowMatrix& centroids, Eigen::Ref<const Vector> x) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    double d = (centroids.row(c).transpose() - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

namespace {

// Nearest-centroid assignment for all rows; returns the inertia reduced in row order.
double assign_all(const RowMatrix& points, const RowMatrix& centroids, std::vector<int>& assignment,
                  std::vector<double>& dist) {
  const auto n = static_cast<std::size_t>(points.rows());
  assignment.resize(n);
  dist.resize(n);
  parallel_for(n, [&](std::size_t i) {
    auto row = points.row(static_cast<Eigen::Index>(i)).transpose();
    int c = nearest_centroid(centroids, row);
    assignment[i] = c;
    dist[i] = (centroids.row(c).transpose() - row).squaredNorm();
  });
  double inertia = 0.0;
  for (double d : dist) inertia += d;
  return inertia;
}

RowMatrix kmeanspp_seed(const RowMatrix& points, int k, Rng& rng) {
  const Eigen::Index n = points.rows();
  RowMatrix centroids(k, points.cols());
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  Eigen::Index first = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
  centroids.row(0) = points.row(first);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double d = (points.row(i) - centroids.row(c - 1)).squaredNorm();
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], d);
      total += d2[static_cast<std::size_t>(i)];
    }
    Eigen::Index pick = n - 1;
    if (total > 0.0) {
      double u = uniform01(rng) * total;
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (u < acc) {
          pick = i;
          break;
        }
      }
    } else {
      // Fewer distinct points than clusters.
      pick = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
    }
    centroids.row(c) = points.row(pick);
  }
  return centroids;
}

}  // namespace

KMeansResult kmeans(const RowMatrix& points, int k, std::uint64_t seed) {
  if (k < 1) throw ConfigError("k-means cluster count must be >= 1");
  if (k > points.rows()) throw ConfigError(fmt::format("k-means cluster count {} exceeds point count {}", k, points.rows()));
  Rng rng(seed);
  KMeansResult out;
  out.centroids = kmeanspp_seed(points, k, rng);
  std::vector<double> dist;
  const auto n = static_cast<std::size_t>(points.rows());
  for (int iter = 0;; ++iter) {
    double inertia = assign_all(points, out.centroids, out.assignment, dist);
    if (!out.trace.inertia.empty()) {
      double prev = out.trace.inertia.back();
      if (inertia > prev * (1.0 + 1e-12) + 1e-300)
        throw std::logic_error(fmt::format("Lloyd inertia increased: {} -> {}", prev, inertia));
    }
    out.trace.inertia.push_back(inertia);
    if (inertia == 0.0 || iter + 1 >= kMaxLloydIterations) break;
    if (out.trace.inertia.size() >= 2) {
      double prev = out.trace.inertia[out.trace.inertia.size() - 2];
      if (prev - inertia <= kRelativeInertiaTolerance * prev) break;
    }

    RowMatrix sums = RowMatrix::Zero(k, points.cols());
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(out.assignment[i]) += points.row(static_cast<Eigen::Index>(i));
      ++counts[static_cast<std::size_t>(out.assignment[i])];
    }
    std::vector<int> empty;
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0)
        out.centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      else
        empty.push_back(c);
    }
    if (!empty.empty()) {
      // Reseed each empty cluster at the point farthest from its (updated) centroid.
      std::vector<double> far(n);
      for (std::size_t i = 0; i < n; ++i)
        far[i] = (points.row(static_cast<Eigen::Index>(i)) - out.centroids.row(out.assignment[i])).squaredNorm();
      for (int c : empty) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < n; ++i)
          if (far[i] > far[best]) best = i;
        out.centroids.row(c) = points.row(static_cast<Eigen::Index>(best));
        far[best] = -1.0;
        ++out.trace.reseeded_clusters;
      }
    }
  }
  return out;
}

FitResult fit_codebooks_traced(const EmbeddingMatrix& embeddings, std::span<const int> level_sizes,
                               std::uint64_t seed) {
  if (level_sizes.empty()) throw ConfigError("level_sizes must be nonempty");
  for (std::size_t l = 0; l < level_sizes.size(); ++l) {
    if (level_sizes[l] < 1) throw ConfigError(fmt::format("level_sizes[{}] must be >= 1", l));
    if (static_cast<std::size_t>(level_sizes[l]) > embeddings.item_count())
      throw ConfigError(fmt::format("level_sizes[{}] = {} exceeds item count {}", l, level_sizes[l],
                                    embeddings.item_count()));
  }
  FitResult out;
  out.codebooks.fit_seed = seed;
  RowMatrix residual = embeddings.rows();
  for (std::size_t l = 0; l < level_sizes.size(); ++l) {
    KMeansResult km = kmeans(residual, level_sizes[l], derive_seed(seed, l));
    for (Eigen::Index i = 0; i < residual.rows(); ++i)
      residual.row(i) -= km.centroids.row(km.assignment[static_cast<std::size_t>(i)]);
    out.codebooks.inertia_per_level.push_back(km.trace.inertia.back());
    out.codebooks.levels.push_back(std::move(km.centroids));
    out.traces.push_back(std::move(km.trace));
  }
  return out;
}

CodebookSet fit_codebooks(const EmbeddingMatrix& embeddings, std::span<const int> level_sizes, std::uint64_t seed) {
  return fit_codebooks_traced(embeddings, level_sizes, seed).codebooks;
}

std::vector<std::vector<int>> assign_levels(const EmbeddingMatrix& embeddings, const CodebookSet& codebooks) {
  if (embeddings.dim() != codebooks.dim())
    throw InputError(fmt::format("embedding dim {} does not match codebook dim {}", embeddings.dim(), codebooks.dim()));
  std::vector<std::vector<int>> codes(embeddings.item_count());
  parallel_for(embeddings.item_count(), [&](std::size_t i) {
    Vector r = embeddings.row(i);
    auto& c = codes[i];
    c.reserve(codebooks.depth());
    for (const auto& book : codebooks.levels) {
      int s = nearest_centroid(book, r);
      r -= book.row(s).transpose();
      c.push_back(s);
    }
  });
  return codes;
}

std::vector<ItemIndex> encode(const EmbeddingMatrix& embeddings, const CodebookSet& codebooks,
                              std::size_t conflict_capacity) {
  auto codes = assign_levels(embeddings, codebooks);
  std::map<std::vector<int>, std::size_t> used;
  std::vector<ItemIndex> out(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    std::size_t& n = used[codes[i]];
    if (n >= conflict_capacity) {
      throw CapacityError(fmt::format("more than {} items share semantic prefix ({})", conflict_capacity,
                                      fmt::join(codes[i], ",")));
    }
    out[i].levels = std::move(codes[i]);
    out[i].conflict = static_cast<int>(n++);
  }
  return out;
}

Vector decode_prefix(const ItemIndex& index, const CodebookSet& codebooks, std::size_t levels) {
  if (index.depth() != codebooks.depth())
    throw InputError(fmt::format("index has {} levels, codebooks have {}", index.depth(), codebooks.depth()));
  Vector out = Vector::Zero(static_cast<Eigen::Index>(codebooks.dim()));
  for (std::size_t l = 0; l < std::min(levels, codebooks.depth()); ++l) {
    int code = index.levels[l];
    if (code < 0 || code >= codebooks.levels[l].rows())
      throw InputError(fmt::format("code {} out of range [0, {}) at level {}", code, codebooks.levels[l].rows(), l));
    out += codebooks.levels[l].row(code).transpose();
  }
  return out;
}

Vector decode(const ItemIndex& index, const CodebookSet& codebooks) {
  return decode_prefix(index, codebooks, codebooks.depth());
}

std::vector<std::size_t> collision_stats(std::span<const ItemIndex> indices) {
  std::size_t depth = 0;
  for (const auto& ix : indices) depth = std::max(depth, ix.depth());
  std::vector<std::size_t> out(depth, 0);
  for (std::size_t l = 0; l < depth; ++l) {
    std::map<std::vector<int>, std::size_t> counts;
    for (const auto& ix : indices) {
      std::vector<int> prefix(ix.levels.begin(), ix.levels.begin() + static_cast<std::ptrdiff_t>(std::min(l + 1, ix.depth())));
      ++counts[prefix];
    }
    for (const auto& [prefix, n] : counts)
      if (n > 1) out[l] += n;
  }
  return out;
}

int conflict_vocab(std::span<const ItemIndex> indices) {
  int v = 1;
  for (const auto& ix : indices) v = std::max(v, ix.conflict + 1);
  return v;
}

// ---- file formats ----------------------------------------------------------

void write_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& embeddings) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  detail::put_magic(out, "GREM");
  detail::put_u32(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(embeddings.item_count()));
  detail::put_u32(out, static_cast<std::uint32_t>(embeddings.dim()));
  const auto& m = embeddings.rows();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) detail::put_f32(out, static_cast<float>(m(i, j)));
  if (!out) throw IoError("write failed: " + path.string());
}

EmbeddingMatrix read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string what = "embedding file " + path.string();
  detail::expect_magic(in, "GREM", what);
  std::uint32_t version = detail::get_u32(in, what);
  if (version != 1) throw IoError(fmt::format("{}: unsupported version {}", what, version));
  std::uint32_t n = detail::get_u32(in, what);
  std::uint32_t d = detail::get_u32(in, what);
  RowMatrix m(n, d);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < d; ++j) m(i, j) = static_cast<double>(detail::get_f32(in, what));
  return EmbeddingMatrix(std::move(m));
}

void write_index(const std::filesystem::path& path, std::span<const ItemIndex> indices) {
  // Keys in numeric item order so the file diffs cleanly.
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "{\n";
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out << "  \"" << i << "\": " << json(indices[i].tokens()).dump() << (i + 1 < indices.size() ? ",\n" : "\n");
  }
  out << "}\n";
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<ItemIndex> read_index(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ParseError(path.string() + ": expected a JSON object");
  std::vector<ItemIndex> out(j.size());
  std::vector<bool> seen(j.size(), false);
  for (const auto& [key, value] : j.items()) {
    std::size_t id = 0;
    try {
      id = std::stoul(key);
    } catch (const std::exception&) {
      throw ParseError(path.string() + ": non-numeric item id \"" + key + "\"");
    }
    if (id >= out.size() || seen[id]) throw ParseError(path.string() + ": item ids must be 0..n-1 without gaps");
    seen[id] = true;
    out[id] = ItemIndex::from_tokens(value.get<std::vector<int>>());
  }
  return out;
}

void write_codebooks(const std::filesystem::path& path, const CodebookSet& codebooks) {
  json j;
  j["fit_seed"] = codebooks.fit_seed;
  j["inertia_per_level"] = codebooks.inertia_per_level;
  j["levels"] = json::array();
  for (const auto& book : codebooks.levels) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < book.rows(); ++r) {
      std::vector<double> row(book.row(r).data(), book.row(r).data() + book.cols());
      rows.push_back(row);
    }
    j["levels"].push_back(rows);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump() << "\n";
}

CodebookSet read_codebooks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  CodebookSet out;
  try {
    json j = json::parse(in);
    out.fit_seed = j.at("fit_seed").get<std::uint64_t>();
    out.inertia_per_level = j.at("inertia_per_level").get<std::vector<double>>();
    for (const auto& rows : j.at("levels")) {
      auto vv = rows.get<std::vector<std::vector<double>>>();
      RowMatrix book(static_cast<Eigen::Index>(vv.size()), vv.empty() ? 0 : static_cast<Eigen::Index>(vv[0].size()));
      for (std::size_t r = 0; r < vv.size(); ++r)
        for (std::size_t c = 0; c < vv[r].size(); ++c) book(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = vv[r][c];
      out.levels.push_back(std::move(book));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace rqindex
}  // namespace gream
