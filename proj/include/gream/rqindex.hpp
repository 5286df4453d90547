#pragma once

#include "gream/types.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

namespace gream::rqindex {

inline constexpr std::size_t kDefaultConflictCapacity = 256;
inline constexpr int kMaxLloydIterations = 100;
inline constexpr double kRelativeInertiaTolerance = 1e-6;

/// Per-level centroids produced by residual k-means. Immutable after fitting.
struct CodebookSet {
  std::vector<RowMatrix> levels;  // levels[l] is N_l x dim
  std::uint64_t fit_seed = 0;
  std::vector<double> inertia_per_level;

  std::size_t depth() const { return levels.size(); }
  std::size_t dim() const { return levels.empty() ? 0 : static_cast<std::size_t>(levels.front().cols()); }
  std::vector<int> level_sizes() const;
};

/// Lloyd trace for one level: inertia after every assignment pass.
struct LevelTrace {
  std::vector<double> inertia;
  int reseeded_clusters = 0;
};

struct FitResult {
  CodebookSet codebooks;
  std::vector<LevelTrace> traces;
};

struct KMeansResult {
  RowMatrix centroids;
  std::vector<int> assignment;
  LevelTrace trace;
};

/// k-means++ seeding followed by Lloyd iterations on the rows of `points`.
/// Stops when the relative inertia change drops below 1e-6 or after 100 passes.
KMeansResult kmeans(const RowMatrix& points, int k, std::uint64_t seed);

/// Nearest centroid by squared Euclidean distance; ties go to the lowest id.
int nearest_centroid(const RowMatrix& centroids, Eigen::Ref<const Vector> x);

/// Greedy residual quantization: one k-means per level on the running residuals.
FitResult fit_codebooks_traced(const EmbeddingMatrix& embeddings, std::span<const int> level_sizes,
                               std::uint64_t seed);
CodebookSet fit_codebooks(const EmbeddingMatrix& embeddings, std::span<const int> level_sizes,
                          std::uint64_t seed);

/// Semantic level codes for every item, before conflict resolution.
std::vector<std::vector<int>> assign_levels(const EmbeddingMatrix& embeddings, const CodebookSet& codebooks);

/// Encodes every item. Items sharing a level tuple get conflict codes 0,1,2,...
/// in ascending item-id order; throws CapacityError when a tuple is shared by
/// more than `conflict_capacity` items.
std::vector<ItemIndex> encode(const EmbeddingMatrix& embeddings, const CodebookSet& codebooks,
                              std::size_t conflict_capacity = kDefaultConflictCapacity);

/// Sum of the selected centroids; the conflict slot is ignored.
Vector decode(const ItemIndex& index, const CodebookSet& codebooks);

/// Reconstruction using only the first `levels` codes.
Vector decode_prefix(const ItemIndex& index, const CodebookSet& codebooks, std::size_t levels);

/// result[l] = number of items whose level 1..(l+1) prefix is shared with another item.
std::vector<std::size_t> collision_stats(std::span<const ItemIndex> indices);

/// Conflict vocabulary needed to represent `indices` (max conflict code + 1).
int conflict_vocab(std::span<const ItemIndex> indices);

// ---- file formats ----------------------------------------------------------

/// Embedding binary: "GREM", u32 version=1, u32 item_count, u32 dim, float32 rows.
void write_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& embeddings);
EmbeddingMatrix read_embeddings(const std::filesystem::path& path);

/// Index file: JSON object item_id -> [l1, ..., lH, conflict].
void write_index(const std::filesystem::path& path, std::span<const ItemIndex> indices);
std::vector<ItemIndex> read_index(const std::filesystem::path& path);

void write_codebooks(const std::filesystem::path& path, const CodebookSet& codebooks);
CodebookSet read_codebooks(const std::filesystem::path& path);

}  // namespace gream::rqindex
