#pragma once

#include "gream/random.hpp"
#include "gream/types.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace gream::synthenv {

/// Items embedded around a planted centroid tree.
struct Catalog {
  EmbeddingMatrix embeddings;
  std::vector<std::vector<int>> paths;       // per item, coarse -> fine child index per level
  std::vector<int> branching;
  std::vector<RowMatrix> node_offsets;       // per level, one offset row per tree node at that depth
  double noise = 0.0;
  std::uint64_t seed = 0;

  std::size_t items() const { return embeddings.item_count(); }
  std::size_t dim() const { return embeddings.dim(); }
  /// Flat node id of an item's ancestor at `depth` (1 = coarse label).
  std::size_t node_at(std::size_t item, std::size_t depth) const;
  /// Sum of the planted offsets along a node path of length `path.size()`.
  Vector path_centroid(std::span<const int> path) const;
};

/// Builds the centroid tree (offset scale level_decay^l at depth l), places
/// item i on leaf i mod (number of leaves), and adds noise * N(0, I).
Catalog generate_catalog(std::size_t n_items, std::span<const int> branching, double noise, std::size_t dim,
                         std::uint64_t seed, double level_decay = 0.35);

enum class Split { kTrain, kValid, kTest };
const char* to_string(Split s);

struct Interaction {
  std::size_t user = 0;
  std::vector<std::size_t> history;  // chronological
  std::size_t target = 0;
  Split split = Split::kTrain;
};

/// A user's chronological item sequence.
struct UserSequence {
  std::string user;
  std::vector<std::size_t> items;
};

struct UserModel {
  Vector preference;
  std::vector<int> anchor_path;  // planted node the preference sits on
};

struct InteractionConfig {
  std::size_t n_users = 2000;
  std::size_t history_min = 8;
  std::size_t history_max = 20;
  double preference_temp = 1.0;
  std::size_t anchor_depth = 2;     // depth of the planted node a user prefers
  double preference_noise = 0.1;
};

/// Preference vector near one planted subtree, from the user's own RNG stream.
UserModel make_user(const Catalog& catalog, const InteractionConfig& cfg, std::uint64_t seed, std::size_t user);

/// softmax(preference . embedding / temp) over items not in `excluded`; argmax as temp -> 0.
Vector next_item_distribution(const Catalog& catalog, const UserModel& user, double preference_temp,
                              std::span<const std::size_t> excluded = {});

std::size_t draw_next_item(const Catalog& catalog, const UserModel& user, double preference_temp,
                           std::span<const std::size_t> excluded, Rng& rng);

/// One sequence per user: history_len + 1 distinct items drawn from the user's law.
std::vector<UserSequence> generate_sequences(const Catalog& catalog, const InteractionConfig& cfg, std::uint64_t seed);

/// Leave-one-out: last item is the test target, second-to-last the validation
/// target, every earlier item with at least two predecessors a training target.
std::vector<Interaction> leave_one_out(std::size_t user, std::span<const std::size_t> items);

std::vector<Interaction> generate_interactions(const Catalog& catalog, const InteractionConfig& cfg, std::uint64_t seed);

std::vector<Interaction> split_all(std::span<const UserSequence> sequences);

struct IngestOptions {
  std::size_t min_count = 5;   // k-core threshold for users and items; 0 disables
  bool numeric_item_ids = false;  // item strings are catalog row ids
};

struct IngestResult {
  std::vector<UserSequence> sequences;
  std::vector<Interaction> interactions;
  std::vector<std::string> item_names;  // dense id -> original string (empty when numeric)
};

/// Parses {"user": string, "items": [string, ...]} per line, applies iterative
/// k-core filtering until a fixpoint, and builds leave-one-out splits.
IngestResult ingest_jsonl(const std::filesystem::path& path, const IngestOptions& options = {});

/// Iterative k-core over string sequences; exposed for testing.
std::vector<std::pair<std::string, std::vector<std::string>>> kcore_filter(
    std::vector<std::pair<std::string, std::vector<std::string>>> sequences, std::size_t min_count);

void write_sequences_jsonl(const std::filesystem::path& path, std::span<const UserSequence> sequences);

/// Planted paths and tree shape, for audit.
void write_catalog_json(const std::filesystem::path& path, const Catalog& catalog);

struct FeatureConfig {
  std::size_t window = 5;
  double decay = 0.8;
};

/// [mean of the last `window` embeddings, decay-weighted mean with weight decay^j
/// on the j-th most recent item].
Vector context_features(std::span<const std::size_t> history, const EmbeddingMatrix& embeddings,
                        const FeatureConfig& cfg = {});

}  // namespace gream::synthenv
