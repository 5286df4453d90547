#include "gream/synthenv.hpp"

#include "gream/error.hpp"
#include "gream/parallel.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <unordered_map>

namespace gream::synthenv {

using json = nlohmann::json;

namespace {

std::size_t nodes_at_depth(std::span<const int> branching, std::size_t depth) {
  std::size_t n = 1;
  for (std::size_t l = 0; l < depth; ++l) n *= static_cast<std::size_t>(branching[l]);
  return n;
}

std::size_t flat_node(std::span<const int> branching, std::span<const int> path) {
  std::size_t id = 0;
  for (std::size_t l = 0; l < path.size(); ++l) id = id * static_cast<std::size_t>(branching[l]) + static_cast<std::size_t>(path[l]);
  return id;
}

}  // namespace

std::size_t Catalog::node_at(std::size_t item, std::size_t depth) const {
  const auto& p = paths.at(item);
  return flat_node(branching, std::span<const int>(p.data(), std::min(depth, p.size())));
}

Vector Catalog::path_centroid(std::span<const int> path) const {
  Vector c = Vector::Zero(node_offsets.empty() ? 0 : node_offsets.front().cols());
  for (std::size_t l = 0; l < path.size(); ++l)
    c += node_offsets[l].row(static_cast<Eigen::Index>(flat_node(branching, path.subspan(0, l + 1)))).transpose();
  return c;
}

Catalog generate_catalog(std::size_t n_items, std::span<const int> branching, double noise, std::size_t dim,
                         std::uint64_t seed, double level_decay) {
  if (branching.empty()) throw ConfigError("env.branching must be nonempty");
  for (std::size_t l = 0; l < branching.size(); ++l)
    if (branching[l] < 1) throw ConfigError(fmt::format("env.branching[{}] must be >= 1 (product must be >= 1)", l));
  if (n_items < 1) throw ConfigError("env.items must be >= 1");
  if (dim < 1) throw ConfigError("env.dim must be >= 1");
  if (!(noise >= 0.0)) throw ConfigError("env.noise must be >= 0");

  Catalog cat;
  cat.branching.assign(branching.begin(), branching.end());
  cat.noise = noise;
  cat.seed = seed;
  std::normal_distribution<double> normal(0.0, 1.0);

  Rng tree_rng = make_rng(seed, 1);
  double scale = 1.0;
  for (std::size_t l = 0; l < branching.size(); ++l) {
    std::size_t n_nodes = nodes_at_depth(branching, l + 1);
    RowMatrix offs(static_cast<Eigen::Index>(n_nodes), static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < offs.rows(); ++i)
      for (Eigen::Index j = 0; j < offs.cols(); ++j) offs(i, j) = scale * normal(tree_rng);
    cat.node_offsets.push_back(std::move(offs));
    scale *= level_decay;
  }

  const std::size_t leaves = nodes_at_depth(branching, branching.size());
  RowMatrix emb(static_cast<Eigen::Index>(n_items), static_cast<Eigen::Index>(dim));
  cat.paths.resize(n_items);
  Rng noise_rng = make_rng(seed, 2);
  for (std::size_t i = 0; i < n_items; ++i) {
    std::size_t leaf = i % leaves;
    std::vector<int> path(branching.size());
    for (std::size_t l = branching.size(); l-- > 0;) {
      path[l] = static_cast<int>(leaf % static_cast<std::size_t>(branching[l]));
      leaf /= static_cast<std::size_t>(branching[l]);
    }
    Vector e = cat.path_centroid(path);
    if (noise > 0.0)
      for (Eigen::Index j = 0; j < e.size(); ++j) e[j] += noise * normal(noise_rng);
    emb.row(static_cast<Eigen::Index>(i)) = e.transpose();
    cat.paths[i] = std::move(path);
  }
  cat.embeddings = EmbeddingMatrix(std::move(emb));
  return cat;
}

const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "?";
}

UserModel make_user(const Catalog& catalog, const InteractionConfig& cfg, std::uint64_t seed, std::size_t user) {
  Rng rng = make_rng(derive_seed(seed, 0x05e4), user);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t depth = std::clamp<std::size_t>(cfg.anchor_depth, 1, catalog.branching.size());
  UserModel u;
  for (std::size_t l = 0; l < depth; ++l)
    u.anchor_path.push_back(static_cast<int>(rng() % static_cast<std::uint64_t>(catalog.branching[l])));
  u.preference = catalog.path_centroid(u.anchor_path);
  for (Eigen::Index j = 0; j < u.preference.size(); ++j) u.preference[j] += cfg.preference_noise * normal(rng);
  return u;
}

Vector next_item_distribution(const Catalog& catalog, const UserModel& user, double preference_temp,
                              std::span<const std::size_t> excluded) {
  const auto n = static_cast<Eigen::Index>(catalog.items());
  Vector score = catalog.embeddings.rows() * user.preference;
  std::vector<bool> blocked(static_cast<std::size_t>(n), false);
  for (auto e : excluded) blocked.at(e) = true;
  Vector p = Vector::Zero(n);
  double best = -std::numeric_limits<double>::infinity();
  Eigen::Index arg = -1;
  for (Eigen::Index i = 0; i < n; ++i)
    if (!blocked[static_cast<std::size_t>(i)] && score[i] > best) {
      best = score[i];
      arg = i;
    }
  if (arg < 0) throw InputError("every catalog item is excluded");
  if (preference_temp < 1e-9) {
    p[arg] = 1.0;
    return p;
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (blocked[static_cast<std::size_t>(i)]) continue;
    p[i] = std::exp((score[i] - best) / preference_temp);
    total += p[i];
  }
  return p / total;
}

std::size_t draw_next_item(const Catalog& catalog, const UserModel& user, double preference_temp,
                           std::span<const std::size_t> excluded, Rng& rng) {
  Vector p = next_item_distribution(catalog, user, preference_temp, excluded);
  double u = uniform01(rng);
  double cum = 0.0;
  std::size_t last = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    last = static_cast<std::size_t>(i);
    cum += p[i];
    if (u < cum) return last;
  }
  return last;
}

std::vector<UserSequence> generate_sequences(const Catalog& catalog, const InteractionConfig& cfg, std::uint64_t seed) {
  if (cfg.history_min < 4) throw ConfigError("env.history_min must be >= 4");
  if (cfg.history_max < cfg.history_min) throw ConfigError("env.history_max must be >= env.history_min");
  if (cfg.history_max + 1 > catalog.items())
    throw ConfigError(fmt::format("env.history_max + 1 = {} exceeds catalog size {}", cfg.history_max + 1, catalog.items()));
  if (!(cfg.preference_temp >= 0.0)) throw ConfigError("env.preference_temp must be >= 0");
  std::vector<UserSequence> out(cfg.n_users);
  parallel_for(cfg.n_users, [&](std::size_t u) {
    UserModel user = make_user(catalog, cfg, seed, u);
    Rng rng = make_rng(derive_seed(seed, 0x5e9), u);
    std::size_t span = cfg.history_max - cfg.history_min + 1;
    std::size_t len = cfg.history_min + static_cast<std::size_t>(rng() % span) + 1;
    auto& seq = out[u];
    seq.user = fmt::format("u{}", u);
    for (std::size_t t = 0; t < len; ++t) seq.items.push_back(draw_next_item(catalog, user, cfg.preference_temp, seq.items, rng));
  });
  return out;
}

std::vector<Interaction> leave_one_out(std::size_t user, std::span<const std::size_t> items) {
  if (items.size() < 4) throw DataError(fmt::format("user {} has {} interactions; leave-one-out needs >= 4", user, items.size()));
  std::vector<Interaction> out;
  const std::size_t n = items.size();
  auto make = [&](std::size_t pos, Split split) {
    Interaction it;
    it.user = user;
    it.history.assign(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(pos));
    it.target = items[pos];
    it.split = split;
    out.push_back(std::move(it));
  };
  for (std::size_t pos = 2; pos + 2 < n; ++pos) make(pos, Split::kTrain);
  make(n - 2, Split::kValid);
  make(n - 1, Split::kTest);
  return out;
}

std::vector<Interaction> split_all(std::span<const UserSequence> sequences) {
  std::vector<Interaction> out;
  for (std::size_t u = 0; u < sequences.size(); ++u) {
    auto part = leave_one_out(u, sequences[u].items);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

std::vector<Interaction> generate_interactions(const Catalog& catalog, const InteractionConfig& cfg, std::uint64_t seed) {
  auto seqs = generate_sequences(catalog, cfg, seed);
  return split_all(seqs);
}

std::vector<std::pair<std::string, std::vector<std::string>>> kcore_filter(
    std::vector<std::pair<std::string, std::vector<std::string>>> sequences, std::size_t min_count) {
  if (min_count == 0) return sequences;
  for (bool changed = true; changed;) {
    changed = false;
    std::unordered_map<std::string, std::size_t> item_count;
    for (const auto& [user, items] : sequences)
      for (const auto& it : items) ++item_count[it];
    std::vector<std::pair<std::string, std::vector<std::string>>> next;
    for (auto& [user, items] : sequences) {
      std::vector<std::string> kept;
      for (auto& it : items)
        if (item_count[it] >= min_count) kept.push_back(std::move(it));
      if (kept.size() != items.size()) changed = true;
      if (kept.size() >= min_count)
        next.emplace_back(user, std::move(kept));
      else
        changed = true;
    }
    sequences = std::move(next);
  }
  return sequences;
}

IngestResult ingest_jsonl(const std::filesystem::path& path, const IngestOptions& options) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::pair<std::string, std::vector<std::string>>> raw;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json j = json::parse(line);
      raw.emplace_back(j.at("user").get<std::string>(), j.at("items").get<std::vector<std::string>>());
    } catch (const json::exception& e) {
      throw ParseError(fmt::format("{}:{}: malformed interaction line ({})", path.string(), lineno, e.what()));
    }
  }
  raw = kcore_filter(std::move(raw), options.min_count);
  if (raw.empty()) throw DataError(path.string() + ": no users left after filtering");

  IngestResult out;
  std::unordered_map<std::string, std::size_t> ids;
  for (auto& [user, items] : raw) {
    UserSequence seq;
    seq.user = user;
    for (const auto& it : items) {
      if (options.numeric_item_ids) {
        try {
          seq.items.push_back(std::stoul(it));
        } catch (const std::exception&) {
          throw ParseError(fmt::format("{}: item \"{}\" is not a numeric catalog id", path.string(), it));
        }
        continue;
      }
      auto [pos, fresh] = ids.emplace(it, out.item_names.size());
      if (fresh) out.item_names.push_back(it);
      seq.items.push_back(pos->second);
    }
    out.sequences.push_back(std::move(seq));
  }
  out.interactions = split_all(out.sequences);
  return out;
}

void write_sequences_jsonl(const std::filesystem::path& path, std::span<const UserSequence> sequences) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& s : sequences) {
    json j;
    j["user"] = s.user;
    std::vector<std::string> items;
    for (auto i : s.items) items.push_back(std::to_string(i));
    j["items"] = items;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_catalog_json(const std::filesystem::path& path, const Catalog& catalog) {
  json j;
  j["items"] = catalog.items();
  j["dim"] = catalog.dim();
  j["branching"] = catalog.branching;
  j["noise"] = catalog.noise;
  j["seed"] = catalog.seed;
  j["paths"] = catalog.paths;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump() << '\n';
}

Vector context_features(std::span<const std::size_t> history, const EmbeddingMatrix& embeddings,
                        const FeatureConfig& cfg) {
  if (history.empty()) throw InputError("context_features needs a nonempty history");
  const auto d = static_cast<Eigen::Index>(embeddings.dim());
  Vector recent = Vector::Zero(d);
  Vector decayed = Vector::Zero(d);
  const std::size_t w = std::min(std::max<std::size_t>(cfg.window, 1), history.size());
  for (std::size_t j = 0; j < w; ++j) recent += embeddings.row(history[history.size() - 1 - j]);
  recent /= static_cast<double>(w);
  double weight = 1.0;
  double norm = 0.0;
  for (std::size_t j = 0; j < history.size(); ++j) {
    decayed += weight * embeddings.row(history[history.size() - 1 - j]);
    norm += weight;
    weight *= cfg.decay;
  }
  decayed /= norm;
  Vector out(2 * d);
  out << recent, decayed;
  return out;
}

}  // namespace gream::synthenv
