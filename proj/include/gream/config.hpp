#pragma once

#include "gream/metrics.hpp"
#include "gream/optimizer.hpp"

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gream::config {

struct EnvSection {
  std::string source = "synthetic";  // synthetic | jsonl
  std::size_t items = 512;
  std::vector<int> branching{8, 8, 8};
  double noise = 0.05;
  std::size_t dim = 16;
  double level_decay = 0.35;
  std::size_t users = 2000;
  std::size_t history_min = 8;
  std::size_t history_max = 20;
  double preference_temp = 1.0;
  std::size_t anchor_depth = 2;
  double preference_noise = 0.1;
  std::string jsonl_path;
  std::string embeddings_path;
  std::size_t min_count = 5;
  std::size_t feature_window = 5;
  double feature_decay = 0.8;
};

struct IndexSection {
  std::vector<int> level_sizes{8, 8, 8};
  std::size_t conflict_capacity = 256;
};

struct SftSection {
  std::size_t hidden = 64;
  std::size_t epochs = 3;
  double gamma = 1.5;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double reason_fraction = 1.0;
  bool item_tasks = true;
};

struct RlSection {
  std::vector<std::string> algorithms{"grpo", "srpo_no_bonus", "srpo"};
  std::size_t steps = 1000;
  optimizer::RLConfig rl;
  bool dump_advantages = false;
};

struct RunConfig {
  EnvSection env;
  IndexSection index;
  SftSection sft;
  RlSection rl;
  metrics::EvalConfig eval;
  std::size_t eval_max_users = 0;  // 0 = every test user
  std::uint64_t master_seed = 0;
  std::string output_dir = "runs/default";

  /// Cross-field checks; throws ConfigError naming the offending key.
  void validate() const;
};

/// Full default configuration as JSON (the schema: every accepted key appears here).
nlohmann::json default_json();

/// Overlays `user` onto the defaults. Unknown keys and type mismatches throw
/// ConfigError with the dotted key path.
nlohmann::json merge_checked(const nlohmann::json& base, const nlohmann::json& user, const std::string& path = "");

RunConfig from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);

/// Applies "a.b.c=value" (value parsed as JSON, falling back to a string).
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Reads a config file (empty path = defaults) and applies overrides; validated.
RunConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Derived per-stage seeds.
std::uint64_t data_seed(const RunConfig& cfg);
std::uint64_t index_seed(const RunConfig& cfg);
std::uint64_t sft_seed(const RunConfig& cfg);
std::uint64_t rl_seed(const RunConfig& cfg);
std::uint64_t eval_seed(const RunConfig& cfg);

}  // namespace gream::config
