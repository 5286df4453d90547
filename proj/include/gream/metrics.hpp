#pragma once

#include "gream/policy.hpp"
#include "gream/reward.hpp"
#include "gream/types.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace gream::metrics {

struct RankMetrics {
  double recall = 0.0;
  double ndcg = 0.0;
};

/// Single-target leave-one-out metrics. rank is 1-based; ndcg = 1/log2(rank+1).
std::map<std::size_t, RankMetrics> recall_ndcg(std::span<const ItemIndex> ranked, const ItemIndex& target,
                                               std::span<const std::size_t> Ks);

/// Mean unbiased pass@k over prompts given (G, c) per prompt. Throws
/// ConfigError when some k exceeds a prompt's G.
std::map<std::size_t, double> pass_at_k(std::span<const std::pair<std::size_t, std::size_t>> groups,
                                        std::span<const std::size_t> Ks);

struct EvalConfig {
  std::size_t beam_width = 20;
  std::vector<std::size_t> Ks{1, 5, 10};
  std::size_t G = 10;
  double temperature = 0.7;
  double top_p = 0.9;
  std::uint64_t seed = 0;
  bool direct = true;
  bool reasoning = true;

  void validate() const;
};

struct EvalCase {
  Vector context;
  ItemIndex target;
};

struct EvalReport {
  std::map<std::size_t, double> recall_at;
  std::map<std::size_t, double> ndcg_at;
  std::map<std::size_t, double> pass_at;
  std::size_t n_users = 0;
  EvalConfig config;

  /// Mean of recall@K and NDCG@K over all K (the direct summary score).
  double avg_direct() const;
  /// Mean of pass@K over all K.
  double avg_reason() const;
};

/// Direct mode: beam search per case, Recall/NDCG@K. Reasoning mode: G samples
/// per case, Pass@K. Per-case seeds derive from cfg.seed and the case position.
EvalReport evaluate(const policy::TokenPolicy& policy, std::span<const EvalCase> cases, const EvalConfig& cfg,
                    const reward::RewardConfig& reward_cfg);

std::string to_json(const EvalReport& report);
std::string csv_header(const EvalReport& report);
std::string csv_row(const EvalReport& report, const std::string& variant);
void write_report(const std::filesystem::path& json_path, const std::filesystem::path& csv_path,
                  const EvalReport& report, const std::string& variant);

}  // namespace gream::metrics
