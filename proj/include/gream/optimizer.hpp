#pragma once

#include "gream/advantage.hpp"
#include "gream/policy.hpp"
#include "gream/reward.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace gream::optimizer {

/// grpo: group-normalized binary exact-match reward, no bonus.
/// srpo_no_bonus: group-normalized residual reward.
/// srpo: residual advantage plus the calibrated success bonuses.
enum class Algorithm { kGrpo, kSrpoNoBonus, kSrpo };

const char* to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& name);

struct RLConfig {
  std::size_t G = 10;
  std::size_t k = 0;  // 0 means k = G
  double clip_eps = 0.2;
  double kl_coeff = 0.001;
  double learning_rate = 0.05;
  std::size_t batch_prompts = 16;
  double resample_cap = 3.0;
  std::size_t mini_batches = 1;
  Algorithm algorithm = Algorithm::kSrpo;
  policy::GenerationConfig rollout{0.5, 1.0, 1, policy::Mode::kReasoning};
  reward::RewardConfig reward;

  std::size_t effective_k() const { return k == 0 ? G : k; }
  void validate() const;
};

/// exp(new - old) per token.
std::vector<double> importance_ratio(std::span<const double> new_logp, std::span<const double> old_logp);

/// k3 estimator exp(ref - new) - (ref - new) - 1 per token; always >= 0.
std::vector<double> kl_penalty(std::span<const double> new_logp, std::span<const double> ref_logp);

/// Advantages for one kept group according to cfg.algorithm.
advantage::AdvantageReport compute_advantages(const advantage::RolloutGroup& group, const RLConfig& cfg);

advantage::RewardKind reward_kind(Algorithm a);

struct SurrogateResult {
  double loss = 0.0;
  policy::PolicyParams grad;
  double mean_kl = 0.0;
  double clipped_fraction = 0.0;
};

/// Clipped surrogate with per-token k3 KL, token-averaged per sequence,
/// averaged over the group and then over prompts. Old log-probs come from the
/// groups. Throws InputError when `groups` is empty or misaligned with `reports`.
SurrogateResult srpo_loss(std::span<const advantage::RolloutGroup> groups,
                          std::span<const advantage::AdvantageReport> reports, const policy::PolicyParams& params,
                          const policy::PolicyParams& ref_params, const RLConfig& cfg);

struct RlPrompt {
  Vector context;
  ItemIndex target;
};

struct TrainLogRow {
  std::size_t step = 0;
  std::size_t kept = 0;
  std::size_t rejected = 0;
  bool skipped = false;
  double mean_reward = 0.0;
  double exact_rate = 0.0;
  double mean_kl = 0.0;
  double loss = 0.0;
};

using TrainLog = std::vector<TrainLogRow>;

struct TrainResult {
  policy::PolicyParams params;
  TrainLog log;
};

/// Rollout -> variance filter (with resampling up to the cap) -> advantages ->
/// SGD on the surrogate, `steps` times. The initial params double as the frozen
/// KL reference. Optional sink receives one advantage JSON line per kept group.
TrainResult train_rl(const policy::PolicyParams& initial, std::span<const RlPrompt> prompts, const RLConfig& cfg,
                     std::size_t steps, std::uint64_t seed, std::ostream* advantage_sink = nullptr);

void write_train_log(const std::filesystem::path& path, const TrainLog& log);
std::string train_log_csv(const TrainLog& log);

}  // namespace gream::optimizer
