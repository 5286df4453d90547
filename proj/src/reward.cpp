#include "gream/reward.hpp"

#include "gream/error.hpp"

#include <fmt/format.h>

#include <cmath>

namespace gream::reward {

void RewardConfig::validate() const {
  if (levels < 1) throw ConfigError("reward.levels must be >= 1");
  if (!(beta_reward > 0.0 && beta_reward <= 1.0)) throw ConfigError("reward.beta_reward must lie in (0, 1]");
}

std::size_t lcp(const ItemIndex& target, const ItemIndex& generated) {
  if (target.depth() != generated.depth())
    throw InputError(fmt::format("level-count mismatch: target {} vs generated {}", target.depth(), generated.depth()));
  std::size_t k = 0;
  while (k < target.depth() && target.levels[k] == generated.levels[k]) ++k;
  return k;
}

double residual_reward(std::size_t prefix_len, const RewardConfig& cfg) {
  if (prefix_len == 0) return 0.0;
  if (prefix_len >= cfg.levels) return 1.0;
  return std::pow(static_cast<double>(prefix_len) / static_cast<double>(cfg.levels), cfg.beta_reward);
}

int exact_match(const ItemIndex& target, const ItemIndex& generated, const RewardConfig& cfg) {
  if (lcp(target, generated) != target.depth()) return 0;
  if (cfg.require_exact_conflict && target.conflict != generated.conflict) return 0;
  return 1;
}

}  // namespace gream::reward
