#pragma once

#include "gream/types.hpp"

#include <cstddef>

namespace gream::reward {

struct RewardConfig {
  std::size_t levels = 4;         // H, semantic levels only
  double beta_reward = 0.5;       // concavity exponent, in (0, 1]
  bool require_exact_conflict = true;

  /// Throws ConfigError when H < 1 or beta_reward is outside (0, 1].
  void validate() const;
};

/// Longest common prefix over the semantic levels; the conflict slot never counts.
std::size_t lcp(const ItemIndex& target, const ItemIndex& generated);

/// (l / H)^beta.
double residual_reward(std::size_t prefix_len, const RewardConfig& cfg);

/// 1 iff every semantic level matches and, when configured, the conflict code too.
int exact_match(const ItemIndex& target, const ItemIndex& generated, const RewardConfig& cfg);

}  // namespace gream::reward
