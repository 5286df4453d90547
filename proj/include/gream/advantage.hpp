#pragma once

#include "gream/types.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace gream::advantage {

inline constexpr double kDegenerateStd = 1e-8;  // dynamic-filter threshold on reward std
inline constexpr double kSigmaGuard = 1e-6;     // bonus suppression threshold on sigma

struct RolloutSample {
  ItemIndex generated;
  std::vector<int> tokens;         // full emitted sequence (think segment included)
  std::vector<double> old_logps;   // per token, under the distribution actually sampled
  std::size_t prefix_len = 0;      // lcp against the target
  double reward_rs = 0.0;
  int exact = 0;
};

/// G sampled generations for one prompt.
struct RolloutGroup {
  std::size_t prompt_id = 0;
  Vector context;
  ItemIndex target;
  std::vector<RolloutSample> samples;

  std::size_t size() const { return samples.size(); }
  std::size_t exact_count() const;
  std::vector<double> residual_rewards() const;
  std::vector<double> binary_rewards() const;
};

/// Which per-sample reward a group is normalized and filtered on.
enum class RewardKind { kResidual, kBinary };

std::vector<double> rewards_of(const RolloutGroup& group, RewardKind kind);

struct AdvantageReport {
  std::vector<double> a_rs;
  double rho = 0.0;
  double sigma = 0.0;
  double delta = 0.0;
  double bonus_pos = 0.0;
  double bonus_neg = 0.0;
  std::vector<double> a_final;
  bool kept = false;
};

/// C(n - c, m) / C(n, m), zero when m > n - c. Computed as a running product.
double binomial_ratio(std::size_t n, std::size_t c, std::size_t m);

/// rho = 1 - C(G-c, k) / C(G, k): chance that k draws without replacement hit a correct sample.
double group_success_prob(std::size_t c, std::size_t G, std::size_t k);

/// sigma = sqrt(rho (1 - rho)).
double group_sigma(double rho);

/// delta = C(G-c-1, k-1) / C(G-1, k-1): the other k-1 draws all miss.
double flip_probability(std::size_t c, std::size_t G, std::size_t k);

/// Population standard deviation (divides by G).
double population_std(std::span<const double> values);

/// (r - mean) / std; all zeros when std < 1e-8.
std::vector<double> normalized_residual_advantage(std::span<const double> rewards);

/// Bonus-calibrated advantages over the residual rewards of `group`.
AdvantageReport final_advantages(const RolloutGroup& group, std::size_t k);

/// Same composition from raw vectors (used by tests and diagnostics).
AdvantageReport final_advantages(std::span<const double> rewards, std::span<const int> exact, std::size_t k);

struct FilterResult {
  std::vector<RolloutGroup> kept;
  std::size_t rejected = 0;
};

/// Keeps the groups whose reward population std is >= 1e-8, preserving order.
FilterResult dynamic_filter(std::vector<RolloutGroup> groups, RewardKind kind = RewardKind::kResidual);

/// One JSON object (no trailing newline) for the JSON-lines dump.
std::string to_json_line(const AdvantageReport& report, std::size_t prompt_id);

}  // namespace gream::advantage
