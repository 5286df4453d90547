#include "gream/advantage.hpp"

#include "gream/error.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <cmath>
#include <numeric>

namespace gream::advantage {

std::size_t RolloutGroup::exact_count() const {
  std::size_t c = 0;
  for (const auto& s : samples) c += static_cast<std::size_t>(s.exact);
  return c;
}

std::vector<double> RolloutGroup::residual_rewards() const {
  std::vector<double> r;
  r.reserve(samples.size());
  for (const auto& s : samples) r.push_back(s.reward_rs);
  return r;
}

std::vector<double> RolloutGroup::binary_rewards() const {
  std::vector<double> r;
  r.reserve(samples.size());
  for (const auto& s : samples) r.push_back(static_cast<double>(s.exact));
  return r;
}

std::vector<double> rewards_of(const RolloutGroup& group, RewardKind kind) {
  return kind == RewardKind::kBinary ? group.binary_rewards() : group.residual_rewards();
}

double binomial_ratio(std::size_t n, std::size_t c, std::size_t m) {
  if (c > n) throw InputError(fmt::format("binomial_ratio: c = {} exceeds n = {}", c, n));
  if (m > n - c) return 0.0;
  double ratio = 1.0;
  for (std::size_t j = 0; j < m; ++j)
    ratio *= static_cast<double>(n - c - j) / static_cast<double>(n - j);
  return ratio;
}

namespace {
void check_k(std::size_t G, std::size_t k) {
  if (k < 1 || k > G) throw InputError(fmt::format("k = {} must lie in [1, G = {}]", k, G));
}
}  // namespace

double group_success_prob(std::size_t c, std::size_t G, std::size_t k) {
  check_k(G, k);
  if (c > G) throw InputError(fmt::format("c = {} exceeds G = {}", c, G));
  return 1.0 - binomial_ratio(G, c, k);
}

double group_sigma(double rho) { return std::sqrt(std::max(0.0, rho * (1.0 - rho))); }

double flip_probability(std::size_t c, std::size_t G, std::size_t k) {
  check_k(G, k);
  if (c >= G) throw InputError(fmt::format("flip_probability needs c < G (c = {}, G = {})", c, G));
  return binomial_ratio(G - 1, c, k - 1);
}

double population_std(std::span<const double> values) {
  if (values.empty()) return 0.0;
  double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size()));
}

std::vector<double> normalized_residual_advantage(std::span<const double> rewards) {
  std::vector<double> out(rewards.size(), 0.0);
  double sd = population_std(rewards);
  if (sd < kDegenerateStd) return out;
  double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / sd;
  return out;
}

AdvantageReport final_advantages(std::span<const double> rewards, std::span<const int> exact, std::size_t k) {
  const std::size_t G = rewards.size();
  if (exact.size() != G) throw InputError("rewards and exact flags differ in length");
  if (G < 2) throw InputError("a rollout group needs G >= 2");
  AdvantageReport rep;
  rep.kept = population_std(rewards) >= kDegenerateStd;
  rep.a_rs = normalized_residual_advantage(rewards);
  std::size_t c = 0;
  for (int v : exact) c += v ? 1 : 0;
  rep.rho = group_success_prob(c, G, k);
  rep.sigma = group_sigma(rep.rho);
  rep.delta = c < G ? flip_probability(c, G, k) : 0.0;
  if (rep.sigma >= kSigmaGuard) {
    rep.bonus_pos = (1.0 - rep.rho) / rep.sigma;
    rep.bonus_neg = ((1.0 - rep.rho) - rep.delta) / rep.sigma;
  }
  rep.a_final.resize(G);
  for (std::size_t i = 0; i < G; ++i) rep.a_final[i] = rep.a_rs[i] + (exact[i] ? rep.bonus_pos : rep.bonus_neg);
  return rep;
}

AdvantageReport final_advantages(const RolloutGroup& group, std::size_t k) {
  std::vector<int> exact;
  exact.reserve(group.size());
  for (const auto& s : group.samples) exact.push_back(s.exact);
  auto rewards = group.residual_rewards();
  return final_advantages(rewards, exact, k);
}

FilterResult dynamic_filter(std::vector<RolloutGroup> groups, RewardKind kind) {
  FilterResult out;
  for (auto& g : groups) {
    auto r = rewards_of(g, kind);
    if (population_std(r) >= kDegenerateStd)
      out.kept.push_back(std::move(g));
    else
      ++out.rejected;
  }
  return out;
}

std::string to_json_line(const AdvantageReport& report, std::size_t prompt_id) {
  nlohmann::json j;
  j["prompt_id"] = prompt_id;
  j["kept"] = report.kept;
  j["rho"] = report.rho;
  j["sigma"] = report.sigma;
  j["delta"] = report.delta;
  j["bonus_pos"] = report.bonus_pos;
  j["bonus_neg"] = report.bonus_neg;
  j["a_rs"] = report.a_rs;
  j["a_final"] = report.a_final;
  return j.dump();
}

}  // namespace gream::advantage
