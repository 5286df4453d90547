#include "gream/optimizer.hpp"

#include "gream/error.hpp"
#include "gream/parallel.hpp"
#include "gream/random.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

namespace gream::optimizer {

using advantage::AdvantageReport;
using advantage::RolloutGroup;
using policy::PolicyParams;

const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kGrpo: return "grpo";
    case Algorithm::kSrpoNoBonus: return "srpo_no_bonus";
    case Algorithm::kSrpo: return "srpo";
  }
  return "?";
}

Algorithm algorithm_from_string(const std::string& name) {
  if (name == "grpo") return Algorithm::kGrpo;
  if (name == "srpo_no_bonus") return Algorithm::kSrpoNoBonus;
  if (name == "srpo") return Algorithm::kSrpo;
  throw ConfigError("unknown algorithm \"" + name + "\" (expected grpo, srpo_no_bonus or srpo)");
}

void RLConfig::validate() const {
  if (G < 2) throw ConfigError("rl.G must be >= 2");
  if (k > G) throw ConfigError(fmt::format("rl.k = {} exceeds rl.G = {}", k, G));
  if (!(clip_eps > 0.0)) throw ConfigError("rl.clip_eps must be > 0");
  if (!(kl_coeff >= 0.0)) throw ConfigError("rl.kl_coeff must be >= 0");
  if (!(learning_rate >= 0.0)) throw ConfigError("rl.learning_rate must be >= 0");
  if (batch_prompts < 1) throw ConfigError("rl.batch_prompts must be >= 1");
  if (!(resample_cap >= 1.0)) throw ConfigError("rl.resample_cap must be >= 1");
  if (mini_batches < 1) throw ConfigError("rl.mini_batches must be >= 1");
  if (!(rollout.temperature > 0.0)) throw ConfigError("rl.temperature must be > 0");
  if (!(rollout.top_p > 0.0 && rollout.top_p <= 1.0)) throw ConfigError("rl.top_p must lie in (0, 1]");
  reward.validate();
}

std::vector<double> importance_ratio(std::span<const double> new_logp, std::span<const double> old_logp) {
  if (new_logp.size() != old_logp.size())
    throw InputError(fmt::format("importance_ratio: length mismatch {} vs {}", new_logp.size(), old_logp.size()));
  std::vector<double> out(new_logp.size());
  for (std::size_t t = 0; t < out.size(); ++t) out[t] = std::exp(new_logp[t] - old_logp[t]);
  return out;
}

std::vector<double> kl_penalty(std::span<const double> new_logp, std::span<const double> ref_logp) {
  if (new_logp.size() != ref_logp.size())
    throw InputError(fmt::format("kl_penalty: length mismatch {} vs {}", new_logp.size(), ref_logp.size()));
  std::vector<double> out(new_logp.size());
  for (std::size_t t = 0; t < out.size(); ++t) {
    double d = ref_logp[t] - new_logp[t];
    out[t] = std::max(0.0, std::expm1(d) - d);
  }
  return out;
}

advantage::RewardKind reward_kind(Algorithm a) {
  return a == Algorithm::kGrpo ? advantage::RewardKind::kBinary : advantage::RewardKind::kResidual;
}

AdvantageReport compute_advantages(const RolloutGroup& group, const RLConfig& cfg) {
  if (cfg.algorithm == Algorithm::kSrpo) return advantage::final_advantages(group, cfg.effective_k());
  AdvantageReport rep;
  auto rewards = advantage::rewards_of(group, reward_kind(cfg.algorithm));
  rep.kept = advantage::population_std(rewards) >= advantage::kDegenerateStd;
  rep.a_rs = advantage::normalized_residual_advantage(rewards);
  rep.a_final = rep.a_rs;
  return rep;
}

SurrogateResult srpo_loss(std::span<const RolloutGroup> groups, std::span<const AdvantageReport> reports,
                          const PolicyParams& params, const PolicyParams& ref_params, const RLConfig& cfg) {
  if (groups.empty()) throw InputError("srpo_loss: empty kept set (skip the step)");
  if (groups.size() != reports.size()) throw InputError("srpo_loss: groups and reports are misaligned");
  const auto transform = cfg.rollout.transform();
  const auto mode = cfg.rollout.mode;
  const double lo = 1.0 - cfg.clip_eps;
  const double hi = 1.0 + cfg.clip_eps;
  const double prompt_scale = 1.0 / static_cast<double>(groups.size());

  // Per-group partial results, reduced in prompt order afterwards.
  struct Partial {
    double loss = 0.0;
    double kl_sum = 0.0;
    std::size_t tokens = 0;
    std::size_t clipped = 0;
    PolicyParams grad;
  };
  std::vector<Partial> parts(groups.size());
  parallel_for(groups.size(), [&](std::size_t gi) {
    const auto& group = groups[gi];
    const auto& rep = reports[gi];
    if (rep.a_final.size() != group.size()) throw InputError("srpo_loss: advantage vector length differs from group size");
    Partial& part = parts[gi];
    part.grad = PolicyParams::zeros(params.shape);
    const double group_scale = prompt_scale / static_cast<double>(group.size());
    std::vector<double> weights;
    for (std::size_t i = 0; i < group.size(); ++i) {
      const auto& s = group.samples[i];
      const double A = rep.a_final[i];
      auto now = policy::log_prob(params, group.context, mode, s.tokens, transform).per_token;
      auto ref = policy::log_prob(ref_params, group.context, mode, s.tokens, transform).per_token;
      const double seq_scale = group_scale / static_cast<double>(s.tokens.size());
      weights.assign(s.tokens.size(), 0.0);
      double objective = 0.0;
      for (std::size_t t = 0; t < s.tokens.size(); ++t) {
        if (!std::isfinite(now[t])) {
          // Token fell outside the current nucleus: ratio 0, no gradient.
          objective += std::min(0.0, lo * A);
          continue;
        }
        double ratio = std::exp(now[t] - s.old_logps[t]);
        double unclipped = ratio * A;
        double clipped = std::clamp(ratio, lo, hi) * A;
        double dsurr = 0.0;
        if (unclipped <= clipped) {
          dsurr = unclipped;
        } else {
          ++part.clipped;
        }
        double surr = std::min(unclipped, clipped);
        double kl = 0.0;
        double dkl = 0.0;
        if (std::isfinite(ref[t])) {
          double d = ref[t] - now[t];
          kl = std::max(0.0, std::expm1(d) - d);
          dkl = -std::expm1(d);
        }
        objective += surr - cfg.kl_coeff * kl;
        part.kl_sum += kl;
        ++part.tokens;
        weights[t] = -seq_scale * (dsurr - cfg.kl_coeff * dkl);
      }
      part.loss -= seq_scale * objective;
      policy::accumulate_log_prob_grad(params, group.context, mode, s.tokens, transform, weights, part.grad);
    }
  });

  SurrogateResult out;
  out.grad = PolicyParams::zeros(params.shape);
  std::size_t tokens = 0;
  std::size_t clipped = 0;
  double kl_sum = 0.0;
  for (auto& p : parts) {
    out.loss += p.loss;
    out.grad.add_scaled(p.grad, 1.0);
    kl_sum += p.kl_sum;
    tokens += p.tokens;
    clipped += p.clipped;
  }
  out.mean_kl = tokens ? kl_sum / static_cast<double>(tokens) : 0.0;
  out.clipped_fraction = tokens ? static_cast<double>(clipped) / static_cast<double>(tokens) : 0.0;
  return out;
}

TrainResult train_rl(const PolicyParams& initial, std::span<const RlPrompt> prompts, const RLConfig& cfg,
                     std::size_t steps, std::uint64_t seed, std::ostream* advantage_sink) {
  cfg.validate();
  if (steps < 1) throw ConfigError("train_rl needs steps >= 1");
  if (prompts.empty()) throw DataError("train_rl needs at least one prompt");
  const PolicyParams& ref = initial;
  TrainResult out{initial, {}};
  PolicyParams& params = out.params;
  const auto cap = static_cast<std::size_t>(std::floor(cfg.resample_cap * static_cast<double>(cfg.batch_prompts)));
  const auto kind = reward_kind(cfg.algorithm);

  for (std::size_t step = 0; step < steps; ++step) {
    Rng rng = make_rng(seed, 2 * step);
    const std::uint64_t rollout_seed = derive_seed(seed, 2 * step + 1);
    TrainLogRow row;
    row.step = step;
    std::vector<RolloutGroup> kept;
    double reward_sum = 0.0;
    double exact_sum = 0.0;
    std::size_t sampled = 0;
    std::size_t attempts = 0;
    while (kept.size() < cfg.batch_prompts && attempts < cap) {
      std::size_t n = std::min(cfg.batch_prompts - kept.size(), cap - attempts);
      std::vector<std::size_t> ids(n);
      for (auto& id : ids) id = static_cast<std::size_t>(rng() % prompts.size());
      std::vector<RolloutGroup> groups(n);
      policy::LinearPolicy pol(params);
      parallel_for(n, [&](std::size_t j) {
        const auto& prompt = prompts[ids[j]];
        groups[j] = policy::sample_group(pol, prompt.context, cfg.G, cfg.rollout, derive_seed(rollout_seed, attempts + j));
        groups[j].prompt_id = ids[j];
        policy::score_group(groups[j], prompt.target, cfg.reward);
      });
      for (const auto& g : groups) {
        for (const auto& s : g.samples) {
          reward_sum += s.reward_rs;
          exact_sum += s.exact;
        }
        sampled += g.size();
      }
      attempts += n;
      auto filtered = advantage::dynamic_filter(std::move(groups), kind);
      row.rejected += filtered.rejected;
      for (auto& g : filtered.kept) kept.push_back(std::move(g));
    }
    row.kept = kept.size();
    row.mean_reward = sampled ? reward_sum / static_cast<double>(sampled) : 0.0;
    row.exact_rate = sampled ? exact_sum / static_cast<double>(sampled) : 0.0;
    if (kept.empty()) {
      row.skipped = true;
      out.log.push_back(row);
      continue;
    }

    std::vector<AdvantageReport> reports;
    reports.reserve(kept.size());
    for (const auto& g : kept) {
      reports.push_back(compute_advantages(g, cfg));
      if (advantage_sink) *advantage_sink << advantage::to_json_line(reports.back(), g.prompt_id) << '\n';
    }

    const std::size_t chunks = std::min(cfg.mini_batches, kept.size());
    double loss_sum = 0.0;
    for (std::size_t c = 0; c < chunks; ++c) {
      std::size_t begin = c * kept.size() / chunks;
      std::size_t end = (c + 1) * kept.size() / chunks;
      std::span<const RolloutGroup> gs(kept.data() + begin, end - begin);
      std::span<const AdvantageReport> rs(reports.data() + begin, end - begin);
      auto res = srpo_loss(gs, rs, params, ref, cfg);
      if (!std::isfinite(res.loss) || !res.grad.all_finite())
        throw TrainingError(fmt::format("non-finite RL loss or gradient at step {} (loss = {})", step, res.loss));
      if (c == 0) row.mean_kl = res.mean_kl;
      loss_sum += res.loss;
      if (cfg.learning_rate != 0.0) {
        params.add_scaled(res.grad, -cfg.learning_rate);
        ++params.version;
      }
    }
    row.loss = loss_sum / static_cast<double>(chunks);
    out.log.push_back(row);
  }
  return out;
}

std::string train_log_csv(const TrainLog& log) {
  std::ostringstream out;
  out << "step,kept,rejected,skipped,mean_reward,exact_rate,mean_kl,loss\n";
  for (const auto& r : log)
    out << fmt::format("{},{},{},{},{:.17g},{:.17g},{:.17g},{:.17g}\n", r.step, r.kept, r.rejected, r.skipped ? 1 : 0,
                       r.mean_reward, r.exact_rate, r.mean_kl, r.loss);
  return out.str();
}

void write_train_log(const std::filesystem::path& path, const TrainLog& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << train_log_csv(log);
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace gream::optimizer
