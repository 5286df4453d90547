#include "gream/error.hpp"
#include "gream/optimizer.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <random>
#include <sstream>

using namespace gream;
using namespace gream::optimizer;
using policy::Mode;
using policy::PolicyParams;
using policy::PolicyShape;

namespace {

PolicyShape toy_shape() {
  PolicyShape s;
  s.context_dim = 3;
  s.hidden = 4;
  s.level_sizes = {3, 2};
  s.conflict_vocab = 2;
  return s;
}

PolicyParams random_params(std::uint64_t seed, double scale) {
  PolicyParams p = PolicyParams::zeros(toy_shape());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  p.visit_blocks([&](double* v, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) v[i] = u(rng);
  });
  return p;
}

Vector random_vec(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = g(rng);
  return v;
}

PolicyParams perturbed(const PolicyParams& base, std::uint64_t seed, double scale) {
  auto p = base;
  p.add_scaled(random_params(seed, scale), 1.0);
  return p;
}

struct Fixture {
  RLConfig cfg;
  PolicyParams old_params = random_params(1, 0.6);
  std::vector<advantage::RolloutGroup> groups;
  std::vector<advantage::AdvantageReport> reports;

  explicit Fixture(Algorithm algo = Algorithm::kSrpo) {
    cfg.G = 4;
    cfg.k = 2;
    cfg.algorithm = algo;
    cfg.kl_coeff = 0.1;
    cfg.reward.levels = 2;
    policy::LinearPolicy pol(old_params);
    for (int g = 0; g < 3; ++g) {
      ItemIndex target{{g % 3, 1}, 0};
      auto grp = policy::sample_group(pol, random_vec(3, 50 + g), cfg.G, cfg.rollout, 900 + g);
      policy::score_group(grp, target, cfg.reward);
      // Force reward variance so each group is informative.
      grp.samples[0].reward_rs = 1.0;
      grp.samples[0].exact = 1;
      grp.samples[1].reward_rs = 0.0;
      grp.samples[1].exact = 0;
      groups.push_back(grp);
      reports.push_back(compute_advantages(grp, cfg));
    }
  }
};

// Direct recomputation of the objective from log_prob.
double loss_oracle(const Fixture& f, const PolicyParams& params, const PolicyParams& ref) {
  const auto tr = f.cfg.rollout.transform();
  double total = 0;
  for (std::size_t g = 0; g < f.groups.size(); ++g) {
    double group_sum = 0;
    for (std::size_t i = 0; i < f.groups[g].size(); ++i) {
      const auto& s = f.groups[g].samples[i];
      auto now = policy::log_prob(params, f.groups[g].context, Mode::kReasoning, s.tokens, tr).per_token;
      auto base = policy::log_prob(ref, f.groups[g].context, Mode::kReasoning, s.tokens, tr).per_token;
      const double A = f.reports[g].a_final[i];
      double seq = 0;
      for (std::size_t t = 0; t < now.size(); ++t) {
        double r = std::exp(now[t] - s.old_logps[t]);
        double clipped = std::min(std::max(r, 1 - f.cfg.clip_eps), 1 + f.cfg.clip_eps);
        double kl = std::exp(base[t] - now[t]) - (base[t] - now[t]) - 1;
        seq += std::min(r * A, clipped * A) - f.cfg.kl_coeff * kl;
      }
      group_sum += seq / now.size();
    }
    total += group_sum / f.groups[g].size();
  }
  return -total / f.groups.size();
}

}  // namespace

TEST_CASE("ratio and k3 penalty") {
  std::vector<double> a{-1.0, -2.0, -0.5};
  std::vector<double> b{-1.0, -1.5, -0.7};
  auto r = importance_ratio(a, b);
  CHECK(r[0] == doctest::Approx(1.0));
  CHECK(r[1] == doctest::Approx(std::exp(-0.5)));
  auto kl = kl_penalty(a, b);
  CHECK(kl[0] == 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    double d = b[i] - a[i];
    CHECK(kl[i] == doctest::Approx(std::exp(d) - d - 1).epsilon(1e-12));
    CHECK(kl[i] >= 0.0);
  }
  CHECK_THROWS_AS(importance_ratio(a, std::vector<double>{0.0}), InputError);
  CHECK_THROWS_AS(kl_penalty(a, std::vector<double>{0.0}), InputError);
}

TEST_CASE("surrogate loss matches a direct recomputation") {
  Fixture f;
  auto params = perturbed(f.old_params, 2, 0.3);
  auto ref = perturbed(f.old_params, 3, 0.2);
  auto res = srpo_loss(f.groups, f.reports, params, ref, f.cfg);
  CHECK(res.loss == doctest::Approx(loss_oracle(f, params, ref)).epsilon(1e-12));
  CHECK(res.mean_kl > 0.0);
}

TEST_CASE("surrogate gradient matches central differences") {
  for (Algorithm algo : {Algorithm::kGrpo, Algorithm::kSrpoNoBonus, Algorithm::kSrpo}) {
    Fixture f(algo);
    auto params = perturbed(f.old_params, 4, 0.02);  // ratios stay inside the clip range
    auto ref = perturbed(f.old_params, 5, 0.2);
    auto res = srpo_loss(f.groups, f.reports, params, ref, f.cfg);
    CHECK(res.clipped_fraction == 0.0);
    auto numeric = oracle::central_difference(
        [&](const std::vector<double>& flat) {
          auto p = params;
          p.assign_flat(flat);
          return srpo_loss(f.groups, f.reports, p, ref, f.cfg).loss;
        },
        params.flatten());
    CHECK(oracle::max_relative_error(res.grad.flatten(), numeric) < 1e-4);
  }
}

TEST_CASE("clipped tokens contribute no surrogate gradient") {
  Fixture f;
  f.cfg.kl_coeff = 0.0;
  // Pretend the sampler assigned much lower probability: every ratio is e > 1 + eps.
  for (auto& g : f.groups)
    for (auto& s : g.samples)
      for (auto& lp : s.old_logps) lp -= 1.0;
  for (auto& rep : f.reports)
    for (auto& a : rep.a_final) a = std::abs(a) + 0.1;
  auto res = srpo_loss(f.groups, f.reports, f.old_params, f.old_params, f.cfg);
  CHECK(res.clipped_fraction == 1.0);
  for (double g : res.grad.flatten()) CHECK(g == 0.0);
  CHECK_THROWS_AS(srpo_loss({}, {}, f.old_params, f.old_params, f.cfg), InputError);
}

TEST_CASE("grpo normalizes binary rewards without bonus") {
  Fixture f(Algorithm::kGrpo);
  auto rep = compute_advantages(f.groups[0], f.cfg);
  auto expect = advantage::normalized_residual_advantage(f.groups[0].binary_rewards());
  CHECK(rep.a_final == expect);
  CHECK(rep.bonus_pos == 0.0);
}

namespace {

std::vector<RlPrompt> toy_prompts() {
  std::vector<RlPrompt> out;
  for (int i = 0; i < 12; ++i) out.push_back({random_vec(3, 300 + i), ItemIndex{{i % 3, i % 2}, 0}});
  return out;
}

}  // namespace

TEST_CASE("a step with no informative group is skipped") {
  RLConfig cfg;
  cfg.G = 4;
  cfg.batch_prompts = 3;
  cfg.reward.levels = 2;
  cfg.rollout.temperature = 1e-9;  // argmax rollouts: every group is flat
  auto init = random_params(7, 0.5);
  auto res = train_rl(init, toy_prompts(), cfg, 3, 1);
  CHECK(res.params.flatten() == init.flatten());
  REQUIRE(res.log.size() == 3);
  for (const auto& row : res.log) {
    CHECK(row.skipped);
    CHECK(row.kept == 0);
    CHECK(row.rejected == 9);  // cap = 3 x batch_prompts attempts
  }
}

TEST_CASE("training is deterministic and independent of the worker count") {
  RLConfig cfg;
  cfg.G = 6;
  cfg.batch_prompts = 4;
  cfg.reward.levels = 2;
  cfg.mini_batches = 2;
  cfg.learning_rate = 0.3;
  auto init = random_params(8, 0.3);
  auto prompts = toy_prompts();
  setenv("GREAM_LAB_THREADS", "1", 1);
  std::ostringstream dump1;
  auto a = train_rl(init, prompts, cfg, 5, 9, &dump1);
  setenv("GREAM_LAB_THREADS", "3", 1);
  std::ostringstream dump2;
  auto b = train_rl(init, prompts, cfg, 5, 9, &dump2);
  unsetenv("GREAM_LAB_THREADS");
  CHECK(a.params.flatten() == b.params.flatten());
  CHECK(train_log_csv(a.log) == train_log_csv(b.log));
  CHECK(dump1.str() == dump2.str());
  CHECK(a.params.flatten() != init.flatten());
  CHECK(train_log_csv(a.log).rfind("step,kept,rejected,skipped,mean_reward,exact_rate,mean_kl,loss\n", 0) == 0);
}

TEST_CASE("invalid RL configuration") {
  RLConfig cfg;
  cfg.k = cfg.G + 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = RLConfig{};
  cfg.G = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(algorithm_from_string("ppo"), ConfigError);
  CHECK(algorithm_from_string("srpo_no_bonus") == Algorithm::kSrpoNoBonus);
}
