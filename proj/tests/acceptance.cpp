// Acceptance harness: one PASS/FAIL line per criterion with the measured value
// and its tolerance. Exits non-zero if any criterion fails.

#include "gream/advantage.hpp"
#include "gream/config.hpp"
#include "gream/curriculum.hpp"
#include "gream/metrics.hpp"
#include "gream/optimizer.hpp"
#include "gream/pipeline.hpp"
#include "gream/reward.hpp"
#include "gream/rqindex.hpp"
#include "gream/synthenv.hpp"
#include "oracles.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <sys/wait.h>

using namespace gream;
namespace fs = std::filesystem;

namespace {

int failures = 0;
std::ofstream transcript;

void report(int id, bool ok, const std::string& what) {
  std::string line = fmt::format("C{:<2} {} {}", id, ok ? "PASS" : "FAIL", what);
  fmt::print("{}\n", line);
  std::fflush(stdout);
  if (transcript) transcript << line << '\n';
  if (!ok) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Vector random_vec(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = g(rng);
  return v;
}

policy::PolicyParams random_params(const policy::PolicyShape& shape, std::mt19937_64& rng, double scale) {
  auto p = policy::PolicyParams::zeros(shape);
  std::uniform_real_distribution<double> u(-scale, scale);
  p.visit_blocks([&](double* v, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) v[i] = u(rng);
  });
  return p;
}

void criterion1() {
  auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  int cases = 0;
  for (int G = 1; G <= 8; ++G)
    for (int c = 0; c <= G; ++c)
      for (int k = 1; k <= G; ++k) {
        worst = std::max(worst, std::abs(advantage::group_success_prob(c, G, k) - oracle::success_by_enumeration(c, G, k)));
        if (c < G)
          worst = std::max(worst, std::abs(advantage::flip_probability(c, G, k) - oracle::flip_by_enumeration(c, G, k)));
        ++cases;
      }
  double secs = seconds_since(t0);
  report(1, worst <= 1e-12 && secs < 5.0,
         fmt::format("rho/delta vs subset enumeration: max |err| {:.2e} over {} (G,c,k) triples (tol 1e-12); {:.2f} s (< 5 s)",
                     worst, cases, secs));
}

void criterion2() {
  const std::vector<double> r{1.0, 0.70711, 0.0, 0.0};
  const std::vector<int> v{1, 0, 0, 0};
  auto rep = advantage::final_advantages(r, v, 2);
  const std::vector<double> expect{2.30530, 0.30502, -1.30516, -1.30516};
  double worst = std::max({std::abs(rep.rho - 0.5), std::abs(rep.sigma - 0.5), std::abs(rep.delta - 2.0 / 3.0),
                           std::abs(rep.bonus_pos - 1.0), std::abs(rep.bonus_neg + 1.0 / 3.0)});
  for (int i = 0; i < 4; ++i) worst = std::max(worst, std::abs(rep.a_final[i] - expect[i]));
  report(2, worst <= 1e-4,
         fmt::format("worked group G=4 k=2: A_final [{:.5f}, {:.5f}, {:.5f}, {:.5f}], rho {:.4f} sigma {:.4f} delta {:.4f}; "
                     "max |err| {:.2e} (tol 1e-4)",
                     rep.a_final[0], rep.a_final[1], rep.a_final[2], rep.a_final[3], rep.rho, rep.sigma, rep.delta, worst));
}

void criterion3() {
  reward::RewardConfig cfg;  // H = 4, beta = 0.5
  const std::vector<double> expect{0.0, 0.5, 0.70711, 0.86603, 1.0};
  double worst = 0;
  bool concave = true;
  std::vector<double> got;
  for (std::size_t l = 0; l <= 4; ++l) {
    got.push_back(reward::residual_reward(l, cfg));
    worst = std::max(worst, std::abs(got.back() - expect[l]));
  }
  for (std::size_t l = 2; l <= 4; ++l) concave = concave && (got[l] - got[l - 1]) < (got[l - 1] - got[l - 2]);
  report(3, worst <= 1e-5 && concave,
         fmt::format("rewards [{:.5f}, {:.5f}, {:.5f}, {:.5f}, {:.5f}], max |err| {:.2e} (tol 1e-5); gains strictly decreasing: {}",
                     got[0], got[1], got[2], got[3], got[4], worst, concave ? "yes" : "no"));
}

void criterion4() {
  auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(4);
  policy::PolicyShape shape;
  shape.context_dim = 3;
  shape.hidden = 4;
  shape.level_sizes = {3, 2, 2};
  shape.conflict_vocab = 2;

  auto params = random_params(shape, rng, 0.5);
  std::vector<policy::SftExample> batch;
  for (int i = 0; i < 6; ++i) {
    auto mode = i % 2 ? policy::Mode::kReasoning : policy::Mode::kDirect;
    std::vector<int> toks;
    for (int v : shape.vocab_sizes(mode)) toks.push_back(static_cast<int>(rng() % v));
    batch.push_back({random_vec(3, rng), mode, toks});
  }
  auto sft = policy::sft_loss_and_grad(params, batch);
  auto sft_fd = oracle::central_difference(
      [&](const std::vector<double>& x) {
        auto p = params;
        p.assign_flat(x);
        return policy::sft_loss(p, batch);
      },
      params.flatten());
  double sft_err = oracle::max_relative_error(sft.grad.flatten(), sft_fd);

  optimizer::RLConfig cfg;
  cfg.G = 5;
  cfg.k = 2;
  cfg.kl_coeff = 0.05;
  cfg.reward.levels = 3;
  auto old_params = random_params(shape, rng, 0.5);
  policy::LinearPolicy pol(old_params);
  std::vector<advantage::RolloutGroup> groups;
  std::vector<advantage::AdvantageReport> reports;
  for (int g = 0; g < 3; ++g) {
    auto grp = policy::sample_group(pol, random_vec(3, rng), cfg.G, cfg.rollout, 100 + g);
    policy::score_group(grp, ItemIndex{{g % 3, 1, 0}, 0}, cfg.reward);
    grp.samples[0].reward_rs = 1.0;
    grp.samples[0].exact = 1;
    grp.samples[1].reward_rs = 0.0;
    grp.samples[1].exact = 0;
    groups.push_back(grp);
    reports.push_back(optimizer::compute_advantages(grp, cfg));
  }
  auto cur = old_params;
  cur.add_scaled(random_params(shape, rng, 0.02), 1.0);
  auto ref = old_params;
  ref.add_scaled(random_params(shape, rng, 0.2), 1.0);
  auto rl = optimizer::srpo_loss(groups, reports, cur, ref, cfg);
  auto rl_fd = oracle::central_difference(
      [&](const std::vector<double>& x) {
        auto p = cur;
        p.assign_flat(x);
        return optimizer::srpo_loss(groups, reports, p, ref, cfg).loss;
      },
      cur.flatten());
  double rl_err = oracle::max_relative_error(rl.grad.flatten(), rl_fd);
  double secs = seconds_since(t0);
  report(4, sft_err < 1e-4 && rl_err < 1e-4 && secs < 30.0,
         fmt::format("gradient vs central differences (h=1e-5): SFT max rel err {:.2e}, SRPO max rel err {:.2e} "
                     "(tol 1e-4, {} params); {:.2f} s (< 30 s)",
                     sft_err, rl_err, params.parameter_count(), secs));
}

void criterion5() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<advantage::RolloutGroup> groups;
  for (int g = 0; g < 1000; ++g) {
    advantage::RolloutGroup grp;
    grp.prompt_id = g;
    std::size_t G = 2 + rng() % 11;
    const bool flat = rng() % 4 == 0;
    const double level = std::floor(u(rng) * 5) / 4;
    for (std::size_t i = 0; i < G; ++i) {
      advantage::RolloutSample s;
      s.reward_rs = flat ? level : std::sqrt(std::floor(u(rng) * 5) / 4);
      s.exact = s.reward_rs == 1.0;
      grp.samples.push_back(s);
    }
    groups.push_back(grp);
  }
  auto res = advantage::dynamic_filter(groups);
  double worst_mean = 0, worst_std = 0;
  for (const auto& g : res.kept) {
    auto a = advantage::normalized_residual_advantage(g.residual_rewards());
    double m = std::accumulate(a.begin(), a.end(), 0.0) / a.size();
    worst_mean = std::max(worst_mean, std::abs(m));
    worst_std = std::max(worst_std, std::abs(advantage::population_std(a) - 1.0));
  }
  std::size_t bad_rejects = 0;
  std::size_t kept_i = 0;
  for (const auto& g : groups) {
    bool kept = kept_i < res.kept.size() && res.kept[kept_i].prompt_id == g.prompt_id;
    if (kept) ++kept_i;
    else if (advantage::population_std(g.residual_rewards()) >= 1e-8) ++bad_rejects;
  }
  bool ok = worst_mean <= 1e-9 && worst_std <= 1e-9 && bad_rejects == 0 && res.kept.size() + res.rejected == 1000;
  report(5, ok,
         fmt::format("1000 random groups: {} kept, {} rejected; kept |mean| <= {:.1e}, |std-1| <= {:.1e} (tol 1e-9); "
                     "rejected groups with std >= 1e-8: {}",
                     res.kept.size(), res.rejected, worst_mean, worst_std, bad_rejects));
}

void criterion6() {
  int monotone = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    std::mt19937_64 rng(600 + s);
    int n = 50 + static_cast<int>(rng() % 200), d = 2 + static_cast<int>(rng() % 8), k = 2 + static_cast<int>(rng() % 12);
    RowMatrix pts(n, d);
    std::normal_distribution<double> g;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) pts(i, j) = g(rng);
    auto res = rqindex::kmeans(pts, k, s);
    bool ok = true;
    for (std::size_t i = 1; i < res.trace.inertia.size(); ++i) ok = ok && res.trace.inertia[i] <= res.trace.inertia[i - 1];
    monotone += ok;
  }

  double tele = 0;
  std::vector<double> agreement;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const std::vector<int> branching{4, 4};
    auto cat = synthenv::generate_catalog(256, branching, 0.05, 16, 60 + s);
    auto books = rqindex::fit_codebooks(cat.embeddings, branching, 70 + s);
    auto codes = rqindex::assign_levels(cat.embeddings, books);
    for (std::size_t i = 0; i < 256; ++i) {
      Vector r = cat.embeddings.row(i);
      for (std::size_t l = 0; l < books.depth(); ++l) r -= books.levels[l].row(codes[i][l]).transpose();
      Vector recon = rqindex::decode(ItemIndex{codes[i], 0}, books) + r;
      tele = std::max(tele, (recon - cat.embeddings.row(i)).cwiseAbs().maxCoeff());
    }
    std::vector<int> perm{0, 1, 2, 3};
    double best = 0;
    do {
      int agree = 0;
      for (std::size_t i = 0; i < 256; ++i) agree += perm[codes[i][0]] == cat.paths[i][0];
      best = std::max(best, agree / 256.0);
    } while (std::next_permutation(perm.begin(), perm.end()));
    agreement.push_back(best);
  }
  double med = median(agreement);
  report(6, monotone == 20 && tele <= 1e-9 && med > 0.95,
         fmt::format("Lloyd inertia monotone on {}/20 datasets; telescoping max |err| {:.1e} (tol 1e-9); level-1 planted "
                     "agreement 5-seed median {:.4f} (> 0.95, 256 items, branching [4,4], noise 0.05)",
                     monotone, tele, med));
}

void criterion7() {
  policy::PolicyShape shape;
  shape.context_dim = 3;
  shape.hidden = 3;
  shape.level_sizes = {4, 2, 2};
  shape.conflict_vocab = 2;  // 32 direct sequences, 32 x 8 = 256 in reasoning mode
  std::mt19937_64 rng(7);
  int exact = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto params = random_params(shape, rng, 1.5);
    policy::LinearPolicy pol(params);
    Vector x = random_vec(3, rng);
    auto truth = oracle::exhaustive_ranking(pol, x, policy::Mode::kDirect);
    auto beam = policy::beam_search(pol, x, 64, truth.size(), policy::Mode::kDirect);
    bool same = beam.size() == truth.size();
    for (std::size_t i = 0; same && i < truth.size(); ++i)
      same = beam[i].index == truth[i].first && std::abs(beam[i].score - truth[i].second) <= 1e-12;
    exact += same;
  }
  report(7, exact == 100,
         fmt::format("beam (width 64) equals exhaustive ranking of all 32 sequences on {}/100 random parameter draws", exact));
}

void criterion8() {
  std::mt19937_64 rng(8);
  int conserved = 0;
  for (int s = 0; s < 10000; ++s) {
    std::size_t na = rng() % 9, nr = rng() % 9, epochs = 1 + rng() % 3;
    auto sched = curriculum::build_schedule(na, nr, (rng() % 400) / 100.0, epochs, s);
    bool ok = sched.epochs.size() == epochs;
    for (const auto& ep : sched.epochs) {
      std::vector<std::size_t> a, r;
      for (const auto& t : ep) (t.kind == curriculum::BatchTag::Kind::kAlign ? a : r).push_back(t.index);
      std::sort(a.begin(), a.end());
      std::sort(r.begin(), r.end());
      std::vector<std::size_t> ea(na), er(nr);
      std::iota(ea.begin(), ea.end(), std::size_t{0});
      std::iota(er.begin(), er.end(), std::size_t{0});
      ok = ok && a == ea && r == er;
    }
    conserved += ok;
  }
  double direct = 0;
  for (std::size_t i = 1; i <= 4; ++i) direct += std::min(1.0, 1.5 * (i / 4.0) * (4.0 / 4.0));
  double mc = 0;
  const int n = 10000;
  for (int s = 0; s < n; ++s) mc += curriculum::build_schedule(4, 4, 1.5, 2, 800000 + s).insertions(0);
  mc /= n;
  double rel = std::abs(mc - direct) / direct;
  double closed = curriculum::expected_insertions(4, 4, 1.5);
  report(8, conserved == 10000 && rel <= 0.01 && std::abs(closed - direct) <= 1e-12,
         fmt::format("multiset conserved in {}/10000 schedules; insertions (4,4,1.5): direct sum {:.4f}, closed form {:.4f}, "
                     "Monte Carlo {:.4f} over {} schedules (rel err {:.2f}%, tol 1%)",
                     conserved, direct, closed, mc, n, 100 * rel));
}

void criterion9(const fs::path& root) {
  setenv("GREAM_LAB_THREADS", "1", 1);
  auto t0 = std::chrono::steady_clock::now();
  std::vector<double> srpo, grpo, srpo_nb;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto cfg = config::load("", {"master_seed=" + std::to_string(seed)});
    pipeline::RunPaths paths{root / fmt::format("seed{}", seed)};
    fs::remove_all(paths.root);
    pipeline::run_pipeline(cfg, paths, pipeline::Stage::kGenData, false);
    auto pass1 = [&](const std::string& v) {
      return nlohmann::json::parse(slurp(paths.eval_json(v)))["pass_at"]["1"].get<double>();
    };
    double base = pass1("sft");
    srpo.push_back(pass1("srpo") / base - 1.0);
    grpo.push_back(pass1("grpo") / base - 1.0);
    srpo_nb.push_back(pass1("srpo_no_bonus") / base - 1.0);
    per_seed += fmt::format("{}{:.4f}->{:.4f}", seed ? ", " : "", base, pass1("srpo"));
  }
  double secs = seconds_since(t0);
  unsetenv("GREAM_LAB_THREADS");
  double ms = median(srpo), mg = median(grpo);
  report(9, ms >= 0.20 && mg > 0.0 && secs < 900.0,
         fmt::format("reasoning Pass@1 relative gain over SFT, 5-seed median, 1000 steps: SRPO {:+.1f}% (>= +20%), GRPO {:+.1f}% "
                     "(> 0%), SRPO without bonus {:+.1f}%; SFT->SRPO per seed [{}]; {:.0f} s on 1 worker (< 900 s)",
                     100 * ms, 100 * mg, 100 * median(srpo_nb), per_seed, secs));
}

void criterion10() {
  std::vector<std::pair<std::size_t, std::size_t>> g{{10, 2}};
  const std::vector<std::size_t> k{5};
  double got = metrics::pass_at_k(g, k).at(5);
  double err = std::abs(got - (1.0 - 56.0 / 252.0));
  report(10, err <= 1e-12, fmt::format("pass@5 (G=10, c=2) = {:.15f}, |err| {:.1e} vs 1 - 56/252 (tol 1e-12)", got, err));
}

void criterion11(const fs::path& root) {
  std::vector<std::string> evals;
  for (const char* run : {"run_a", "run_b"}) {
    fs::remove_all(root / run);
    std::string cmd = fmt::format("{} pipeline -o {} --set master_seed=11 >/dev/null 2>&1", GREAM_LAB_BIN, (root / run).string());
    int status = std::system(cmd.c_str());
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
      report(11, false, fmt::format("gream-lab pipeline exited with status {}", status));
      return;
    }
    std::string all;
    for (const char* v : {"sft", "grpo", "srpo_no_bonus", "srpo"}) all += slurp(root / run / "eval" / (std::string(v) + ".json"));
    evals.push_back(all);
  }
  report(11, !evals[0].empty() && evals[0] == evals[1],
         fmt::format("two `gream-lab pipeline` runs with seed 11: EvalReport JSON byte-identical for all 4 variants ({} bytes)",
                     evals[0].size()));
}

}  // namespace

int main(int argc, char** argv) {
  fs::path root = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "gream_acceptance";
  fs::create_directories(root);
  transcript.open(root / "acceptance.txt", std::ios::trunc);
  try {
    criterion1();
    criterion2();
    criterion3();
    criterion4();
    criterion5();
    criterion6();
    criterion7();
    criterion8();
    criterion9(root / "c9");
    criterion10();
    criterion11(root / "c11");
  } catch (const std::exception& e) {
    fmt::print("acceptance aborted: {}\n", e.what());
    return 1;
  }
  fmt::print("{} criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
