#include "gream/metrics.hpp"

#include "gream/advantage.hpp"
#include "gream/error.hpp"
#include "gream/parallel.hpp"
#include "gream/random.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace gream::metrics {

std::map<std::size_t, RankMetrics> recall_ndcg(std::span<const ItemIndex> ranked, const ItemIndex& target,
                                               std::span<const std::size_t> Ks) {
  std::size_t rank = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i)
    if (ranked[i] == target) {
      rank = i + 1;
      break;
    }
  std::map<std::size_t, RankMetrics> out;
  for (auto K : Ks) {
    RankMetrics m;
    if (rank != 0 && rank <= K) {
      m.recall = 1.0;
      m.ndcg = 1.0 / std::log2(static_cast<double>(rank) + 1.0);
    }
    out[K] = m;
  }
  return out;
}

std::map<std::size_t, double> pass_at_k(std::span<const std::pair<std::size_t, std::size_t>> groups,
                                        std::span<const std::size_t> Ks) {
  std::map<std::size_t, double> out;
  for (auto k : Ks) {
    double sum = 0.0;
    for (const auto& [G, c] : groups) {
      if (k < 1 || k > G) throw ConfigError(fmt::format("pass@{} needs 1 <= k <= G (G = {})", k, G));
      sum += advantage::group_success_prob(c, G, k);
    }
    out[k] = groups.empty() ? 0.0 : sum / static_cast<double>(groups.size());
  }
  return out;
}

void EvalConfig::validate() const {
  if (Ks.empty()) throw ConfigError("eval.ks must be nonempty");
  for (auto k : Ks)
    if (k < 1) throw ConfigError("eval.ks entries must be >= 1");
  if (beam_width < 1) throw ConfigError("eval.beam_width must be >= 1");
  if (reasoning)
    for (auto k : Ks)
      if (k > G) throw ConfigError(fmt::format("eval.ks contains {} > eval.G = {}", k, G));
  if (!(temperature > 0.0)) throw ConfigError("eval.temperature must be > 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("eval.top_p must lie in (0, 1]");
}

double EvalReport::avg_direct() const {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& [k, v] : recall_at) s += v, ++n;
  for (const auto& [k, v] : ndcg_at) s += v, ++n;
  return n ? s / static_cast<double>(n) : 0.0;
}

double EvalReport::avg_reason() const {
  double s = 0.0;
  for (const auto& [k, v] : pass_at) s += v;
  return pass_at.empty() ? 0.0 : s / static_cast<double>(pass_at.size());
}

EvalReport evaluate(const policy::TokenPolicy& policy, std::span<const EvalCase> cases, const EvalConfig& cfg,
                    const reward::RewardConfig& reward_cfg) {
  cfg.validate();
  if (cases.empty()) throw DataError("evaluation split is empty");
  EvalReport rep;
  rep.config = cfg;
  rep.n_users = cases.size();
  const std::size_t max_k = *std::max_element(cfg.Ks.begin(), cfg.Ks.end());

  std::vector<std::map<std::size_t, RankMetrics>> ranked(cases.size());
  std::vector<std::pair<std::size_t, std::size_t>> counts(cases.size());
  parallel_for(cases.size(), [&](std::size_t i) {
    const auto& c = cases[i];
    if (cfg.direct) {
      auto beams = policy::beam_search(policy, c.context, cfg.beam_width, std::min(max_k, cfg.beam_width),
                                       policy::Mode::kDirect);
      std::vector<ItemIndex> list;
      for (auto& b : beams) list.push_back(std::move(b.index));
      ranked[i] = recall_ndcg(list, c.target, cfg.Ks);
    }
    if (cfg.reasoning) {
      policy::GenerationConfig gen{cfg.temperature, cfg.top_p, cfg.beam_width, policy::Mode::kReasoning};
      auto group = policy::sample_group(policy, c.context, cfg.G, gen, derive_seed(cfg.seed, i));
      std::size_t hits = 0;
      for (const auto& s : group.samples) hits += static_cast<std::size_t>(reward::exact_match(c.target, s.generated, reward_cfg));
      counts[i] = {cfg.G, hits};
    }
  });

  if (cfg.direct) {
    for (auto K : cfg.Ks) {
      double r = 0.0, n = 0.0;
      for (const auto& m : ranked) {
        r += m.at(K).recall;
        n += m.at(K).ndcg;
      }
      rep.recall_at[K] = r / static_cast<double>(cases.size());
      rep.ndcg_at[K] = n / static_cast<double>(cases.size());
    }
  }
  if (cfg.reasoning) rep.pass_at = pass_at_k(counts, cfg.Ks);
  return rep;
}

namespace {
nlohmann::json keyed(const std::map<std::size_t, double>& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : m) j[std::to_string(k)] = v;
  return j;
}
}  // namespace

std::string to_json(const EvalReport& report) {
  nlohmann::json j;
  j["n_users"] = report.n_users;
  j["recall_at"] = keyed(report.recall_at);
  j["ndcg_at"] = keyed(report.ndcg_at);
  j["pass_at"] = keyed(report.pass_at);
  j["avg_direct"] = report.avg_direct();
  j["avg_reason"] = report.avg_reason();
  const auto& c = report.config;
  j["config"] = {{"beam_width", c.beam_width}, {"ks", c.Ks},        {"G", c.G},
                 {"temperature", c.temperature}, {"top_p", c.top_p}, {"seed", c.seed},
                 {"direct", c.direct},           {"reasoning", c.reasoning}};
  return j.dump(2);
}

std::string csv_header(const EvalReport& report) {
  std::ostringstream out;
  out << "variant,n_users";
  for (const auto& [k, v] : report.recall_at) out << ",recall@" << k;
  for (const auto& [k, v] : report.ndcg_at) out << ",ndcg@" << k;
  for (const auto& [k, v] : report.pass_at) out << ",pass@" << k;
  out << ",avg_direct,avg_reason";
  return out.str();
}

std::string csv_row(const EvalReport& report, const std::string& variant) {
  std::ostringstream out;
  out << variant << ',' << report.n_users;
  for (const auto& [k, v] : report.recall_at) out << fmt::format(",{:.6f}", v);
  for (const auto& [k, v] : report.ndcg_at) out << fmt::format(",{:.6f}", v);
  for (const auto& [k, v] : report.pass_at) out << fmt::format(",{:.6f}", v);
  out << fmt::format(",{:.6f},{:.6f}", report.avg_direct(), report.avg_reason());
  return out.str();
}

void write_report(const std::filesystem::path& json_path, const std::filesystem::path& csv_path,
                  const EvalReport& report, const std::string& variant) {
  std::ofstream js(json_path, std::ios::trunc);
  if (!js) throw IoError("cannot open " + json_path.string() + " for writing");
  js << to_json(report) << '\n';
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw IoError("cannot open " + csv_path.string() + " for writing");
  csv << csv_header(report) << '\n' << csv_row(report, variant) << '\n';
  if (!js || !csv) throw IoError("write failed for evaluation report");
}

}  // namespace gream::metrics
