#include "gream/config.hpp"

#include "gream/error.hpp"
#include "gream/random.hpp"

#include <fmt/format.h>

#include <fstream>

namespace gream::config {

using json = nlohmann::json;

namespace {

const char* type_name(const json& j) {
  if (j.is_number()) return "number";
  return j.type_name();
}

bool compatible(const json& def, const json& val) {
  if (def.is_number()) return val.is_number();
  if (def.is_number_unsigned() || def.is_number_integer()) return val.is_number_integer();
  return def.type() == val.type();
}

std::string join_key(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

}  // namespace

json to_json(const RunConfig& c) {
  const auto& r = c.rl.rl;
  return {
      {"env",
       {{"source", c.env.source},
        {"items", c.env.items},
        {"branching", c.env.branching},
        {"noise", c.env.noise},
        {"dim", c.env.dim},
        {"level_decay", c.env.level_decay},
        {"users", c.env.users},
        {"history_min", c.env.history_min},
        {"history_max", c.env.history_max},
        {"preference_temp", c.env.preference_temp},
        {"anchor_depth", c.env.anchor_depth},
        {"preference_noise", c.env.preference_noise},
        {"jsonl_path", c.env.jsonl_path},
        {"embeddings_path", c.env.embeddings_path},
        {"min_count", c.env.min_count},
        {"feature_window", c.env.feature_window},
        {"feature_decay", c.env.feature_decay}}},
      {"index", {{"level_sizes", c.index.level_sizes}, {"conflict_capacity", c.index.conflict_capacity}}},
      {"sft",
       {{"hidden", c.sft.hidden},
        {"epochs", c.sft.epochs},
        {"gamma", c.sft.gamma},
        {"batch_size", c.sft.batch_size},
        {"learning_rate", c.sft.learning_rate},
        {"reason_fraction", c.sft.reason_fraction},
        {"item_tasks", c.sft.item_tasks}}},
      {"rl",
       {{"algorithms", c.rl.algorithms},
        {"steps", c.rl.steps},
        {"G", r.G},
        {"k", r.k},
        {"clip_eps", r.clip_eps},
        {"kl_coeff", r.kl_coeff},
        {"learning_rate", r.learning_rate},
        {"batch_prompts", r.batch_prompts},
        {"resample_cap", r.resample_cap},
        {"mini_batches", r.mini_batches},
        {"temperature", r.rollout.temperature},
        {"top_p", r.rollout.top_p},
        {"mode", policy::to_string(r.rollout.mode)},
        {"beta_reward", r.reward.beta_reward},
        {"require_exact_conflict", r.reward.require_exact_conflict},
        {"dump_advantages", c.rl.dump_advantages}}},
      {"eval",
       {{"beam_width", c.eval.beam_width},
        {"ks", c.eval.Ks},
        {"G", c.eval.G},
        {"temperature", c.eval.temperature},
        {"top_p", c.eval.top_p},
        {"direct", c.eval.direct},
        {"reasoning", c.eval.reasoning},
        {"max_users", c.eval_max_users}}},
      {"master_seed", c.master_seed},
      {"output_dir", c.output_dir},
  };
}

json default_json() { return to_json(RunConfig{}); }

json merge_checked(const json& base, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError(fmt::format("{} must be a JSON object", path.empty() ? "config" : path));
  json out = base;
  for (const auto& [key, value] : user.items()) {
    const std::string full = join_key(path, key);
    if (!base.contains(key)) throw ConfigError("unknown config key " + full);
    const json& def = base.at(key);
    if (def.is_object()) {
      out[key] = merge_checked(def, value, full);
    } else if (!compatible(def, value)) {
      throw ConfigError(fmt::format("config key {} expects {}, got {}", full, type_name(def), type_name(value)));
    } else {
      out[key] = value;
    }
  }
  return out;
}

RunConfig from_json(const json& j) {
  RunConfig c;
  try {
    const auto& e = j.at("env");
    c.env.source = e.at("source").get<std::string>();
    c.env.items = e.at("items").get<std::size_t>();
    c.env.branching = e.at("branching").get<std::vector<int>>();
    c.env.noise = e.at("noise").get<double>();
    c.env.dim = e.at("dim").get<std::size_t>();
    c.env.level_decay = e.at("level_decay").get<double>();
    c.env.users = e.at("users").get<std::size_t>();
    c.env.history_min = e.at("history_min").get<std::size_t>();
    c.env.history_max = e.at("history_max").get<std::size_t>();
    c.env.preference_temp = e.at("preference_temp").get<double>();
    c.env.anchor_depth = e.at("anchor_depth").get<std::size_t>();
    c.env.preference_noise = e.at("preference_noise").get<double>();
    c.env.jsonl_path = e.at("jsonl_path").get<std::string>();
    c.env.embeddings_path = e.at("embeddings_path").get<std::string>();
    c.env.min_count = e.at("min_count").get<std::size_t>();
    c.env.feature_window = e.at("feature_window").get<std::size_t>();
    c.env.feature_decay = e.at("feature_decay").get<double>();

    const auto& ix = j.at("index");
    c.index.level_sizes = ix.at("level_sizes").get<std::vector<int>>();
    c.index.conflict_capacity = ix.at("conflict_capacity").get<std::size_t>();

    const auto& s = j.at("sft");
    c.sft.hidden = s.at("hidden").get<std::size_t>();
    c.sft.epochs = s.at("epochs").get<std::size_t>();
    c.sft.gamma = s.at("gamma").get<double>();
    c.sft.batch_size = s.at("batch_size").get<std::size_t>();
    c.sft.learning_rate = s.at("learning_rate").get<double>();
    c.sft.reason_fraction = s.at("reason_fraction").get<double>();
    c.sft.item_tasks = s.at("item_tasks").get<bool>();

    const auto& r = j.at("rl");
    c.rl.algorithms = r.at("algorithms").get<std::vector<std::string>>();
    c.rl.steps = r.at("steps").get<std::size_t>();
    c.rl.rl.G = r.at("G").get<std::size_t>();
    c.rl.rl.k = r.at("k").get<std::size_t>();
    c.rl.rl.clip_eps = r.at("clip_eps").get<double>();
    c.rl.rl.kl_coeff = r.at("kl_coeff").get<double>();
    c.rl.rl.learning_rate = r.at("learning_rate").get<double>();
    c.rl.rl.batch_prompts = r.at("batch_prompts").get<std::size_t>();
    c.rl.rl.resample_cap = r.at("resample_cap").get<double>();
    c.rl.rl.mini_batches = r.at("mini_batches").get<std::size_t>();
    c.rl.rl.rollout.temperature = r.at("temperature").get<double>();
    c.rl.rl.rollout.top_p = r.at("top_p").get<double>();
    c.rl.rl.rollout.mode = policy::mode_from_string(r.at("mode").get<std::string>());
    c.rl.rl.reward.beta_reward = r.at("beta_reward").get<double>();
    c.rl.rl.reward.require_exact_conflict = r.at("require_exact_conflict").get<bool>();
    c.rl.dump_advantages = r.at("dump_advantages").get<bool>();

    const auto& ev = j.at("eval");
    c.eval.beam_width = ev.at("beam_width").get<std::size_t>();
    c.eval.Ks = ev.at("ks").get<std::vector<std::size_t>>();
    c.eval.G = ev.at("G").get<std::size_t>();
    c.eval.temperature = ev.at("temperature").get<double>();
    c.eval.top_p = ev.at("top_p").get<double>();
    c.eval.direct = ev.at("direct").get<bool>();
    c.eval.reasoning = ev.at("reasoning").get<bool>();
    c.eval_max_users = ev.at("max_users").get<std::size_t>();

    c.master_seed = j.at("master_seed").get<std::uint64_t>();
    c.output_dir = j.at("output_dir").get<std::string>();
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("malformed config: ") + ex.what());
  }
  c.rl.rl.reward.levels = c.index.level_sizes.size();
  c.eval.seed = eval_seed(c);
  return c;
}

void RunConfig::validate() const {
  if (env.source != "synthetic" && env.source != "jsonl")
    throw ConfigError("env.source must be \"synthetic\" or \"jsonl\"");
  if (env.branching.empty()) throw ConfigError("env.branching must be nonempty");
  long long product = 1;
  for (int b : env.branching) product *= b;
  if (product < 1) throw ConfigError(fmt::format("env.branching has product {}; every entry must be >= 1", product));
  if (env.source == "synthetic") {
    if (env.items < 1) throw ConfigError("env.items must be >= 1");
    if (env.dim < 1) throw ConfigError("env.dim must be >= 1");
    if (!(env.noise >= 0.0)) throw ConfigError("env.noise must be >= 0");
    if (env.users < 1) throw ConfigError("env.users must be >= 1");
    if (env.history_min < 4) throw ConfigError("env.history_min must be >= 4");
    if (env.history_max < env.history_min) throw ConfigError("env.history_max must be >= env.history_min");
    if (env.history_max + 1 > env.items) throw ConfigError("env.history_max + 1 must not exceed env.items");
    if (!(env.preference_temp >= 0.0)) throw ConfigError("env.preference_temp must be >= 0");
  } else {
    if (env.jsonl_path.empty()) throw ConfigError("env.jsonl_path is required when env.source is jsonl");
    if (env.embeddings_path.empty()) throw ConfigError("env.embeddings_path is required when env.source is jsonl");
  }
  if (env.feature_window < 1) throw ConfigError("env.feature_window must be >= 1");
  if (!(env.feature_decay > 0.0 && env.feature_decay <= 1.0)) throw ConfigError("env.feature_decay must lie in (0, 1]");
  if (index.level_sizes.empty()) throw ConfigError("index.level_sizes must be nonempty");
  for (int s : index.level_sizes)
    if (s < 1) throw ConfigError("index.level_sizes entries must be >= 1");
  if (env.source == "synthetic")
    for (int s : index.level_sizes)
      if (static_cast<std::size_t>(s) > env.items) throw ConfigError("index.level_sizes entries must not exceed env.items");
  if (index.conflict_capacity < 1) throw ConfigError("index.conflict_capacity must be >= 1");
  if (sft.hidden < 1) throw ConfigError("sft.hidden must be >= 1");
  if (sft.epochs < 1) throw ConfigError("sft.epochs must be >= 1");
  if (sft.batch_size < 1) throw ConfigError("sft.batch_size must be >= 1");
  if (!(sft.learning_rate >= 0.0)) throw ConfigError("sft.learning_rate must be >= 0");
  if (!(sft.gamma >= 0.0)) throw ConfigError("sft.gamma must be >= 0");
  if (!(sft.reason_fraction >= 0.0 && sft.reason_fraction <= 1.0)) throw ConfigError("sft.reason_fraction must lie in [0, 1]");
  for (const auto& a : rl.algorithms) optimizer::algorithm_from_string(a);
  rl.rl.validate();
  eval.validate();
}

void apply_override(json& j, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override \"" + assignment + "\" must look like key.path=value");
  std::string key = assignment.substr(0, eq);
  std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json patch = value;
  for (std::size_t end = key.size(); end != std::string::npos;) {
    std::size_t dot = key.rfind('.', end == key.size() ? std::string::npos : end - 1);
    std::string part = dot == std::string::npos ? key.substr(0, end) : key.substr(dot + 1, end - dot - 1);
    patch = json{{part, patch}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  j = merge_checked(j, patch);
}

RunConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  json merged = default_json();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json user;
    try {
      user = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
    merged = merge_checked(merged, user);
  }
  for (const auto& o : overrides) apply_override(merged, o);
  RunConfig cfg = from_json(merged);
  cfg.validate();
  return cfg;
}

std::uint64_t data_seed(const RunConfig& cfg) { return derive_seed(cfg.master_seed, 1); }
std::uint64_t index_seed(const RunConfig& cfg) { return derive_seed(cfg.master_seed, 2); }
std::uint64_t sft_seed(const RunConfig& cfg) { return derive_seed(cfg.master_seed, 3); }
std::uint64_t rl_seed(const RunConfig& cfg) { return derive_seed(cfg.master_seed, 4); }
std::uint64_t eval_seed(const RunConfig& cfg) { return derive_seed(cfg.master_seed, 5); }

}  // namespace gream::config
