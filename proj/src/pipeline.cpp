#include "gream/pipeline.hpp"

#include "gream/curriculum.hpp"
#include "gream/error.hpp"
#include "gream/optimizer.hpp"
#include "gream/random.hpp"
#include "gream/rqindex.hpp"

#include <fmt/format.h>
#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <sstream>

namespace gream::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::uint32_t kManifestVersion = 1;

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void require_file(const fs::path& path, const char* producer) {
  if (!fs::exists(path)) throw IoError(fmt::format("missing {} (run the {} stage first)", path.string(), producer));
}

synthenv::FeatureConfig features_of(const config::RunConfig& cfg) {
  return {cfg.env.feature_window, cfg.env.feature_decay};
}

std::vector<ItemIndex> load_index(const RunPaths& paths, std::size_t n_items) {
  require_file(paths.index(), "fit-index");
  auto index = rqindex::read_index(paths.index());
  if (index.size() != n_items)
    throw DataError(fmt::format("{} covers {} items but the catalog has {}", paths.index().string(), index.size(), n_items));
  return index;
}

std::vector<optimizer::RlPrompt> rl_prompts(const Dataset& data, std::span<const ItemIndex> index,
                                            const synthenv::FeatureConfig& features) {
  std::vector<optimizer::RlPrompt> prompts;
  for (const auto& it : data.interactions) {
    if (it.split != synthenv::Split::kTrain) continue;
    prompts.push_back({synthenv::context_features(it.history, data.embeddings, features), index[it.target]});
  }
  return prompts;
}

std::vector<std::vector<policy::SftExample>> make_batches(std::span<const policy::SftExample> pool,
                                                          std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  std::vector<std::vector<policy::SftExample>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    std::vector<policy::SftExample> b;
    for (std::size_t j = start; j < std::min(order.size(), start + batch_size); ++j) b.push_back(pool[order[j]]);
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace

const char* to_string(Stage s) {
  switch (s) {
    case Stage::kGenData: return "gen-data";
    case Stage::kFitIndex: return "fit-index";
    case Stage::kSft: return "sft";
    case Stage::kTrainRl: return "train-rl";
    case Stage::kEval: return "eval";
    case Stage::kReport: return "report";
  }
  return "?";
}

Stage stage_from_string(const std::string& name) {
  for (Stage s : {Stage::kGenData, Stage::kFitIndex, Stage::kSft, Stage::kTrainRl, Stage::kEval, Stage::kReport})
    if (name == to_string(s)) return s;
  throw ConfigError("unknown stage \"" + name + "\"");
}

Dataset load_dataset(const RunPaths& paths) {
  require_file(paths.embeddings(), "gen-data");
  require_file(paths.interactions(), "gen-data");
  Dataset d;
  d.embeddings = rqindex::read_embeddings(paths.embeddings());
  auto ingest = synthenv::ingest_jsonl(paths.interactions(), {.min_count = 0, .numeric_item_ids = true});
  for (const auto& s : ingest.sequences)
    for (auto item : s.items)
      if (item >= d.embeddings.item_count())
        throw DataError(fmt::format("user {} references item {} outside the catalog", s.user, item));
  d.sequences = std::move(ingest.sequences);
  d.interactions = std::move(ingest.interactions);
  return d;
}

void gen_data(const config::RunConfig& cfg, const RunPaths& paths, bool force) {
  if (!force && (fs::exists(paths.embeddings()) || fs::exists(paths.interactions())))
    throw IoError(paths.data().string() + " already holds data; pass --force to overwrite");
  ensure_dir(paths.data());
  const auto seed = config::data_seed(cfg);
  if (cfg.env.source == "synthetic") {
    auto catalog = synthenv::generate_catalog(cfg.env.items, cfg.env.branching, cfg.env.noise, cfg.env.dim, seed,
                                              cfg.env.level_decay);
    synthenv::InteractionConfig icfg{cfg.env.users,           cfg.env.history_min,  cfg.env.history_max,
                                     cfg.env.preference_temp, cfg.env.anchor_depth, cfg.env.preference_noise};
    auto sequences = synthenv::generate_sequences(catalog, icfg, derive_seed(seed, 1));
    rqindex::write_embeddings(paths.embeddings(), catalog.embeddings);
    synthenv::write_catalog_json(paths.catalog_json(), catalog);
    synthenv::write_sequences_jsonl(paths.interactions(), sequences);
  } else {
    auto embeddings = rqindex::read_embeddings(cfg.env.embeddings_path);
    auto ingest = synthenv::ingest_jsonl(cfg.env.jsonl_path, {.min_count = cfg.env.min_count, .numeric_item_ids = true});
    for (const auto& s : ingest.sequences)
      for (auto item : s.items)
        if (item >= embeddings.item_count())
          throw DataError(fmt::format("{}: item {} has no embedding row", cfg.env.jsonl_path, item));
    rqindex::write_embeddings(paths.embeddings(), embeddings);
    synthenv::write_sequences_jsonl(paths.interactions(), ingest.sequences);
  }
  write_manifest(cfg, paths);
}

void fit_index(const config::RunConfig& cfg, const RunPaths& paths) {
  require_file(paths.embeddings(), "gen-data");
  auto embeddings = rqindex::read_embeddings(paths.embeddings());
  ensure_dir(paths.index_dir());
  auto codebooks = rqindex::fit_codebooks(embeddings, cfg.index.level_sizes, config::index_seed(cfg));
  auto index = rqindex::encode(embeddings, codebooks, cfg.index.conflict_capacity);
  rqindex::write_index(paths.index(), index);
  rqindex::write_codebooks(paths.codebooks(), codebooks);
  json stats;
  stats["collisions_by_prefix"] = rqindex::collision_stats(index);
  stats["conflict_vocab"] = rqindex::conflict_vocab(index);
  stats["inertia_per_level"] = codebooks.inertia_per_level;
  write_text(paths.collisions(), stats.dump(2) + "\n");
  write_manifest(cfg, paths);
}

policy::PolicyShape policy_shape(const config::RunConfig& cfg, std::size_t embedding_dim,
                                 std::span<const ItemIndex> index) {
  policy::PolicyShape shape;
  shape.context_dim = static_cast<int>(2 * embedding_dim);
  shape.hidden = static_cast<int>(cfg.sft.hidden);
  shape.level_sizes = cfg.index.level_sizes;
  shape.conflict_vocab = rqindex::conflict_vocab(index);
  return shape;
}

std::vector<policy::SftExample> direct_examples(const Dataset& data, std::span<const ItemIndex> index,
                                                const synthenv::FeatureConfig& features, synthenv::Split split) {
  std::vector<policy::SftExample> out;
  for (const auto& it : data.interactions) {
    if (it.split != split) continue;
    out.push_back({synthenv::context_features(it.history, data.embeddings, features), policy::Mode::kDirect,
                   index[it.target].tokens()});
  }
  return out;
}

std::vector<policy::SftExample> reasoning_examples(std::span<const policy::SftExample> direct,
                                                   const policy::PolicyShape& shape) {
  // The think segment restates the coarse codes of the answer.
  std::vector<policy::SftExample> out;
  out.reserve(direct.size());
  for (const auto& ex : direct) {
    policy::SftExample r{ex.context, policy::Mode::kReasoning, {}};
    r.tokens.assign(ex.tokens.begin(), ex.tokens.begin() + shape.think_levels());
    r.tokens.insert(r.tokens.end(), ex.tokens.begin(), ex.tokens.end());
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<policy::SftExample> item_examples(const EmbeddingMatrix& embeddings, std::span<const ItemIndex> index,
                                              const synthenv::FeatureConfig& features) {
  std::vector<policy::SftExample> out;
  out.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const std::size_t hist[] = {i};
    out.push_back({synthenv::context_features(hist, embeddings, features), policy::Mode::kDirect, index[i].tokens()});
  }
  return out;
}

std::vector<metrics::EvalCase> eval_cases(const Dataset& data, std::span<const ItemIndex> index,
                                          const synthenv::FeatureConfig& features, synthenv::Split split,
                                          std::size_t max_users) {
  std::vector<metrics::EvalCase> out;
  for (const auto& it : data.interactions) {
    if (it.split != split) continue;
    if (max_users != 0 && out.size() >= max_users) break;
    out.push_back({synthenv::context_features(it.history, data.embeddings, features), index[it.target]});
  }
  return out;
}

policy::PolicyParams train_sft(const config::RunConfig& cfg, const policy::PolicyShape& shape,
                               std::span<const policy::SftExample> align, std::span<const policy::SftExample> reason,
                               std::vector<double>* losses, curriculum::Schedule* schedule_out) {
  const auto seed = config::sft_seed(cfg);
  auto params = policy::init_params(shape, derive_seed(seed, 0));
  Rng batch_rng = make_rng(seed, 1);
  auto align_batches = make_batches(align, cfg.sft.batch_size, batch_rng);
  auto reason_batches = make_batches(reason, cfg.sft.batch_size, batch_rng);
  auto schedule = curriculum::build_schedule(align_batches.size(), reason_batches.size(), cfg.sft.gamma,
                                             cfg.sft.epochs, derive_seed(seed, 2));
  for (const auto& epoch : schedule.epochs) {
    for (const auto& tag : epoch) {
      const auto& batch =
          tag.kind == curriculum::BatchTag::Kind::kAlign ? align_batches[tag.index] : reason_batches[tag.index];
      double loss = policy::sft_step(params, batch, cfg.sft.learning_rate);
      if (losses) losses->push_back(loss);
    }
  }
  policy::snap_to_float32(params);
  if (schedule_out) *schedule_out = std::move(schedule);
  return params;
}

void sft(const config::RunConfig& cfg, const RunPaths& paths) {
  auto data = load_dataset(paths);
  auto index = load_index(paths, data.embeddings.item_count());
  const auto features = features_of(cfg);
  auto shape = policy_shape(cfg, data.embeddings.dim(), index);

  auto align = direct_examples(data, index, features, synthenv::Split::kTrain);
  if (align.empty()) throw DataError("no training interactions for SFT");
  auto reason_all = reasoning_examples(align, shape);
  if (cfg.sft.item_tasks) {
    auto items = item_examples(data.embeddings, index, features);
    align.insert(align.end(), items.begin(), items.end());
  }
  // Keep a seeded subset of the reasoning pool.
  std::vector<policy::SftExample> reason;
  Rng pick = make_rng(config::sft_seed(cfg), 3);
  for (auto& ex : reason_all)
    if (uniform01(pick) < cfg.sft.reason_fraction) reason.push_back(std::move(ex));

  std::vector<double> losses;
  curriculum::Schedule schedule;
  auto params = train_sft(cfg, shape, align, reason, &losses, &schedule);

  ensure_dir(paths.sft_dir());
  policy::save_checkpoint(paths.sft_checkpoint(), params);
  curriculum::write_schedule_json(paths.sft_dir() / "schedule.json", schedule);
  std::string log = "batch,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) log += fmt::format("{},{:.9g}\n", i, losses[i]);
  write_text(paths.sft_dir() / "sft_log.csv", log);
  write_manifest(cfg, paths);
}

void train_rl(const config::RunConfig& cfg, const RunPaths& paths) {
  auto data = load_dataset(paths);
  auto index = load_index(paths, data.embeddings.item_count());
  require_file(paths.sft_checkpoint(), "sft");
  auto initial = policy::load_checkpoint(paths.sft_checkpoint());
  auto prompts = rl_prompts(data, index, features_of(cfg));
  for (const auto& name : cfg.rl.algorithms) {
    auto rl_cfg = cfg.rl.rl;
    rl_cfg.algorithm = optimizer::algorithm_from_string(name);
    ensure_dir(paths.rl_dir(name));
    std::ofstream adv;
    if (cfg.rl.dump_advantages) {
      adv.open(paths.rl_dir(name) / "advantages.jsonl", std::ios::trunc);
      if (!adv) throw IoError("cannot open advantages log in " + paths.rl_dir(name).string());
    }
    auto result = optimizer::train_rl(initial, prompts, rl_cfg, cfg.rl.steps, config::rl_seed(cfg),
                                      cfg.rl.dump_advantages ? &adv : nullptr);
    policy::snap_to_float32(result.params);
    policy::save_checkpoint(paths.rl_checkpoint(name), result.params);
    optimizer::write_train_log(paths.rl_dir(name) / "train_log.csv", result.log);
  }
  write_manifest(cfg, paths);
}

void eval(const config::RunConfig& cfg, const RunPaths& paths) {
  auto data = load_dataset(paths);
  auto index = load_index(paths, data.embeddings.item_count());
  auto cases = eval_cases(data, index, features_of(cfg), synthenv::Split::kTest, cfg.eval_max_users);
  if (cases.empty()) throw DataError("no test interactions to evaluate");
  ensure_dir(paths.eval_dir());

  std::vector<std::pair<std::string, fs::path>> variants{{"sft", paths.sft_checkpoint()}};
  for (const auto& name : cfg.rl.algorithms) variants.emplace_back(name, paths.rl_checkpoint(name));

  std::string summary;
  for (const auto& [variant, ckpt] : variants) {
    require_file(ckpt, variant == "sft" ? "sft" : "train-rl");
    auto params = policy::load_checkpoint(ckpt);
    policy::LinearPolicy pol(params);
    auto report = metrics::evaluate(pol, cases, cfg.eval, cfg.rl.rl.reward);
    metrics::write_report(paths.eval_json(variant), paths.eval_dir() / (variant + ".csv"), report, variant);
    if (summary.empty()) summary = metrics::csv_header(report) + "\n";
    summary += metrics::csv_row(report, variant) + "\n";
  }
  write_text(paths.eval_dir() / "summary.csv", summary);
  write_manifest(cfg, paths);
}

void report(const config::RunConfig& cfg, const RunPaths& paths) {
  std::vector<std::string> variants{"sft"};
  variants.insert(variants.end(), cfg.rl.algorithms.begin(), cfg.rl.algorithms.end());

  std::ostringstream md;
  md << "# Run report\n\n";
  md << fmt::format("master seed {}, {} RL steps, G={}, eval K={}\n\n", cfg.master_seed, cfg.rl.steps, cfg.rl.rl.G,
                    fmt::join(cfg.eval.Ks, "/"));
  bool header = false;
  double sft_pass1 = 0.0;
  for (const auto& v : variants) {
    require_file(paths.eval_json(v), "eval");
    std::ifstream in(paths.eval_json(v));
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ParseError("malformed " + paths.eval_json(v).string());
    std::vector<std::string> cols;
    std::vector<std::string> cells{v};
    auto add = [&](const char* group, const char* label) {
      if (!j.contains(group)) return;
      std::map<std::size_t, double> by_k;
      for (const auto& [k, val] : j.at(group).items()) by_k[std::stoul(k)] = val.get<double>();
      for (const auto& [k, val] : by_k) {
        cols.push_back(fmt::format("{}@{}", label, k));
        cells.push_back(fmt::format("{:.4f}", val));
      }
    };
    add("recall_at", "Recall");
    add("ndcg_at", "NDCG");
    add("pass_at", "Pass");
    cols.push_back("Pass@1 vs SFT");
    double p1 = j.contains("pass_at") && j["pass_at"].contains("1") ? j["pass_at"]["1"].get<double>() : 0.0;
    if (v == "sft") sft_pass1 = p1;
    cells.push_back(v == "sft" || sft_pass1 <= 0.0 ? "-" : fmt::format("{:+.1f}%", 100.0 * (p1 / sft_pass1 - 1.0)));
    if (!header) {
      md << "| variant | " << fmt::format("{}", fmt::join(cols, " | ")) << " |\n|---|";
      for (std::size_t i = 0; i < cols.size(); ++i) md << "---:|";
      md << "\n";
      header = true;
    }
    md << "| " << fmt::format("{}", fmt::join(cells, " | ")) << " |\n";
  }
  write_text(paths.report(), md.str());
}

void run_stage(Stage stage, const config::RunConfig& cfg, const RunPaths& paths, bool force) {
  switch (stage) {
    case Stage::kGenData: gen_data(cfg, paths, force); break;
    case Stage::kFitIndex: fit_index(cfg, paths); break;
    case Stage::kSft: sft(cfg, paths); break;
    case Stage::kTrainRl: train_rl(cfg, paths); break;
    case Stage::kEval: eval(cfg, paths); break;
    case Stage::kReport: report(cfg, paths); break;
  }
}

void run_pipeline(const config::RunConfig& cfg, const RunPaths& paths, Stage from, bool force) {
  ensure_dir(paths.root);
  std::error_code ec;
  fs::remove(paths.failed_marker(), ec);
  for (Stage s : {Stage::kGenData, Stage::kFitIndex, Stage::kSft, Stage::kTrainRl, Stage::kEval, Stage::kReport}) {
    if (s < from) continue;
    try {
      run_stage(s, cfg, paths, force);
    } catch (const std::exception& e) {
      const auto* err = dynamic_cast<const Error*>(&e);
      StageError tagged(s, e.what(), err ? err->exit_code() : ExitCode::kIo);
      std::ofstream marker(paths.failed_marker(), std::ios::trunc);
      marker << tagged.what() << '\n';
      throw tagged;
    }
  }
}

std::string git_blob_sha1(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::string header = "blob " + std::to_string(content.size());
  header.push_back('\0');

  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
            EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
            EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 && EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw IoError("SHA-1 failed for " + path.string());
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

void write_manifest(const config::RunConfig& cfg, const RunPaths& paths) {
  json m;
  m["manifest_version"] = kManifestVersion;
  m["config"] = config::to_json(cfg);
  m["seeds"] = {{"master", cfg.master_seed},          {"data", config::data_seed(cfg)},
                {"index", config::index_seed(cfg)},   {"sft", config::sft_seed(cfg)},
                {"rl", config::rl_seed(cfg)},         {"eval", config::eval_seed(cfg)}};
  m["formats"] = {{"embeddings", "GREM v1"}, {"checkpoint", "GRPM v1"}, {"index", "json item_id -> codes"},
                  {"interactions", "jsonl {user, items}"}};
  json inputs = json::object();
  for (const auto& p : {paths.embeddings(), paths.interactions()})
    if (fs::exists(p)) inputs[fs::relative(p, paths.root).generic_string()] = git_blob_sha1(p);
  if (cfg.env.source == "jsonl") {
    for (const auto& p : {fs::path(cfg.env.jsonl_path), fs::path(cfg.env.embeddings_path)})
      if (fs::exists(p)) inputs[p.generic_string()] = git_blob_sha1(p);
  }
  m["inputs"] = inputs;
  ensure_dir(paths.root);
  write_text(paths.manifest(), m.dump(2) + "\n");
}

}  // namespace gream::pipeline
