#pragma once

#include "gream/config.hpp"
#include "gream/curriculum.hpp"
#include "gream/error.hpp"
#include "gream/metrics.hpp"
#include "gream/synthenv.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace gream::pipeline {

enum class Stage { kGenData, kFitIndex, kSft, kTrainRl, kEval, kReport };

const char* to_string(Stage s);
Stage stage_from_string(const std::string& name);

/// File layout of a run directory.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path embeddings() const { return data() / "catalog.grem"; }
  std::filesystem::path catalog_json() const { return data() / "catalog.json"; }
  std::filesystem::path interactions() const { return data() / "interactions.jsonl"; }
  std::filesystem::path index_dir() const { return root / "index"; }
  std::filesystem::path index() const { return index_dir() / "index.json"; }
  std::filesystem::path codebooks() const { return index_dir() / "codebooks.json"; }
  std::filesystem::path collisions() const { return index_dir() / "collisions.json"; }
  std::filesystem::path sft_dir() const { return root / "sft"; }
  std::filesystem::path sft_checkpoint() const { return sft_dir() / "policy.grpm"; }
  std::filesystem::path rl_dir(const std::string& algo) const { return root / "rl" / algo; }
  std::filesystem::path rl_checkpoint(const std::string& algo) const { return rl_dir(algo) / "policy.grpm"; }
  std::filesystem::path eval_dir() const { return root / "eval"; }
  std::filesystem::path eval_json(const std::string& variant) const { return eval_dir() / (variant + ".json"); }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path report() const { return root / "report.md"; }
  std::filesystem::path failed_marker() const { return root / "FAILED"; }
};

/// Loaded data shared by the later stages.
struct Dataset {
  EmbeddingMatrix embeddings;
  std::vector<synthenv::UserSequence> sequences;
  std::vector<synthenv::Interaction> interactions;
};

Dataset load_dataset(const RunPaths& paths);

/// Writes the catalog and interactions. Refuses to overwrite existing data
/// unless `force` is set.
void gen_data(const config::RunConfig& cfg, const RunPaths& paths, bool force);
void fit_index(const config::RunConfig& cfg, const RunPaths& paths);
void sft(const config::RunConfig& cfg, const RunPaths& paths);
void train_rl(const config::RunConfig& cfg, const RunPaths& paths);
/// Evaluates the SFT checkpoint ("sft") and every configured RL checkpoint.
void eval(const config::RunConfig& cfg, const RunPaths& paths);
void report(const config::RunConfig& cfg, const RunPaths& paths);

void run_stage(Stage stage, const config::RunConfig& cfg, const RunPaths& paths, bool force);

/// A stage failure; keeps the exit code of the underlying error.
class StageError : public Error {
 public:
  StageError(Stage stage, const std::string& what, ExitCode code)
      : Error(std::string(to_string(stage)) + ": " + what), stage_(stage), code_(code) {}
  Stage stage() const { return stage_; }
  ExitCode exit_code() const override { return code_; }

 private:
  Stage stage_;
  ExitCode code_;
};

/// Runs every stage from `from` onward. On failure writes the FAILED marker,
/// keeps partial artifacts, and throws StageError.
void run_pipeline(const config::RunConfig& cfg, const RunPaths& paths, Stage from, bool force);

/// Config copy, seeds, format versions, and git-style SHA-1 of the data files.
void write_manifest(const config::RunConfig& cfg, const RunPaths& paths);

/// "blob <size>\0<content>" SHA-1, hex encoded.
std::string git_blob_sha1(const std::filesystem::path& path);

/// Building blocks exposed for tests and the acceptance harness.
std::vector<policy::SftExample> direct_examples(const Dataset& data, std::span<const ItemIndex> index,
                                                const synthenv::FeatureConfig& features, synthenv::Split split);
std::vector<policy::SftExample> reasoning_examples(std::span<const policy::SftExample> direct,
                                                   const policy::PolicyShape& shape);
std::vector<policy::SftExample> item_examples(const EmbeddingMatrix& embeddings, std::span<const ItemIndex> index,
                                              const synthenv::FeatureConfig& features);
std::vector<metrics::EvalCase> eval_cases(const Dataset& data, std::span<const ItemIndex> index,
                                          const synthenv::FeatureConfig& features, synthenv::Split split,
                                          std::size_t max_users);

/// Curriculum SFT from a fresh initialization.
policy::PolicyParams train_sft(const config::RunConfig& cfg, const policy::PolicyShape& shape,
                               std::span<const policy::SftExample> align, std::span<const policy::SftExample> reason,
                               std::vector<double>* losses = nullptr, curriculum::Schedule* schedule_out = nullptr);

policy::PolicyShape policy_shape(const config::RunConfig& cfg, std::size_t embedding_dim,
                                 std::span<const ItemIndex> index);

}  // namespace gream::pipeline
