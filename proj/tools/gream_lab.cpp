// gream-lab: data generation, index fitting, SFT, RL, evaluation, and reports
// for generative recommendation over semantic item indices.

#include "gream/config.hpp"
#include "gream/error.hpp"
#include "gream/pipeline.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <chrono>
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

namespace {

using gream::ExitCode;
namespace pipeline = gream::pipeline;

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string run_dir;
  std::string stage = "gen-data";
  bool force = false;
  bool print_config = false;
};

int code(ExitCode c) { return static_cast<int>(c); }

int run(const std::string& command, const Options& opt) {
  auto cfg = gream::config::load(opt.config_path, opt.overrides);
  if (opt.print_config) {
    fmt::print("{}\n", gream::config::to_json(cfg).dump(2));
    return 0;
  }
  pipeline::RunPaths paths{opt.run_dir.empty() ? cfg.output_dir : opt.run_dir};
  const auto start = std::chrono::steady_clock::now();
  if (command == "pipeline") {
    pipeline::run_pipeline(cfg, paths, pipeline::stage_from_string(opt.stage), opt.force);
  } else {
    pipeline::run_stage(pipeline::stage_from_string(command), cfg, paths, opt.force);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  fmt::print(stderr, "{} finished in {:.1f}s ({})\n", command, secs, paths.root.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gream-lab: semantic-index recommendation with reinforced reasoning"};
  app.require_subcommand(1);

  Options opt;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen-data", "Write the item catalog and user interactions"},
      {"fit-index", "Fit residual k-means codebooks and encode every item"},
      {"sft", "Curriculum supervised fine-tuning"},
      {"train-rl", "RL from the SFT checkpoint for each configured algorithm"},
      {"eval", "Evaluate SFT and RL checkpoints on the test split"},
      {"report", "Write the markdown comparison table"},
      {"pipeline", "Run every stage in order"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", opt.config_path, "JSON config file (defaults when omitted)");
    sub->add_option("-s,--set", opt.overrides, "Override a config key, e.g. --set rl.steps=200")->take_all();
    sub->add_option("-o,--run-dir", opt.run_dir, "Run directory (default: output_dir from the config)");
    sub->add_flag("--force", opt.force, "Overwrite existing data");
    sub->add_flag("--print-config", opt.print_config, "Print the merged config and exit");
    if (name == "pipeline")
      sub->add_option("--stage", opt.stage, "First stage to run")
          ->check(CLI::IsMember({"gen-data", "fit-index", "sft", "train-rl", "eval", "report"}));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : code(ExitCode::kConfig);
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, opt);
  } catch (const gream::Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return code(e.exit_code());
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return code(ExitCode::kIo);
  }
}
