#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <sstream>

#include "thinlayer/cli_io.hpp"
#include "thinlayer/error.hpp"

using namespace thinlayer;

namespace {

enum Exit { kOk = 0, kValidation = 1, kSolver = 2, kAcceptance = 3 };

std::set<Stage> parse_stage_list(const std::string& text) {
  std::set<Stage> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "all")
      out.insert(all_stages().begin(), all_stages().end());
    else if (!item.empty())
      out.insert(parse_stage(item));
  }
  return out;
}

int env_int(const char* name, int fallback) {
  const char* v = std::getenv(name);
  if (!v || !*v) return fallback;
  try {
    return std::stoi(v);
  } catch (...) {
    return fallback;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Effective Darcy and transport models for thin perforated layers, with micro-scale verification"};
  app.fallthrough();
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string stages_text;
  int threads = 0;
  bool no_cache = false;
  app.add_option("--config", config_path, "TOML run configuration")->required()->check(CLI::ExistingFile);
  app.add_option("--out-dir", out_dir, "Output directory (default: output.dir from the config)");
  app.add_option("--stages", stages_text, "Comma-separated stages to run (all subcommand only)");
  app.add_option("--threads", threads, "Worker threads (env THINLAYER_THREADS, else solver.threads)");
  app.add_flag("--no-cache", no_cache, "Recompute every stage");

  std::vector<std::pair<std::string, CLI::App*>> subs;
  for (Stage s : all_stages()) subs.emplace_back(to_string(s), app.add_subcommand(to_string(s), "Run the " + to_string(s) + " stage"));
  subs.emplace_back("all", app.add_subcommand("all", "Run every stage (or those given by --stages)"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kValidation;
  }

  try {
    const RunConfig cfg = load_config(config_path);
    std::set<Stage> stages;
    for (const auto& [name, sub] : subs) {
      if (!sub->parsed()) continue;
      if (name == "all")
        stages = stages_text.empty() ? std::set<Stage>(all_stages().begin(), all_stages().end()) : parse_stage_list(stages_text);
      else
        stages.insert(parse_stage(name));
    }
    PipelineOptions opts;
    opts.out_dir = out_dir.empty() ? cfg.output.dir : out_dir;
    opts.threads = threads > 0 ? threads : env_int("THINLAYER_THREADS", cfg.solver.threads);
    if (const char* dir = std::getenv("THINLAYER_CACHE_DIR"); dir && *dir) opts.cache_dir = dir;
    opts.use_cache = !no_cache;

    const RunManifest man = run_pipeline(cfg, stages, opts);
    for (const auto& r : man.stages) {
      std::cout << to_string(r.stage) << ": " << r.status << (r.cache_hit ? " (cached)" : "");
      if (r.status == "ok") std::cout << " " << r.seconds << " s";
      if (!r.error.empty()) std::cout << " - " << r.error;
      std::cout << "\n";
    }
    std::cout << "manifest: " << (opts.out_dir / "manifest.json").string() << "\n";
    if (man.solver_failure) return kSolver;
    if (!man.acceptance_pass) return kAcceptance;
    return kOk;
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    if (e.code() == ErrorCode::ValidationError || e.code() == ErrorCode::ParseError) return kValidation;
    return kSolver;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kSolver;
  }
}
