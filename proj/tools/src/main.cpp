// phonolens: command-line driver for the phonetic interpretability pipeline.

#include <cstdio>
#include <iostream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "commands.hpp"
#include "phonolens/error.hpp"

namespace {

using namespace phonolens;
using namespace phonolens::cli;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage:
    case ErrorKind::spec:
      return kExitUsage;
    case ErrorKind::gated_resource:
      return kExitGated;
    default:
      return kExitInvariant;
  }
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("phonolens"));
  spdlog::set_pattern("[%l] %v");

  CLI::App app{"Token-level phonetic representations in causal language models"};
  app.set_version_flag("--version", std::string(version()));
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions global;
  app.add_option("--config", global.config, "YAML run configuration")->check(CLI::ExistingFile);
  app.add_option("--model", global.model_id, "Model id: tiny, tiny-random, tiny-vowel or a reference id");
  app.add_option("--model-dir", global.model_dir, "Hugging Face style weight directory");
  app.add_option("--lexicon", global.lexicon, "WikiPron TSV");
  app.add_option("--inventory", global.inventory, "Phoneme inventory JSON");
  app.add_option("--cache-dir", global.cache_dir, "Artifact cache (PHONOLENS_CACHE overrides)");
  app.add_option("--seed", global.seed, "Seed for every stochastic step");
  app.add_flag("--no-color", global.no_color, "Plain text output");
  app.add_flag("-v,--verbose", global.verbose, "Log progress to stderr");

  Action selected;
  add_lexicon_commands(app, selected);
  add_probe_commands(app, selected);
  add_intervene_command(app, selected);
  add_patch_commands(app, selected);
  add_head_commands(app, selected);
  add_geometry_commands(app, selected);
  add_pipeline_commands(app, selected);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kExitUsage;
  }

  try {
    Context ctx(global);
    return selected(ctx);
  } catch (const Error& e) {
    std::cerr << "phonolens: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "phonolens: " << e.what() << '\n';
    return kExitInvariant;
  }
}
