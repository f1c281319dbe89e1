#pragma once

#include <functional>
#include <memory>

#include <CLI11.hpp>

#include "context.hpp"

namespace phonolens::cli {

// Exit codes of the tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInvariant = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitGated = 3;

// The subcommand selected on the command line; runs once the global flags
// have been turned into a Context.
using Action = std::function<int(Context&)>;

void add_lexicon_commands(CLI::App& app, Action& selected);
void add_probe_commands(CLI::App& app, Action& selected);
void add_intervene_command(CLI::App& app, Action& selected);
void add_patch_commands(CLI::App& app, Action& selected);
void add_head_commands(CLI::App& app, Action& selected);
void add_geometry_commands(CLI::App& app, Action& selected);
void add_pipeline_commands(CLI::App& app, Action& selected);  // reproduce, selftest

// Prints where an artifact lives and whether it was reused.
void report_artifact(const Artifact& a);

}  // namespace phonolens::cli
