#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "commands.hpp"
#include "phonolens/digest.hpp"
#include "phonolens/error.hpp"
#include "phonolens/interventions.hpp"
#include "phonolens/patching.hpp"
#include "phonolens/synthetic.hpp"

namespace phonolens::cli {

using nlohmann::json;

void add_intervene_command(CLI::App& app, Action& selected) {
  struct Opts {
    std::string word, xi, mu, c_grid, probe;
    std::optional<int> n_tokens;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("intervene", "Shift a word's embedding from one vowel vector to another");
  cmd->add_option("--word", o->word, "Target word (single token, one vowel)")->required();
  cmd->add_option("--xi", o->xi, "Vowel present in the word")->required();
  cmd->add_option("--mu", o->mu, "Vowel to move towards")->required();
  cmd->add_option("--c-grid", o->c_grid, "start:stop:step or comma list (config intervene.c_grid)");
  cmd->add_option("--n-tokens", o->n_tokens, "Continuation length (config intervene.n_tokens)");
  cmd->add_option("--probe", o->probe, "Probe JSON (the cached probe when omitted)")->check(CLI::ExistingFile);
  cmd->callback([&selected, o] {
    selected = [o](Context& ctx) {
      if (!o->c_grid.empty()) ctx.config().intervene.c_grid = o->c_grid;
      if (o->n_tokens) ctx.config().intervene.n_tokens = *o->n_tokens;
      InterventionSpec spec{o->word, nfc(o->xi), nfc(o->mu), parse_c_grid(ctx.config().intervene.c_grid),
                            ctx.config().intervene.n_tokens};
      spec.validate(ctx.lexicon());
      const auto probe = ctx.resolved_probe(o->probe);
      const json params{{"word", spec.word}, {"xi", spec.xi}, {"mu", spec.mu}, {"c_grid", spec.c_grid},
                        {"n_tokens", spec.n_continuation_tokens}, {"probe", probe.identity}};
      const auto a = ctx.artifact("intervene", params, [&](const Artifact& art) {
        const auto rows = intervene(ctx.model(), probe.probe, spec, ctx.lexicon());
        std::string lines;
        json out = json::array();
        for (const auto& r : rows) {
          out.push_back(r.to_json());
          lines += canonical_json(r.to_json()) + "\n";
        }
        write_text_atomic(art.sibling(".jsonl"), lines);
        const auto curve = transition_curve(rows);
        return json{{"rows", out},
                    {"c_switch", curve.c_switch ? json(*curve.c_switch) : json(nullptr)},
                    {"third_party_cs", curve.third_party_cs},
                    {"render_plain", render_sweep(rows, ctx.lexicon(), spec.xi, spec.mu, false)},
                    {"render_ansi", render_sweep(rows, ctx.lexicon(), spec.xi, spec.mu, true)}};
      });
      std::cout << a.body.at(ctx.ansi() ? "render_ansi" : "render_plain").get<std::string>();
      const auto& cs = a.body.at("c_switch");
      emit(cs.is_null() ? std::string("no switch to /" + spec.mu + "/ within the grid")
                        : "switch to /" + spec.mu + "/ from c = " + cs.dump());
      if (!a.body.at("third_party_cs").empty()) emit("third-party vowels at c = " + a.body.at("third_party_cs").dump());
      emit("rows: " + a.sibling(".jsonl").string());
      report_artifact(a);
      return kExitOk;
    };
  });
}

void add_patch_commands(CLI::App& app, Action& selected) {
  auto* patch = app.add_subcommand("patch", "Activation patching over heads and MLPs");
  patch->require_subcommand(1);

  struct Opts {
    std::string pairs, mode;
    std::size_t top = 5;
    bool self_patch = false;
  };
  auto o = std::make_shared<Opts>();
  auto* scan = patch->add_subcommand("scan", "Mean normalized logit difference for every component");
  scan->add_option("--pairs", o->pairs, "JSON list of [clean, corrupt] word pairs")->check(CLI::ExistingFile);
  scan->add_option("--mode", o->mode, "final or all positions (config patch.mode)")
      ->check(CLI::IsMember({"final", "all"}));
  scan->add_option("--top", o->top, "Components to list")->capture_default_str();
  scan->add_flag("--self", o->self_patch, "Patch corrupt activations into the corrupt run (control)");
  scan->callback([&selected, o] {
    selected = [o](Context& ctx) {
      if (!o->mode.empty()) ctx.config().patch.mode = o->mode;
      if (!o->pairs.empty()) ctx.config().patch.pairs = o->pairs;
      std::vector<WordPair> words;
      std::string source;
      if (ctx.config().patch.pairs) {
        words = load_word_pairs(*ctx.config().patch.pairs);
        source = "sha256:" + file_sha256(*ctx.config().patch.pairs);
      } else if (ctx.is_synthetic()) {
        words = load_word_pairs(data_dir() / "tiny_pairs.json");
        source = "tiny-pairs";
      } else {
        words = default_word_pairs();
        source = "default-pairs";
      }
      const PositionMode mode = parse_position_mode(ctx.config().patch.mode);
      const json params{{"pairs", source}, {"mode", std::string(to_string(mode))}, {"self", o->self_patch}};
      const auto a = ctx.artifact("patch-scan", params, [&](const Artifact& art) {
        const auto built = build_pairs(ctx.model(), words, ctx.lexicon());
        auto grid = patch_scan(ctx.model(), built.pairs, mode,
                               o->self_patch ? PatchSource::corrupt : PatchSource::clean);
        grid.skipped.insert(grid.skipped.begin(), built.rejected.begin(), built.rejected.end());
        write_text_atomic(art.sibling(".svg"), heatmap_svg(grid, ctx.model().id() + " patching (" +
                                                                     std::string(to_string(mode)) + ")"));
        json top = json::array();
        for (const auto& c : top_components(grid, 10)) top.push_back({{"component", c.label()}, {"score", c.score}});
        return json{{"grid", grid.to_json()}, {"top", top}};
      });
      const auto& grid = a.body.at("grid");
      std::size_t shown = 0;
      for (const auto& c : a.body.at("top")) {
        if (shown++ == o->top) break;
        std::printf("%-8s %+.4f\n", c.at("component").get<std::string>().c_str(), c.at("score").get<double>());
      }
      emit("pairs used: " + std::to_string(grid.at("pair_count").get<std::size_t>()));
      for (const auto& s : grid.at("skipped")) emit("skipped " + s.get<std::string>());
      emit("heatmap: " + a.sibling(".svg").string());
      report_artifact(a);
      return kExitOk;
    };
  });
}

}  // namespace phonolens::cli
