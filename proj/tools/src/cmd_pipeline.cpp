#include <cstdio>
#include <fstream>

#include "commands.hpp"
#include "phonolens/error.hpp"
#include "phonolens/reproduce.hpp"
#include "phonolens/selftest.hpp"

namespace phonolens::cli {

using nlohmann::json;

namespace {

void print_check(const CheckResult& r) {
  const char* tag = r.skipped ? "SKIP" : r.passed ? "PASS" : "FAIL";
  std::printf("%s  %s%s%s\n", tag, r.name.c_str(), r.detail.empty() ? "" : "  -- ", r.detail.c_str());
  std::fflush(stdout);
}

json check_json(const CheckResult& r) {
  return {{"name", r.name}, {"passed", r.passed}, {"skipped", r.skipped}, {"detail", r.detail}};
}

}  // namespace

void add_pipeline_commands(CLI::App& app, Action& selected) {
  auto json_out = std::make_shared<std::string>();
  auto* self = app.add_subcommand("selftest", "Run the tiny-model invariant suite (no weights, no network)");
  self->add_option("--json", *json_out, "Also write the results as JSON");
  self->callback([&selected, json_out] {
    selected = [json_out](Context&) {
      const auto results = run_selftest(print_check);
      std::size_t failed = 0;
      json all = json::array();
      for (const auto& r : results) {
        failed += !r.passed;
        all.push_back(check_json(r));
      }
      std::printf("%zu/%zu checks passed\n", results.size() - failed, results.size());
      if (!json_out->empty()) write_text_atomic(*json_out, all.dump(2) + "\n");
      return failed == 0 ? kExitOk : kExitInvariant;
    };
  });

  struct ReproOpts {
    std::string stage = "all";
    std::string survey_words;
  };
  auto o = std::make_shared<ReproOpts>();
  auto* repro = app.add_subcommand("reproduce", "Run the reference-weight pipeline and compare with the reference targets");
  repro->add_option("--stage", o->stage, "all, probe, intervene, patch, head or geometry")
      ->check(CLI::IsMember({"all", "probe", "intervene", "patch", "head", "geometry"}))
      ->capture_default_str();
  repro->add_option("--survey-words", o->survey_words, "Oxford 5000 style word list for the survey")
      ->check(CLI::ExistingFile);
  repro->callback([&selected, o] {
    selected = [o](Context& ctx) {
      const auto& cfg = ctx.config();
      if (!cfg.model_path) fail(ErrorKind::gated_resource, "reproduce needs reference weights (--model-dir or model.path)");
      if (!cfg.lexicon) fail(ErrorKind::gated_resource, "reproduce needs a WikiPron lexicon (--lexicon or lexicon:)");
      ReferenceInputs in;
      in.model_dir = *cfg.model_path;
      in.lexicon = *cfg.lexicon;
      if (!o->survey_words.empty()) in.survey_words = o->survey_words;
      else if (cfg.head.words) in.survey_words = *cfg.head.words;
      in.cache_dir = ctx.cache_dir() / "vectors";
      in.seed = cfg.seed;
      ReferenceRun run(in, cfg.probe);

      const auto want = [&](const char* s) { return o->stage == "all" || o->stage == s; };
      std::vector<CheckResult> results;
      auto record = [&](CheckResult r) {
        print_check(r);
        results.push_back(std::move(r));
      };
      if (want("probe")) record(run.check_probe());
      if (want("intervene")) {
        InterventionSpec spec{"leet", "i", "ɛ", parse_c_grid(cfg.intervene.c_grid), cfg.intervene.n_tokens};
        std::printf("%s", render_sweep(run.run_intervention(spec), run.lexicon(), spec.xi, spec.mu, ctx.ansi()).c_str());
      }
      if (want("patch")) record(run.check_patching());
      if (want("head")) {
        record(run.check_triplet());
        record(run.check_survey());
      }
      if (want("geometry")) record(run.check_geometry());

      json checks = json::array();
      for (const auto& r : results) checks.push_back(check_json(r));
      const json params{{"stage", o->stage}, {"survey_words", o->survey_words}};
      const auto a = ctx.artifact("reproduce", params, [&](const Artifact&) {
        return json{{"checks", checks}, {"stages", run.artifacts}};
      });
      report_artifact(a);
      for (const auto& r : results) {
        if (!r.passed && !r.skipped) return kExitInvariant;
      }
      return kExitOk;
    };
  });
}

}  // namespace phonolens::cli
