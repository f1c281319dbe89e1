#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "commands.hpp"
#include "phonolens/digest.hpp"
#include "phonolens/error.hpp"

namespace phonolens::cli {

using nlohmann::json;

namespace {

std::string metrics_line(const char* label, const json& m) {
  double f1 = 0;
  int n = 0;
  for (const auto& [sym, v] : m.at("per_phoneme_f1").items()) {
    f1 += v.get<double>();
    ++n;
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-9s n=%-6zu exact-match %.4f  mean F1 %.4f", label,
                m.at("n").get<std::size_t>(), m.at("exact_match").get<double>(), n ? f1 / n : 0.0);
  return buf;
}

}  // namespace

void report_artifact(const Artifact& a) {
  emit("artifact: " + a.path.string() + (a.cache_hit ? " (cache hit)" : ""));
}

void add_lexicon_commands(CLI::App& app, Action& selected) {
  auto* lex = app.add_subcommand("lexicon", "Inspect the pronunciation lexicon and phoneme inventory");
  lex->require_subcommand(1);

  auto* stats = lex->add_subcommand("stats", "Word counts, skipped rows and vowel distribution");
  stats->callback([&selected] {
    selected = [](Context& ctx) {
      const auto a = ctx.artifact("lexicon-stats", json::object(), [&](const Artifact&) {
        const auto& lexicon = ctx.lexicon();
        const auto& inv = lexicon.inventory();
        std::map<std::string, std::size_t> vowel_words;
        std::size_t single_vowel = 0;
        for (const auto& w : lexicon.words()) {
          const auto vowels = distinct_vowels(lexicon.first(w), inv);
          single_vowel += vowels.size() == 1;
          for (const auto& v : vowels) ++vowel_words[v];
        }
        return json{{"words", lexicon.size()},
                    {"skipped_rows", lexicon.skipped_rows()},
                    {"single_vowel_words", single_vowel},
                    {"words_per_vowel", vowel_words},
                    {"inventory", {{"version", inv.version()}, {"hash", inv.hash()}, {"size", inv.size()}}}};
      });
      const auto& b = a.body;
      emit("words               " + std::to_string(b.at("words").get<std::size_t>()));
      emit("skipped rows        " + std::to_string(b.at("skipped_rows").get<std::size_t>()));
      emit("single-vowel words  " + std::to_string(b.at("single_vowel_words").get<std::size_t>()));
      emit("inventory           " + b.at("inventory").at("version").get<std::string>() + " " +
           b.at("inventory").at("hash").get<std::string>().substr(0, 12));
      for (const auto& [v, n] : b.at("words_per_vowel").items()) emit("  /" + v + "/  " + std::to_string(n.get<std::size_t>()));
      report_artifact(a);
      return kExitOk;
    };
  });

  auto tsv = std::make_shared<std::string>();
  auto top = std::make_shared<std::size_t>(kInventorySize);
  auto* segs = lex->add_subcommand("segments", "Most frequent normalized segments of a WikiPron TSV");
  segs->add_option("--tsv", *tsv, "WikiPron TSV")->required()->check(CLI::ExistingFile);
  segs->add_option("-n", *top, "Number of segments to list")->capture_default_str();
  segs->callback([&selected, tsv, top] {
    selected = [tsv, top](Context& ctx) {
      const auto freqs = segment_frequencies(*tsv);
      const auto& inv = *ctx.inventory();
      std::size_t shown = 0;
      for (const auto& [seg, n] : freqs) {
        if (shown++ == *top) break;
        std::printf("%-6s %8zu%s\n", seg.c_str(), n, inv.contains(seg) ? "" : "  (not in inventory)");
      }
      return kExitOk;
    };
  });

  auto out = std::make_shared<std::string>();
  auto* invc = lex->add_subcommand("inventory", "Write the phoneme inventory as JSON");
  invc->add_option("-o,--out", *out, "Output path (stdout when omitted)");
  invc->callback([&selected, out] {
    selected = [out](Context& ctx) {
      const auto inv = ctx.inventory();
      if (out->empty()) {
        std::cout << inv->to_json_string();
      } else {
        inv->save(*out);
        emit("wrote " + *out + " (" + inv->hash().substr(0, 12) + ")");
      }
      return kExitOk;
    };
  });
}

void add_probe_commands(CLI::App& app, Action& selected) {
  auto* probe = app.add_subcommand("probe", "Multi-hot phoneme probe on token embeddings");
  probe->require_subcommand(1);

  struct TrainOpts {
    std::optional<int> epochs;
    std::optional<double> lr, l2, threshold;
    std::optional<std::size_t> min_words;
  };
  auto topts = std::make_shared<TrainOpts>();
  auto add_training_flags = [](CLI::App* c, TrainOpts& o) {
    c->add_option("--epochs", o.epochs, "Adam epochs");
    c->add_option("--lr", o.lr, "Learning rate");
    c->add_option("--l2", o.l2, "L2 penalty on the weights");
    c->add_option("--threshold", o.threshold, "Decision threshold on the sigmoid");
    c->add_option("--min-words", o.min_words, "Minimum single-token lexicon words");
  };
  auto apply = [](Context& ctx, const TrainOpts& o) {
    auto& p = ctx.config().probe;
    if (o.epochs) p.epochs = *o.epochs;
    if (o.lr) p.learning_rate = *o.lr;
    if (o.l2) p.l2 = *o.l2;
    if (o.threshold) p.threshold = *o.threshold;
  };

  auto* train = probe->add_subcommand("train", "Train the probe and report train/test metrics");
  add_training_flags(train, *topts);
  train->callback([&selected, topts, apply] {
    selected = [topts, apply](Context& ctx) {
      apply(ctx, *topts);
      const auto a = ctx.probe_artifact(topts->min_words);
      emit(metrics_line("train", a.body.at("train")));
      emit(metrics_line("test", a.body.at("test")));
      emit("probe: " + a.sibling(".probe.json").string());
      report_artifact(a);
      return kExitOk;
    };
  });

  auto bopts = std::make_shared<TrainOpts>();
  auto* base = probe->add_subcommand("baseline", "Retrain on random embeddings with matched moments");
  add_training_flags(base, *bopts);
  base->callback([&selected, bopts, apply] {
    selected = [bopts, apply](Context& ctx) {
      apply(ctx, *bopts);
      const std::size_t min_words = bopts->min_words.value_or(ctx.default_min_words());
      const json params{{"probe", ctx.config().probe.to_json()}, {"min_words", min_words}};
      const auto a = ctx.artifact("probe-baseline", params, [&](const Artifact&) {
        const auto dataset = build_dataset(ctx.model(), ctx.lexicon(), ctx.seed(), min_words);
        const auto m = random_embedding_baseline(dataset, ctx.seed() + 1, ctx.config().probe);
        const auto& inv = ctx.lexicon().inventory();
        return json{{"train", m.train.to_json(inv)}, {"test", m.test.to_json(inv)}};
      });
      emit(metrics_line("train", a.body.at("train")));
      emit(metrics_line("test", a.body.at("test")));
      report_artifact(a);
      return kExitOk;
    };
  });

  struct EvalOpts {
    std::string probe;
    std::string split = "test";
    std::optional<double> threshold;
    std::optional<std::size_t> min_words;
  };
  auto eopts = std::make_shared<EvalOpts>();
  auto* eval = probe->add_subcommand("eval", "Evaluate a saved probe");
  eval->add_option("--probe", eopts->probe, "Probe JSON (the cached probe when omitted)")->check(CLI::ExistingFile);
  eval->add_option("--split", eopts->split, "train or test")->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  eval->add_option("--threshold", eopts->threshold, "Decision threshold (the probe's own when omitted)");
  eval->add_option("--min-words", eopts->min_words, "Minimum single-token lexicon words");
  eval->callback([&selected, eopts] {
    selected = [eopts](Context& ctx) {
      std::filesystem::path path = eopts->probe;
      if (path.empty()) path = ctx.probe_artifact(eopts->min_words).sibling(".probe.json");
      const auto probe = ProbeMatrix::load(path);
      const double threshold = eopts->threshold.value_or(probe.config.threshold);
      const std::size_t min_words = eopts->min_words.value_or(ctx.default_min_words());
      const json params{{"probe_sha256", file_sha256(path)}, {"split", eopts->split},
                        {"threshold", threshold}, {"min_words", min_words}};
      const auto a = ctx.artifact("probe-eval", params, [&](const Artifact&) {
        require(probe.inventory_hash == ctx.lexicon().inventory().hash(), ErrorKind::argument,
                "probe was trained against a different inventory");
        const auto dataset = build_dataset(ctx.model(), ctx.lexicon(), probe.split_seed, min_words);
        const Split split = eopts->split == "train" ? Split::train : Split::test;
        return json{{"metrics", evaluate_probe(probe, dataset, split, threshold).to_json(ctx.lexicon().inventory())}};
      });
      emit(metrics_line(eopts->split.c_str(), a.body.at("metrics")));
      report_artifact(a);
      return kExitOk;
    };
  });
}

}  // namespace phonolens::cli
