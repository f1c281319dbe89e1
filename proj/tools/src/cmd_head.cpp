#include <cstdio>
#include <iostream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "commands.hpp"
#include "phonolens/digest.hpp"
#include "phonolens/error.hpp"
#include "phonolens/head_analysis.hpp"

namespace phonolens::cli {

using nlohmann::json;

namespace {

struct HeadFlags {
  std::optional<int> layer;
  std::optional<int> head;

  void add(CLI::App* c) {
    c->add_option("--layer", layer, "Layer of the head (config head.layer)");
    c->add_option("--head", head, "Head index (config head.head)");
  }
  HeadId resolve(Context& ctx) const {
    if (layer.has_value() != head.has_value()) {
      if (layer) return ctx.head_or_default(HeadId{*layer, ctx.config().head.head.second});
      return ctx.head_or_default(HeadId{ctx.config().head.head.first, *head});
    }
    return ctx.head_or_default(layer ? std::optional<HeadId>(HeadId{*layer, *head}) : std::nullopt);
  }
};

json head_json(HeadId h) { return json{{"layer", h.first}, {"head", h.second}, {"label", head_label(h)}}; }

}  // namespace

void add_head_commands(CLI::App& app, Action& selected) {
  auto* head = app.add_subcommand("head", "Per-head decoding, survey, z sparsity and ablation");
  head->require_subcommand(1);

  // decode ---------------------------------------------------------------
  struct DecodeOpts {
    std::string word;
    std::optional<int> k;
    HeadFlags hf;
  };
  auto d = std::make_shared<DecodeOpts>();
  auto* decode = head->add_subcommand("decode", "Logit-lens decode of a head's result vector for one word");
  decode->add_option("--word", d->word, "Target word")->required();
  decode->add_option("-k", d->k, "Tokens to list (config head.k)");
  d->hf.add(decode);
  decode->callback([&selected, d] {
    selected = [d](Context& ctx) {
      const HeadId h = d->hf.resolve(ctx);
      const int k = d->k.value_or(ctx.config().head.k);
      const json params{{"word", d->word}, {"head", head_json(h)}, {"k", k}};
      const auto a = ctx.artifact("head-decode", params, [&](const Artifact&) {
        const auto decoded = decode_head_for_word(ctx.model(), d->word, h, std::max(k, kCoherenceWindow * 4), ctx.lexicon());
        json body = decoded.to_json();
        body["k"] = k;
        body["task_pass"] = task_pass(ctx.model(), d->word, ctx.lexicon());
        return body;
      });
      emit(head_label(h) + " result vector for '" + d->word + "':");
      int shown = 0;
      for (const auto& t : a.body.at("top")) {
        if (shown++ == k) break;
        std::printf("  %2d  %-16s %8.3f\n", shown, json(t.at("text")).dump().c_str(), t.at("score").get<double>());
      }
      const auto& coh = a.body.at("coherent");
      emit(std::string("coherent: ") + (coh.is_null() ? "not judgeable" : coh.get<bool>() ? "yes" : "no") +
           "   task pass: " + (a.body.at("task_pass").get<bool>() ? "yes" : "no"));
      report_artifact(a);
      return kExitOk;
    };
  });

  // survey ---------------------------------------------------------------
  struct SurveyOpts {
    std::string words;
    std::optional<std::size_t> n;
    HeadFlags hf;
  };
  auto s = std::make_shared<SurveyOpts>();
  auto* surv = head->add_subcommand("survey", "Coherence x task-pass table over sampled words");
  surv->add_option("--words", s->words, "Word list, one per line (config head.words)")->check(CLI::ExistingFile);
  surv->add_option("-n", s->n, "Sample size (config head.survey_n)");
  s->hf.add(surv);
  surv->callback([&selected, s] {
    selected = [s](Context& ctx) {
      const HeadId h = s->hf.resolve(ctx);
      const auto source = word_source(ctx, s->words.empty() ? ctx.config().head.words : std::optional<std::filesystem::path>(s->words));
      const std::size_t n = s->n.value_or(ctx.config().head.survey_n);
      const json params{{"words", source.identity}, {"n", n}, {"head", head_json(h)}};
      const auto a = ctx.artifact("head-survey", params, [&](const Artifact&) {
        const auto sample = sample_survey_words(ctx.model(), source.words, ctx.lexicon(), n, ctx.seed());
        const auto table = survey(ctx.model(), sample, h, ctx.lexicon());
        json body = table.to_json();
        body["table"] = table.text_table();
        return body;
      });
      std::cout << a.body.at("table").get<std::string>();
      report_artifact(a);
      return kExitOk;
    };
  });

  // sparsity -------------------------------------------------------------
  struct SparsityOpts {
    std::string word, words;
    std::optional<int> n;
    bool by_magnitude = false;
    HeadFlags hf;
  };
  auto sp = std::make_shared<SparsityOpts>();
  auto* spars = head->add_subcommand("sparsity", "Cosine of the result vector rebuilt from few z dimensions");
  spars->add_option("--word", sp->word, "One word: cosine for every n up to d_head/2");
  spars->add_option("--words", sp->words, "Word list for head-dimension coverage")->check(CLI::ExistingFile);
  spars->add_option("-n", sp->n, "Dimensions kept per sign (config head.sparsity_n)");
  spars->add_flag("--by-magnitude", sp->by_magnitude, "Keep the 2n largest |z| instead of n per sign");
  sp->hf.add(spars);
  spars->callback([&selected, sp] {
    selected = [sp](Context& ctx) {
      const HeadId h = sp->hf.resolve(ctx);
      const SparsityMode mode = sp->by_magnitude ? SparsityMode::magnitude
                                                 : parse_sparsity_mode(ctx.config().head.sparsity_mode);
      const int dh = ctx.model().config().d_head;
      const int n = std::min(sp->n.value_or(ctx.config().head.sparsity_n), dh / 2);
      if (!sp->word.empty()) {
        const json params{{"word", sp->word}, {"head", head_json(h)}, {"mode", std::string(to_string(mode))}};
        const auto a = ctx.artifact("head-sparsity", params, [&](const Artifact&) {
          const Vector z = capture_final_z(ctx.model(), sp->word, h);
          json curve = json::array();
          for (int i = 0; i <= dh / 2; ++i) {
            const auto r = z_sparsity(ctx.model(), z, h, i, mode);
            curve.push_back({{"n", i}, {"cosine", r.cosine}, {"kept", r.kept}});
          }
          return json{{"word", sp->word}, {"curve", curve}};
        });
        for (const auto& p : a.body.at("curve")) {
          std::printf("n=%-3d cos %.6f\n", p.at("n").get<int>(), p.at("cosine").get<double>());
        }
        report_artifact(a);
        return kExitOk;
      }
      const auto source = word_source(ctx, sp->words.empty() ? std::nullopt : std::optional<std::filesystem::path>(sp->words));
      const json params{{"words", source.identity}, {"head", head_json(h)}, {"n", n}, {"mode", std::string(to_string(mode))}};
      const auto a = ctx.artifact("head-coverage", params, [&](const Artifact&) {
        return head_dim_coverage(ctx.model(), source.words, h, n, mode).to_json();
      });
      const auto& b = a.body;
      emit(head_label(h) + ": " + std::to_string(b.at("n_covered").get<std::size_t>()) + "/" + std::to_string(dh) +
           " z dimensions used with n = " + std::to_string(n) + " over " +
           std::to_string(b.at("words").get<std::size_t>()) + " words");
      if (!b.at("missing").empty()) emit("never kept: " + b.at("missing").dump());
      double lo = 1.0, sum = 0.0;
      for (const auto& c : b.at("cosines")) {
        lo = std::min(lo, c.at("cosine").get<double>());
        sum += c.at("cosine").get<double>();
      }
      if (!b.at("cosines").empty()) {
        std::printf("cosine mean %.4f  min %.4f\n", sum / static_cast<double>(b.at("cosines").size()), lo);
      }
      report_artifact(a);
      return kExitOk;
    };
  });

  // ablate-triplet -------------------------------------------------------
  struct TripletOpts {
    std::string words, heads;
    std::optional<std::size_t> n;
    int tokens = 2;
  };
  auto t = std::make_shared<TripletOpts>();
  auto* trip = head->add_subcommand("ablate-triplet", "Zero-ablate a head set and each leave-one-out subset");
  trip->add_option("--words", t->words, "Word list (single-token lexicon words when omitted)")->check(CLI::ExistingFile);
  trip->add_option("-n", t->n, "Words to sample (config head.triplet_words)");
  trip->add_option("--heads", t->heads, "Comma separated LAYER.HEAD list (config head.triplet)");
  trip->add_option("--tokens", t->tokens, "Continuation tokens per run")->capture_default_str();
  trip->callback([&selected, t] {
    selected = [t](Context& ctx) {
      std::vector<HeadId> heads = ctx.config().head.triplet;
      if (!t->heads.empty()) {
        heads.clear();
        std::string item;
        std::istringstream in(t->heads);
        while (std::getline(in, item, ',')) heads.push_back(parse_head(item));
      } else if (ctx.is_synthetic()) {
        const HeadId planted = ctx.head_or_default(std::nullopt);
        const auto& c = ctx.model().config();
        heads = {planted, {planted.first, (planted.second + 1) % c.n_heads}, {0, 0}};
        if (heads[2] == planted || heads[2] == heads[1]) heads[2] = {0, 1};
      }
      for (const auto& h : heads) ctx.head_or_default(h);  // validates
      const auto source = word_source(ctx, t->words.empty() ? std::nullopt : std::optional<std::filesystem::path>(t->words));
      const std::size_t n = t->n.value_or(ctx.config().head.triplet_words);
      json hs = json::array();
      for (const auto& h : heads) hs.push_back(head_json(h));
      const json params{{"words", source.identity}, {"n", n}, {"heads", hs}, {"tokens", t->tokens}};
      const auto a = ctx.artifact("head-ablate-triplet", params, [&](const Artifact&) {
        const auto sample = sample_survey_words(ctx.model(), source.words, ctx.lexicon(), n, ctx.seed());
        return triplet_ablation_study(ctx.model(), sample, heads, ctx.lexicon(), t->tokens).to_json();
      });
      const auto& b = a.body;
      std::printf("single-token rhyme rate   baseline %.3f   all ablated %.3f\n", b.at("baseline_rate").get<double>(),
                  b.at("all_ablated_rate").get<double>());
      for (std::size_t i = 0; i < heads.size(); ++i) {
        std::printf("  keep %-8s (ablate the others)  %.3f\n", head_label(heads[i]).c_str(),
                    b.at("leave_one_out_rates").at(i).get<double>());
      }
      report_artifact(a);
      return kExitOk;
    };
  });

  // composition ----------------------------------------------------------
  struct CompOpts {
    std::string up, down, mode = "all";
  };
  auto c = std::make_shared<CompOpts>();
  auto* comp = head->add_subcommand("composition", "Q/K/V composition score between two heads");
  comp->add_option("--up", c->up, "Upstream head LAYER.HEAD")->required();
  comp->add_option("--down", c->down, "Downstream head LAYER.HEAD")->required();
  comp->add_option("--mode", c->mode, "q, k, v or all")->check(CLI::IsMember({"q", "k", "v", "all"}))->capture_default_str();
  comp->callback([&selected, c] {
    selected = [c](Context& ctx) {
      const HeadId up = ctx.head_or_default(parse_head(c->up));
      const HeadId down = ctx.head_or_default(parse_head(c->down));
      if (up.first >= down.first) fail(ErrorKind::usage, "the upstream head must sit in an earlier layer");
      for (const char* m : {"q", "k", "v"}) {
        if (c->mode != "all" && c->mode != m) continue;
        std::printf("%s-composition %s -> %s  %.6f\n", m, head_label(up).c_str(), head_label(down).c_str(),
                    composition_score(ctx.model(), up, down, parse_composition_mode(m)));
      }
      return kExitOk;
    };
  });
}

}  // namespace phonolens::cli
