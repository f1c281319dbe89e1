#include <algorithm>
#include <cstdio>
#include <iostream>
#include <random>

#include "commands.hpp"
#include "phonolens/error.hpp"
#include "phonolens/geometry.hpp"
#include "phonolens/head_analysis.hpp"

namespace phonolens::cli {

using nlohmann::json;

namespace {

// Flags shared by every geometry subcommand.
struct GeometryFlags {
  std::string words;
  std::string probe;
  std::optional<int> layer, head, k;

  void add(CLI::App* c, bool with_probe) {
    c->add_option("--words", words, "Word list (single-token lexicon words when omitted)")->check(CLI::ExistingFile);
    c->add_option("--layer", layer, "Layer of the head (config head.layer)");
    c->add_option("--head", head, "Head index (config head.head)");
    c->add_option("-k", k, "Principal components (config geometry.k)");
    if (with_probe) c->add_option("--probe", probe, "Probe JSON (the cached probe when omitted)")->check(CLI::ExistingFile);
  }

  HeadId resolve_head(Context& ctx) const {
    std::optional<HeadId> h;
    if (layer || head) {
      h = HeadId{layer.value_or(ctx.config().head.head.first), head.value_or(ctx.config().head.head.second)};
    }
    return ctx.head_or_default(h);
  }
};

json head_json(HeadId h) { return json{{"layer", h.first}, {"head", h.second}}; }

struct Collected {
  ResultMatrix matrix;
  WordSource source;
  HeadId head;
};

Collected collect(Context& ctx, const GeometryFlags& f) {
  Collected c;
  c.head = f.resolve_head(ctx);
  c.source = word_source(ctx, f.words.empty() ? std::nullopt : std::optional<std::filesystem::path>(f.words));
  c.matrix = collect_result_vectors(ctx.model(), c.source.words, c.head, ctx.cache_dir() / "vectors");
  return c;
}

// The `geometry fit` artifact; its ".pca.json" sibling holds the model.
Artifact fit_artifact(Context& ctx, const GeometryFlags& f, Collected& c) {
  if (f.k) ctx.config().geometry.k = *f.k;
  const int k = ctx.config().geometry.k;
  const json params{{"words", c.source.identity}, {"head", head_json(c.head)}, {"k", k}};
  auto compute = [&](const Artifact& a) {
    auto pca = fit_pca(c.matrix.rows, k);
    pca.metadata = {{"head", head_json(c.head)}, {"words", c.source.identity}, {"rows", c.matrix.rows.rows()}};
    pca.save(a.sibling(".pca.json"));
    std::vector<double> ev(pca.explained_variance.data(), pca.explained_variance.data() + pca.k());
    return json{{"pca_file", a.sibling(".pca.json").filename().string()},
                {"explained_variance", ev},
                {"rows", c.matrix.rows.rows()},
                {"collection_errors", c.matrix.errors.size()}};
  };
  auto a = ctx.artifact("geometry-fit", params, compute);
  if (!std::filesystem::exists(a.sibling(".pca.json"))) {
    std::filesystem::remove(a.path);
    a = ctx.artifact("geometry-fit", params, compute);
  }
  return a;
}

}  // namespace

void add_geometry_commands(CLI::App& app, Action& selected) {
  auto* geo = app.add_subcommand("geometry", "PCA of a head's result vectors and phoneme-vector geometry");
  geo->require_subcommand(1);

  auto cf = std::make_shared<GeometryFlags>();
  auto* collect_cmd = geo->add_subcommand("collect", "Collect final-position result vectors for a word list");
  cf->add(collect_cmd, false);
  collect_cmd->callback([&selected, cf] {
    selected = [cf](Context& ctx) {
      auto c = collect(ctx, *cf);
      const json params{{"words", c.source.identity}, {"head", head_json(c.head)}};
      const auto a = ctx.artifact("geometry-collect", params, [&](const Artifact&) {
        json errs = json::array();
        for (const auto& [w, why] : c.matrix.errors) errs.push_back({{"word", w}, {"reason", why}});
        return json{{"rows", c.matrix.rows.rows()}, {"dim", c.matrix.rows.cols()}, {"errors", errs}};
      });
      emit(head_label(c.head) + ": " + std::to_string(a.body.at("rows").get<long>()) + " result vectors, " +
           std::to_string(a.body.at("errors").size()) + " words skipped" +
           (c.matrix.from_cache ? " (vectors from cache)" : ""));
      report_artifact(a);
      return kExitOk;
    };
  });

  auto ff = std::make_shared<GeometryFlags>();
  auto* fit = geo->add_subcommand("fit", "Fit PCA on the collected result vectors");
  ff->add(fit, false);
  fit->callback([&selected, ff] {
    selected = [ff](Context& ctx) {
      auto c = collect(ctx, *ff);
      const auto a = fit_artifact(ctx, *ff, c);
      int i = 0;
      double cumulative = 0;
      for (const auto& v : a.body.at("explained_variance")) {
        cumulative += v.get<double>();
        std::printf("PC%-2d %.4f  (cumulative %.4f)\n", ++i, v.get<double>(), cumulative);
      }
      emit("pca: " + a.sibling(".pca.json").string());
      report_artifact(a);
      return kExitOk;
    };
  });

  auto rf = std::make_shared<GeometryFlags>();
  auto* report = geo->add_subcommand("report", "Vowel backness/openness and voicing structure of phoneme vectors");
  rf->add(report, true);
  report->callback([&selected, rf] {
    selected = [rf](Context& ctx) {
      auto c = collect(ctx, *rf);
      const auto fit_a = fit_artifact(ctx, *rf, c);
      const auto probe = ctx.resolved_probe(rf->probe);
      const auto& g = ctx.config().geometry;
      const json params{{"pca", fit_a.path.filename().string()}, {"probe", probe.identity},
                        {"vowel_axes", {g.vowel_axes.first, g.vowel_axes.second}},
                        {"voicing_axis", g.voicing_axis}, {"voicing_companion", g.voicing_companion}};
      const auto a = ctx.artifact("geometry-report", params, [&](const Artifact& art) {
        const auto pca = PCAModel::load(fit_a.sibling(".pca.json"));
        const auto& inv = ctx.lexicon().inventory();
        const auto points = project_phoneme_vectors(pca, probe.probe, inv);
        const auto vowels = vowel_geometry_report(points, inv, g.vowel_axes.first, g.vowel_axes.second);
        const auto voicing = voicing_geometry_report(points, inv, g.voicing_axis, g.voicing_companion);
        write_text_atomic(art.sibling(".vowels.svg"),
                          phoneme_scatter_svg(points, inv, true, g.vowel_axes.first, g.vowel_axes.second, "Vowel phoneme vectors"));
        write_text_atomic(art.sibling(".consonants.svg"),
                          phoneme_scatter_svg(points, inv, false, g.voicing_companion, g.voicing_axis, "Consonant phoneme vectors"));
        return json{{"vowels", vowels.to_json()}, {"voicing", voicing.to_json()},
                    {"vowel_table", vowels.text_table()}, {"voicing_table", voicing.text_table()}};
      });
      std::cout << a.body.at("vowel_table").get<std::string>() << '\n' << a.body.at("voicing_table").get<std::string>();
      emit("plots: " + a.sibling(".vowels.svg").string() + ", " + a.sibling(".consonants.svg").string());
      report_artifact(a);
      return kExitOk;
    };
  });

  struct OverlayOpts {
    GeometryFlags f;
    std::optional<double> scale, shift;
  };
  auto of = std::make_shared<OverlayOpts>();
  auto* overlay = geo->add_subcommand("overlay", "Rescaled result vectors over the vowel phoneme vectors");
  of->f.add(overlay, true);
  overlay->add_option("--scale", of->scale, "Multiplier on result-vector coordinates (config geometry.scale)");
  overlay->add_option("--shift", of->shift, "Offset added after scaling (config geometry.shift)");
  overlay->callback([&selected, of] {
    selected = [of](Context& ctx) {
      auto& g = ctx.config().geometry;
      if (of->scale) g.scale = *of->scale;
      if (of->shift) g.shift = *of->shift;
      auto c = collect(ctx, of->f);
      const auto fit_a = fit_artifact(ctx, of->f, c);
      const auto probe = ctx.resolved_probe(of->f.probe);
      const json params{{"pca", fit_a.path.filename().string()}, {"probe", probe.identity}, {"scale", g.scale},
                        {"shift", g.shift}, {"overlay_words", g.overlay_words},
                        {"vowel_axes", {g.vowel_axes.first, g.vowel_axes.second}}};
      const auto a = ctx.artifact("geometry-overlay", params, [&](const Artifact& art) {
        const auto pca = PCAModel::load(fit_a.sibling(".pca.json"));
        const auto& inv = ctx.lexicon().inventory();
        // seeded subset of the collected rows when there are more than requested
        std::vector<Eigen::Index> rows(static_cast<std::size_t>(c.matrix.rows.rows()));
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<Eigen::Index>(i);
        if (rows.size() > g.overlay_words) {
          std::mt19937_64 rng(ctx.seed());
          for (std::size_t i = rows.size(); i > 1; --i) {
            std::uniform_int_distribution<std::size_t> pick(0, i - 1);
            std::swap(rows[i - 1], rows[pick(rng)]);
          }
          rows.resize(g.overlay_words);
          std::sort(rows.begin(), rows.end());
        }
        Matrix subset(static_cast<Eigen::Index>(rows.size()), c.matrix.rows.cols());
        std::vector<std::string> labels;
        for (std::size_t i = 0; i < rows.size(); ++i) {
          subset.row(static_cast<Eigen::Index>(i)) = c.matrix.rows.row(rows[i]);
          labels.push_back(c.matrix.words[static_cast<std::size_t>(rows[i])]);
        }
        const auto result_points = project(pca, subset, labels, PointSource::result_vector);
        const auto phoneme_points = project_phoneme_vectors(pca, probe.probe, inv);
        const auto word_vowel = single_vowel_words(labels, ctx.lexicon());
        const auto ov = overlay_result_vectors(result_points, word_vowel, phoneme_points, inv, g.scale, g.shift,
                                               g.vowel_axes.first, g.vowel_axes.second);
        write_text_atomic(art.sibling(".svg"), ov.svg(phoneme_points, word_vowel));
        return ov.to_json();
      });
      for (const auto& cl : a.body.at("clusters")) {
        std::printf("/%s/ %5zu words  nearest /%s/%s\n", cl.at("vowel").get<std::string>().c_str(),
                    cl.at("size").get<std::size_t>(), cl.at("nearest_vowel").get<std::string>().c_str(),
                    cl.at("matched").get<bool>() ? "" : "  (mismatch)");
      }
      std::printf("centroids nearest to their own vowel: %.3f\n", a.body.at("match_accuracy").get<double>());
      emit("plot: " + a.sibling(".svg").string());
      report_artifact(a);
      return kExitOk;
    };
  });
}

}  // namespace phonolens::cli
