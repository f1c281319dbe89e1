#include <doctest.h>
#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "oracle.hpp"
#include "phonolens/artifacts.hpp"
#include "phonolens/interventions.hpp"
#include "phonolens/patching.hpp"
#include "phonolens/synthetic.hpp"

using namespace phonolens;
using testutil::check_error;
using testutil::tiny_lex;

namespace {

std::vector<int> prompt_ints(const ModelHandle& m, const std::string& word) {
  const auto t = m.tokenize_prompt(rhyme_prompt(word));
  return {t.begin(), t.end()};
}

const CopyHeadModel& copy_model() {
  static const CopyHeadModel m = make_copy_head_model(3);
  return m;
}

// Normalized logit difference from reference-forward logits.
double reference_nld(const oracle::Vec& patched, const oracle::Vec& clean, const oracle::Vec& corrupt, int a, int b) {
  const auto ld = [&](const oracle::Vec& l) { return l[static_cast<std::size_t>(a)] - l[static_cast<std::size_t>(b)]; };
  return (ld(patched) - ld(corrupt)) / (ld(clean) - ld(corrupt));
}

}  // namespace

TEST_SUITE("patching") {
  TEST_CASE("pair construction") {
    const auto& m = copy_model().model;
    const auto pair = make_pair(m, "clean", "track", tiny_lex());
    const auto& w = m.transformer().weights();
    CHECK(pair.clean_answer == oracle::argmax(oracle::forward(m.config(), w, prompt_ints(m, "clean")).logits.back()));
    CHECK(pair.corrupt_answer == oracle::argmax(oracle::forward(m.config(), w, prompt_ints(m, "track")).logits.back()));
    CHECK(m.tokenizer().token_text(pair.clean_answer) == " keen");
    CHECK(m.tokenizer().token_text(pair.corrupt_answer) == " back");

    check_error([&] { make_pair(m, "clean", "keen", tiny_lex()); }, ErrorKind::pair);
    check_error([&] { make_pair(m, "clean", "banana", tiny_lex()); }, ErrorKind::tokenization);
    check_error([&] { make_pair(m, "clean", "absent", tiny_lex()); }, ErrorKind::not_found);
    const auto fixed = make_fixed_logits_model({{5, 1.0f}});
    check_error([&] { make_pair(fixed, "clean", "track", tiny_lex()); }, ErrorKind::degenerate_pair);
  }

  TEST_CASE("normalized logit difference end points") {
    const auto pair = make_pair(copy_model().model, "leet", "bet", tiny_lex());
    CHECK(normalized_logit_diff(pair.clean.logits, pair) == doctest::Approx(1.0));
    CHECK(normalized_logit_diff(pair.corrupt.logits, pair) == doctest::Approx(0.0));
    PatchPair flat = pair;
    flat.corrupt.logits = flat.clean.logits;
    check_error([&] { normalized_logit_diff(flat.clean.logits, flat); }, ErrorKind::degenerate_denominator);
  }

  TEST_CASE("a patched cell matches a hand-rolled patched forward") {
    const auto& m = copy_model().model;
    const auto& c = m.config();
    const auto& w = m.transformer().weights();
    const auto pair = make_pair(m, "clean", "track", tiny_lex());
    const auto clean_ints = prompt_ints(m, "clean"), corrupt_ints = prompt_ints(m, "track");
    const auto clean_ref = oracle::forward(c, w, clean_ints);
    const auto corrupt_ref = oracle::forward(c, w, corrupt_ints);
    const int last = static_cast<int>(clean_ints.size()) - 1;
    const int a = pair.clean_answer, b = pair.corrupt_answer;

    for (int l = 0; l < c.n_layers; ++l) {
      for (int h = 0; h <= c.n_heads; ++h) {
        const bool mlp = h == c.n_heads;
        for (auto mode : {PositionMode::final, PositionMode::all}) {
          oracle::Edits e;
          for (int p = mode == PositionMode::final ? last : 0; p <= last; ++p) {
            if (mlp) e.mlp_out[{l, p}] = clean_ref.mlp_out.at({l, p});
            else e.head_z[{l, h, p}] = clean_ref.head_z.at({l, h, p});
          }
          const auto patched_ref = oracle::forward(c, w, corrupt_ints, e);
          const double expected = reference_nld(patched_ref.logits.back(), clean_ref.logits.back(), corrupt_ref.logits.back(), a, b);
          const double got = normalized_logit_diff(patch_component(m, pair, l, mlp ? -1 : h, mode), pair);
          CHECK(std::abs(got - expected) <= 1e-5);
        }
      }
    }
    const auto grid = patch_scan(m, {pair}, PositionMode::final);
    oracle::Edits e;
    e.head_z[{1, 2, last}] = clean_ref.head_z.at({1, 2, last});
    const double cell = reference_nld(oracle::forward(c, w, corrupt_ints, e).logits.back(), clean_ref.logits.back(),
                                      corrupt_ref.logits.back(), a, b);
    CHECK(std::abs(grid.values(1, 2) - cell) <= 1e-5);
  }

  TEST_CASE("scan identities on the planted copy-head model") {
    const auto& cm = copy_model();
    std::vector<WordPair> words{{"clean", "track"}, {"leet", "bet"}, {"store", "plush"}, {"grab", "cat"}, {"lip", "hop"}};
    const auto built = build_pairs(cm.model, words, tiny_lex());
    REQUIRE(built.pairs.size() == words.size());

    const auto self = patch_scan(cm.model, built.pairs, PositionMode::final, PatchSource::corrupt);
    CHECK(self.values.cwiseAbs().maxCoeff() <= 1e-4);
    const auto self_all = patch_scan(cm.model, built.pairs, PositionMode::all, PatchSource::corrupt);
    CHECK(self_all.values.cwiseAbs().maxCoeff() <= 1e-4);

    const auto grid = patch_scan(cm.model, built.pairs, PositionMode::final);
    CHECK(grid.pair_count == words.size());
    const auto top = top_components(grid, 1).front();
    CHECK(top.layer == cm.copy_head.first);
    CHECK(top.head == cm.copy_head.second);
    CHECK(top.label() == head_label(cm.copy_head));

    for (const auto& p : built.pairs) {
      const Vector full = patch_residual(cm.model, p, cm.model.config().n_layers - 1);
      CHECK(std::abs(normalized_logit_diff(full, p) - 1.0) <= 1e-4);
    }
  }

  TEST_CASE("invalid pairs are reported and an all-invalid scan raises") {
    const auto& m = copy_model().model;
    const auto built = build_pairs(m, {{"clean", "keen"}, {"clean", "banana"}, {"clean", "track"}}, tiny_lex());
    CHECK(built.pairs.size() == 1);
    CHECK(built.rejected.size() == 2);
    check_error([&] { patch_scan(m, {}); }, ErrorKind::scan);
  }

  TEST_CASE("top components") {
    PatchGrid g;
    g.values = MatrixD::Zero(3, 5);
    g.values(2, 1) = 0.7;
    CHECK(top_components(g, 1).front().layer == 2);
    CHECK(top_components(g, 1).front().head == 1);
    const auto all = top_components(g, 100);
    CHECK(all.size() == 15);
    // zero cells tie: layer first, heads before the MLP
    CHECK(all[1].layer == 0);
    CHECK(all[1].head == 0);
    CHECK(all[5].head == -1);
    CHECK(all[5].label() == "MLP0");
  }

  TEST_CASE("grids and pair lists round trip through JSON") {
    testutil::TempDir dir;
    PatchGrid g;
    g.values = MatrixD::Random(2, 3);
    g.pair_count = 4;
    g.mode = PositionMode::all;
    g.skipped = {"a/b: reason"};
    g.model_id = "tiny";
    const auto back = PatchGrid::from_json(g.to_json());
    CHECK(back.values == g.values);
    CHECK(back.pair_count == 4);
    CHECK(back.mode == PositionMode::all);
    CHECK(back.skipped == g.skipped);

    const std::vector<WordPair> pairs{{"clean", "track"}, {"cat", "dog"}};
    save_word_pairs(dir.path() / "pairs.json", pairs);
    CHECK(load_word_pairs(dir.path() / "pairs.json") == pairs);
    CHECK(load_word_pairs(data_dir() / "tiny_pairs.json").size() >= 5);
    check_error([&] { load_word_pairs(dir.write("bad.json", "[[\"a\"]]")); }, ErrorKind::parse);
    CHECK(default_word_pairs().front() == WordPair{"clean", "track"});
  }

  TEST_CASE("heatmap is a standalone SVG with one cell per component") {
    PatchGrid g;
    g.values = MatrixD::Random(2, 4);
    const auto svg = heatmap_svg(g, "title & more");
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    CHECK(svg.find("&amp;") != std::string::npos);
    std::size_t rects = 0;
    for (auto pos = svg.find("<rect"); pos != std::string::npos; pos = svg.find("<rect", pos + 1)) ++rects;
    CHECK(rects >= 8);
  }

  TEST_CASE("position modes parse") {
    CHECK(parse_position_mode("final") == PositionMode::final);
    CHECK(parse_position_mode("all") == PositionMode::all);
    check_error([] { parse_position_mode("some"); }, ErrorKind::argument);
  }
}
