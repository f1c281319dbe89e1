#include <random>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "oracle.hpp"
#include "phonolens/interventions.hpp"
#include "phonolens/synthetic.hpp"

using namespace phonolens;
using testutil::check_error;
using testutil::tiny_lex;

namespace {

SweepRow row_with(double c, VowelLabel label) {
  SweepRow r;
  r.c = c;
  r.classification.label = label;
  return r;
}

ProbeMatrix axes_probe(const VowelReadoutModel& vr) {
  ProbeMatrix p;
  p.weights = vr.phoneme_axes;
  p.bias = Vector::Zero(static_cast<Eigen::Index>(kInventorySize));
  return p;
}

}  // namespace

TEST_SUITE("interventions") {
  TEST_CASE("rhyme prompt substitutes the word into the pinned template") {
    CHECK(rhyme_prompt("leet") == "Here are a few examples of words\nthat rhyme with leet:");
    CHECK(rhyme_prompt("clean") == "Here are a few examples of words\nthat rhyme with clean:");
    CHECK(rhyme_prompt("") == "Here are a few examples of words\nthat rhyme with :");
    check_error([] { rhyme_prompt("x", "no slot"); }, ErrorKind::argument);
  }

  TEST_CASE("target position points at the word's token") {
    const auto model = make_tiny_model(1);
    const auto tokens = model.tokenize_prompt(rhyme_prompt("leet"));
    const int pos = target_position(model, "leet");
    CHECK(tokens[static_cast<std::size_t>(pos)] == *single_token_id(model, "leet"));
    check_error([&] { target_position(model, "banana"); }, ErrorKind::tokenization);
  }

  TEST_CASE("vowel classification") {
    const auto& lex = tiny_lex();
    CHECK(classify_vowels({"beet", "feet"}, lex, "i", "ɛ").label == VowelLabel::xi_vowel);
    CHECK(classify_vowels({"bet", "net", "beet"}, lex, "i", "ɛ").label == VowelLabel::mu_vowel);
    CHECK(classify_vowels({}, lex, "i", "ɛ").label == VowelLabel::unknown);
    CHECK(classify_vowels({"zzz", "qqq"}, lex, "i", "ɛ").label == VowelLabel::unknown);
    CHECK(classify_vowels({"beet", "bet"}, lex, "i", "ɛ").label == VowelLabel::mixed);

    const auto third = classify_vowels({"sheet", "meet", "qqq"}, lex, "o", "ɛ");
    CHECK(third.label == VowelLabel::third_party);
    CHECK(third.third_party == std::set<std::string>{"i"});
    CHECK(third.unknown == std::vector<std::string>{"qqq"});
    CHECK(third.judged.size() == 2);

    // a word with /ɔ/ and /o/ pronunciations counts as containing both
    CHECK(classify_vowels({"store"}, lex, "o", "ɛ").label == VowelLabel::xi_vowel);
    CHECK(classify_vowels({"store"}, lex, "o", "ɔ").label == VowelLabel::mixed);
  }

  TEST_CASE("transition curve") {
    CHECK_FALSE(transition_curve({row_with(0, VowelLabel::xi_vowel), row_with(2, VowelLabel::xi_vowel)}).c_switch);
    const auto curve = transition_curve({row_with(0, VowelLabel::xi_vowel), row_with(2, VowelLabel::xi_vowel),
                                         row_with(4, VowelLabel::mu_vowel), row_with(6, VowelLabel::mu_vowel)});
    REQUIRE(curve.c_switch);
    CHECK(*curve.c_switch == 4.0);

    // random label sequences against a direct scan
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> lab(0, 3);
    const VowelLabel labels[] = {VowelLabel::xi_vowel, VowelLabel::mu_vowel, VowelLabel::third_party, VowelLabel::mixed};
    for (int trial = 0; trial < 300; ++trial) {
      std::vector<SweepRow> rows;
      for (int i = 0; i < 8; ++i) rows.push_back(row_with(i * 0.5, labels[lab(rng)]));
      std::optional<double> expected;
      std::vector<double> third;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        bool tail_all_mu = true;
        for (std::size_t j = i; j < rows.size(); ++j) tail_all_mu &= rows[j].classification.label == VowelLabel::mu_vowel;
        if (tail_all_mu && !expected) expected = rows[i].c;
        if (rows[i].classification.label == VowelLabel::third_party) third.push_back(rows[i].c);
      }
      const auto got = transition_curve(rows);
      CHECK(got.c_switch == expected);
      CHECK(got.third_party_cs == third);
    }
  }

  TEST_CASE("c grids") {
    CHECK(default_c_grid() == std::vector<double>{0, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20});
    CHECK(parse_c_grid("0:20:2") == default_c_grid());
    CHECK(parse_c_grid("0:1:0.2") == std::vector<double>{0, 0.2, 0.4, 0.6, 0.8, 1.0});
    CHECK(parse_c_grid("0, 0.5,3") == std::vector<double>{0, 0.5, 3});
    check_error([] { parse_c_grid("0:1"); }, ErrorKind::spec);
    check_error([] { parse_c_grid("0:1:0"); }, ErrorKind::spec);
    check_error([] { parse_c_grid("0,x"); }, ErrorKind::spec);
  }

  TEST_CASE("specs are validated") {
    const auto& lex = tiny_lex();
    auto spec = [](std::string w, std::string xi, std::string mu, std::vector<double> grid = {0, 1}) {
      return InterventionSpec{std::move(w), std::move(xi), std::move(mu), std::move(grid), 4};
    };
    CHECK_NOTHROW(spec("leet", "i", "ɛ").validate(lex));
    check_error([&] { spec("leet", "t", "ɛ").validate(lex); }, ErrorKind::spec);
    check_error([&] { spec("leet", "i", "i").validate(lex); }, ErrorKind::spec);
    check_error([&] { spec("leet", "æ", "ɛ").validate(lex); }, ErrorKind::spec);
    check_error([&] { spec("leet", "i", "ɛ", {1, 2}).validate(lex); }, ErrorKind::spec);
    check_error([&] { spec("leet", "i", "ɛ", {0, 2, 1}).validate(lex); }, ErrorKind::spec);
    check_error([&] { spec("banana", "ə", "ɛ").validate(lex); }, ErrorKind::spec);
    const auto vr = make_vowel_readout_model();
    check_error([&] { intervene(vr.model, axes_probe(vr), spec("button", "ʌ", "ɛ"), lex); }, ErrorKind::tokenization);
  }

  TEST_CASE("the c = 0 row is the unedited continuation") {
    const auto model = make_tiny_model(3);
    const auto planted = planted_probe_dataset(200, model.config().d_model, 0.0, 1);
    const auto probe = train_probe(planted.dataset, ProbeConfig{10, 0.02, 1e-4, 0.5, 0});
    const auto rows = intervene(model, probe, {"leet", "i", "ɛ", {0, 3, 6}, 6}, tiny_lex());
    const auto tokens = model.tokenize_prompt(rhyme_prompt("leet"));
    const auto clean = greedy_continue(model, tokens, 6, nullptr, nullptr);
    CHECK(rows.front().continuation == clean);
    CHECK(rows.size() == 3);
  }

  TEST_CASE("vowel read-out sweeps agree with the reference forward at every c") {
    const auto vr = make_vowel_readout_model();
    const auto& lex = tiny_lex();
    const std::vector<double> grid{0, 0.2, 0.4, 0.45, 0.55, 0.6, 0.8, 1.0, 2.0};
    const auto rows = intervene(vr.model, axes_probe(vr), {"leet", "i", "ɛ", grid, 1}, lex);
    const auto tokens = vr.model.tokenize_prompt(rhyme_prompt("leet"));
    const int pos = target_position(vr.model, "leet");
    const auto& w = vr.model.transformer().weights();
    const auto i_row = *lex.inventory().index_of("i"), e_row = *lex.inventory().index_of("ɛ");
    for (const auto& row : rows) {
      oracle::Edits e;
      oracle::Vec delta(static_cast<std::size_t>(vr.model.config().d_model));
      for (std::size_t j = 0; j < delta.size(); ++j) {
        delta[j] = row.c * (static_cast<double>(vr.phoneme_axes(static_cast<long>(e_row), static_cast<long>(j))) -
                            vr.phoneme_axes(static_cast<long>(i_row), static_cast<long>(j)));
      }
      e.embed_delta[pos] = delta;
      const auto ref = oracle::forward(vr.model.config(), w, {tokens.begin(), tokens.end()}, e);
      CHECK(row.first_token == oracle::argmax(ref.logits.back()));
      // the unit-norm axes put the flip at c = 1/2
      CHECK((row.first_token == vr.vowel_token.at("ɛ")) == (row.c > 0.5));
    }
  }

  TEST_CASE("candidate words and rendering") {
    const auto& lex = tiny_lex();
    CHECK(candidate_words(" Beet, bet and zzz!", lex) == std::vector<std::string>{"beet", "bet"});
    std::vector<SweepRow> rows{row_with(0, VowelLabel::xi_vowel), row_with(1, VowelLabel::mu_vowel)};
    rows[0].words = {"beet"};
    rows[1].words = {"bet"};
    const auto plain = render_sweep(rows, lex, "i", "ɛ", false);
    const auto ansi = render_sweep(rows, lex, "i", "ɛ", true);
    CHECK(plain.find("\x1b[") == std::string::npos);
    CHECK(ansi.find("\x1b[34m") != std::string::npos);
    CHECK(ansi.find("\x1b[31m") != std::string::npos);
    CHECK(plain.find("beet") != std::string::npos);
  }

  TEST_CASE("sweep rows serialize their fields") {
    SweepRow r = row_with(2.5, VowelLabel::third_party);
    r.words = {"sheet"};
    r.continuation_text = " sheet";
    r.classification.third_party = {"i"};
    const auto j = r.to_json();
    CHECK(j.at("c").get<double>() == 2.5);
    CHECK(j.dump().find("third-party") != std::string::npos);
  }
}
