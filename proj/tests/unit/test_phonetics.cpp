#include <algorithm>
#include <map>
#include <random>
#include <set>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "phonolens/artifacts.hpp"
#include "phonolens/phonetics.hpp"
#include "phonolens/synthetic.hpp"

using namespace phonolens;
using testutil::check_error;
using testutil::lexicon_from;
using testutil::tiny_lex;

namespace {

const PhonemeInventory& inv() { return PhonemeInventory::english_us(); }

// Tail from the last vowel on, found by checking each symbol's kind directly.
Pronunciation naive_tail(const Pronunciation& p) {
  std::size_t last = p.size();
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (const auto& ph : inv().phonemes()) {
      if (ph.symbol == p[i] && ph.kind == PhonemeKind::vowel) last = i;
    }
  }
  return last == p.size() ? Pronunciation{} : Pronunciation(p.begin() + static_cast<long>(last), p.end());
}

}  // namespace

TEST_SUITE("phonetics") {
  TEST_CASE("inventory has 44 unique phonemes and survives a JSON round trip") {
    CHECK(inv().size() == kInventorySize);
    std::set<std::string> symbols;
    for (const auto& p : inv().phonemes()) symbols.insert(p.symbol);
    CHECK(symbols.size() == kInventorySize);
    const auto back = PhonemeInventory::from_json(inv().to_json());
    CHECK(back == inv());
    CHECK(back.hash() == inv().hash());
    for (std::size_t i = 0; i < inv().size(); ++i) CHECK(*inv().index_of(inv().at(i).symbol) == i);
  }

  TEST_CASE("bundled inventory file matches the built-in table") {
    const auto loaded = PhonemeInventory::load(data_dir() / "inventory_en_us_v1.json");
    CHECK(loaded == inv());
  }

  TEST_CASE("segment normalization strips length, stress and tie marks") {
    CHECK(normalize_segment("iː") == "i");
    CHECK(normalize_segment("ˈɛ") == "ɛ");
    CHECK(normalize_segment("a͡ɪ") == "aɪ");
    CHECK(normalize_segment("n̩") == "n");
    CHECK(normalize_segment("g") == "ɡ");
    CHECK(normalize_segment("r") == "ɹ");
  }

  TEST_CASE("lexicon row keeps the phonemes and drops the length mark") {
    const auto lex = lexicon_from("leet\tl iː t\n");
    REQUIRE(lex.contains("leet"));
    CHECK(lex.first("leet") == Pronunciation{"l", "i", "t"});
  }

  TEST_CASE("row with an unknown segment is skipped and counted") {
    const auto lex = lexicon_from("leet\tl iː t\nodd\tx͡y d\nkeen\tk iː n\n");
    CHECK(lex.size() == 2);
    CHECK(lex.skipped_rows() == 1);
    CHECK_FALSE(lex.contains("odd"));
  }

  TEST_CASE("empty and unreadable lexicons raise") {
    testutil::TempDir dir;
    const auto empty = dir.write("empty.tsv", "");
    check_error([&] { load_lexicon(empty, english_us_inventory()); }, ErrorKind::empty_lexicon);
    check_error([&] { load_lexicon(dir.path() / "missing.tsv", english_us_inventory()); }, ErrorKind::io);
  }

  TEST_CASE("words are lowercased and repeated rows add pronunciations") {
    const auto lex = lexicon_from("Store\ts t ɔ ɹ\nstore\ts t o ɹ\n");
    REQUIRE(lex.contains("store"));
    CHECK(lex.pronunciations("store").size() == 2);
  }

  TEST_CASE("multihot of leet sets exactly l, i and t") {
    const auto bits = multihot("leet", tiny_lex());
    CHECK(bits.count() == 3);
    for (const char* s : {"l", "i", "t"}) CHECK(bits.test(*inv().index_of(s)));
  }

  TEST_CASE("multihot of a one-phoneme word sets one bit") {
    const auto lex = lexicon_from("a\tə\n");
    CHECK(multihot("a", lex).count() == 1);
  }

  TEST_CASE("multihot popcount equals the distinct phonemes of every tiny lexicon word") {
    const auto& lex = tiny_lex();
    for (const auto& w : lex.words()) {
      std::vector<std::string> distinct;
      for (const auto& s : lex.first(w)) {
        if (std::find(distinct.begin(), distinct.end(), s) == distinct.end()) distinct.push_back(s);
      }
      CHECK_MESSAGE(multihot(w, lex).count() == distinct.size(), w);
    }
    check_error([&] { multihot("absent", lex); }, ErrorKind::not_found);
  }

  TEST_CASE("rhyme tails") {
    CHECK(rhyme_tail({"k", "l", "i", "n"}, inv()).phonemes == Pronunciation{"i", "n"});
    CHECK(rhyme_tail({"i"}, inv()).phonemes == Pronunciation{"i"});
    check_error([] { rhyme_tail({"s", "t"}, inv()); }, ErrorKind::no_vowel);
    const auto& lex = tiny_lex();
    CHECK(rhyme_tail(lex.first("track"), inv()).phonemes == Pronunciation{"æ", "k"});
    for (const auto& w : lex.words()) {
      for (const auto& p : lex.pronunciations(w)) CHECK(rhyme_tail(p, inv()).phonemes == naive_tail(p));
    }
  }

  TEST_CASE("rhymes and sufficiently_different on the worked example words") {
    const auto& lex = tiny_lex();
    CHECK(rhymes("clean", "keen", lex));
    CHECK_FALSE(rhymes("clean", "clean", lex));
    CHECK_FALSE(rhymes("clean", "track", lex));
    CHECK(sufficiently_different("clean", "track", lex));
    CHECK_FALSE(sufficiently_different("clean", "keen", lex));
    check_error([&] { rhymes("clean", "absent", lex); }, ErrorKind::not_found);
    check_error([&] { sufficiently_different("absent", "clean", lex); }, ErrorKind::not_found);
  }

  TEST_CASE("sufficiently_different agrees with an exhaustive third-word scan") {
    // 500 words over 20 tails, each tail used by at least three words.
    const std::vector<Pronunciation> onsets{{"b"}, {"k"}, {"s", "t"}, {"m"}, {"f", "l"}, {"d"}, {"ɡ", "ɹ"}, {"p"}};
    const std::vector<Pronunciation> tails{{"i", "n"}, {"æ", "k"}, {"i", "t"}, {"ɛ", "t"}, {"ɔ", "ɹ"}, {"ʌ", "ʃ"},
                                           {"æ", "b"}, {"æ", "t"}, {"ɪ", "p"}, {"ɑ", "p"}, {"ʌ", "n"}, {"u", "n"},
                                           {"aɪ", "t"}, {"ɪ", "n"}, {"i", "p"}, {"o", "d"}, {"aʊ", "n"}, {"ɝ", "d"},
                                           {"ʊ", "k"}, {"e", "z"}};
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<std::size_t> pick_onset(0, onsets.size() - 1), pick_tail(0, tails.size() - 1);
    PronunciationLexicon lex(english_us_inventory());
    std::map<std::string, Pronunciation> tail_of;
    for (int i = 0; i < 500; ++i) {
      const std::string word = "w" + std::to_string(i);
      const auto& t = tails[i < 60 ? static_cast<std::size_t>(i) % tails.size() : pick_tail(rng)];
      Pronunciation p = onsets[pick_onset(rng)];
      p.insert(p.end(), t.begin(), t.end());
      lex.add(word, p);
      tail_of[word] = naive_tail(p);
    }
    const auto words = lex.words();
    std::uniform_int_distribution<std::size_t> pick_word(0, words.size() - 1);
    for (int trial = 0; trial < 400; ++trial) {
      const auto& a = words[pick_word(rng)];
      const auto& b = words[pick_word(rng)];
      bool third_rhymes_with_both = false;
      for (const auto& w : words) {
        if (w == a || w == b) continue;
        third_rhymes_with_both |= tail_of[w] == tail_of[a] && tail_of[w] == tail_of[b];
      }
      CHECK(sufficiently_different(a, b, lex) == !third_rhymes_with_both);
    }
  }

  TEST_CASE("vowel classes follow the IPA chart") {
    const auto i = vowel_class("i", inv());
    CHECK(i.backness == Backness::front);
    CHECK(i.openness == 0);
    const auto a = vowel_class("a", inv());
    CHECK(a.backness == Backness::front);
    CHECK(a.openness == 6);
    const auto u = vowel_class("u", inv());
    CHECK(u.backness == Backness::back);
    CHECK(u.openness == 0);
    CHECK(u.rounded);
    check_error([] { vowel_class("t", inv()); }, ErrorKind::kind);
  }

  TEST_CASE("voicing counterparts pair up and are involutions") {
    CHECK(voicing_counterpart("b", inv()) == std::optional<std::string>("p"));
    CHECK_FALSE(voicing_counterpart("m", inv()).has_value());
    CHECK(voicing_counterpart(*voicing_counterpart("z", inv()), inv()) == std::optional<std::string>("z"));
    for (const auto& p : inv().phonemes()) {
      if (p.is_vowel()) continue;
      if (const auto c = voicing_counterpart(p.symbol, inv())) {
        CHECK(voicing_counterpart(*c, inv()) == std::optional<std::string>(p.symbol));
        CHECK(inv().at(*c).consonant->voiced != p.consonant->voiced);
      }
    }
  }

  TEST_CASE("text helpers") {
    CHECK(lowercase("ÉCOLE") == "école");
    CHECK(split_words("keen, bean! don't stop") == std::vector<std::string>{"keen", "bean", "don't", "stop"});
    CHECK(is_latin_text(" café"));
    CHECK_FALSE(is_latin_text("ईन"));
    CHECK_FALSE(is_latin_text("  "));
    CHECK(distinct_vowels({"b", "ə", "n", "æ", "n", "ə"}, inv()) == std::vector<std::string>{"ə", "æ"});
  }

  TEST_CASE("segment frequencies count normalized segments") {
    testutil::TempDir dir;
    const auto path = dir.write("lex.tsv", "leet\tl iː t\nkeen\tk iː n\nbet\tb ɛ t\n");
    const auto freq = segment_frequencies(path);
    REQUIRE(freq.size() >= 2);
    CHECK(freq[0] == std::pair<std::string, std::size_t>{"i", 2});
    CHECK(freq[1] == std::pair<std::string, std::size_t>{"t", 2});
  }
}
