#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "phonolens/model.hpp"
#include "phonolens/phonetics.hpp"
#include "phonolens/probe.hpp"

namespace phonolens {

// Canonical rhyme prompt; `{word}` marks the substitution slot.
inline constexpr std::string_view kRhymeTemplate =
    "Here are a few examples of words\nthat rhyme with {word}:";

std::string rhyme_prompt(std::string_view word, std::string_view tmpl = kRhymeTemplate);

// Token position of the first occurrence of `word`'s single token in the
// tokenized rhyme prompt.
int target_position(const ModelHandle& model, std::string_view word,
                    std::string_view tmpl = kRhymeTemplate);

enum class VowelLabel { xi_vowel, mu_vowel, third_party, mixed, unknown };
std::string_view to_string(VowelLabel label);

struct VowelClassification {
  VowelLabel label = VowelLabel::unknown;
  std::set<std::string> third_party;    // observed vowels other than xi and mu
  std::vector<std::string> judged;      // words found in the lexicon
  std::vector<std::string> unknown;     // words absent from the lexicon
};

// Per word: vowel set over all its pronunciations -> xi-only, mu-only, both
// (mixed) or neither (third-party). The majority label wins; ties are mixed;
// no judged words is unknown.
VowelClassification classify_vowels(const std::vector<std::string>& words,
                                    const PronunciationLexicon& lexicon, std::string_view xi,
                                    std::string_view mu);

// Splits a continuation into lowercase words and keeps those in the lexicon.
std::vector<std::string> candidate_words(std::string_view text, const PronunciationLexicon& lexicon);

struct InterventionSpec {
  std::string word;
  std::string xi;
  std::string mu;
  std::vector<double> c_grid;
  int n_continuation_tokens = 24;

  // Raises spec errors for non-vowels, equal vowels, a bad grid or an xi
  // that is not in the word's pronunciation.
  void validate(const PronunciationLexicon& lexicon) const;
};

// {0, 2, ..., 20}.
std::vector<double> default_c_grid();
// "start:stop:step" (inclusive stop) or a comma separated list.
std::vector<double> parse_c_grid(std::string_view text);

struct SweepRow {
  double c = 0.0;
  TokenId first_token = 0;
  std::vector<TokenId> continuation;
  std::string continuation_text;
  std::vector<std::string> words;  // candidate words of the continuation
  VowelClassification classification;

  nlohmann::json to_json() const;
};

// One greedy continuation per c with E[word] += c (mu_vec - xi_vec), where
// the vectors are rows of `probe`.
std::vector<SweepRow> intervene(const ModelHandle& model, const ProbeMatrix& probe,
                                const InterventionSpec& spec, const PronunciationLexicon& lexicon);

struct TransitionCurve {
  std::optional<double> c_switch;  // first c from which every row is mu-vowel
  std::vector<double> third_party_cs;
};
TransitionCurve transition_curve(const std::vector<SweepRow>& rows);

// One line per row with generated words coloured by vowel content (blue: xi
// present, red: mu present, magenta: both) when `ansi` is set.
std::string render_sweep(const std::vector<SweepRow>& rows, const PronunciationLexicon& lexicon,
                         std::string_view xi, std::string_view mu, bool ansi);

}  // namespace phonolens
