#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "phonolens/model.hpp"
#include "phonolens/phonetics.hpp"

namespace phonolens {

// head_z of `head` at the final position of the word's rhyme prompt.
Vector capture_final_z(const ModelHandle& model, std::string_view word, HeadId head);

struct DecodedResultVector {
  std::string word;
  HeadId head;
  Vector z;
  ResultVector result;
  std::vector<ScoredToken> top;           // logit lens of the result vector
  std::optional<RhymeTail> target_tail;   // when the word is in the lexicon
  std::optional<bool> coherent;           // when judgeable

  nlohmann::json to_json() const;
};

// Runs the rhyme prompt, maps the head's final-position z through its output
// slice and decodes the result vector with the logit lens.
DecodedResultVector decode_head_for_word(const ModelHandle& model, std::string_view word,
                                         HeadId head, int k, const PronunciationLexicon& lexicon);
// Same for a caller supplied z (e.g. zeroed as an incoherence control).
DecodedResultVector decode_z(const ModelHandle& model, std::string_view word, const Vector& z,
                             HeadId head, int k, const PronunciationLexicon& lexicon);

// Lowercased token text without surrounding whitespace.
std::string token_to_word(std::string_view token_text);

// Rime spelling: the word from its last vowel-letter cluster on ("clean" ->
// "ean"); words without vowel letters are returned whole.
std::string rime_spelling(std::string_view word);

// Phonetic similarity of promoted tokens to a target's rhyme tail.
// A token is similar when
//   1. it is a lexicon word with the tail's vowel in some pronunciation, or
//   2. (two or more letters) it and the target's rime spelling are suffixes
//      of one another, or
//   3. (two or more letters) most lexicon words ending in it have the
//      tail's vowel as their rhyme vowel.
// Tokens neither in the lexicon nor ASCII/Latin script are not judgeable.
class CoherenceJudge {
 public:
  explicit CoherenceJudge(const PronunciationLexicon& lexicon);

  bool judgeable(std::string_view token_text) const;
  bool similar(std::string_view token_text, std::string_view target_word,
               const RhymeTail& target_tail) const;
  // >= 5 of the first 10 judgeable tokens similar. Raises insufficient_tokens
  // when fewer than 10 tokens are judgeable.
  bool coherent(const std::vector<ScoredToken>& ranked, std::string_view target_word,
                const RhymeTail& target_tail) const;

  const PronunciationLexicon& lexicon() const { return lexicon_; }

 private:
  bool suffix_vote(const std::string& token, const std::string& vowel) const;

  const PronunciationLexicon& lexicon_;
  std::vector<std::string> reversed_;  // sorted reversed lexicon words
};

inline constexpr int kCoherenceWindow = 10;
inline constexpr int kCoherenceThreshold = 5;

bool coherence(const DecodedResultVector& decoded, const PronunciationLexicon& lexicon);

// Any of the model's top-10 next tokens is a lexicon word that rhymes with
// `word` and differs from it.
bool task_pass(const ModelHandle& model, std::string_view word, const PronunciationLexicon& lexicon);

struct SurveyEntry {
  std::string word;
  bool coherent = false;
  bool pass = false;
  std::vector<std::string> top_tokens;
};

struct SurveyTable {
  std::size_t coherent_pass = 0;
  std::size_t coherent_fail = 0;
  std::size_t incoherent_pass = 0;
  std::size_t incoherent_fail = 0;
  std::size_t sample_size = 0;  // judged words
  std::string word_list_hash;
  HeadId head;
  std::vector<SurveyEntry> entries;
  std::vector<std::pair<std::string, std::string>> errors;  // word, reason

  nlohmann::json to_json() const;
  std::string text_table() const;
};

SurveyTable survey(const ModelHandle& model, const std::vector<std::string>& words, HeadId head,
                   const PronunciationLexicon& lexicon, int decode_k = 64);

// Keeps words that are single tokens and in the lexicon, then draws `n` of
// them with a seeded shuffle (all when n exceeds the pool).
std::vector<std::string> sample_survey_words(const ModelHandle& model,
                                             const std::vector<std::string>& words,
                                             const PronunciationLexicon& lexicon, std::size_t n,
                                             std::uint64_t seed);

// Reads a plain word list: one word per line, '#' comments, blank lines skipped.
std::vector<std::string> load_word_list(const std::filesystem::path& path);

enum class SparsityMode { signed_extremes, magnitude };
SparsityMode parse_sparsity_mode(std::string_view s);
std::string_view to_string(SparsityMode mode);

struct SparsityResult {
  double cosine = 0.0;
  std::set<int> kept;
};

// Indices kept from z: the n largest and n smallest entries (signed) or the
// 2n largest |z| (magnitude); ties by lower index.
std::set<int> kept_dimensions(const Vector& z, int n, SparsityMode mode);

SparsityResult z_sparsity(const ModelHandle& model, const Vector& z, HeadId head, int n,
                          SparsityMode mode = SparsityMode::signed_extremes);
SparsityResult z_sparsity(const ModelHandle& model, std::string_view word, HeadId head, int n,
                          SparsityMode mode = SparsityMode::signed_extremes);

struct CoverageReport {
  std::set<int> covered;
  std::vector<int> missing;
  std::size_t words = 0;
  std::vector<std::pair<std::string, double>> cosines;  // per word
  std::vector<std::pair<std::string, std::string>> errors;

  nlohmann::json to_json() const;
};

CoverageReport head_dim_coverage(const ModelHandle& model, const std::vector<std::string>& words,
                                 HeadId head, int n = 8,
                                 SparsityMode mode = SparsityMode::signed_extremes);

struct AblationOutcome {
  std::set<HeadId> ablated;
  std::vector<std::string> tokens;  // first continuation tokens
  std::string completion;           // tokens concatenated
  bool single_token_rhyme = false;  // first token alone is a rhyme of the word
};

struct TripletWordReport {
  std::string word;
  AblationOutcome baseline;
  AblationOutcome all_ablated;
  std::vector<AblationOutcome> leave_one_out;  // one per omitted head, in head order
};

struct TripletStudy {
  std::vector<HeadId> heads;
  std::vector<TripletWordReport> words;
  std::vector<std::pair<std::string, std::string>> errors;

  double baseline_rate() const;
  double all_ablated_rate() const;
  std::vector<double> leave_one_out_rates() const;
  nlohmann::json to_json() const;
};

const std::vector<HeadId>& default_triplet();  // H13L12, H21L14, H22L14

TripletStudy triplet_ablation_study(const ModelHandle& model, const std::vector<std::string>& words,
                                    const std::vector<HeadId>& heads,
                                    const PronunciationLexicon& lexicon, int n_tokens = 2);

}  // namespace phonolens
