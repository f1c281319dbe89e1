#pragma once

#include <bitset>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace phonolens {

inline constexpr std::size_t kInventorySize = 44;

enum class PhonemeKind { vowel, consonant };
enum class Backness { front, central, back };

std::string_view to_string(PhonemeKind kind);
std::string_view to_string(Backness backness);

struct VowelAttrs {
  Backness backness = Backness::front;
  int openness = 0;  // 0 = close ... 6 = open
  bool rounded = false;
  bool diphthong = false;

  friend bool operator==(const VowelAttrs&, const VowelAttrs&) = default;
};

struct ConsonantAttrs {
  bool voiced = false;
  std::optional<std::string> counterpart;  // other member of the voicing pair

  friend bool operator==(const ConsonantAttrs&, const ConsonantAttrs&) = default;
};

struct Phoneme {
  std::string symbol;
  PhonemeKind kind = PhonemeKind::consonant;
  std::optional<VowelAttrs> vowel;
  std::optional<ConsonantAttrs> consonant;

  bool is_vowel() const { return kind == PhonemeKind::vowel; }
  friend bool operator==(const Phoneme&, const Phoneme&) = default;
};

using Multihot = std::bitset<kInventorySize>;
using Pronunciation = std::vector<std::string>;

// Ordered, frozen set of 44 phonemes. Probe rows and multi-hot bits follow
// this order, so it is persisted alongside every probe.
class PhonemeInventory {
 public:
  explicit PhonemeInventory(std::vector<Phoneme> phonemes, std::string version = "custom");

  // Built-in US-English inventory (version "en_us-v1").
  static const PhonemeInventory& english_us();

  static PhonemeInventory from_json(const nlohmann::json& j);
  static PhonemeInventory load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  std::string to_json_string() const;
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return phonemes_.size(); }
  const std::vector<Phoneme>& phonemes() const { return phonemes_; }
  const Phoneme& at(std::size_t index) const { return phonemes_.at(index); }
  const Phoneme& at(std::string_view symbol) const;
  std::optional<std::size_t> index_of(std::string_view symbol) const;
  bool contains(std::string_view symbol) const { return index_of(symbol).has_value(); }
  bool is_vowel(std::string_view symbol) const;
  const std::string& version() const { return version_; }

  // Hex digest of the canonical JSON serialization.
  std::string hash() const;

  friend bool operator==(const PhonemeInventory& a, const PhonemeInventory& b) {
    return a.phonemes_ == b.phonemes_ && a.version_ == b.version_;
  }

 private:
  std::vector<Phoneme> phonemes_;
  std::string version_;
  std::unordered_map<std::string, std::size_t> index_;
};

// NFC-normalizes one IPA segment and strips stress, length, syllable and tie
// marks. ASCII "g" and "r" are folded to the IPA letters the inventory uses.
std::string normalize_segment(std::string_view segment);

// NFC normalization of an arbitrary UTF-8 string.
std::string nfc(std::string_view text);

// Unicode-aware lowercase.
std::string lowercase(std::string_view text);

// Splits on whitespace and punctuation; apostrophes stay inside words.
std::vector<std::string> split_words(std::string_view text);

// True when the text (ignoring whitespace) is non-empty and every code point
// is ASCII or Latin script.
bool is_latin_text(std::string_view text);

class PronunciationLexicon {
 public:
  explicit PronunciationLexicon(std::shared_ptr<const PhonemeInventory> inventory);

  void add(const std::string& word, Pronunciation pronunciation);

  bool contains(std::string_view word) const;
  const std::vector<Pronunciation>& pronunciations(std::string_view word) const;
  const Pronunciation& first(std::string_view word) const;
  std::vector<std::string> words() const;  // sorted
  std::size_t size() const { return entries_.size(); }
  std::size_t skipped_rows() const { return skipped_rows_; }
  void set_skipped_rows(std::size_t n) { skipped_rows_ = n; }

  const PhonemeInventory& inventory() const { return *inventory_; }
  std::shared_ptr<const PhonemeInventory> inventory_ptr() const { return inventory_; }

 private:
  std::shared_ptr<const PhonemeInventory> inventory_;
  std::map<std::string, std::vector<Pronunciation>, std::less<>> entries_;
  std::size_t skipped_rows_ = 0;
};

// Reads WikiPron-style TSV rows: `word<TAB>space separated segments`.
PronunciationLexicon load_lexicon(const std::filesystem::path& path,
                                  std::shared_ptr<const PhonemeInventory> inventory);
PronunciationLexicon parse_lexicon(std::istream& in,
                                   std::shared_ptr<const PhonemeInventory> inventory);

// Most frequent `n` normalized segments of a TSV, ties by symbol.
std::vector<std::pair<std::string, std::size_t>> segment_frequencies(
    const std::filesystem::path& path);

Multihot multihot(std::string_view word, const PronunciationLexicon& lexicon);

struct RhymeTail {
  Pronunciation phonemes;
  friend bool operator==(const RhymeTail&, const RhymeTail&) = default;
  friend auto operator<=>(const RhymeTail&, const RhymeTail&) = default;
};

RhymeTail rhyme_tail(const Pronunciation& pronunciation, const PhonemeInventory& inventory);

// All rhyme tails of a word over every listed pronunciation that has a vowel.
std::vector<RhymeTail> rhyme_tails(std::string_view word, const PronunciationLexicon& lexicon);

bool rhymes(std::string_view a, std::string_view b, const PronunciationLexicon& lexicon);
bool sufficiently_different(std::string_view a, std::string_view b,
                            const PronunciationLexicon& lexicon);

VowelAttrs vowel_class(std::string_view symbol, const PhonemeInventory& inventory);
std::optional<std::string> voicing_counterpart(std::string_view symbol,
                                               const PhonemeInventory& inventory);

// Distinct vowel symbols of a pronunciation in first-occurrence order.
std::vector<std::string> distinct_vowels(const Pronunciation& pronunciation,
                                         const PhonemeInventory& inventory);

}  // namespace phonolens
