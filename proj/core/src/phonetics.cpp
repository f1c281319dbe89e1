#include "phonolens/phonetics.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/uscript.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "phonolens/digest.hpp"
#include "phonolens/error.hpp"

namespace phonolens {

using nlohmann::json;

std::string_view to_string(PhonemeKind kind) {
  return kind == PhonemeKind::vowel ? "vowel" : "consonant";
}

std::string_view to_string(Backness backness) {
  switch (backness) {
    case Backness::front: return "front";
    case Backness::central: return "central";
    case Backness::back: return "back";
  }
  return "front";
}

namespace {

Backness parse_backness(const std::string& s) {
  if (s == "front") return Backness::front;
  if (s == "central") return Backness::central;
  if (s == "back") return Backness::back;
  fail(ErrorKind::parse, "unknown backness '" + s + "'");
}

Phoneme vowel(std::string symbol, Backness backness, int openness, bool rounded,
              bool diphthong = false) {
  return Phoneme{std::move(symbol), PhonemeKind::vowel,
                 VowelAttrs{backness, openness, rounded, diphthong}, std::nullopt};
}

Phoneme consonant(std::string symbol, bool voiced, std::optional<std::string> counterpart = {}) {
  return Phoneme{std::move(symbol), PhonemeKind::consonant, std::nullopt,
                 ConsonantAttrs{voiced, std::move(counterpart)}};
}

std::vector<Phoneme> english_us_table() {
  using B = Backness;
  return {
      // monophthongs, close to open within each backness class
      vowel("i", B::front, 0, false),
      vowel("ɪ", B::front, 1, false),
      vowel("e", B::front, 2, false),
      vowel("ɛ", B::front, 4, false),
      vowel("æ", B::front, 5, false),
      vowel("a", B::front, 6, false),
      vowel("ə", B::central, 3, false),
      vowel("ɚ", B::central, 3, false),
      vowel("ɝ", B::central, 4, false),
      vowel("u", B::back, 0, true),
      vowel("ʊ", B::back, 1, true),
      vowel("o", B::back, 2, true),
      vowel("ɔ", B::back, 4, true),
      vowel("ʌ", B::back, 4, false),
      vowel("ɑ", B::back, 6, false),
      // diphthongs, attributes of the nucleus
      vowel("aɪ", B::front, 6, false, true),
      vowel("aʊ", B::front, 6, false, true),
      vowel("ɔɪ", B::back, 4, true, true),
      // consonants
      consonant("p", false, "b"),
      consonant("b", true, "p"),
      consonant("t", false, "d"),
      consonant("d", true, "t"),
      consonant("k", false, "ɡ"),
      consonant("ɡ", true, "k"),
      consonant("f", false, "v"),
      consonant("v", true, "f"),
      consonant("θ", false, "ð"),
      consonant("ð", true, "θ"),
      consonant("s", false, "z"),
      consonant("z", true, "s"),
      consonant("ʃ", false, "ʒ"),
      consonant("ʒ", true, "ʃ"),
      consonant("tʃ", false, "dʒ"),
      consonant("dʒ", true, "tʃ"),
      consonant("h", false),
      consonant("m", true),
      consonant("n", true),
      consonant("ŋ", true),
      consonant("l", true),
      consonant("ɹ", true),
      consonant("j", true),
      consonant("w", true),
      consonant("ɾ", true),
      consonant("ʔ", false),
  };
}

bool is_stripped_codepoint(UChar32 c) {
  switch (c) {
    case 0x02C8:  // primary stress
    case 0x02CC:  // secondary stress
    case 0x02D0:  // length
    case 0x02D1:  // half length
    case 0x002E:  // syllable dot
    case 0x203F:  // linking
    case 0x0361:  // tie above
    case 0x035C:  // tie below
    case 0x0329:  // syllabic
    case 0x030D:  // syllabic (above)
    case 0x032F:  // non-syllabic
      return true;
    default:
      return false;
  }
}

const icu::Normalizer2& nfc_normalizer() {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* n = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status) || n == nullptr) fail(ErrorKind::io, "ICU NFC normalizer unavailable");
  return *n;
}

std::string to_utf8(const icu::UnicodeString& s) {
  std::string out;
  s.toUTF8String(out);
  return out;
}

std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string lowercase(std::string_view text) {
  icu::UnicodeString u = icu::UnicodeString::fromUTF8(
      icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  u.toLower();
  return to_utf8(u);
}

std::vector<std::string> split_words(std::string_view text) {
  const icu::UnicodeString u = icu::UnicodeString::fromUTF8(
      icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  std::vector<std::string> words;
  icu::UnicodeString current;
  auto flush = [&] {
    if (!current.isEmpty()) words.push_back(to_utf8(current));
    current.remove();
  };
  for (int32_t i = 0; i < u.length();) {
    const UChar32 cp = u.char32At(i);
    i += U16_LENGTH(cp);
    // apostrophes stay inside words ("don't"); everything else that is not
    // a letter, mark or digit separates words
    if (u_isalnum(cp) || u_getIntPropertyValue(cp, UCHAR_GENERAL_CATEGORY_MASK) & U_GC_M_MASK ||
        cp == U'\'' || cp == 0x2019) {
      current.append(cp);
    } else {
      flush();
    }
  }
  flush();
  return words;
}

bool is_latin_text(std::string_view text) {
  const icu::UnicodeString u = icu::UnicodeString::fromUTF8(
      icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  bool any = false;
  for (int32_t i = 0; i < u.length();) {
    const UChar32 cp = u.char32At(i);
    i += U16_LENGTH(cp);
    if (u_isUWhiteSpace(cp)) continue;
    any = true;
    if (cp < 0x80) continue;
    UErrorCode status = U_ZERO_ERROR;
    const UScriptCode script = uscript_getScript(cp, &status);
    if (U_FAILURE(status) || (script != USCRIPT_LATIN && script != USCRIPT_INHERITED)) return false;
  }
  return any;
}

std::string nfc(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  icu::UnicodeString u = icu::UnicodeString::fromUTF8(
      icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  icu::UnicodeString out = nfc_normalizer().normalize(u, status);
  if (U_FAILURE(status)) fail(ErrorKind::parse, "NFC normalization failed");
  return to_utf8(out);
}

std::string normalize_segment(std::string_view segment) {
  UErrorCode status = U_ZERO_ERROR;
  icu::UnicodeString u = icu::UnicodeString::fromUTF8(
      icu::StringPiece(segment.data(), static_cast<int32_t>(segment.size())));
  icu::UnicodeString composed = nfc_normalizer().normalize(u, status);
  if (U_FAILURE(status)) fail(ErrorKind::parse, "NFC normalization failed");

  icu::UnicodeString kept;
  for (int32_t i = 0; i < composed.length();) {
    const UChar32 c = composed.char32At(i);
    i += U16_LENGTH(c);
    if (is_stripped_codepoint(c)) continue;
    if (c == 'g') {
      kept.append(static_cast<UChar32>(0x0261));
    } else if (c == 'r') {
      kept.append(static_cast<UChar32>(0x0279));
    } else {
      kept.append(c);
    }
  }
  icu::UnicodeString out = nfc_normalizer().normalize(kept, status);
  if (U_FAILURE(status)) fail(ErrorKind::parse, "NFC normalization failed");
  return to_utf8(out);
}

// ---------------------------------------------------------------------------
// PhonemeInventory

PhonemeInventory::PhonemeInventory(std::vector<Phoneme> phonemes, std::string version)
    : phonemes_(std::move(phonemes)), version_(std::move(version)) {
  require(phonemes_.size() == kInventorySize, ErrorKind::spec,
          "inventory must have exactly " + std::to_string(kInventorySize) + " phonemes, got " +
              std::to_string(phonemes_.size()));
  for (std::size_t i = 0; i < phonemes_.size(); ++i) {
    auto& p = phonemes_[i];
    p.symbol = nfc(p.symbol);
    require(p.vowel.has_value() != p.consonant.has_value(), ErrorKind::spec,
            "phoneme '" + p.symbol + "' must carry exactly one attribute record");
    require(p.is_vowel() == p.vowel.has_value(), ErrorKind::spec,
            "phoneme '" + p.symbol + "' kind disagrees with its attributes");
    require(index_.emplace(p.symbol, i).second, ErrorKind::spec,
            "duplicate phoneme symbol '" + p.symbol + "'");
  }
  for (const auto& p : phonemes_) {
    if (!p.consonant || !p.consonant->counterpart) continue;
    const auto& other_symbol = *p.consonant->counterpart;
    auto it = index_.find(other_symbol);
    require(it != index_.end(), ErrorKind::spec,
            "voicing counterpart '" + other_symbol + "' of '" + p.symbol + "' not in inventory");
    const auto& other = phonemes_[it->second];
    require(other.consonant && other.consonant->counterpart == p.symbol, ErrorKind::spec,
            "voicing pair '" + p.symbol + "'/'" + other_symbol + "' is not symmetric");
  }
}

const PhonemeInventory& PhonemeInventory::english_us() {
  static const PhonemeInventory inventory(english_us_table(), "en_us-v1");
  return inventory;
}

const Phoneme& PhonemeInventory::at(std::string_view symbol) const {
  auto idx = index_of(symbol);
  if (!idx) fail(ErrorKind::not_found, "phoneme '" + std::string(symbol) + "' not in inventory");
  return phonemes_[*idx];
}

std::optional<std::size_t> PhonemeInventory::index_of(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool PhonemeInventory::is_vowel(std::string_view symbol) const {
  auto idx = index_of(symbol);
  return idx && phonemes_[*idx].is_vowel();
}

json PhonemeInventory::to_json() const {
  json records = json::array();
  for (const auto& p : phonemes_) {
    json r;
    r["symbol"] = p.symbol;
    r["kind"] = std::string(to_string(p.kind));
    if (p.vowel) {
      r["backness"] = std::string(to_string(p.vowel->backness));
      r["openness"] = p.vowel->openness;
      r["rounded"] = p.vowel->rounded;
      r["diphthong"] = p.vowel->diphthong;
    } else {
      r["voiced"] = p.consonant->voiced;
      r["counterpart"] = p.consonant->counterpart ? json(*p.consonant->counterpart) : json(nullptr);
    }
    records.push_back(std::move(r));
  }
  return json{{"version", version_}, {"phonemes", std::move(records)}};
}

std::string PhonemeInventory::to_json_string() const { return to_json().dump(2) + "\n"; }

PhonemeInventory PhonemeInventory::from_json(const json& j) {
  try {
    std::vector<Phoneme> phonemes;
    const json& records = j.is_array() ? j : j.at("phonemes");
    for (const auto& r : records) {
      const auto kind = r.at("kind").get<std::string>();
      if (kind == "vowel") {
        phonemes.push_back(vowel(r.at("symbol").get<std::string>(),
                                 parse_backness(r.at("backness").get<std::string>()),
                                 r.at("openness").get<int>(), r.at("rounded").get<bool>(),
                                 r.value("diphthong", false)));
      } else if (kind == "consonant") {
        std::optional<std::string> counterpart;
        if (r.contains("counterpart") && !r.at("counterpart").is_null()) {
          counterpart = r.at("counterpart").get<std::string>();
        }
        phonemes.push_back(consonant(r.at("symbol").get<std::string>(),
                                     r.at("voiced").get<bool>(), std::move(counterpart)));
      } else {
        fail(ErrorKind::parse, "unknown phoneme kind '" + kind + "'");
      }
    }
    std::string version = j.is_object() ? j.value("version", "custom") : "custom";
    return PhonemeInventory(std::move(phonemes), std::move(version));
  } catch (const json::exception& e) {
    fail(ErrorKind::parse, std::string("inventory json: ") + e.what());
  }
}

PhonemeInventory PhonemeInventory::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot read inventory " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    fail(ErrorKind::parse, path.string() + ": " + e.what());
  }
}

void PhonemeInventory::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write inventory " + path.string());
  out << to_json_string();
}

std::string PhonemeInventory::hash() const { return sha256_hex(to_json().dump()); }

// ---------------------------------------------------------------------------
// PronunciationLexicon

PronunciationLexicon::PronunciationLexicon(std::shared_ptr<const PhonemeInventory> inventory)
    : inventory_(std::move(inventory)) {
  require(inventory_ != nullptr, ErrorKind::argument, "lexicon needs an inventory");
}

void PronunciationLexicon::add(const std::string& word, Pronunciation pronunciation) {
  require(!pronunciation.empty(), ErrorKind::argument, "empty pronunciation for '" + word + "'");
  for (const auto& s : pronunciation) {
    require(inventory_->contains(s), ErrorKind::not_found,
            "phoneme '" + s + "' of '" + word + "' not in inventory");
  }
  auto& list = entries_[word];
  if (std::find(list.begin(), list.end(), pronunciation) == list.end()) {
    list.push_back(std::move(pronunciation));
  }
}

bool PronunciationLexicon::contains(std::string_view word) const {
  return entries_.find(word) != entries_.end();
}

const std::vector<Pronunciation>& PronunciationLexicon::pronunciations(std::string_view word) const {
  auto it = entries_.find(word);
  if (it == entries_.end()) fail(ErrorKind::not_found, "word '" + std::string(word) + "' not in lexicon");
  return it->second;
}

const Pronunciation& PronunciationLexicon::first(std::string_view word) const {
  return pronunciations(word).front();
}

std::vector<std::string> PronunciationLexicon::words() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [w, _] : entries_) out.push_back(w);
  return out;
}

PronunciationLexicon parse_lexicon(std::istream& in,
                                   std::shared_ptr<const PhonemeInventory> inventory) {
  PronunciationLexicon lexicon(inventory);
  std::size_t skipped = 0;
  std::size_t accepted = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      ++skipped;
      continue;
    }
    const std::string word = lowercase(nfc(trim(std::string_view(line).substr(0, tab))));
    std::string_view rest = std::string_view(line).substr(tab + 1);
    if (auto tab2 = rest.find('\t'); tab2 != std::string_view::npos) rest = rest.substr(0, tab2);

    Pronunciation pron;
    bool ok = !word.empty();
    std::istringstream segs{std::string(rest)};
    std::string seg;
    while (ok && segs >> seg) {
      std::string norm = normalize_segment(seg);
      if (norm.empty()) continue;
      if (!inventory->contains(norm)) {
        ok = false;
        break;
      }
      pron.push_back(std::move(norm));
    }
    if (!ok || pron.empty()) {
      ++skipped;
      continue;
    }
    lexicon.add(word, std::move(pron));
    ++accepted;
  }
  if (accepted == 0) fail(ErrorKind::empty_lexicon, "no mappable pronunciation rows");
  lexicon.set_skipped_rows(skipped);
  return lexicon;
}

PronunciationLexicon load_lexicon(const std::filesystem::path& path,
                                  std::shared_ptr<const PhonemeInventory> inventory) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot read lexicon " + path.string());
  return parse_lexicon(in, std::move(inventory));
}

std::vector<std::pair<std::string, std::size_t>> segment_frequencies(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot read lexicon " + path.string());
  std::map<std::string, std::size_t> counts;
  std::string line;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    std::istringstream segs(line.substr(tab + 1));
    std::string seg;
    while (segs >> seg) {
      auto norm = normalize_segment(seg);
      if (!norm.empty()) ++counts[norm];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> out(counts.begin(), counts.end());
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

// ---------------------------------------------------------------------------
// predicates

Multihot multihot(std::string_view word, const PronunciationLexicon& lexicon) {
  Multihot bits;
  for (const auto& s : lexicon.first(word)) bits.set(*lexicon.inventory().index_of(s));
  return bits;
}

RhymeTail rhyme_tail(const Pronunciation& pronunciation, const PhonemeInventory& inventory) {
  for (std::size_t i = pronunciation.size(); i-- > 0;) {
    if (inventory.is_vowel(pronunciation[i])) {
      return RhymeTail{Pronunciation(pronunciation.begin() + static_cast<std::ptrdiff_t>(i),
                                     pronunciation.end())};
    }
  }
  fail(ErrorKind::no_vowel, "pronunciation has no vowel");
}

std::vector<RhymeTail> rhyme_tails(std::string_view word, const PronunciationLexicon& lexicon) {
  std::vector<RhymeTail> tails;
  for (const auto& p : lexicon.pronunciations(word)) {
    if (std::none_of(p.begin(), p.end(),
                     [&](const auto& s) { return lexicon.inventory().is_vowel(s); })) {
      continue;
    }
    tails.push_back(rhyme_tail(p, lexicon.inventory()));
  }
  return tails;
}

namespace {
bool share_tail(std::string_view a, std::string_view b, const PronunciationLexicon& lexicon) {
  const auto ta = rhyme_tails(a, lexicon);
  const auto tb = rhyme_tails(b, lexicon);
  for (const auto& x : ta) {
    if (std::find(tb.begin(), tb.end(), x) != tb.end()) return true;
  }
  return false;
}
}  // namespace

bool rhymes(std::string_view a, std::string_view b, const PronunciationLexicon& lexicon) {
  const bool shared = share_tail(a, b, lexicon);  // validates both words
  return a != b && shared;
}

bool sufficiently_different(std::string_view a, std::string_view b,
                            const PronunciationLexicon& lexicon) {
  return !share_tail(a, b, lexicon);
}

VowelAttrs vowel_class(std::string_view symbol, const PhonemeInventory& inventory) {
  const auto& p = inventory.at(symbol);
  if (!p.is_vowel()) fail(ErrorKind::kind, "'" + std::string(symbol) + "' is not a vowel");
  return *p.vowel;
}

std::optional<std::string> voicing_counterpart(std::string_view symbol,
                                               const PhonemeInventory& inventory) {
  auto idx = inventory.index_of(symbol);
  if (!idx) return std::nullopt;
  const auto& p = inventory.at(*idx);
  if (!p.consonant) return std::nullopt;
  return p.consonant->counterpart;
}

std::vector<std::string> distinct_vowels(const Pronunciation& pronunciation,
                                         const PhonemeInventory& inventory) {
  std::vector<std::string> out;
  for (const auto& s : pronunciation) {
    if (inventory.is_vowel(s) && std::find(out.begin(), out.end(), s) == out.end()) {
      out.push_back(s);
    }
  }
  return out;
}

}  // namespace phonolens
