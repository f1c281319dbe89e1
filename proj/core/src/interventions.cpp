#include "phonolens/interventions.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "phonolens/error.hpp"

namespace phonolens {

using nlohmann::json;

std::string rhyme_prompt(std::string_view word, std::string_view tmpl) {
  std::string out(tmpl);
  const auto slot = out.find("{word}");
  require(slot != std::string::npos, ErrorKind::argument, "template has no {word} slot");
  out.replace(slot, 6, word);
  return out;
}

int target_position(const ModelHandle& model, std::string_view word, std::string_view tmpl) {
  const auto id = single_token_id(model, word);
  if (!id) fail(ErrorKind::tokenization, "'" + std::string(word) + "' is not a single token");
  const auto tokens = model.tokenize_prompt(rhyme_prompt(word, tmpl));
  const auto it = std::find(tokens.begin(), tokens.end(), *id);
  if (it == tokens.end()) {
    fail(ErrorKind::tokenization, "token of '" + std::string(word) + "' not found in the prompt");
  }
  return static_cast<int>(it - tokens.begin());
}

std::string_view to_string(VowelLabel label) {
  switch (label) {
    case VowelLabel::xi_vowel: return "xi-vowel";
    case VowelLabel::mu_vowel: return "mu-vowel";
    case VowelLabel::third_party: return "third-party";
    case VowelLabel::mixed: return "mixed";
    case VowelLabel::unknown: return "unknown";
  }
  return "unknown";
}

namespace {

std::set<std::string> word_vowels(std::string_view word, const PronunciationLexicon& lexicon) {
  std::set<std::string> out;
  for (const auto& p : lexicon.pronunciations(word)) {
    for (auto& v : distinct_vowels(p, lexicon.inventory())) out.insert(std::move(v));
  }
  return out;
}

VowelLabel label_word(const std::set<std::string>& vowels, std::string_view xi, std::string_view mu) {
  const bool has_xi = vowels.count(std::string(xi)) > 0;
  const bool has_mu = vowels.count(std::string(mu)) > 0;
  if (has_xi && has_mu) return VowelLabel::mixed;
  if (has_xi) return VowelLabel::xi_vowel;
  if (has_mu) return VowelLabel::mu_vowel;
  return VowelLabel::third_party;
}

}  // namespace

VowelClassification classify_vowels(const std::vector<std::string>& words,
                                    const PronunciationLexicon& lexicon, std::string_view xi,
                                    std::string_view mu) {
  VowelClassification out;
  std::map<VowelLabel, int> votes;
  for (const auto& raw : words) {
    const std::string word = lowercase(raw);
    if (!lexicon.contains(word)) {
      out.unknown.push_back(word);
      continue;
    }
    const auto vowels = word_vowels(word, lexicon);
    out.judged.push_back(word);
    ++votes[label_word(vowels, xi, mu)];
    for (const auto& v : vowels) {
      if (v != xi && v != mu) out.third_party.insert(v);
    }
  }
  if (votes.empty()) return out;
  int best = 0;
  for (const auto& [label, n] : votes) best = std::max(best, n);
  std::vector<VowelLabel> leaders;
  for (const auto& [label, n] : votes) {
    if (n == best) leaders.push_back(label);
  }
  out.label = leaders.size() == 1 ? leaders.front() : VowelLabel::mixed;
  return out;
}

std::vector<std::string> candidate_words(std::string_view text, const PronunciationLexicon& lexicon) {
  std::vector<std::string> out;
  for (const auto& w : split_words(text)) {
    auto lower = lowercase(w);
    if (lexicon.contains(lower)) out.push_back(std::move(lower));
  }
  return out;
}

void InterventionSpec::validate(const PronunciationLexicon& lexicon) const {
  const auto& inv = lexicon.inventory();
  for (const auto* sym : {&xi, &mu}) {
    if (!inv.contains(*sym) || !inv.is_vowel(*sym)) {
      fail(ErrorKind::spec, "'" + *sym + "' is not a vowel of the inventory");
    }
  }
  require(xi != mu, ErrorKind::spec, "xi and mu must differ");
  require(!c_grid.empty() && c_grid.front() == 0.0, ErrorKind::spec, "c grid must start at 0");
  require(std::is_sorted(c_grid.begin(), c_grid.end()) &&
              std::adjacent_find(c_grid.begin(), c_grid.end()) == c_grid.end(),
          ErrorKind::spec, "c grid must be strictly ascending");
  require(n_continuation_tokens >= 1, ErrorKind::spec, "need at least one continuation token");
  if (!lexicon.contains(word)) fail(ErrorKind::spec, "'" + word + "' is not in the lexicon");
  const auto vowels = distinct_vowels(lexicon.first(word), inv);
  require(vowels.size() == 1, ErrorKind::spec,
          "'" + word + "' must have exactly one distinct vowel, has " + std::to_string(vowels.size()));
  require(vowels.front() == xi, ErrorKind::spec,
          "xi /" + xi + "/ is not the vowel of '" + word + "' (/" + vowels.front() + "/)");
}

std::vector<double> default_c_grid() {
  std::vector<double> grid;
  for (int c = 0; c <= 20; c += 2) grid.push_back(c);
  return grid;
}

std::vector<double> parse_c_grid(std::string_view text) {
  auto number = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      fail(ErrorKind::spec, "bad number '" + s + "' in c grid");
    }
  };
  std::vector<std::string> parts;
  std::string current;
  const char sep = text.find(':') != std::string_view::npos ? ':' : ',';
  for (char ch : text) {
    if (ch == sep) {
      parts.push_back(current);
      current.clear();
    } else if (ch != ' ') {
      current += ch;
    }
  }
  parts.push_back(current);
  std::vector<double> grid;
  if (sep == ':') {
    require(parts.size() == 3, ErrorKind::spec, "range grid must be start:stop:step");
    const double start = number(parts[0]), stop = number(parts[1]), step = number(parts[2]);
    require(step > 0 && stop >= start, ErrorKind::spec, "range grid needs step > 0 and stop >= start");
    const auto n = static_cast<long>(std::floor((stop - start) / step + 1e-9));
    for (long i = 0; i <= n; ++i) {
      // drop binary representation noise (0.6000000000000001 -> 0.6)
      grid.push_back(std::round((start + static_cast<double>(i) * step) * 1e9) / 1e9);
    }
  } else {
    for (const auto& p : parts) grid.push_back(number(p));
  }
  return grid;
}

json SweepRow::to_json() const {
  return json{{"c", c},
              {"first_token", first_token},
              {"continuation", continuation},
              {"continuation_text", continuation_text},
              {"words", words},
              {"classification", std::string(to_string(classification.label))},
              {"third_party_vowels", classification.third_party},
              {"unknown_words", classification.unknown}};
}

std::vector<SweepRow> intervene(const ModelHandle& model, const ProbeMatrix& probe,
                                const InterventionSpec& spec, const PronunciationLexicon& lexicon) {
  spec.validate(lexicon);
  const int position = target_position(model, spec.word);
  const auto& inv = lexicon.inventory();
  const Vector direction = phoneme_vector(probe, spec.mu, inv) - phoneme_vector(probe, spec.xi, inv);
  require(direction.size() == model.config().d_model, ErrorKind::shape,
          "probe width differs from the model's d_model");
  const std::string prompt = rhyme_prompt(spec.word);
  std::vector<SweepRow> rows;
  for (double c : spec.c_grid) {
    const Vector delta = static_cast<float>(c) * direction;
    const auto run = run_with_embedding_edit(model, prompt, position, delta, spec.n_continuation_tokens);
    SweepRow row;
    row.c = c;
    row.first_token = run.continuation.empty() ? argmax_token(run.logits) : run.continuation.front();
    row.continuation = run.continuation;
    row.continuation_text = run.continuation_text;
    row.words = candidate_words(run.continuation_text, lexicon);
    row.classification = classify_vowels(row.words, lexicon, spec.xi, spec.mu);
    rows.push_back(std::move(row));
  }
  return rows;
}

TransitionCurve transition_curve(const std::vector<SweepRow>& rows) {
  TransitionCurve out;
  std::vector<const SweepRow*> sorted;
  for (const auto& r : rows) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->c < b->c; });
  for (auto it = sorted.rbegin(); it != sorted.rend(); ++it) {
    if ((*it)->classification.label != VowelLabel::mu_vowel) break;
    out.c_switch = (*it)->c;
  }
  for (const auto* r : sorted) {
    if (r->classification.label == VowelLabel::third_party) out.third_party_cs.push_back(r->c);
  }
  return out;
}

std::string render_sweep(const std::vector<SweepRow>& rows, const PronunciationLexicon& lexicon,
                         std::string_view xi, std::string_view mu, bool ansi) {
  std::ostringstream out;
  for (const auto& row : rows) {
    out << "c=" << row.c << " [" << to_string(row.classification.label) << "]";
    for (const auto& w : row.words) {
      const auto label = label_word(word_vowels(w, lexicon), xi, mu);
      const char* colour = nullptr;
      if (label == VowelLabel::xi_vowel) colour = "\x1b[34m";
      if (label == VowelLabel::mu_vowel) colour = "\x1b[31m";
      if (label == VowelLabel::mixed) colour = "\x1b[35m";
      out << ' ';
      if (ansi && colour) {
        out << colour << w << "\x1b[0m";
      } else if (!ansi && colour) {
        out << w << (label == VowelLabel::xi_vowel ? "(xi)" : label == VowelLabel::mu_vowel ? "(mu)" : "(xi+mu)");
      } else {
        out << w;
      }
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace phonolens
