#include "phonolens/head_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "phonolens/digest.hpp"
#include "phonolens/error.hpp"
#include "phonolens/interventions.hpp"

namespace phonolens {

using nlohmann::json;

namespace {

void check_head(const ModelConfig& c, HeadId head) {
  require(head.first >= 0 && head.first < c.n_layers && head.second >= 0 && head.second < c.n_heads,
          ErrorKind::index, "head " + head_label(head) + " out of range");
}

std::optional<RhymeTail> first_tail(std::string_view word, const PronunciationLexicon& lexicon) {
  if (!lexicon.contains(word)) return std::nullopt;
  auto tails = rhyme_tails(word, lexicon);
  if (tails.empty()) return std::nullopt;
  return tails.front();
}

bool is_vowel_letter(char c) {
  return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u' || c == 'y';
}

std::string trim_ws(std::string_view s) {
  const auto* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

json head_json(HeadId h) { return json{{"layer", h.first}, {"head", h.second}, {"label", head_label(h)}}; }

}  // namespace

Vector capture_final_z(const ModelHandle& model, std::string_view word, HeadId head) {
  check_head(model.config(), head);
  if (!single_token_id(model, word)) {
    fail(ErrorKind::tokenization, "'" + std::string(word) + "' is not a single token");
  }
  const auto tokens = model.tokenize_prompt(rhyme_prompt(word));
  const ActivationAddress a{head.first, Component::head_z, head.second,
                            static_cast<int>(tokens.size()) - 1};
  auto run = run_with_capture(model, tokens, {a});
  return run.at(a);
}

json DecodedResultVector::to_json() const {
  json tokens = json::array();
  for (const auto& t : top) tokens.push_back({{"id", t.id}, {"text", t.text}, {"score", t.score}});
  json j{{"word", word}, {"head", head_json(head)}, {"top", tokens}};
  j["target_tail"] = target_tail ? json(target_tail->phonemes) : json(nullptr);
  j["coherent"] = coherent ? json(*coherent) : json(nullptr);
  return j;
}

DecodedResultVector decode_z(const ModelHandle& model, std::string_view word, const Vector& z,
                             HeadId head, int k, const PronunciationLexicon& lexicon) {
  check_head(model.config(), head);
  DecodedResultVector d;
  d.word = std::string(word);
  d.head = head;
  d.z = z;
  d.result = head_result_vector(model, z, head.first, head.second);
  d.result.source = d.word;
  d.top = logit_lens(model, d.result.value, k);
  d.target_tail = first_tail(word, lexicon);
  if (d.target_tail) {
    try {
      d.coherent = CoherenceJudge(lexicon).coherent(d.top, d.word, *d.target_tail);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::insufficient_tokens) throw;
    }
  }
  return d;
}

DecodedResultVector decode_head_for_word(const ModelHandle& model, std::string_view word,
                                         HeadId head, int k, const PronunciationLexicon& lexicon) {
  const Vector z = capture_final_z(model, word, head);
  auto d = decode_z(model, word, z, head, k, lexicon);
  d.result.position = static_cast<int>(model.tokenize_prompt(rhyme_prompt(word)).size()) - 1;
  return d;
}

std::string token_to_word(std::string_view token_text) { return lowercase(trim_ws(token_text)); }

std::string rime_spelling(std::string_view word_in) {
  const std::string word = lowercase(word_in);
  auto cluster_start = [&](std::size_t end) -> std::optional<std::size_t> {
    // last vowel-letter cluster strictly before `end`
    std::size_t i = end;
    while (i > 0 && !is_vowel_letter(word[i - 1])) --i;
    if (i == 0) return std::nullopt;
    while (i > 0 && is_vowel_letter(word[i - 1])) --i;
    return i;
  };
  auto start = cluster_start(word.size());
  if (!start) return word;
  // a final silent "e" after a consonant belongs to the previous cluster ("cake" -> "ake")
  if (*start == word.size() - 1 && word.back() == 'e' && *start > 0) {
    if (auto prev = cluster_start(*start)) start = prev;
  }
  return word.substr(*start);
}

CoherenceJudge::CoherenceJudge(const PronunciationLexicon& lexicon) : lexicon_(lexicon) {
  for (auto w : lexicon.words()) {
    std::reverse(w.begin(), w.end());
    reversed_.push_back(std::move(w));
  }
  std::sort(reversed_.begin(), reversed_.end());
}

bool CoherenceJudge::judgeable(std::string_view token_text) const {
  const std::string w = token_to_word(token_text);
  if (w.empty()) return false;
  return lexicon_.contains(w) || is_latin_text(w);
}

bool CoherenceJudge::suffix_vote(const std::string& token, const std::string& vowel) const {
  std::string key(token.rbegin(), token.rend());
  auto it = std::lower_bound(reversed_.begin(), reversed_.end(), key);
  std::size_t n = 0, agree = 0;
  constexpr std::size_t kMaxVotes = 2000;
  for (; it != reversed_.end() && it->compare(0, key.size(), key) == 0 && n < kMaxVotes; ++it) {
    const std::string word(it->rbegin(), it->rend());
    if (word == token) continue;
    const auto tail = first_tail(word, lexicon_);
    if (!tail) continue;
    ++n;
    if (tail->phonemes.front() == vowel) ++agree;
  }
  return n > 0 && 2 * agree > n;
}

bool CoherenceJudge::similar(std::string_view token_text, std::string_view target_word,
                             const RhymeTail& target_tail) const {
  if (target_tail.phonemes.empty()) return false;
  const std::string w = token_to_word(token_text);
  if (w.empty()) return false;
  const std::string& vowel = target_tail.phonemes.front();
  if (lexicon_.contains(w)) {
    for (const auto& p : lexicon_.pronunciations(w)) {
      if (std::find(p.begin(), p.end(), vowel) != p.end()) return true;
    }
  }
  // UTF-8 byte length; the letter-count guard only needs to exclude single
  // ASCII letters
  if (w.size() < 2) return false;
  const std::string rime = rime_spelling(target_word);
  if (ends_with(rime, w) || ends_with(w, rime)) return true;
  return suffix_vote(w, vowel);
}

bool CoherenceJudge::coherent(const std::vector<ScoredToken>& ranked, std::string_view target_word,
                              const RhymeTail& target_tail) const {
  int judged = 0, hits = 0;
  for (const auto& t : ranked) {
    if (judged == kCoherenceWindow) break;
    if (!judgeable(t.text)) continue;
    ++judged;
    if (similar(t.text, target_word, target_tail)) ++hits;
  }
  if (judged < kCoherenceWindow) {
    fail(ErrorKind::insufficient_tokens, "only " + std::to_string(judged) +
                                             " judgeable tokens for '" + std::string(target_word) + "'");
  }
  return hits >= kCoherenceThreshold;
}

bool coherence(const DecodedResultVector& decoded, const PronunciationLexicon& lexicon) {
  require(decoded.top.size() >= static_cast<std::size_t>(kCoherenceWindow), ErrorKind::insufficient_tokens,
          "coherence needs at least 10 decoded tokens");
  const auto tail = decoded.target_tail ? decoded.target_tail : first_tail(decoded.word, lexicon);
  if (!tail) fail(ErrorKind::not_found, "'" + decoded.word + "' has no rhyme tail in the lexicon");
  return CoherenceJudge(lexicon).coherent(decoded.top, decoded.word, *tail);
}

namespace {

bool is_single_token_rhyme(std::string_view token_text, std::string_view word,
                           const PronunciationLexicon& lexicon) {
  const std::string w = token_to_word(token_text);
  return !w.empty() && w != word && lexicon.contains(w) && lexicon.contains(word) &&
         rhymes(w, word, lexicon);
}

}  // namespace

bool task_pass(const ModelHandle& model, std::string_view word, const PronunciationLexicon& lexicon) {
  const auto tokens = model.tokenize_prompt(rhyme_prompt(word));
  const Vector logits = model.transformer().forward(tokens).logits;
  for (const auto& t : top_k_logits(model, logits, 10)) {
    if (is_single_token_rhyme(t.text, word, lexicon)) return true;
  }
  return false;
}

namespace {

std::string hash_words(const std::vector<std::string>& words) {
  std::string joined;
  for (const auto& w : words) joined += w + "\n";
  return sha256_hex(joined);
}

}  // namespace

json SurveyTable::to_json() const {
  json rows = json::array();
  for (const auto& e : entries) {
    rows.push_back({{"word", e.word}, {"coherent", e.coherent}, {"pass", e.pass}, {"top_tokens", e.top_tokens}});
  }
  json errs = json::array();
  for (const auto& [w, why] : errors) errs.push_back({{"word", w}, {"reason", why}});
  return json{{"kind", "survey"},
              {"head", head_json(head)},
              {"sample_size", sample_size},
              {"word_list_hash", word_list_hash},
              {"cells",
               {{"pass_coherent", coherent_pass},
                {"pass_incoherent", incoherent_pass},
                {"fail_coherent", coherent_fail},
                {"fail_incoherent", incoherent_fail}}},
              {"entries", rows},
              {"errors", errs}};
}

std::string SurveyTable::text_table() const {
  auto pct = [&](std::size_t n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%4zu (%5.1f%%)", n,
                  sample_size ? 100.0 * static_cast<double>(n) / static_cast<double>(sample_size) : 0.0);
    return std::string(buf);
  };
  std::ostringstream out;
  out << "survey of " << head_label(head) << " over " << sample_size << " words";
  if (!errors.empty()) out << " (" << errors.size() << " excluded)";
  out << "\n"
      << "              coherent        incoherent\n"
      << "task pass   " << pct(coherent_pass) << "   " << pct(incoherent_pass) << "\n"
      << "task fail   " << pct(coherent_fail) << "   " << pct(incoherent_fail) << "\n";
  return out.str();
}

SurveyTable survey(const ModelHandle& model, const std::vector<std::string>& words, HeadId head,
                   const PronunciationLexicon& lexicon, int decode_k) {
  require(!words.empty(), ErrorKind::argument, "survey needs at least one word");
  require(decode_k >= kCoherenceWindow, ErrorKind::argument, "decode_k must be at least 10");
  check_head(model.config(), head);
  SurveyTable table;
  table.head = head;
  table.word_list_hash = hash_words(words);
  const CoherenceJudge judge(lexicon);
  for (const auto& word : words) {
    try {
      const auto tail = first_tail(word, lexicon);
      if (!tail) fail(ErrorKind::not_found, "not in the lexicon");
      const Vector z = capture_final_z(model, word, head);
      const auto top = logit_lens(model, head_result_vector(model, z, head.first, head.second).value, decode_k);
      SurveyEntry e;
      e.word = word;
      e.coherent = judge.coherent(top, word, *tail);
      e.pass = task_pass(model, word, lexicon);
      for (std::size_t i = 0; i < top.size() && i < static_cast<std::size_t>(kCoherenceWindow); ++i) {
        e.top_tokens.push_back(top[i].text);
      }
      (e.pass ? (e.coherent ? table.coherent_pass : table.incoherent_pass)
              : (e.coherent ? table.coherent_fail : table.incoherent_fail))++;
      table.entries.push_back(std::move(e));
      ++table.sample_size;
    } catch (const Error& e) {
      table.errors.emplace_back(word, e.what());
    }
  }
  return table;
}

std::vector<std::string> sample_survey_words(const ModelHandle& model,
                                             const std::vector<std::string>& words,
                                             const PronunciationLexicon& lexicon, std::size_t n,
                                             std::uint64_t seed) {
  std::vector<std::string> pool;
  std::set<std::string> seen;
  for (const auto& raw : words) {
    const std::string w = lowercase(raw);
    if (seen.count(w) || !lexicon.contains(w) || !single_token_id(model, w)) continue;
    seen.insert(w);
    pool.push_back(w);
  }
  // Fisher-Yates with an explicit draw so the sample does not depend on the
  // standard library's shuffle implementation
  std::mt19937_64 rng(seed);
  for (std::size_t i = pool.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(pool[i - 1], pool[j]);
  }
  if (pool.size() > n) pool.resize(n);
  return pool;
}

std::vector<std::string> load_word_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot read " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const std::string w = trim_ws(line);
    if (w.empty() || w.front() == '#') continue;
    out.push_back(w);
  }
  return out;
}

SparsityMode parse_sparsity_mode(std::string_view s) {
  if (s == "signed") return SparsityMode::signed_extremes;
  if (s == "magnitude") return SparsityMode::magnitude;
  fail(ErrorKind::argument, "sparsity mode must be 'signed' or 'magnitude'");
}

std::string_view to_string(SparsityMode mode) {
  return mode == SparsityMode::signed_extremes ? "signed" : "magnitude";
}

std::set<int> kept_dimensions(const Vector& z, int n, SparsityMode mode) {
  const int d = static_cast<int>(z.size());
  require(n >= 0 && 2 * n <= d, ErrorKind::argument,
          "n must be between 0 and d_head/2 (" + std::to_string(d / 2) + ")");
  std::vector<int> idx(static_cast<std::size_t>(d));
  std::iota(idx.begin(), idx.end(), 0);
  std::set<int> kept;
  if (mode == SparsityMode::signed_extremes) {
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return z[a] > z[b]; });
    kept.insert(idx.begin(), idx.begin() + n);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return z[a] < z[b]; });
    for (int i = 0, taken = 0; taken < n && i < d; ++i) {
      if (kept.insert(idx[static_cast<std::size_t>(i)]).second) ++taken;
    }
  } else {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return std::abs(z[a]) > std::abs(z[b]); });
    kept.insert(idx.begin(), idx.begin() + 2 * n);
  }
  return kept;
}

SparsityResult z_sparsity(const ModelHandle& model, const Vector& z, HeadId head, int n,
                          SparsityMode mode) {
  check_head(model.config(), head);
  require(z.size() == model.config().d_head, ErrorKind::shape, "z must have d_head entries");
  SparsityResult r;
  r.kept = kept_dimensions(z, n, mode);
  const MatrixD wo = model.transformer().wo_head(head.first, head.second).cast<double>();
  const VectorD zd = z.cast<double>();
  VectorD zk = VectorD::Zero(zd.size());
  for (int i : r.kept) zk[i] = zd[i];
  const VectorD full = wo * zd;
  const VectorD sparse = wo * zk;
  const double nf = full.norm();
  if (nf == 0.0) fail(ErrorKind::undefined_cosine, "result vector has zero norm");
  const double ns = sparse.norm();
  r.cosine = ns == 0.0 ? 0.0 : full.dot(sparse) / (nf * ns);
  return r;
}

SparsityResult z_sparsity(const ModelHandle& model, std::string_view word, HeadId head, int n,
                          SparsityMode mode) {
  return z_sparsity(model, capture_final_z(model, word, head), head, n, mode);
}

json CoverageReport::to_json() const {
  json cos = json::array();
  for (const auto& [w, c] : cosines) cos.push_back({{"word", w}, {"cosine", c}});
  json errs = json::array();
  for (const auto& [w, why] : errors) errs.push_back({{"word", w}, {"reason", why}});
  return json{{"kind", "head_dim_coverage"},
              {"words", words},
              {"covered", covered},
              {"n_covered", covered.size()},
              {"missing", missing},
              {"cosines", cos},
              {"errors", errs}};
}

CoverageReport head_dim_coverage(const ModelHandle& model, const std::vector<std::string>& words,
                                 HeadId head, int n, SparsityMode mode) {
  require(!words.empty(), ErrorKind::argument, "coverage needs at least one word");
  CoverageReport report;
  for (const auto& w : words) {
    try {
      const Vector z = capture_final_z(model, w, head);
      const auto kept = kept_dimensions(z, n, mode);
      report.covered.insert(kept.begin(), kept.end());
      double cosine = std::nan("");
      try {
        cosine = z_sparsity(model, z, head, n, mode).cosine;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::undefined_cosine) throw;
      }
      report.cosines.emplace_back(w, cosine);
      ++report.words;
    } catch (const Error& e) {
      report.errors.emplace_back(w, e.what());
    }
  }
  for (int i = 0; i < model.config().d_head; ++i) {
    if (!report.covered.count(i)) report.missing.push_back(i);
  }
  return report;
}

const std::vector<HeadId>& default_triplet() {
  static const std::vector<HeadId> heads = {{12, 13}, {14, 21}, {14, 22}};
  return heads;
}

namespace {

AblationOutcome run_ablation(const ModelHandle& model, const std::string& word,
                             const std::set<HeadId>& heads, const PronunciationLexicon& lexicon,
                             int n_tokens) {
  const auto run = ablate_heads(model, rhyme_prompt(word), heads, n_tokens);
  AblationOutcome out;
  out.ablated = heads;
  out.tokens = run.continuation_tokens;
  for (const auto& t : out.tokens) out.completion += t;
  out.single_token_rhyme = !out.tokens.empty() && is_single_token_rhyme(out.tokens.front(), word, lexicon);
  return out;
}

json outcome_json(const AblationOutcome& o) {
  json heads = json::array();
  for (const auto& h : o.ablated) heads.push_back(head_label(h));
  return json{{"ablated", heads},
              {"tokens", o.tokens},
              {"completion", o.completion},
              {"single_token_rhyme", o.single_token_rhyme}};
}

double rate(const std::vector<TripletWordReport>& words, const auto& pick) {
  if (words.empty()) return 0.0;
  std::size_t n = 0;
  for (const auto& w : words) n += pick(w) ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(words.size());
}

}  // namespace

double TripletStudy::baseline_rate() const {
  return rate(words, [](const TripletWordReport& w) { return w.baseline.single_token_rhyme; });
}

double TripletStudy::all_ablated_rate() const {
  return rate(words, [](const TripletWordReport& w) { return w.all_ablated.single_token_rhyme; });
}

std::vector<double> TripletStudy::leave_one_out_rates() const {
  std::vector<double> out;
  for (std::size_t i = 0; i < heads.size(); ++i) {
    out.push_back(rate(words, [i](const TripletWordReport& w) { return w.leave_one_out[i].single_token_rhyme; }));
  }
  return out;
}

json TripletStudy::to_json() const {
  json hs = json::array();
  for (const auto& h : heads) hs.push_back(head_json(h));
  json ws = json::array();
  for (const auto& w : words) {
    json loo = json::array();
    for (const auto& o : w.leave_one_out) loo.push_back(outcome_json(o));
    ws.push_back({{"word", w.word},
                  {"baseline", outcome_json(w.baseline)},
                  {"all_ablated", outcome_json(w.all_ablated)},
                  {"leave_one_out", loo}});
  }
  json errs = json::array();
  for (const auto& [w, why] : errors) errs.push_back({{"word", w}, {"reason", why}});
  return json{{"kind", "triplet_ablation"},
              {"heads", hs},
              {"baseline_rate", baseline_rate()},
              {"all_ablated_rate", all_ablated_rate()},
              {"leave_one_out_rates", leave_one_out_rates()},
              {"words", ws},
              {"errors", errs}};
}

TripletStudy triplet_ablation_study(const ModelHandle& model, const std::vector<std::string>& words,
                                    const std::vector<HeadId>& heads,
                                    const PronunciationLexicon& lexicon, int n_tokens) {
  for (const auto& h : heads) check_head(model.config(), h);
  require(n_tokens >= 1, ErrorKind::argument, "need at least one continuation token");
  TripletStudy study;
  study.heads = heads;
  const std::set<HeadId> all(heads.begin(), heads.end());
  for (const auto& w : words) {
    try {
      if (!single_token_id(model, w)) fail(ErrorKind::tokenization, "not a single token");
      TripletWordReport r;
      r.word = w;
      r.baseline = run_ablation(model, w, {}, lexicon, n_tokens);
      r.all_ablated = run_ablation(model, w, all, lexicon, n_tokens);
      for (const auto& h : heads) {
        auto subset = all;
        subset.erase(h);
        r.leave_one_out.push_back(run_ablation(model, w, subset, lexicon, n_tokens));
      }
      study.words.push_back(std::move(r));
    } catch (const Error& e) {
      study.errors.emplace_back(w, e.what());
    }
  }
  return study;
}

}  // namespace phonolens
