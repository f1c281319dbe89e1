#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/QR>
#include <doctest.h>
#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "oracle.hpp"
#include "phonolens/head_analysis.hpp"
#include "phonolens/interventions.hpp"
#include "phonolens/synthetic.hpp"

using namespace phonolens;
using testutil::check_error;
using testutil::tiny_lex;

namespace {

const CopyHeadModel& copy_model() {
  static const CopyHeadModel m = make_copy_head_model(3);
  return m;
}

TokenId id_of(const ModelHandle& m, const std::string& piece) {
  const auto ids = m.tokenizer().encode(piece);
  REQUIRE(ids.size() == 1);
  return ids.front();
}

std::vector<ScoredToken> ranked(const std::vector<std::string>& texts) {
  std::vector<ScoredToken> out;
  float score = 100.0f;
  for (const auto& t : texts) out.push_back({0, t, score--});
  return out;
}

RhymeTail tail_of(const std::string& word) { return rhyme_tail(tiny_lex().first(word), tiny_lex().inventory()); }

// Sort-based selection written independently of the library's partial sorts.
std::set<int> oracle_kept(const Vector& z, int n, SparsityMode mode) {
  std::vector<int> idx(static_cast<std::size_t>(z.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::set<int> kept;
  if (mode == SparsityMode::magnitude) {
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return std::abs(z[a]) > std::abs(z[b]); });
    for (int i = 0; i < std::min<int>(2 * n, static_cast<int>(idx.size())); ++i) kept.insert(idx[static_cast<std::size_t>(i)]);
    return kept;
  }
  auto desc = idx, asc = idx;
  std::stable_sort(desc.begin(), desc.end(), [&](int a, int b) { return z[a] > z[b]; });
  std::stable_sort(asc.begin(), asc.end(), [&](int a, int b) { return z[a] < z[b]; });
  for (int i = 0; i < std::min<int>(n, static_cast<int>(idx.size())); ++i) {
    kept.insert(desc[static_cast<std::size_t>(i)]);
    kept.insert(asc[static_cast<std::size_t>(i)]);
  }
  return kept;
}

// cos(W_O z, W_O z_kept) from the raw output projection, in double.
double dense_cosine(const ModelHandle& m, HeadId head, const Vector& z, const std::set<int>& kept) {
  const auto& wo = m.transformer().weights().layers[static_cast<std::size_t>(head.first)].wo;
  const int dh = m.config().d_head;
  std::vector<double> full(static_cast<std::size_t>(wo.rows()), 0.0), sparse = full;
  for (long r = 0; r < wo.rows(); ++r) {
    for (int e = 0; e < dh; ++e) {
      const double term = static_cast<double>(wo(r, head.second * dh + e)) * z[e];
      full[static_cast<std::size_t>(r)] += term;
      if (kept.count(e)) sparse[static_cast<std::size_t>(r)] += term;
    }
  }
  double dot = 0, nf = 0, ns = 0;
  for (std::size_t i = 0; i < full.size(); ++i) dot += full[i] * sparse[i], nf += full[i] * full[i], ns += sparse[i] * sparse[i];
  return dot / std::sqrt(nf * ns);
}

Vector oracle_final_z(const ModelHandle& m, const std::string& word, HeadId head) {
  const auto t = m.tokenize_prompt(rhyme_prompt(word));
  const std::vector<int> ints(t.begin(), t.end());
  const auto trace = oracle::forward(m.config(), m.transformer().weights(), ints);
  const auto& z = trace.head_z.at({head.first, head.second, static_cast<int>(ints.size()) - 1});
  Vector out(static_cast<long>(z.size()));
  for (std::size_t i = 0; i < z.size(); ++i) out[static_cast<long>(i)] = static_cast<float>(z[i]);
  return out;
}

// Copy-head model whose copy head writes through orthonormal W_O columns.
ModelHandle orthonormal_wo_model() {
  const auto& base = copy_model();
  auto c = base.model.config();
  auto w = base.model.transformer().weights();
  auto& wo = w.layers[static_cast<std::size_t>(base.copy_head.first)].wo;
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd;
  MatrixD g(c.d_model, c.d_head);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = nd(rng);
  const MatrixD q = Eigen::HouseholderQR<MatrixD>(g).householderQ() * MatrixD::Identity(c.d_model, c.d_head);
  wo.block(0, base.copy_head.second * c.d_head, c.d_model, c.d_head) = q.cast<float>();
  return ModelHandle("ortho", std::make_shared<const Transformer>(c, w), base.model.tokenizer_ptr());
}

}  // namespace

TEST_SUITE("head_analysis") {
  TEST_CASE("the planted copy head decodes to the rhyme answer") {
    const auto& cm = copy_model();
    const auto d = decode_head_for_word(cm.model, "clean", cm.copy_head, 10, tiny_lex());
    REQUIRE(!d.top.empty());
    CHECK(d.top.front().text == " keen");
    CHECK((d.z - oracle_final_z(cm.model, "clean", cm.copy_head)).cwiseAbs().maxCoeff() <= 1e-4f);
    REQUIRE(d.target_tail);
    CHECK(d.to_json().at("word") == "clean");
  }

  TEST_CASE("a zeroed z decodes to an incoherent list") {
    const auto& cm = copy_model();
    const auto d = decode_z(cm.model, "clean", Vector::Zero(cm.model.config().d_head), cm.copy_head, 64, tiny_lex());
    CHECK(d.result.value.isZero());
    CHECK(d.coherent != std::optional<bool>(true));
  }

  TEST_CASE("coherence counts similar tokens among the first ten judgeable ones") {
    const CoherenceJudge judge(tiny_lex());
    const auto tail = tail_of("clean");
    const std::vector<std::string> similar{" keen", " een", " beet", " leet", " see"};
    const std::vector<std::string> other{" back", " hat", " ship", " top", " sun", " crab"};
    for (const auto& s : similar) CHECK(judge.similar(s, "clean", tail));
    for (const auto& o : other) CHECK_FALSE(judge.similar(o, "clean", tail));

    // 5 of 10 similar -> coherent; unjudgeable scripts are skipped
    std::vector<std::string> five{"ईन", " keen", " back", " een", " hat", " beet", " ship", "киин", " leet", " top", " see", " sun"};
    CHECK(judge.coherent(ranked(five), "clean", tail));
    // 4 of the first 10 similar; a similar 11th token does not count
    std::vector<std::string> four{" keen", " back", " een", " hat", " beet", " ship", " leet", " top", " sun", " crab", " see"};
    CHECK_FALSE(judge.coherent(ranked(four), "clean", tail));

    CHECK(judge.coherent(ranked(std::vector<std::string>(10, "een")), "clean", tail));
    std::vector<std::string> digits;
    for (char c = '0'; c <= '9'; ++c) digits.emplace_back(1, c);
    CHECK_FALSE(judge.coherent(ranked(digits), "clean", tail));

    std::vector<std::string> sparse{" keen", "ईन", "键", " back", "ки", " een", " hat"};
    check_error([&] { judge.coherent(ranked(sparse), "clean", tail); }, ErrorKind::insufficient_tokens);
    CHECK_FALSE(judge.judgeable("键"));
    CHECK(judge.judgeable(" zork"));
  }

  TEST_CASE("task pass looks at the model's top ten next tokens") {
    const auto probe_model = make_tiny_model(1);
    std::map<TokenId, float> logits;
    const std::vector<std::string> filler{" back", " hat", " ship", " top", " sun", " crab", " bet", " moon", " pin"};
    for (std::size_t i = 0; i < filler.size(); ++i) logits[id_of(probe_model, filler[i])] = 20.0f - static_cast<float>(i);
    logits[id_of(probe_model, " keen")] = 5.0f;
    CHECK(task_pass(make_fixed_logits_model(logits), "clean", tiny_lex()));
    CHECK(task_pass(make_fixed_logits_model(logits), "track", tiny_lex()));  // " back" rhymes with track

    logits[id_of(probe_model, " win")] = 10.5f;  // pushes " keen" to rank 11
    CHECK_FALSE(task_pass(make_fixed_logits_model(logits), "clean", tiny_lex()));

    std::map<TokenId, float> punct;
    float s = 30.0f;
    for (const char* p : {"\n", " ", ":", ".", ",", "!", "?", "'", "-", "0", "1"}) punct[id_of(probe_model, p)] = s--;
    CHECK_FALSE(task_pass(make_fixed_logits_model(punct), "clean", tiny_lex()));
  }

  TEST_CASE("survey cells partition the judged sample") {
    const auto& cm = copy_model();
    std::vector<std::string> words;
    for (const auto& cls : tiny_rhyme_classes()) words.insert(words.end(), cls.begin(), cls.begin() + 2);
    words.push_back("banana");
    const auto table = survey(cm.model, words, cm.copy_head, tiny_lex());
    CHECK(table.coherent_pass + table.coherent_fail + table.incoherent_pass + table.incoherent_fail == table.sample_size);
    CHECK(table.entries.size() == table.sample_size);
    CHECK(table.sample_size + table.errors.size() == words.size());
    for (const auto& e : table.entries) {
      CHECK(e.pass == task_pass(cm.model, e.word, tiny_lex()));
      const auto d = decode_head_for_word(cm.model, e.word, cm.copy_head, 64, tiny_lex());
      CHECK(d.coherent == std::optional<bool>(e.coherent));
    }
    CHECK(table.text_table().find("coherent") != std::string::npos);
    CHECK(table.to_json().at("sample_size") == table.sample_size);
  }

  TEST_CASE("kept dimensions follow a sort-based selection") {
    std::mt19937_64 rng(5);
    std::normal_distribution<float> nd;
    for (int trial = 0; trial < 200; ++trial) {
      Vector z(16);
      for (int i = 0; i < 16; ++i) z[i] = nd(rng);
      const int n = 1 + trial % 8;
      CHECK(kept_dimensions(z, n, SparsityMode::signed_extremes) == oracle_kept(z, n, SparsityMode::signed_extremes));
      CHECK(kept_dimensions(z, n, SparsityMode::magnitude) == oracle_kept(z, n, SparsityMode::magnitude));
    }
    CHECK(parse_sparsity_mode(to_string(SparsityMode::magnitude)) == SparsityMode::magnitude);
  }

  TEST_CASE("z sparsity cosines agree with a dense computation") {
    const auto& cm = copy_model();
    const int dh = cm.model.config().d_head;
    for (const auto* word : {"clean", "track", "leet", "store"}) {
      const Vector z = oracle_final_z(cm.model, word, cm.copy_head);
      for (int n = 1; n <= dh / 2; ++n) {
        for (auto mode : {SparsityMode::signed_extremes, SparsityMode::magnitude}) {
          const auto r = z_sparsity(cm.model, z, cm.copy_head, n, mode);
          CHECK(r.kept == oracle_kept(z, n, mode));
          CHECK(std::abs(r.cosine - dense_cosine(cm.model, cm.copy_head, z, r.kept)) <= 1e-6);
        }
      }
      CHECK(z_sparsity(cm.model, z, cm.copy_head, dh / 2).cosine == doctest::Approx(1.0).epsilon(1e-9));
    }
    check_error([&] { z_sparsity(cm.model, Vector::Zero(dh), cm.copy_head, 1); }, ErrorKind::undefined_cosine);
    check_error([&] { z_sparsity(cm.model, Vector::Zero(dh + 1), cm.copy_head, 1); }, ErrorKind::shape);
  }

  TEST_CASE("nested keep sets never lower the cosine through orthonormal output columns") {
    const auto model = orthonormal_wo_model();
    const auto head = copy_model().copy_head;
    const int dh = model.config().d_head;
    for (const auto* word : {"clean", "track", "leet", "store", "grab"}) {
      double prev = -1.0;
      for (int n = 1; n <= dh / 2; ++n) {
        const double c = z_sparsity(model, word, head, n, SparsityMode::magnitude).cosine;
        CHECK(c >= prev - 1e-12);
        prev = c;
      }
      CHECK(prev == doctest::Approx(1.0));
    }
  }

  TEST_CASE("coverage is the union of per-word kept dimensions") {
    const auto& cm = copy_model();
    const int dh = cm.model.config().d_head;
    const auto one = head_dim_coverage(cm.model, {"clean"}, cm.copy_head, 1);
    CHECK(one.covered.size() == 2);
    CHECK(one.missing.size() == static_cast<std::size_t>(dh - 2));

    const std::vector<std::string> words{"clean", "track", "leet", "bet", "store", "banana"};
    const auto cov = head_dim_coverage(cm.model, words, cm.copy_head, 1);
    std::set<int> expected;
    for (std::size_t i = 0; i + 1 < words.size(); ++i) {
      const auto k = oracle_kept(oracle_final_z(cm.model, words[i], cm.copy_head), 1, SparsityMode::signed_extremes);
      expected.insert(k.begin(), k.end());
    }
    CHECK(cov.covered == expected);
    CHECK(cov.words == 5);
    CHECK(cov.errors.size() == 1);
    CHECK(cov.covered.size() + cov.missing.size() == static_cast<std::size_t>(dh));
    check_error([&] { head_dim_coverage(cm.model, {}, cm.copy_head); }, ErrorKind::argument);
  }

  TEST_CASE("triplet ablation runs the reference greedy decode under each head set") {
    const auto& cm = copy_model();
    const auto& m = cm.model;
    const std::vector<HeadId> heads{cm.copy_head, {1, 0}, {0, 1}};
    const std::vector<std::string> words{"clean", "track", "lip", "banana"};
    const auto study = triplet_ablation_study(m, words, heads, tiny_lex(), 2);
    REQUIRE(study.words.size() == 3);
    CHECK(study.errors.size() == 1);

    auto reference = [&](const std::string& word, const std::set<HeadId>& ablate) {
      const auto t = m.tokenize_prompt(rhyme_prompt(word));
      oracle::Edits e;
      for (const auto& h : ablate) e.zero_heads.insert({h.first, h.second});
      const auto out = oracle::greedy(m.config(), m.transformer().weights(), {t.begin(), t.end()}, 2, e);
      std::vector<std::string> texts;
      for (int id : out) texts.push_back(m.tokenizer().token_text(id));
      return texts;
    };
    const std::set<HeadId> all(heads.begin(), heads.end());
    for (const auto& r : study.words) {
      CHECK(r.baseline.tokens == reference(r.word, {}));
      CHECK(r.all_ablated.tokens == reference(r.word, all));
      REQUIRE(r.leave_one_out.size() == heads.size());
      for (std::size_t i = 0; i < heads.size(); ++i) {
        auto subset = all;
        subset.erase(heads[i]);
        CHECK(r.leave_one_out[i].ablated == subset);
        CHECK(r.leave_one_out[i].tokens == reference(r.word, subset));
      }
      const auto first = token_to_word(r.baseline.tokens.front());
      CHECK(r.baseline.single_token_rhyme == (tiny_lex().contains(first) && rhymes(r.word, first, tiny_lex())));
    }
    CHECK(study.baseline_rate() == doctest::Approx(1.0));
    CHECK(study.leave_one_out_rates().size() == 3);
    CHECK(study.to_json().at("words").size() == 3);
  }

  TEST_CASE("text helpers, word lists and survey sampling") {
    CHECK(token_to_word(" Keen ") == "keen");
    CHECK(rime_spelling("clean") == "ean");
    CHECK(rime_spelling("track") == "ack");
    CHECK(rime_spelling("tsk") == "tsk");

    testutil::TempDir dir;
    const auto path = dir.write("words.txt", "# header\nclean\n\n  track \nbanana\n");
    CHECK(load_word_list(path) == std::vector<std::string>{"clean", "track", "banana"});
    check_error([&] { load_word_list(dir.path() / "missing.txt"); }, ErrorKind::io);

    const auto model = make_tiny_model(1);
    std::vector<std::string> words{"clean", "Clean", "banana", "zzz", "track", "leet", "bet", "store"};
    const auto a = sample_survey_words(model, words, tiny_lex(), 3, 11);
    CHECK(a == sample_survey_words(model, words, tiny_lex(), 3, 11));
    CHECK(a.size() == 3);
    const auto all = sample_survey_words(model, words, tiny_lex(), 100, 11);
    CHECK(std::set<std::string>(all.begin(), all.end()) == std::set<std::string>{"clean", "track", "leet", "bet", "store"});
    CHECK(default_triplet().size() == 3);
  }
}
