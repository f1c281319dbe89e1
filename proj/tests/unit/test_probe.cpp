#include <cmath>
#include <limits>
#include <random>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "phonolens/probe.hpp"
#include "phonolens/synthetic.hpp"

using namespace phonolens;
using testutil::check_error;

namespace {

const PhonemeInventory& inv() { return PhonemeInventory::english_us(); }

// Label bits set one segment at a time from the lexicon entry.
Multihot brute_force_label(const Pronunciation& p) {
  Multihot bits;
  for (const auto& s : p) {
    for (std::size_t i = 0; i < inv().size(); ++i) {
      if (inv().at(i).symbol == s) bits.set(i);
    }
  }
  return bits;
}

ProbeDataset random_dataset(std::size_t n, int d, std::uint64_t seed, double p_bit, std::size_t active_bits) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> nd;
  std::bernoulli_distribution bit(p_bit);
  ProbeDataset ds;
  ds.inventory_hash = inv().hash();
  for (std::size_t i = 0; i < n; ++i) {
    ProbeExample e;
    e.word = "w" + std::to_string(i);
    e.embedding = Vector(d);
    for (int j = 0; j < d; ++j) e.embedding[j] = nd(rng);
    for (std::size_t b = 0; b < active_bits; ++b) e.label.set(b, bit(rng));
    e.split = Split::train;
    ds.examples.push_back(std::move(e));
  }
  return ds;
}

}  // namespace

TEST_SUITE("probe") {
  TEST_CASE("dataset rows are embedding rows labelled with the word's phonemes") {
    const auto model = make_tiny_model(1);
    const auto lex = testutil::lexicon_from("clean\tk l iː n\nkeen\tk iː n\nleet\tl iː t\nbanana\tb ə n æ n ə\n");
    const auto ds = build_dataset(model, lex, 5, 3);
    REQUIRE(ds.examples.size() == 3);
    for (const auto& e : ds.examples) {
      const auto id = single_token_id(model, e.word);
      REQUIRE(id.has_value());
      CHECK(e.embedding == model.transformer().weights().embed.row(*id).transpose());
      CHECK(e.label == brute_force_label(lex.first(e.word)));
    }
    check_error([&] { build_dataset(model, lex, 5); }, ErrorKind::insufficient_data);
  }

  TEST_CASE("split assignment is a deterministic function of word and seed") {
    const auto model = make_tiny_model(1);
    const auto a = build_dataset(model, testutil::tiny_lex(), 9, 10);
    const auto b = build_dataset(model, testutil::tiny_lex(), 9, 10);
    REQUIRE(a.examples.size() == b.examples.size());
    for (std::size_t i = 0; i < a.examples.size(); ++i) CHECK(a.examples[i].split == b.examples[i].split);
    std::size_t test = 0;
    for (int i = 0; i < 20000; ++i) test += assign_split("word" + std::to_string(i), 3) == Split::test;
    CHECK(test == doctest::Approx(2000).epsilon(0.08));
  }

  TEST_CASE("planted embeddings are decoded exactly") {
    const auto planted = planted_probe_dataset(1500, 64, 0.0, 3);
    const auto probe = train_probe(planted.dataset, ProbeConfig{});
    CHECK(evaluate_probe(probe, planted.dataset, Split::train).exact_match >= 0.99);
    CHECK(evaluate_probe(probe, planted.dataset, Split::test).exact_match >= 0.95);
    CHECK(std::isfinite(probe.final_loss));
  }

  TEST_CASE("all-zero labels give an all-zero predictor") {
    auto ds = random_dataset(200, 16, 4, 0.0, 0);
    const auto probe = train_probe(ds, ProbeConfig{});
    CHECK(evaluate_probe(probe, ds, Split::train).exact_match == 1.0);
    for (const auto& e : ds.examples) CHECK(probe.predict(e.embedding).none());
  }

  TEST_CASE("a one-word dataset is memorized") {
    auto ds = random_dataset(1, 8, 5, 0.5, 10);
    ds.examples[0].label.set(3);
    const auto probe = train_probe(ds, ProbeConfig{});
    CHECK(evaluate_probe(probe, ds, Split::train).exact_match == 1.0);
  }

  TEST_CASE("a random probe scores what label-marginal simulation predicts") {
    // three balanced phonemes; the remaining rows are forced off
    const std::size_t n = 4000;
    auto ds = random_dataset(n, 12, 6, 0.5, 3);
    ProbeMatrix probe;
    probe.weights = Matrix::Zero(kInventorySize, 12);
    probe.bias = Vector::Constant(kInventorySize, -50.0f);
    std::mt19937_64 rng(7);
    std::normal_distribution<float> nd;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 12; ++c) probe.weights(r, c) = nd(rng);
      probe.bias[r] = 0.0f;
    }
    const double measured = evaluate_probe(probe, ds, Split::train).exact_match;

    std::array<double, 3> marginal{};
    for (const auto& e : ds.examples) {
      for (std::size_t b = 0; b < 3; ++b) marginal[b] += e.label.test(b) / static_cast<double>(n);
    }
    std::bernoulli_distribution draws[3] = {std::bernoulli_distribution(marginal[0]), std::bernoulli_distribution(marginal[1]),
                                            std::bernoulli_distribution(marginal[2])};
    std::size_t hits = 0, total = 0;
    for (const auto& e : ds.examples) {
      const Multihot pred = probe.predict(e.embedding);
      for (int rep = 0; rep < 50; ++rep) {
        Multihot sampled;
        for (std::size_t b = 0; b < 3; ++b) sampled.set(b, draws[b](rng));
        hits += sampled == pred;
        ++total;
      }
    }
    const double simulated = static_cast<double>(hits) / static_cast<double>(total);
    CHECK(std::abs(measured - simulated) <= 0.03);
  }

  TEST_CASE("per-phoneme F1 and recall follow the confusion counts") {
    auto ds = random_dataset(300, 10, 8, 0.4, 5);
    const auto probe = train_probe(ds, ProbeConfig{50, 0.05, 1e-4, 0.5, 0});
    const auto m = evaluate_probe(probe, ds, Split::train);
    for (std::size_t b = 0; b < kInventorySize; ++b) {
      double tp = 0, fp = 0, fn = 0;
      for (const auto& e : ds.examples) {
        const bool p = probe.predict(e.embedding).test(b), y = e.label.test(b);
        tp += p && y, fp += p && !y, fn += !p && y;
      }
      const double f1 = (2 * tp + fp + fn) > 0 ? 2 * tp / (2 * tp + fp + fn) : 1.0;
      const double recall = (tp + fn) > 0 ? tp / (tp + fn) : 1.0;
      CHECK(m.per_phoneme_f1[b] == doctest::Approx(f1));
      CHECK(m.per_phoneme_recall[b] == doctest::Approx(recall));
    }
  }

  TEST_CASE("random-embedding baseline stays well below the planted probe") {
    const auto planted = planted_probe_dataset(1500, 64, 0.0, 9);
    const auto base = random_embedding_baseline(planted.dataset, 10, ProbeConfig{});
    CHECK(base.train.exact_match <= 0.60);
    CHECK(base.test.exact_match <= 0.60);
  }

  TEST_CASE("phoneme vectors are probe rows") {
    const auto planted = planted_probe_dataset(300, 48, 0.0, 11);
    const auto probe = train_probe(planted.dataset, ProbeConfig{20, 0.02, 1e-4, 0.5, 0});
    const auto i = *inv().index_of("i");
    CHECK(phoneme_vector(probe, "i", inv()) == probe.weights.row(static_cast<long>(i)).transpose());
    check_error([&] { phoneme_vector(probe, "q", inv()); }, ErrorKind::not_found);
  }

  TEST_CASE("probe files round trip bit for bit") {
    testutil::TempDir dir;
    const auto planted = planted_probe_dataset(300, 48, 0.0, 12);
    const auto probe = train_probe(planted.dataset, ProbeConfig{30, 0.02, 1e-4, 0.5, 4});
    probe.save(dir.path() / "nested" / "p.json");
    const auto back = ProbeMatrix::load(dir.path() / "nested" / "p.json");
    CHECK(back.weights == probe.weights);
    CHECK(back.bias == probe.bias);
    CHECK(back.inventory_hash == probe.inventory_hash);
    CHECK(back.config.seed == 4);
    CHECK(back.config.epochs == 30);
  }

  TEST_CASE("diverging training raises") {
    auto ds = random_dataset(20, 4, 13, 0.5, 2);
    ds.examples[3].embedding[1] = std::numeric_limits<float>::quiet_NaN();
    check_error([&] { train_probe(ds, ProbeConfig{}); }, ErrorKind::training);
  }
}
