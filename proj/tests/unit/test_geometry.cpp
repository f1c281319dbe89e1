#include <cmath>
#include <random>

#include <Eigen/QR>
#include <doctest.h>
#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "oracle.hpp"
#include "phonolens/geometry.hpp"
#include "phonolens/head_analysis.hpp"
#include "phonolens/interventions.hpp"
#include "phonolens/synthetic.hpp"

using namespace phonolens;
using testutil::check_error;
using testutil::tiny_lex;

namespace {

const PhonemeInventory& inv() { return PhonemeInventory::english_us(); }

const CopyHeadModel& copy_model() {
  static const CopyHeadModel m = make_copy_head_model(3);
  return m;
}

// Random orthonormal d x k basis.
MatrixD orthonormal_basis(int d, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  MatrixD g(d, k);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = nd(rng);
  return Eigen::HouseholderQR<MatrixD>(g).householderQ() * MatrixD::Identity(d, k);
}

// Rows = mean + sum_i a_i * sigma_i * basis_i where the coefficient columns
// are centred, mutually orthogonal and of unit sample variance, so the
// sample covariance is exactly diag(sigma^2) in the planted basis.
Matrix planted_data(const MatrixD& basis, const std::vector<double>& sigma, const VectorD& mean, int n,
                    std::uint64_t seed) {
  const auto k = static_cast<int>(sigma.size());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  MatrixD a(n, k);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = nd(rng);
  a.rowwise() -= a.colwise().mean();
  const MatrixD q = Eigen::HouseholderQR<MatrixD>(a).householderQ() * MatrixD::Identity(n, k);
  Matrix out(n, basis.rows());
  for (int r = 0; r < n; ++r) {
    VectorD row = mean;
    for (int i = 0; i < k; ++i) row += q(r, i) * std::sqrt(n - 1.0) * sigma[static_cast<std::size_t>(i)] * basis.col(i);
    out.row(r) = row.cast<float>().transpose();
  }
  return out;
}

double backness_score(Backness b) { return b == Backness::front ? 1.0 : b == Backness::central ? 0.0 : -1.0; }

// Vowels placed by their attributes: PC1 = backness score, PC2 = openness,
// each nudged by the vowel's rank within its class so no two coincide.
std::vector<ProjectedPoint> planted_vowel_points() {
  std::vector<ProjectedPoint> pts;
  std::map<Backness, int> rank;
  for (const auto& ph : inv().phonemes()) {
    ProjectedPoint p;
    p.label = ph.symbol;
    p.source = PointSource::phoneme_vector;
    if (ph.is_vowel()) {
      const int r = rank[ph.vowel->backness]++;
      p.coords = {backness_score(ph.vowel->backness) + 0.01 * r, ph.vowel->openness + 0.02 * r, 0.0};
    } else {
      p.coords = {0.0, 0.0, ph.consonant->voiced ? 1.0 : 0.0};
    }
    pts.push_back(std::move(p));
  }
  return pts;
}

// Concordant minus discordant over pairs with distinct openness, per class.
std::map<Backness, double> direct_tau(const std::vector<ProjectedPoint>& pts) {
  std::map<Backness, std::pair<long, long>> cd;
  std::vector<std::pair<const Phoneme*, const ProjectedPoint*>> vowels;
  for (const auto& p : pts) {
    const auto& ph = inv().at(*inv().index_of(p.label));
    if (ph.is_vowel()) vowels.emplace_back(&ph, &p);
  }
  for (const auto& [a, pa] : vowels) {
    for (const auto& [b, pb] : vowels) {
      if (a->symbol >= b->symbol || a->vowel->backness != b->vowel->backness) continue;
      const int dopen = a->vowel->openness - b->vowel->openness;
      if (dopen == 0) continue;
      const double dy = pa->coords[1] - pb->coords[1];
      auto& c = cd[a->vowel->backness];
      ((dopen > 0) == (dy > 0) && dy != 0 ? c.first : c.second)++;
    }
  }
  std::map<Backness, double> out;
  for (const auto& [b, c] : cd) out[b] = static_cast<double>(c.first - c.second) / static_cast<double>(c.first + c.second);
  return out;
}

}  // namespace

TEST_SUITE("geometry") {
  TEST_CASE("collected result vectors are W_O times the captured z") {
    const auto& cm = copy_model();
    const auto& m = cm.model;
    const std::vector<std::string> words{"clean", "track", "clean", "leet", "banana"};
    const auto rm = collect_result_vectors(m, words, cm.copy_head);
    REQUIRE(rm.words == std::vector<std::string>{"clean", "track", "clean", "leet"});
    CHECK(rm.errors.size() == 1);
    CHECK(rm.rows.row(0) == rm.rows.row(2));
    const auto& wo = m.transformer().weights().layers[static_cast<std::size_t>(cm.copy_head.first)].wo;
    const int dh = m.config().d_head;
    for (std::size_t i = 0; i < rm.words.size(); ++i) {
      const auto t = m.tokenize_prompt(rhyme_prompt(rm.words[i]));
      const auto trace = oracle::forward(m.config(), m.transformer().weights(), {t.begin(), t.end()});
      const auto& z = trace.head_z.at({cm.copy_head.first, cm.copy_head.second, static_cast<int>(t.size()) - 1});
      for (long r = 0; r < wo.rows(); ++r) {
        double v = 0;
        for (int e = 0; e < dh; ++e) v += static_cast<double>(wo(r, cm.copy_head.second * dh + e)) * z[static_cast<std::size_t>(e)];
        CHECK(std::abs(rm.rows(static_cast<long>(i), r) - v) <= 1e-4);
      }
    }
    check_error([&] { collect_result_vectors(m, {"banana", "computer", "clean"}, cm.copy_head); }, ErrorKind::collection);
    check_error([&] { collect_result_vectors(m, {}, cm.copy_head); }, ErrorKind::collection);
  }

  TEST_CASE("collection reuses its cache") {
    testutil::TempDir dir;
    const auto& cm = copy_model();
    const std::vector<std::string> words{"clean", "track", "lip"};
    const auto first = collect_result_vectors(cm.model, words, cm.copy_head, dir.path());
    CHECK_FALSE(first.from_cache);
    const auto second = collect_result_vectors(cm.model, words, cm.copy_head, dir.path());
    CHECK(second.from_cache);
    CHECK(second.rows == first.rows);
    CHECK(second.words == first.words);
    CHECK_FALSE(collect_result_vectors(cm.model, {"clean", "track"}, cm.copy_head, dir.path()).from_cache);
  }

  TEST_CASE("PCA recovers planted axes") {
    const int d = 24;
    const auto basis = orthonormal_basis(d, 3, 21);
    VectorD mean = VectorD::LinSpaced(d, -1.0, 1.0);
    const auto data = planted_data(basis, {9.0, 4.0, 1.0}, mean, 400, 22);
    const auto pca = fit_pca(data, 3);
    REQUIRE(pca.k() == 3);
    CHECK((pca.components * pca.components.transpose() - MatrixD::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-6);
    for (int i = 0; i < 3; ++i) {
      const VectorD c = pca.components.row(i).transpose();
      const VectorD b = basis.col(i);
      CHECK(std::min((c - b).cwiseAbs().maxCoeff(), (c + b).cwiseAbs().maxCoeff()) <= 1e-4);
      Eigen::Index at = 0;
      c.cwiseAbs().maxCoeff(&at);
      CHECK(c[at] > 0);
    }
    CHECK(pca.explained_variance[0] > pca.explained_variance[1]);
    CHECK(pca.explained_variance.sum() == doctest::Approx(1.0).epsilon(1e-6));

    // rank-3 data is reconstructed from three components
    for (int r = 0; r < 20; ++r) {
      const VectorD x = data.row(r).transpose().cast<double>();
      CHECK((pca.reconstruct(pca.transform(x)) - x).cwiseAbs().maxCoeff() <= 1e-5);
    }
    CHECK(pca.transform(pca.mean).cwiseAbs().maxCoeff() <= 1e-12);
    for (int i = 0; i < 3; ++i) {
      const VectorD coords = pca.transform(pca.mean + pca.components.row(i).transpose());
      CHECK((coords - VectorD::Unit(3, i)).cwiseAbs().maxCoeff() <= 1e-9);
    }
  }

  TEST_CASE("PCA rank and argument errors") {
    Matrix same(10, 6);
    same.rowwise() = Eigen::RowVectorXf::LinSpaced(6, 0, 1);
    check_error([&] { fit_pca(same, 1); }, ErrorKind::rank);
    const auto data = planted_data(orthonormal_basis(8, 2, 3), {2.0, 1.0}, VectorD::Zero(8), 50, 4);
    check_error([&] { fit_pca(data, 3); }, ErrorKind::rank);
    check_error([&] { fit_pca(data, 0); }, ErrorKind::argument);
    check_error([&] { fit_pca(data.topRows(1), 1); }, ErrorKind::rank);
  }

  TEST_CASE("PCA files round trip at float precision") {
    testutil::TempDir dir;
    const auto data = planted_data(orthonormal_basis(12, 3, 5), {3.0, 2.0, 1.0}, VectorD::Ones(12), 80, 6);
    auto pca = fit_pca(data, 3);
    pca.metadata = {{"head", "H2L1"}};
    pca.save(dir.path() / "sub" / "pca.json");
    const auto back = PCAModel::load(dir.path() / "sub" / "pca.json");
    CHECK((back.components - pca.components).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK((back.mean - pca.mean).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(back.explained_variance == pca.explained_variance);
    CHECK(back.metadata == pca.metadata);
  }

  TEST_CASE("projection of probe rows normalizes them first") {
    const auto data = planted_data(orthonormal_basis(16, 3, 7), {3.0, 2.0, 1.0}, VectorD::Zero(16), 60, 8);
    const auto pca = fit_pca(data, 3);
    ProbeMatrix probe;
    probe.weights = Matrix::Random(kInventorySize, 16);
    probe.bias = Vector::Zero(kInventorySize);
    const auto pts = project_phoneme_vectors(pca, probe, inv());
    REQUIRE(pts.size() == kInventorySize);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      CHECK(pts[i].label == inv().at(i).symbol);
      const VectorD unit = probe.weights.row(static_cast<long>(i)).transpose().cast<double>().normalized();
      const VectorD expected = pca.components * (unit - pca.mean);
      for (int k = 0; k < 3; ++k) CHECK(std::abs(pts[i].coords[static_cast<std::size_t>(k)] - expected[k]) <= 1e-5);
    }
    const auto rp = project(pca, data.topRows(2), {"a", "b"}, PointSource::result_vector);
    CHECK(rp[1].label == "b");
    CHECK(rp[1].source == PointSource::result_vector);
  }

  TEST_CASE("vowel report on attribute-placed points") {
    const auto pts = planted_vowel_points();
    const auto r = vowel_geometry_report(pts, inv());
    CHECK(r.backness_ordered);
    for (const auto& [b, tau] : r.openness_tau) {
      if (tau) CHECK(*tau == 1.0);
    }
    CHECK(r.exceptions.empty());
    CHECK(r.text_table().find("front") != std::string::npos);

    // a vowel pushed to the wrong side is reported
    auto moved = pts;
    for (auto& p : moved) {
      if (p.label == "i") p.coords[0] = -1.0;
    }
    CHECK(vowel_geometry_report(moved, inv()).is_exception("i"));
  }

  TEST_CASE("random placements give the directly counted association") {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> nd;
    double sum = 0;
    const int trials = 400;
    for (int t = 0; t < trials; ++t) {
      auto pts = planted_vowel_points();
      for (auto& p : pts) p.coords[1] = nd(rng);
      const auto r = vowel_geometry_report(pts, inv());
      const auto expected = direct_tau(pts);
      for (const auto& [b, tau] : expected) {
        REQUIRE(r.openness_tau.at(b));
        CHECK(*r.openness_tau.at(b) == doctest::Approx(tau));
      }
      sum += *r.openness_tau.at(Backness::front);
    }
    CHECK(std::abs(sum / trials) <= 0.1);
  }

  TEST_CASE("voicing report") {
    const auto planted = voicing_geometry_report(planted_vowel_points(), inv());
    CHECK(planted.pairs.size() >= 8);
    CHECK(planted.sign_consistency == 1.0);
    CHECK(planted.mean_displacement == doctest::Approx(1.0));
    CHECK(planted.consistent());

    auto flat = planted_vowel_points();
    for (auto& p : flat) p.coords[2] = 0.0;
    const auto zero = voicing_geometry_report(flat, inv());
    CHECK(zero.sign_consistency == 0.0);
    CHECK_FALSE(zero.consistent());
    CHECK(zero.to_json().at("pairs").size() == zero.pairs.size());
  }

  TEST_CASE("overlay") {
    const auto phon = planted_vowel_points();
    std::map<std::string, std::string> word_vowel;
    std::vector<ProjectedPoint> results;
    std::mt19937_64 rng(41);
    std::normal_distribution<double> nd(0.0, 0.01);
    for (const auto& p : phon) {
      if (!inv().is_vowel(p.label)) continue;
      for (int i = 0; i < 3; ++i) {
        const std::string w = p.label + std::to_string(i);
        word_vowel[w] = p.label;
        results.push_back({w, {p.coords[0] + nd(rng), p.coords[1] + nd(rng), 0.0}, PointSource::result_vector});
      }
    }
    const auto identity = overlay_result_vectors(results, word_vowel, phon, inv(), 1.0, 0.0);
    for (std::size_t i = 0; i < results.size(); ++i) CHECK(identity.transformed[i].coords == results[i].coords);
    CHECK(identity.match_accuracy == 1.0);

    // shrink and shift the clusters, then undo with the overlay's affine map
    auto scaled = results;
    for (auto& p : scaled) {
      for (auto& c : p.coords) c = (c - 8.0) / 25.0;
    }
    const auto o = overlay_result_vectors(scaled, word_vowel, phon, inv());
    CHECK(o.match_accuracy == 1.0);
    CHECK(o.svg(phon, word_vowel).rfind("<svg", 0) != std::string::npos);
    check_error([&] { overlay_result_vectors(results, word_vowel, phon, inv(), 0.0); }, ErrorKind::argument);
  }

  TEST_CASE("single-vowel words and scatter plots") {
    const auto sv = single_vowel_words({"clean", "banana", "store", "zzz", "light"}, tiny_lex());
    CHECK(sv == std::map<std::string, std::string>{{"clean", "i"}, {"light", "aɪ"}, {"store", "ɔ"}});
    const auto svg = phoneme_scatter_svg(planted_vowel_points(), inv(), true, 0, 1, "vowels <PC1, PC2>");
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("&lt;PC1") != std::string::npos);
    CHECK(svg.find(">æ<") != std::string::npos);
  }
}
