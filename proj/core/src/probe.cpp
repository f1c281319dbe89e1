#include "phonolens/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "phonolens/artifacts.hpp"
#include "phonolens/digest.hpp"
#include "phonolens/error.hpp"

namespace phonolens {

using nlohmann::json;

std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

Split assign_split(std::string_view word, std::uint64_t seed) {
  const std::uint64_t h = fnv1a64(word, fnv1a64(std::to_string(seed) + "|"));
  return h % 10 == 0 ? Split::test : Split::train;
}

std::size_t ProbeDataset::count(Split s) const {
  return static_cast<std::size_t>(std::count_if(examples.begin(), examples.end(),
                                                [&](const auto& e) { return e.split == s; }));
}

ProbeDataset build_dataset(const ModelHandle& model, const PronunciationLexicon& lexicon,
                           std::uint64_t split_seed, std::size_t min_words) {
  ProbeDataset ds;
  ds.split_seed = split_seed;
  ds.inventory_hash = lexicon.inventory().hash();
  const auto& embed = model.transformer().weights().embed;
  for (const auto& word : lexicon.words()) {
    const auto id = single_token_id(model, word);
    if (!id) continue;
    ProbeExample ex;
    ex.word = word;
    ex.embedding = embed.row(*id).transpose();
    ex.label = multihot(word, lexicon);
    ex.split = assign_split(word, split_seed);
    ds.examples.push_back(std::move(ex));
  }
  if (ds.examples.size() < min_words) {
    fail(ErrorKind::insufficient_data, "only " + std::to_string(ds.examples.size()) +
                                           " single-token lexicon words, need " +
                                           std::to_string(min_words));
  }
  return ds;
}

json ProbeConfig::to_json() const {
  return json{{"epochs", epochs},
              {"learning_rate", learning_rate},
              {"l2", l2},
              {"threshold", threshold},
              {"seed", seed}};
}

ProbeConfig ProbeConfig::from_json(const json& j) {
  ProbeConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.l2 = j.value("l2", c.l2);
  c.threshold = j.value("threshold", c.threshold);
  c.seed = j.value("seed", c.seed);
  return c;
}

Vector ProbeMatrix::scores(const Vector& embedding) const {
  require(embedding.size() == weights.cols(), ErrorKind::shape, "embedding width differs from probe");
  return weights * embedding + bias;
}

Multihot ProbeMatrix::predict(const Vector& embedding) const {
  return predict(embedding, config.threshold);
}

Multihot ProbeMatrix::predict(const Vector& embedding, double threshold) const {
  const Vector s = scores(embedding);
  Multihot bits;
  for (std::size_t i = 0; i < kInventorySize; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(s[static_cast<Eigen::Index>(i)])));
    if (p >= threshold) bits.set(i);
  }
  return bits;
}

void ProbeMatrix::save(const std::filesystem::path& json_path) const {
  auto blob_path = json_path;
  blob_path.replace_extension(".bin");
  std::vector<float> values(weights.data(), weights.data() + weights.size());
  values.insert(values.end(), bias.data(), bias.data() + bias.size());
  write_f32_blob_atomic(blob_path, values);
  json j{{"kind", "probe"},
         {"rows", weights.rows()},
         {"d_model", weights.cols()},
         {"inventory_hash", inventory_hash},
         {"split_seed", split_seed},
         {"config", config.to_json()},
         {"final_loss", final_loss},
         {"blob", blob_path.filename().string()},
         {"layout", "weights row-major (rows x d_model) then bias (rows), float32 LE"}};
  write_text_atomic(json_path, j.dump(2) + "\n");
}

ProbeMatrix ProbeMatrix::load(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) fail(ErrorKind::io, "cannot read " + json_path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::parse, json_path.string() + ": " + e.what());
  }
  ProbeMatrix p;
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto d = j.at("d_model").get<Eigen::Index>();
  const auto values = read_f32_blob(json_path.parent_path() / j.at("blob").get<std::string>());
  require(static_cast<Eigen::Index>(values.size()) == rows * d + rows, ErrorKind::parse,
          "probe blob size disagrees with header");
  p.weights = Eigen::Map<const Matrix>(values.data(), rows, d);
  p.bias = Eigen::Map<const Vector>(values.data() + rows * d, rows);
  p.inventory_hash = j.at("inventory_hash").get<std::string>();
  p.split_seed = j.at("split_seed").get<std::uint64_t>();
  p.config = ProbeConfig::from_json(j.at("config"));
  p.final_loss = j.value("final_loss", 0.0);
  return p;
}

ProbeMatrix train_probe(const ProbeDataset& dataset, const ProbeConfig& config) {
  std::vector<const ProbeExample*> rows;
  for (const auto& e : dataset.examples) {
    if (e.split == Split::train) rows.push_back(&e);
  }
  require(!rows.empty(), ErrorKind::insufficient_data, "no training rows");
  require(config.epochs >= 0 && config.learning_rate > 0.0, ErrorKind::argument,
          "epochs must be >= 0 and learning rate > 0");
  const auto n = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index d = rows.front()->embedding.size();
  const auto k = static_cast<Eigen::Index>(kInventorySize);

  MatrixD x(n, d);
  MatrixD y = MatrixD::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    require(rows[static_cast<std::size_t>(i)]->embedding.size() == d, ErrorKind::shape,
            "embeddings have inconsistent width");
    x.row(i) = rows[static_cast<std::size_t>(i)]->embedding.cast<double>().transpose();
    for (Eigen::Index j = 0; j < k; ++j) {
      if (rows[static_cast<std::size_t>(i)]->label.test(static_cast<std::size_t>(j))) y(i, j) = 1.0;
    }
  }

  // Train on standardized features and fold the scaling back into the
  // stored weights afterwards; embedding dimensions differ widely in scale.
  const VectorD mu = x.colwise().mean().transpose();
  VectorD sigma = ((x.rowwise() - mu.transpose()).cwiseAbs2().colwise().sum().transpose() /
                   static_cast<double>(n))
                      .cwiseSqrt();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (sigma[j] < 1e-12) sigma[j] = 1.0;
  }
  x = (x.rowwise() - mu.transpose()).array().rowwise() / sigma.transpose().array();

  // Zero init keeps the fit independent of the RNG; the seed is recorded for
  // provenance and drives only the data split and baselines.
  MatrixD w = MatrixD::Zero(k, d);
  VectorD b = VectorD::Zero(k);
  MatrixD m_w = MatrixD::Zero(k, d), v_w = MatrixD::Zero(k, d);
  VectorD m_b = VectorD::Zero(k), v_b = VectorD::Zero(k);
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  const double scale = 1.0 / static_cast<double>(n * k);
  double loss = 0.0;

  auto evaluate_loss = [&](const MatrixD& logits) {
    // numerically stable BCE with logits
    double total = 0.0;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
      const double z = logits.data()[i];
      total += std::max(z, 0.0) - z * y.data()[i] + std::log1p(std::exp(-std::abs(z)));
    }
    return total * scale + config.l2 * w.squaredNorm();
  };

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    MatrixD logits = x * w.transpose();
    logits.rowwise() += b.transpose();
    loss = evaluate_loss(logits);
    if (!std::isfinite(loss)) {
      fail(ErrorKind::training, "loss diverged at epoch " + std::to_string(epoch));
    }
    const MatrixD residual =
        logits.unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); }) - y;
    const MatrixD g_w = scale * residual.transpose() * x + 2.0 * config.l2 * w;
    const VectorD g_b = scale * residual.colwise().sum().transpose();

    m_w = beta1 * m_w + (1.0 - beta1) * g_w;
    v_w = beta2 * v_w + (1.0 - beta2) * g_w.cwiseAbs2();
    m_b = beta1 * m_b + (1.0 - beta1) * g_b;
    v_b = beta2 * v_b + (1.0 - beta2) * g_b.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1, epoch);
    const double c2 = 1.0 - std::pow(beta2, epoch);
    w.array() -= config.learning_rate * (m_w.array() / c1) / ((v_w.array() / c2).sqrt() + eps);
    b.array() -= config.learning_rate * (m_b.array() / c1) / ((v_b.array() / c2).sqrt() + eps);
  }
  MatrixD logits = x * w.transpose();
  logits.rowwise() += b.transpose();
  loss = evaluate_loss(logits);
  if (!std::isfinite(loss) || !w.allFinite()) fail(ErrorKind::training, "probe weights diverged");

  const MatrixD w_raw = w.array().rowwise() / sigma.transpose().array();
  const VectorD b_raw = b - w_raw * mu;
  ProbeMatrix p;
  p.weights = w_raw.cast<float>();
  p.bias = b_raw.cast<float>();
  p.inventory_hash = dataset.inventory_hash;
  p.split_seed = dataset.split_seed;
  p.config = config;
  p.final_loss = loss;
  return p;
}

json ProbeMetrics::to_json(const PhonemeInventory& inventory) const {
  json f1 = json::object();
  json recall = json::object();
  for (std::size_t i = 0; i < kInventorySize; ++i) {
    f1[inventory.at(i).symbol] = per_phoneme_f1[i];
    recall[inventory.at(i).symbol] = per_phoneme_recall[i];
  }
  return json{{"exact_match", exact_match}, {"n", n}, {"per_phoneme_f1", f1},
              {"per_phoneme_recall", recall}};
}

ProbeMetrics evaluate_probe(const ProbeMatrix& probe, const ProbeDataset& dataset, Split split) {
  return evaluate_probe(probe, dataset, split, probe.config.threshold);
}

ProbeMetrics evaluate_probe(const ProbeMatrix& probe, const ProbeDataset& dataset, Split split,
                            double threshold) {
  require(probe.inventory_hash.empty() || dataset.inventory_hash.empty() ||
              probe.inventory_hash == dataset.inventory_hash,
          ErrorKind::argument, "probe and dataset use different inventories");
  ProbeMetrics m;
  std::array<std::size_t, kInventorySize> tp{}, fp{}, fn{};
  std::size_t exact = 0;
  for (const auto& e : dataset.examples) {
    if (e.split != split) continue;
    const Multihot pred = probe.predict(e.embedding, threshold);
    ++m.n;
    if (pred == e.label) ++exact;
    for (std::size_t i = 0; i < kInventorySize; ++i) {
      if (pred.test(i) && e.label.test(i)) ++tp[i];
      else if (pred.test(i)) ++fp[i];
      else if (e.label.test(i)) ++fn[i];
    }
  }
  m.exact_match = m.n ? static_cast<double>(exact) / static_cast<double>(m.n) : 0.0;
  for (std::size_t i = 0; i < kInventorySize; ++i) {
    const double denom = 2.0 * static_cast<double>(tp[i]) + static_cast<double>(fp[i] + fn[i]);
    // no positives and no predictions: a perfect (vacuous) score
    m.per_phoneme_f1[i] = denom > 0 ? 2.0 * static_cast<double>(tp[i]) / denom : 1.0;
    const double pos = static_cast<double>(tp[i] + fn[i]);
    m.per_phoneme_recall[i] = pos > 0 ? static_cast<double>(tp[i]) / pos : 1.0;
  }
  return m;
}

BaselineMetrics random_embedding_baseline(const ProbeDataset& dataset, std::uint64_t seed,
                                          const ProbeConfig& config) {
  require(!dataset.examples.empty(), ErrorKind::insufficient_data, "empty dataset");
  const Eigen::Index d = dataset.examples.front().embedding.size();
  VectorD mean = VectorD::Zero(d);
  VectorD sq = VectorD::Zero(d);
  for (const auto& e : dataset.examples) {
    const VectorD v = e.embedding.cast<double>();
    mean += v;
    sq += v.cwiseAbs2();
  }
  const double n = static_cast<double>(dataset.examples.size());
  mean /= n;
  const VectorD stddev = (sq / n - mean.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ProbeDataset shuffled = dataset;
  for (auto& e : shuffled.examples) {
    for (Eigen::Index j = 0; j < d; ++j) {
      e.embedding[j] = static_cast<float>(mean[j] + stddev[j] * normal(rng));
    }
  }
  const ProbeMatrix probe = train_probe(shuffled, config);
  return {evaluate_probe(probe, shuffled, Split::train), evaluate_probe(probe, shuffled, Split::test)};
}

Vector phoneme_vector(const ProbeMatrix& probe, std::string_view symbol,
                      const PhonemeInventory& inventory) {
  const auto idx = inventory.index_of(symbol);
  if (!idx) fail(ErrorKind::not_found, "phoneme '" + std::string(symbol) + "' not in inventory");
  require(static_cast<Eigen::Index>(*idx) < probe.weights.rows(), ErrorKind::shape,
          "probe has fewer rows than the inventory");
  return probe.weights.row(static_cast<Eigen::Index>(*idx)).transpose();
}

PlantedProbeData planted_probe_dataset(std::size_t n_words, int d_model, double noise,
                                       std::uint64_t seed) {
  const auto& inv = PhonemeInventory::english_us();
  std::vector<std::size_t> vowels;
  std::vector<std::size_t> consonants;
  for (std::size_t i = 0; i < inv.size(); ++i) (inv.at(i).is_vowel() ? vowels : consonants).push_back(i);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  PlantedProbeData out;
  out.mixing = Matrix(static_cast<Eigen::Index>(kInventorySize), d_model);
  for (Eigen::Index i = 0; i < out.mixing.size(); ++i) {
    out.mixing.data()[i] = static_cast<float>(normal(rng) / std::sqrt(static_cast<double>(d_model)));
  }
  out.dataset.split_seed = seed;
  out.dataset.inventory_hash = inv.hash();
  std::uniform_int_distribution<std::size_t> pick_vowel(0, vowels.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_consonant(0, consonants.size() - 1);
  std::uniform_int_distribution<int> n_consonants(1, 4);
  for (std::size_t w = 0; w < n_words; ++w) {
    ProbeExample ex;
    ex.word = "planted" + std::to_string(w);
    ex.label.set(vowels[pick_vowel(rng)]);
    const int nc = n_consonants(rng);
    for (int c = 0; c < nc; ++c) ex.label.set(consonants[pick_consonant(rng)]);
    Vector hot = Vector::Zero(static_cast<Eigen::Index>(kInventorySize));
    for (std::size_t i = 0; i < kInventorySize; ++i) {
      if (ex.label.test(i)) hot[static_cast<Eigen::Index>(i)] = 1.0f;
    }
    ex.embedding = out.mixing.transpose() * hot;
    if (noise > 0.0) {
      for (Eigen::Index j = 0; j < ex.embedding.size(); ++j) {
        ex.embedding[j] += static_cast<float>(noise * normal(rng));
      }
    }
    ex.split = assign_split(ex.word, seed);
    out.dataset.examples.push_back(std::move(ex));
  }
  return out;
}

}  // namespace phonolens
