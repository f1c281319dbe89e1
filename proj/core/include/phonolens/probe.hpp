#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "phonolens/model.hpp"
#include "phonolens/phonetics.hpp"
#include "phonolens/tensor.hpp"

namespace phonolens {

enum class Split { train, test };
std::string_view to_string(Split s);

// Deterministic 90/10 assignment from a seeded hash of the word.
Split assign_split(std::string_view word, std::uint64_t seed);

struct ProbeExample {
  std::string word;
  Vector embedding;
  Multihot label;
  Split split = Split::train;
};

struct ProbeDataset {
  std::vector<ProbeExample> examples;
  std::uint64_t split_seed = 0;
  std::string inventory_hash;

  std::size_t count(Split s) const;
  int d_model() const { return examples.empty() ? 0 : static_cast<int>(examples.front().embedding.size()); }
};

// One row per single-token lexicon word: its raw embedding-matrix row and
// the multi-hot of its first pronunciation.
ProbeDataset build_dataset(const ModelHandle& model, const PronunciationLexicon& lexicon,
                           std::uint64_t split_seed, std::size_t min_words = 100);

struct ProbeConfig {
  int epochs = 400;
  double learning_rate = 0.02;
  double l2 = 1e-4;
  double threshold = 0.5;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static ProbeConfig from_json(const nlohmann::json& j);
};

// Linear map from embedding space to the 44-dim phoneme space; row i is the
// latent vector of inventory phoneme i.
struct ProbeMatrix {
  Matrix weights;  // 44 x d_model
  Vector bias;     // 44
  std::string inventory_hash;
  std::uint64_t split_seed = 0;
  ProbeConfig config;
  double final_loss = 0.0;

  Vector scores(const Vector& embedding) const;  // pre-sigmoid
  Multihot predict(const Vector& embedding) const;
  Multihot predict(const Vector& embedding, double threshold) const;

  void save(const std::filesystem::path& json_path) const;  // + sibling .bin blob
  static ProbeMatrix load(const std::filesystem::path& json_path);
};

// Full-batch Adam on mean per-phoneme binary cross-entropy plus L2.
ProbeMatrix train_probe(const ProbeDataset& dataset, const ProbeConfig& config);

struct ProbeMetrics {
  double exact_match = 0.0;
  std::size_t n = 0;
  std::array<double, kInventorySize> per_phoneme_f1{};
  std::array<double, kInventorySize> per_phoneme_recall{};

  nlohmann::json to_json(const PhonemeInventory& inventory) const;
};

ProbeMetrics evaluate_probe(const ProbeMatrix& probe, const ProbeDataset& dataset, Split split);
ProbeMetrics evaluate_probe(const ProbeMatrix& probe, const ProbeDataset& dataset, Split split,
                            double threshold);

struct BaselineMetrics {
  ProbeMetrics train;
  ProbeMetrics test;
};

// Replaces every embedding with a draw from per-dimension Gaussians matched
// to the dataset embeddings, retrains with the same config and evaluates.
BaselineMetrics random_embedding_baseline(const ProbeDataset& dataset, std::uint64_t seed,
                                          const ProbeConfig& config);

Vector phoneme_vector(const ProbeMatrix& probe, std::string_view symbol,
                      const PhonemeInventory& inventory);

// Synthetic oracle: embeddings = mixing^T * multihot (+ optional Gaussian
// noise) for `n_words` random single-vowel pronunciations.
struct PlantedProbeData {
  ProbeDataset dataset;
  Matrix mixing;  // 44 x d_model
};
PlantedProbeData planted_probe_dataset(std::size_t n_words, int d_model, double noise,
                                       std::uint64_t seed);

}  // namespace phonolens
