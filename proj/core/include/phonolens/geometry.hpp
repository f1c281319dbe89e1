#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phonolens/model.hpp"
#include "phonolens/phonetics.hpp"
#include "phonolens/probe.hpp"

namespace phonolens {

// --- result-vector collection ----------------------------------------------

struct ResultMatrix {
  Matrix rows;                      // one row per collected word
  std::vector<std::string> words;   // row labels
  std::vector<std::pair<std::string, std::string>> errors;  // word, reason
  bool from_cache = false;
};

// One final-position result vector of `head` per word. With `cache_dir` the
// matrix is stored under a key of (model, template, head, word list) and
// reused on later calls. Raises a collection error when fewer than half of
// the words succeed.
ResultMatrix collect_result_vectors(const ModelHandle& model, const std::vector<std::string>& words,
                                    HeadId head,
                                    const std::optional<std::filesystem::path>& cache_dir = std::nullopt);

// --- PCA ------------------------------------------------------------------

struct PCAModel {
  VectorD mean;                 // d
  MatrixD components;           // k x d, orthonormal rows
  VectorD explained_variance;   // fraction of total variance per component
  nlohmann::json metadata;      // head, word-list hash, ...

  int k() const { return static_cast<int>(components.rows()); }
  int dim() const { return static_cast<int>(components.cols()); }

  VectorD transform(const VectorD& v) const;
  VectorD reconstruct(const VectorD& coords) const;

  void save(const std::filesystem::path& json_path) const;  // + sibling .bin blob
  static PCAModel load(const std::filesystem::path& json_path);
};

// Mean-centred PCA via the covariance eigendecomposition. Each component's
// largest-magnitude loading is made positive. Raises a rank error when the
// centred data has rank below k.
PCAModel fit_pca(const Matrix& data, int k);

enum class PointSource { phoneme_vector, result_vector };
std::string_view to_string(PointSource s);

struct ProjectedPoint {
  std::string label;
  std::vector<double> coords;
  PointSource source = PointSource::result_vector;
};

std::vector<ProjectedPoint> project(const PCAModel& pca, const Matrix& vectors,
                                    const std::vector<std::string>& labels, PointSource source);

// Projects every probe row, unit-normalized, labelled by its phoneme symbol.
std::vector<ProjectedPoint> project_phoneme_vectors(const PCAModel& pca, const ProbeMatrix& probe,
                                                    const PhonemeInventory& inventory);

// --- reports ----------------------------------------------------------------

struct VowelException {
  std::string symbol;
  std::vector<std::string> reasons;
};

struct VowelReport {
  int pc_x = 0;  // backness axis
  int pc_y = 1;  // openness axis
  std::map<Backness, double> mean_pc_x;
  bool backness_ordered = false;  // front > central > back
  std::map<Backness, std::optional<double>> openness_tau;  // per class
  std::vector<VowelException> exceptions;

  bool is_exception(std::string_view symbol) const;
  nlohmann::json to_json() const;
  std::string text_table() const;
};

// Backness ordering of mean PC-x per class; within each class the rank
// association (concordant minus discordant over pairs with distinct
// openness) between openness and PC-y; and the vowels that break either
// pattern or sit far (> 2.5 leave-one-out standard deviations) from their
// class on PC-x.
VowelReport vowel_geometry_report(const std::vector<ProjectedPoint>& points,
                                  const PhonemeInventory& inventory, int pc_x = 0, int pc_y = 1);

struct VoicingPair {
  std::string voiced;
  std::string voiceless;
  double displacement = 0.0;        // PC-axis(voiced) - PC-axis(voiceless)
  double plane_displacement_x = 0;  // same on the companion axis
};

struct VoicingReport {
  int axis = 2;
  int companion_axis = 1;
  std::vector<VoicingPair> pairs;
  double sign_consistency = 0.0;  // fraction agreeing with the majority sign
  double mean_displacement = 0.0;
  double threshold = 0.8;
  bool consistent() const { return sign_consistency > threshold; }

  nlohmann::json to_json() const;
  std::string text_table() const;
};

VoicingReport voicing_geometry_report(const std::vector<ProjectedPoint>& points,
                                      const PhonemeInventory& inventory, int axis = 2,
                                      int companion_axis = 1, double threshold = 0.8);

struct VowelCluster {
  std::string vowel;
  std::size_t size = 0;
  double centroid_x = 0.0;
  double centroid_y = 0.0;
  double distance_to_own = 0.0;
  std::string nearest_vowel;
};

struct Overlay {
  double scale = 25.0;
  double shift = 8.0;
  int pc_x = 0;
  int pc_y = 1;
  std::vector<ProjectedPoint> transformed;  // result-vector points after the affine map
  std::vector<VowelCluster> clusters;
  double match_accuracy = 0.0;              // clusters nearest to their own vowel point

  nlohmann::json to_json() const;
  std::string svg(const std::vector<ProjectedPoint>& phoneme_points,
                  const std::map<std::string, std::string>& word_vowel) const;
};

// Result-vector coordinates become coord * scale + shift on every component.
// Words are grouped by `word_vowel` (word -> its single vowel); each group's
// centroid in the (pc_x, pc_y) plane is matched to the nearest vowel
// phoneme point.
Overlay overlay_result_vectors(const std::vector<ProjectedPoint>& result_points,
                               const std::map<std::string, std::string>& word_vowel,
                               const std::vector<ProjectedPoint>& phoneme_points,
                               const PhonemeInventory& inventory, double scale = 25.0,
                               double shift = 8.0, int pc_x = 0, int pc_y = 1);

// word -> vowel for lexicon words whose first pronunciation has exactly one
// distinct vowel.
std::map<std::string, std::string> single_vowel_words(const std::vector<std::string>& words,
                                                      const PronunciationLexicon& lexicon);

// Scatter of projected phoneme points (vowels or consonants) on two axes.
std::string phoneme_scatter_svg(const std::vector<ProjectedPoint>& points,
                                const PhonemeInventory& inventory, bool vowels, int pc_x, int pc_y,
                                const std::string& title);

}  // namespace phonolens
