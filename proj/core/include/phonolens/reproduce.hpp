#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phonolens/geometry.hpp"
#include "phonolens/head_analysis.hpp"
#include "phonolens/interventions.hpp"
#include "phonolens/model.hpp"
#include "phonolens/patching.hpp"
#include "phonolens/phonetics.hpp"
#include "phonolens/probe.hpp"
#include "phonolens/selftest.hpp"

namespace phonolens {

// Files needed for the reference-weight pipeline.
struct ReferenceInputs {
  std::filesystem::path model_dir;                    // HF-style directory
  std::filesystem::path lexicon;                      // WikiPron TSV
  std::optional<std::filesystem::path> survey_words;  // Oxford 5000 style list
  std::optional<std::filesystem::path> cache_dir;
  std::uint64_t seed = 0;

  // PHONOLENS_MODEL_DIR and PHONOLENS_LEXICON (both required),
  // PHONOLENS_SURVEY_WORDS and PHONOLENS_CACHE (optional). Empty when a
  // required variable is unset.
  static std::optional<ReferenceInputs> from_environment();
};

// Thresholds applied to the reference-weight measurements.
struct ReferenceTargets {
  double probe_min = 0.90, probe_max = 0.98;
  double baseline_min = 0.30, baseline_max = 0.55;
  HeadId mover{12, 13};
  double mover_min = 0.35, mover_max = 0.60;
  double runner_up_max = 0.30;
  double grid_mean_max = 0.05;
  std::size_t triplet_words = 50;
  double triplet_rate = 0.80;
  std::size_t survey_words = 100;
  double pass_incoherent_max = 0.05;
  double overlay_min = 0.70;
  std::vector<std::string> expected_vowel_exceptions{"a", "ɪ"};
};

// Runs the probe -> intervention -> patching -> head -> geometry stages on
// reference weights. Stages share the trained probe and the collected
// result vectors; every stage also leaves a JSON artifact in `artifacts`.
class ReferenceRun {
 public:
  explicit ReferenceRun(ReferenceInputs inputs, ProbeConfig probe_config = {},
                        ReferenceTargets targets = {});

  const ModelHandle& model() const { return model_; }
  const PronunciationLexicon& lexicon() const { return lexicon_; }
  const ProbeMatrix& probe();

  CheckResult check_probe();
  // Example sweep (leet, i -> ɛ); recorded as an artifact, not checked against a threshold.
  std::vector<SweepRow> run_intervention(const InterventionSpec& spec);
  CheckResult check_patching();
  CheckResult check_triplet();
  CheckResult check_survey();
  CheckResult check_geometry();

  nlohmann::json artifacts;  // stage -> report

 private:
  const std::vector<std::string>& single_token_words();

  ReferenceInputs inputs_;
  ProbeConfig probe_config_;
  ReferenceTargets targets_;
  ModelHandle model_;
  PronunciationLexicon lexicon_;
  std::optional<ProbeDataset> dataset_;
  std::optional<ProbeMatrix> probe_;
  std::optional<std::vector<std::string>> words_;
};

}  // namespace phonolens
