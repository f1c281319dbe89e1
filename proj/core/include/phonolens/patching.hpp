#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "phonolens/model.hpp"
#include "phonolens/phonetics.hpp"

namespace phonolens {

// Two parallel rhyme prompts whose target words rhyme differently. Runs
// cache head_z of every head and mlp_out of every layer at every position.
struct PatchPair {
  std::string clean_word;
  std::string corrupt_word;
  std::string clean_prompt;
  std::string corrupt_prompt;
  TokenId clean_answer = 0;
  TokenId corrupt_answer = 0;
  CapturedRun clean;
  CapturedRun corrupt;
};

PatchPair make_pair(const ModelHandle& model, std::string_view clean_word,
                    std::string_view corrupt_word, const PronunciationLexicon& lexicon);

// logit[clean answer] - logit[corrupt answer].
double logit_diff(const Vector& logits, const PatchPair& pair);
// (LD(patched) - LD(corrupt)) / (LD(clean) - LD(corrupt)).
double normalized_logit_diff(const Vector& patched_logits, const PatchPair& pair);

enum class PositionMode { final, all };
std::string_view to_string(PositionMode mode);
PositionMode parse_position_mode(std::string_view s);

// Which run's activations are written into the corrupt run. `corrupt` is
// the self-patch control.
enum class PatchSource { clean, corrupt };

// n_layers x (n_heads + 1); the last column holds the layer's MLP.
struct PatchGrid {
  MatrixD values;
  std::size_t pair_count = 0;
  PositionMode mode = PositionMode::final;
  std::vector<std::string> skipped;  // "clean/corrupt: reason"
  std::string model_id;

  int n_layers() const { return static_cast<int>(values.rows()); }
  int n_heads() const { return static_cast<int>(values.cols()) - 1; }
  double mean() const { return values.mean(); }

  nlohmann::json to_json() const;
  static PatchGrid from_json(const nlohmann::json& j);
};

// Patches one component (head >= 0: that head's head_z; head == -1: the
// layer's mlp_out) at the positions of `mode` and returns patched logits.
Vector patch_component(const ModelHandle& model, const PatchPair& pair, int layer, int head,
                       PositionMode mode, PatchSource source = PatchSource::clean);

// Patches resid_post of `layer` at every position from the clean run.
Vector patch_residual(const ModelHandle& model, const PatchPair& pair, int layer);

PatchGrid patch_scan(const ModelHandle& model, const std::vector<PatchPair>& pairs,
                     PositionMode mode = PositionMode::final, PatchSource source = PatchSource::clean);

struct RankedComponent {
  int layer = 0;
  int head = -1;  // -1 = MLP
  double score = 0.0;
  std::string label() const;
};

// Descending by score; ties by (layer, head) with the MLP after the heads.
std::vector<RankedComponent> top_components(const PatchGrid& grid, std::size_t k);

using WordPair = std::pair<std::string, std::string>;

// Pinned pair list for reference-scale scans: common single-syllable words
// with distinct rhyme tails.
const std::vector<WordPair>& default_word_pairs();

// Pairs from a JSON list of two-element lists.
std::vector<WordPair> load_word_pairs(const std::filesystem::path& path);
void save_word_pairs(const std::filesystem::path& path, const std::vector<WordPair>& pairs);

struct PairBuildReport {
  std::vector<PatchPair> pairs;
  std::vector<std::string> rejected;  // "a/b: reason"
};
// Builds every valid pair, recording the reason each invalid one is skipped.
PairBuildReport build_pairs(const ModelHandle& model, const std::vector<WordPair>& words,
                            const PronunciationLexicon& lexicon);

// Heatmap (layers down, heads across, MLP last) as a standalone SVG.
std::string heatmap_svg(const PatchGrid& grid, const std::string& title);

}  // namespace phonolens
