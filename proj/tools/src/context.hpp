#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "phonolens/artifacts.hpp"
#include "phonolens/config.hpp"
#include "phonolens/model.hpp"
#include "phonolens/phonetics.hpp"
#include "phonolens/probe.hpp"

namespace phonolens::cli {

// Flags shared by every subcommand; set values override the config file.
struct GlobalOptions {
  std::string config;
  std::string model_dir;
  std::string model_id;
  std::string lexicon;
  std::string inventory;
  std::string cache_dir;
  std::optional<std::uint64_t> seed;
  bool no_color = false;
  bool verbose = false;
};

// Synthetic models reachable by id without weight files.
enum class SyntheticKind { none, copy_head, random, vowel_readout };

// Result of an artifact lookup: the stored body and where it lives.
struct Artifact {
  std::filesystem::path path;
  nlohmann::json body;
  bool cache_hit = false;

  // Sibling file sharing the artifact's stem, e.g. "<key>.svg".
  std::filesystem::path sibling(std::string_view suffix) const;
};

class Context {
 public:
  explicit Context(const GlobalOptions& options);

  RunConfig& config() { return config_; }
  const RunConfig& config() const { return config_; }
  std::string config_hash() const { return config_.hash(); }
  std::uint64_t seed() const { return config_.seed; }
  bool ansi() const;

  SyntheticKind synthetic() const { return synthetic_; }
  bool is_synthetic() const { return synthetic_ != SyntheticKind::none; }

  // Raises gated_resource when weights or the lexicon are configured but
  // missing, or when a non-synthetic model has no weight directory.
  const ModelHandle& model();
  const PronunciationLexicon& lexicon();
  std::shared_ptr<const PhonemeInventory> inventory();

  // The configured head, or the synthetic model's planted head when the
  // configured one does not exist in a synthetic model.
  HeadId head_or_default(std::optional<HeadId> requested);

  // Probe for the current model: loaded from `path` when given, otherwise
  // the cached `probe train` artifact (trained on first use).
  ProbeMatrix probe(const std::optional<std::filesystem::path>& path,
                    std::optional<std::size_t> min_words = std::nullopt);
  // Probe plus a stable identity for cache keys: the file at `path`, the
  // planted axes of the vowel read-out model, or the cached trained probe.
  struct ResolvedProbe {
    ProbeMatrix probe;
    std::string identity;
  };
  ResolvedProbe resolved_probe(const std::string& path);
  // The `probe train` artifact; its ".probe.json" sibling holds the probe.
  Artifact probe_artifact(std::optional<std::size_t> min_words);
  std::size_t default_min_words() const { return is_synthetic() ? 20 : 100; }

  std::filesystem::path cache_dir() const { return resolve_cache_dir(config_.cache_dir); }
  Provenance provenance() const;

  // Looks up `<cache>/artifacts/<command>/<key>.json` for these parameters;
  // on a miss runs `compute` (which may write siblings of the path) and
  // stores its body atomically with provenance.
  Artifact artifact(const std::string& command, const nlohmann::json& params,
                    const std::function<nlohmann::json(const Artifact&)>& compute);

 private:
  RunConfig config_;
  SyntheticKind synthetic_ = SyntheticKind::none;
  std::optional<ModelHandle> model_;
  std::optional<PronunciationLexicon> lexicon_;
  std::shared_ptr<const PhonemeInventory> inventory_;
  std::optional<HeadId> planted_head_;
  bool no_color_ = false;
};

// A word list plus an identity used in cache keys.
struct WordSource {
  std::vector<std::string> words;
  std::string identity;
};

// Words from `file` when given, otherwise every lexicon word that is a
// single token of the current model.
WordSource word_source(Context& ctx, const std::optional<std::filesystem::path>& file);

// Hex SHA-256 of a file's bytes.
std::string file_sha256(const std::filesystem::path& path);

// "12.13" or "12,13" -> (12, 13).
HeadId parse_head(std::string_view text);

// Writes `text` to stdout followed by a newline.
void emit(const std::string& text);

}  // namespace phonolens::cli
