#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "phonolens/model.hpp"
#include "phonolens/probe.hpp"

namespace phonolens {

struct InterveneParams {
  std::string c_grid = "0:20:2";
  int n_tokens = 24;
};

struct PatchParams {
  std::string mode = "final";
  std::optional<std::filesystem::path> pairs;  // JSON list of [clean, corrupt]
};

struct HeadParams {
  HeadId head{12, 13};
  int k = 10;
  std::optional<std::filesystem::path> words;  // survey word list
  std::size_t survey_n = 100;
  int sparsity_n = 8;
  std::string sparsity_mode = "signed";
  std::vector<HeadId> triplet{{12, 13}, {14, 21}, {14, 22}};
  std::size_t triplet_words = 50;
};

struct GeometryParams {
  int k = 8;
  double scale = 25.0;
  double shift = 8.0;
  std::pair<int, int> vowel_axes{0, 1};
  int voicing_axis = 2;
  int voicing_companion = 1;
  std::size_t overlay_words = 2000;
};

// Everything a command needs, loaded from a YAML file. Paths are resolved
// relative to the file's directory.
struct RunConfig {
  std::string model_id = "tiny";
  std::optional<std::filesystem::path> model_path;  // HF-style directory
  std::optional<std::filesystem::path> lexicon;     // WikiPron TSV
  std::optional<std::filesystem::path> inventory;   // inventory JSON
  std::optional<std::filesystem::path> cache_dir;
  std::uint64_t seed = 0;
  ProbeConfig probe;
  InterveneParams intervene;
  PatchParams patch;
  HeadParams head;
  GeometryParams geometry;

  // Raises parse errors for malformed YAML and io errors for referenced
  // paths that do not exist.
  static RunConfig load(const std::filesystem::path& path);
  static RunConfig from_yaml(const std::string& text, const std::filesystem::path& base_dir = {});

  nlohmann::json to_json() const;
  // SHA-256 of the canonical JSON form.
  std::string hash() const;
  // Raises io errors for referenced paths that do not exist.
  void check_paths() const;
};

}  // namespace phonolens
