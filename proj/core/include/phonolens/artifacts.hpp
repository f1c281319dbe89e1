#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace phonolens {

std::string_view version();

// Compact JSON with keys sorted, UTF-8 kept verbatim: the serialization that
// cache keys and config hashes are computed over.
std::string canonical_json(const nlohmann::json& value);

// SHA-256 (hex) of canonical_json({"model": ..., "params": ..., "template": ...}).
std::string cache_key(std::string_view model_id, std::string_view prompt_template,
                      const nlohmann::json& params);

// Writes to a sibling temporary file, then renames over `path`.
void write_text_atomic(const std::filesystem::path& path, std::string_view content);
void write_f32_blob_atomic(const std::filesystem::path& path, std::span<const float> values);

// Provenance block embedded in every artifact.
struct Provenance {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string tool_version = std::string(version());

  nlohmann::json to_json() const;
};

// `body` plus a "provenance" member, written atomically as indented JSON.
void write_artifact(const std::filesystem::path& path, nlohmann::json body, const Provenance& provenance);
nlohmann::json read_json(const std::filesystem::path& path);

// Bundled data files (inventory, sample lexicon and word lists):
// PHONOLENS_DATA when set, else the source-tree data directory.
std::filesystem::path data_dir();

// PHONOLENS_CACHE when set, else `configured`, else ".phonolens-cache".
std::filesystem::path resolve_cache_dir(const std::optional<std::filesystem::path>& configured);

}  // namespace phonolens
