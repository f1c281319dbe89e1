#include "phonolens/artifacts.hpp"

#include <cstdlib>
#include <fstream>
#include <system_error>

#include <unistd.h>

#include "phonolens/digest.hpp"
#include "phonolens/error.hpp"
#include "phonolens/tensor.hpp"

namespace phonolens {

using nlohmann::json;

std::string_view version() { return PHONOLENS_VERSION; }

std::string canonical_json(const json& value) {
  // nlohmann::json objects are std::map backed, so dump() already emits keys
  // in sorted order
  return value.dump(-1, ' ', false, json::error_handler_t::strict);
}

std::string cache_key(std::string_view model_id, std::string_view prompt_template, const json& params) {
  const json envelope{{"model", model_id}, {"params", params}, {"template", prompt_template}};
  return sha256_hex(canonical_json(envelope));
}

namespace {

std::filesystem::path temp_sibling(const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  return tmp;
}

void commit(const std::filesystem::path& tmp, const std::filesystem::path& path) {
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    fail(ErrorKind::io, "cannot move artifact into place at " + path.string());
  }
}

void ensure_parent(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) fail(ErrorKind::io, "cannot create " + path.parent_path().string() + ": " + ec.message());
  }
}

}  // namespace

void write_text_atomic(const std::filesystem::path& path, std::string_view content) {
  ensure_parent(path);
  const auto tmp = temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) fail(ErrorKind::io, "short write to " + tmp.string());
  }
  commit(tmp, path);
}

void write_f32_blob_atomic(const std::filesystem::path& path, std::span<const float> values) {
  ensure_parent(path);
  const auto tmp = temp_sibling(path);
  write_f32_blob(tmp, values);
  commit(tmp, path);
}

json Provenance::to_json() const {
  return json{{"config_hash", config_hash}, {"seed", seed}, {"tool_version", tool_version}};
}

void write_artifact(const std::filesystem::path& path, json body, const Provenance& provenance) {
  body["provenance"] = provenance.to_json();
  write_text_atomic(path, body.dump(2) + "\n");
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::parse, path.string() + ": " + e.what());
  }
}

std::filesystem::path data_dir() {
  if (const char* env = std::getenv("PHONOLENS_DATA"); env && *env) return env;
  return PHONOLENS_DATA_DIR;
}

std::filesystem::path resolve_cache_dir(const std::optional<std::filesystem::path>& configured) {
  if (const char* env = std::getenv("PHONOLENS_CACHE"); env && *env) return env;
  if (configured) return *configured;
  return ".phonolens-cache";
}

}  // namespace phonolens
