#include "phonolens/config.hpp"

#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "phonolens/artifacts.hpp"
#include "phonolens/digest.hpp"
#include "phonolens/error.hpp"

namespace phonolens {

using nlohmann::json;

namespace {

template <typename T>
void read(const YAML::Node& node, const char* key, T& out) {
  if (const auto v = node[key]; v && !v.IsNull()) out = v.as<T>();
}

void read_path(const YAML::Node& node, const char* key, const std::filesystem::path& base,
               std::optional<std::filesystem::path>& out) {
  if (const auto v = node[key]; v && !v.IsNull()) {
    std::filesystem::path p = v.as<std::string>();
    out = p.is_relative() && !base.empty() ? base / p : p;
  }
}

HeadId read_head(const YAML::Node& n) {
  if (!n.IsSequence() || n.size() != 2) fail(ErrorKind::parse, "a head is written [layer, head]");
  return {n[0].as<int>(), n[1].as<int>()};
}

json opt_path(const std::optional<std::filesystem::path>& p) {
  return p ? json(p->string()) : json(nullptr);
}

}  // namespace

RunConfig RunConfig::from_yaml(const std::string& text, const std::filesystem::path& base) {
  RunConfig c;
  try {
    const YAML::Node root = YAML::Load(text);
    if (!root || root.IsNull()) return c;
    if (!root.IsMap()) fail(ErrorKind::parse, "config root must be a mapping");
    if (const auto m = root["model"]) {
      read(m, "id", c.model_id);
      read_path(m, "path", base, c.model_path);
    }
    read_path(root, "lexicon", base, c.lexicon);
    read_path(root, "inventory", base, c.inventory);
    read_path(root, "cache_dir", base, c.cache_dir);
    read(root, "seed", c.seed);
    c.probe.seed = c.seed;
    if (const auto p = root["probe"]) {
      read(p, "epochs", c.probe.epochs);
      read(p, "learning_rate", c.probe.learning_rate);
      read(p, "l2", c.probe.l2);
      read(p, "threshold", c.probe.threshold);
    }
    if (const auto i = root["intervene"]) {
      read(i, "c_grid", c.intervene.c_grid);
      read(i, "n_tokens", c.intervene.n_tokens);
    }
    if (const auto p = root["patch"]) {
      read(p, "mode", c.patch.mode);
      read_path(p, "pairs", base, c.patch.pairs);
    }
    if (const auto h = root["head"]) {
      if (h["layer"]) c.head.head.first = h["layer"].as<int>();
      if (h["head"]) c.head.head.second = h["head"].as<int>();
      read(h, "k", c.head.k);
      read_path(h, "words", base, c.head.words);
      read(h, "survey_n", c.head.survey_n);
      read(h, "sparsity_n", c.head.sparsity_n);
      read(h, "sparsity_mode", c.head.sparsity_mode);
      read(h, "triplet_words", c.head.triplet_words);
      if (const auto t = h["triplet"]) {
        c.head.triplet.clear();
        for (const auto& e : t) c.head.triplet.push_back(read_head(e));
      }
    }
    if (const auto g = root["geometry"]) {
      read(g, "k", c.geometry.k);
      read(g, "scale", c.geometry.scale);
      read(g, "shift", c.geometry.shift);
      read(g, "overlay_words", c.geometry.overlay_words);
      read(g, "voicing_axis", c.geometry.voicing_axis);
      read(g, "voicing_companion", c.geometry.voicing_companion);
      if (const auto a = g["vowel_axes"]) c.geometry.vowel_axes = read_head(a);
    }
  } catch (const YAML::Exception& e) {
    fail(ErrorKind::parse, std::string("config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  auto c = from_yaml(buf.str(), path.parent_path());
  c.check_paths();
  return c;
}

void RunConfig::check_paths() const {
  for (const auto* p : {&lexicon, &inventory, &patch.pairs, &head.words}) {
    if (*p && !std::filesystem::exists(**p)) fail(ErrorKind::io, "config path does not exist: " + (*p)->string());
  }
  // a missing model directory is a gated resource, reported when the model loads
}

json RunConfig::to_json() const {
  json triplet = json::array();
  for (const auto& h : head.triplet) triplet.push_back({h.first, h.second});
  return json{
      {"model", {{"id", model_id}, {"path", opt_path(model_path)}}},
      {"lexicon", opt_path(lexicon)},
      {"inventory", opt_path(inventory)},
      {"cache_dir", opt_path(cache_dir)},
      {"seed", seed},
      {"probe", probe.to_json()},
      {"intervene", {{"c_grid", intervene.c_grid}, {"n_tokens", intervene.n_tokens}}},
      {"patch", {{"mode", patch.mode}, {"pairs", opt_path(patch.pairs)}}},
      {"head",
       {{"layer", head.head.first},
        {"head", head.head.second},
        {"k", head.k},
        {"words", opt_path(head.words)},
        {"survey_n", head.survey_n},
        {"sparsity_n", head.sparsity_n},
        {"sparsity_mode", head.sparsity_mode},
        {"triplet", triplet},
        {"triplet_words", head.triplet_words}}},
      {"geometry",
       {{"k", geometry.k},
        {"scale", geometry.scale},
        {"shift", geometry.shift},
        {"vowel_axes", {geometry.vowel_axes.first, geometry.vowel_axes.second}},
        {"voicing_axis", geometry.voicing_axis},
        {"voicing_companion", geometry.voicing_companion},
        {"overlay_words", geometry.overlay_words}}},
  };
}

std::string RunConfig::hash() const { return sha256_hex(canonical_json(to_json())); }

}  // namespace phonolens
