#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "oracle.hpp"
#include "phonolens/artifacts.hpp"
#include "phonolens/config.hpp"
#include "phonolens/digest.hpp"

using namespace phonolens;
using nlohmann::json;
using testutil::check_error;

namespace {

// Compact, key-sorted serializer with the short escapes of RFC 8259 for integer/string/bool/null documents.
std::string canonical(const json& v) {
  switch (v.type()) {
    case json::value_t::null:
      return "null";
    case json::value_t::boolean:
      return v.get<bool>() ? "true" : "false";
    case json::value_t::number_integer:
      return std::to_string(v.get<long long>());
    case json::value_t::number_unsigned:
      return std::to_string(v.get<unsigned long long>());
    case json::value_t::string: {
      std::string out = "\"";
      for (unsigned char c : v.get<std::string>()) {
        if (c == '"') out += "\\\"";
        else if (c == '\\') out += "\\\\";
        else if (c == '\b') out += "\\b";
        else if (c == '\f') out += "\\f";
        else if (c == '\n') out += "\\n";
        else if (c == '\r') out += "\\r";
        else if (c == '\t') out += "\\t";
        else if (c < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", c);
          out += buf;
        } else out += static_cast<char>(c);
      }
      return out + "\"";
    }
    case json::value_t::array: {
      std::string out = "[";
      for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + canonical(v[i]);
      return out + "]";
    }
    case json::value_t::object: {
      std::vector<std::string> keys;
      for (auto it = v.begin(); it != v.end(); ++it) keys.push_back(it.key());
      std::sort(keys.begin(), keys.end());
      std::string out = "{";
      for (std::size_t i = 0; i < keys.size(); ++i) {
        out += (i ? "," : "") + canonical(json(keys[i])) + ":" + canonical(v.at(keys[i]));
      }
      return out + "}";
    }
    default:
      FAIL("unsupported value in canonical fixture");
      return {};
  }
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Sets an environment variable for the scope, restoring the previous value.
class ScopedEnv {
 public:
  ScopedEnv(const char* name, const std::optional<std::string>& value) : name_(name) {
    if (const char* old = std::getenv(name)) old_ = old;
    if (value) ::setenv(name, value->c_str(), 1);
    else ::unsetenv(name);
  }
  ~ScopedEnv() {
    if (old_) ::setenv(name_, old_->c_str(), 1);
    else ::unsetenv(name_);
  }

 private:
  const char* name_;
  std::optional<std::string> old_;
};

}  // namespace

TEST_SUITE("artifacts") {
  TEST_CASE("sha256 agrees with an independent implementation") {
    for (const std::string& s : std::vector<std::string>{"", "abc", std::string(1000, 'x'), std::string("ʃiː\n\0t", 7),
                                std::string(55, 'a'), std::string(56, 'a'), std::string(64, 'b')}) {
      CHECK(sha256_hex(s) == oracle::sha256_hex(s));
    }
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  }

  TEST_CASE("canonical JSON and cache keys") {
    const json params{{"zeta", 1},
                      {"alpha", {{"b", true}, {"a", nullptr}}},
                      {"words", {"ʃip", "tab\there", "quote\"d"}},
                      {"n", -3}};
    CHECK(canonical_json(params) == canonical(params));
    CHECK(canonical_json(params).find("ʃip") != std::string::npos);
    const json envelope{{"model", "tiny"}, {"template", "rhyme with {word}:"}, {"params", params}};
    CHECK(cache_key("tiny", "rhyme with {word}:", params) == oracle::sha256_hex(canonical(envelope)));
    CHECK(cache_key("tiny", "t", params) != cache_key("other", "t", params));
    CHECK(cache_key("tiny", "t", json{{"a", 1}, {"b", 2}}) == cache_key("tiny", "t", json::parse(R"({"b":2,"a":1})")));
  }

  TEST_CASE("artifacts carry provenance and are written atomically") {
    testutil::TempDir dir;
    const auto path = dir.path() / "deep" / "out.json";
    write_artifact(path, json{{"kind", "x"}, {"value", 3}}, Provenance{"abc123", 7});
    const auto j = read_json(path);
    CHECK(j.at("value") == 3);
    CHECK(j.at("provenance").at("config_hash") == "abc123");
    CHECK(j.at("provenance").at("seed") == 7);
    CHECK(j.at("provenance").at("tool_version") == std::string(version()));
    for (const auto& e : std::filesystem::directory_iterator(path.parent_path())) {
      CHECK(e.path().filename() == "out.json");
    }

    write_text_atomic(path, "replaced");
    CHECK(slurp(path) == "replaced");
    const std::vector<float> values{1.0f, -0.5f};
    write_f32_blob_atomic(dir.path() / "b.bin", values);
    CHECK(std::filesystem::file_size(dir.path() / "b.bin") == 8);
    check_error([&] { read_json(dir.path() / "missing.json"); }, ErrorKind::io);
    check_error([&] { read_json(dir.write("bad.json", "{oops")); }, ErrorKind::parse);
  }

  TEST_CASE("run configs") {
    testutil::TempDir dir;
    dir.write("lex.tsv", "clean\tk l iː n\n");
    dir.write("pairs.json", "[[\"clean\", \"track\"]]");
    const std::string yaml =
        "model:\n  id: tiny\n"
        "lexicon: lex.tsv\n"
        "seed: 5\n"
        "probe:\n  epochs: 12\n  learning_rate: 0.01\n"
        "intervene:\n  c_grid: \"0:4:1\"\n  n_tokens: 8\n"
        "patch:\n  mode: all\n  pairs: pairs.json\n"
        "head:\n  layer: 1\n  head: 2\n  triplet: [[1, 2], [1, 0]]\n"
        "geometry:\n  k: 4\n  vowel_axes: [0, 2]\n";
    const auto path = dir.write("run.yaml", yaml);
    const auto c = RunConfig::load(path);
    CHECK(c.model_id == "tiny");
    CHECK(c.lexicon == dir.path() / "lex.tsv");
    CHECK(c.patch.pairs == dir.path() / "pairs.json");
    CHECK(c.seed == 5);
    CHECK(c.probe.seed == 5);
    CHECK(c.probe.epochs == 12);
    CHECK(c.intervene.c_grid == "0:4:1");
    CHECK(c.patch.mode == "all");
    CHECK(c.head.head == HeadId{1, 2});
    CHECK(c.head.triplet == std::vector<HeadId>{{1, 2}, {1, 0}});
    CHECK(c.geometry.k == 4);
    CHECK(c.geometry.vowel_axes == std::pair<int, int>{0, 2});

    CHECK(c.hash() == RunConfig::load(path).hash());
    CHECK(c.hash() == oracle::sha256_hex(canonical_json(c.to_json())));
    CHECK(RunConfig::from_yaml("seed: 6\n").hash() != RunConfig::from_yaml("seed: 5\n").hash());

    check_error([&] { RunConfig::load(dir.write("missing.yaml", "lexicon: nowhere.tsv\n")); }, ErrorKind::io);
    check_error([&] { RunConfig::load(dir.path() / "absent.yaml"); }, ErrorKind::io);
    check_error([&] { RunConfig::from_yaml("seed: [1, 2\n"); }, ErrorKind::parse);
    check_error([&] { RunConfig::from_yaml("- a\n- b\n"); }, ErrorKind::parse);
    check_error([&] { RunConfig::from_yaml("seed: many\n"); }, ErrorKind::parse);
  }

  TEST_CASE("cache and data directories honour their environment overrides") {
    {
      ScopedEnv env("PHONOLENS_CACHE", std::nullopt);
      CHECK(resolve_cache_dir(std::nullopt) == ".phonolens-cache");
      CHECK(resolve_cache_dir(std::filesystem::path("/tmp/c")) == "/tmp/c");
    }
    {
      ScopedEnv env("PHONOLENS_CACHE", std::string("/tmp/env-cache"));
      CHECK(resolve_cache_dir(std::filesystem::path("/tmp/c")) == "/tmp/env-cache");
    }
    {
      ScopedEnv env("PHONOLENS_DATA", std::string("/tmp/data-here"));
      CHECK(data_dir() == "/tmp/data-here");
    }
    CHECK(std::filesystem::exists(data_dir() / "inventory_en_us_v1.json"));
  }
}
