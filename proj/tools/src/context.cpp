#include "context.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <iostream>
#include <unistd.h>

#include <spdlog/spdlog.h>

#include "phonolens/digest.hpp"
#include "phonolens/error.hpp"
#include "phonolens/head_analysis.hpp"
#include "phonolens/interventions.hpp"
#include "phonolens/synthetic.hpp"

namespace phonolens::cli {

using nlohmann::json;

namespace {

SyntheticKind synthetic_kind(const std::string& id) {
  if (id == "tiny") return SyntheticKind::copy_head;
  if (id == "tiny-random") return SyntheticKind::random;
  if (id == "tiny-vowel") return SyntheticKind::vowel_readout;
  return SyntheticKind::none;
}

bool head_exists(const ModelConfig& c, HeadId h) {
  return h.first >= 0 && h.first < c.n_layers && h.second >= 0 && h.second < c.n_heads;
}

}  // namespace

std::filesystem::path Artifact::sibling(std::string_view suffix) const {
  auto p = path;
  p.replace_extension();
  return p.string() + std::string(suffix);
}

Context::Context(const GlobalOptions& o) : no_color_(o.no_color) {
  if (!o.config.empty()) config_ = RunConfig::load(o.config);
  if (!o.model_id.empty()) config_.model_id = o.model_id;
  if (!o.model_dir.empty()) {
    config_.model_path = o.model_dir;
    if (o.model_id.empty() && config_.model_id == "tiny") {
      config_.model_id = std::filesystem::path(o.model_dir).filename().string();
    }
  }
  if (!o.lexicon.empty()) config_.lexicon = o.lexicon;
  if (!o.inventory.empty()) config_.inventory = o.inventory;
  if (!o.cache_dir.empty()) config_.cache_dir = o.cache_dir;
  if (o.seed) config_.seed = *o.seed;
  config_.probe.seed = config_.seed;
  config_.check_paths();
  if (!config_.model_path) synthetic_ = synthetic_kind(config_.model_id);
  spdlog::set_level(o.verbose ? spdlog::level::debug : spdlog::level::warn);
}

bool Context::ansi() const { return !no_color_ && ::isatty(STDOUT_FILENO) && std::getenv("NO_COLOR") == nullptr; }

const ModelHandle& Context::model() {
  if (model_) return *model_;
  switch (synthetic_) {
    case SyntheticKind::copy_head: {
      auto m = make_copy_head_model(config_.seed);
      planted_head_ = m.copy_head;
      model_ = std::move(m.model);
      break;
    }
    case SyntheticKind::random:
      model_ = make_tiny_model(config_.seed);
      planted_head_ = HeadId{1, 2};
      break;
    case SyntheticKind::vowel_readout:
      model_ = make_vowel_readout_model().model;
      planted_head_ = HeadId{0, 0};
      break;
    case SyntheticKind::none:
      if (!config_.model_path) {
        fail(ErrorKind::gated_resource, "model '" + config_.model_id +
                                            "' needs a weight directory (--model-dir or model.path)");
      }
      if (!std::filesystem::is_directory(*config_.model_path)) {
        fail(ErrorKind::gated_resource, "model directory not found: " + config_.model_path->string());
      }
      spdlog::info("loading weights from {}", config_.model_path->string());
      model_ = ModelHandle::load(*config_.model_path);
      break;
  }
  return *model_;
}

std::shared_ptr<const PhonemeInventory> Context::inventory() {
  if (!inventory_) {
    inventory_ = config_.inventory
                     ? std::make_shared<const PhonemeInventory>(PhonemeInventory::load(*config_.inventory))
                     : english_us_inventory();
  }
  return inventory_;
}

const PronunciationLexicon& Context::lexicon() {
  if (lexicon_) return *lexicon_;
  if (config_.lexicon) {
    lexicon_ = load_lexicon(*config_.lexicon, inventory());
    if (lexicon_->skipped_rows() > 0) {
      spdlog::warn("lexicon: skipped {} rows with segments outside the inventory", lexicon_->skipped_rows());
    }
  } else if (is_synthetic()) {
    lexicon_ = tiny_lexicon();
  } else {
    fail(ErrorKind::gated_resource, "a pronunciation lexicon is required (--lexicon or lexicon:)");
  }
  return *lexicon_;
}

HeadId Context::head_or_default(std::optional<HeadId> requested) {
  const HeadId h = requested.value_or(config_.head.head);
  const auto& c = model().config();
  if (head_exists(c, h)) return h;
  if (planted_head_ && !requested) return *planted_head_;
  fail(ErrorKind::usage, "head " + head_label(h) + " does not exist in a " + std::to_string(c.n_layers) +
                             "-layer, " + std::to_string(c.n_heads) + "-head model");
}

Provenance Context::provenance() const {
  Provenance p;
  p.config_hash = config_hash();
  p.seed = config_.seed;
  return p;
}

Artifact Context::artifact(const std::string& command, const json& params,
                           const std::function<json(const Artifact&)>& compute) {
  const json keyed{{"command", command}, {"config", config_hash()}, {"params", params}};
  Artifact a;
  a.path = cache_dir() / "artifacts" / command / (cache_key(config_.model_id, kRhymeTemplate, keyed) + ".json");
  if (std::filesystem::exists(a.path)) {
    a.body = read_json(a.path);
    a.cache_hit = true;
    spdlog::info("cache hit: {}", a.path.string());
    return a;
  }
  json body = compute(a);
  body["params"] = params;
  write_artifact(a.path, body, provenance());
  a.body = read_json(a.path);
  return a;
}

ProbeMatrix Context::probe(const std::optional<std::filesystem::path>& path,
                           std::optional<std::size_t> min_words) {
  if (path) return ProbeMatrix::load(*path);
  return ProbeMatrix::load(probe_artifact(min_words).sibling(".probe.json"));
}

Artifact Context::probe_artifact(std::optional<std::size_t> requested_min_words) {
  const std::size_t min_words = requested_min_words.value_or(default_min_words());
  const json params{{"probe", config_.probe.to_json()}, {"min_words", min_words}};
  auto compute = [&](const Artifact& a) {
    const auto dataset = build_dataset(model(), lexicon(), config_.seed, min_words);
    const auto probe = train_probe(dataset, config_.probe);
    probe.save(a.sibling(".probe.json"));
    const auto& inv = lexicon().inventory();
    return json{{"probe_file", a.sibling(".probe.json").filename().string()},
                {"train", evaluate_probe(probe, dataset, Split::train).to_json(inv)},
                {"test", evaluate_probe(probe, dataset, Split::test).to_json(inv)},
                {"final_loss", probe.final_loss}};
  };
  auto a = artifact("probe-train", params, compute);
  if (!std::filesystem::exists(a.sibling(".probe.json"))) {
    std::filesystem::remove(a.path);
    a = artifact("probe-train", params, compute);
  }
  return a;
}

WordSource word_source(Context& ctx, const std::optional<std::filesystem::path>& file) {
  WordSource src;
  if (file) {
    src.words = load_word_list(*file);
    src.identity = "list:";
  } else {
    src.words = single_token_words(ctx.model(), ctx.lexicon());
    src.identity = "single-token-lexicon:";
  }
  std::string joined;
  for (const auto& w : src.words) joined += w + "\n";
  src.identity += sha256_hex(joined);
  return src;
}

Context::ResolvedProbe Context::resolved_probe(const std::string& path) {
  if (!path.empty()) return {ProbeMatrix::load(path), "sha256:" + file_sha256(path)};
  if (synthetic_ == SyntheticKind::vowel_readout) {
    // the planted phoneme axes are the exact probe of this model
    ProbeMatrix axes;
    axes.weights = make_vowel_readout_model().phoneme_axes;
    axes.bias = Vector::Zero(static_cast<Eigen::Index>(kInventorySize));
    axes.inventory_hash = lexicon().inventory().hash();
    return {std::move(axes), "planted-axes"};
  }
  const auto a = probe_artifact(std::nullopt);
  return {ProbeMatrix::load(a.sibling(".probe.json")), "artifact:" + a.path.filename().string()};
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

HeadId parse_head(std::string_view text) {
  const auto sep = text.find_first_of(".,:");
  if (sep == std::string_view::npos) fail(ErrorKind::usage, "a head is written LAYER.HEAD, got '" + std::string(text) + "'");
  try {
    return {std::stoi(std::string(text.substr(0, sep))), std::stoi(std::string(text.substr(sep + 1)))};
  } catch (const std::exception&) {
    fail(ErrorKind::usage, "a head is written LAYER.HEAD, got '" + std::string(text) + "'");
  }
}

void emit(const std::string& text) { std::cout << text << '\n'; }

}  // namespace phonolens::cli
