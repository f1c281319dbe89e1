#include "phonolens/patching.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "phonolens/error.hpp"
#include "phonolens/hooks.hpp"
#include "phonolens/interventions.hpp"
#include "phonolens/svg.hpp"

namespace phonolens {

using nlohmann::json;

namespace {

std::set<ActivationAddress> patchable_addresses(const ModelConfig& c, int seq) {
  std::set<ActivationAddress> out;
  for (int l = 0; l < c.n_layers; ++l) {
    for (int p = 0; p < seq; ++p) {
      for (int h = 0; h < c.n_heads; ++h) out.insert({l, Component::head_z, h, p});
      out.insert({l, Component::mlp_out, -1, p});
      out.insert({l, Component::resid_post, -1, p});
    }
  }
  return out;
}

const CapturedRun& source_run(const PatchPair& pair, PatchSource source) {
  return source == PatchSource::clean ? pair.clean : pair.corrupt;
}

}  // namespace

PatchPair make_pair(const ModelHandle& model, std::string_view clean_word,
                    std::string_view corrupt_word, const PronunciationLexicon& lexicon) {
  const std::string a(clean_word), b(corrupt_word);
  for (const auto& w : {a, b}) {
    if (!lexicon.contains(w)) fail(ErrorKind::not_found, "'" + w + "' is not in the lexicon");
    if (!single_token_id(model, w)) fail(ErrorKind::tokenization, "'" + w + "' is not a single token");
  }
  if (!sufficiently_different(a, b, lexicon)) {
    fail(ErrorKind::pair, "'" + a + "' and '" + b + "' share a rhyme tail");
  }
  PatchPair pair;
  pair.clean_word = a;
  pair.corrupt_word = b;
  pair.clean_prompt = rhyme_prompt(a);
  pair.corrupt_prompt = rhyme_prompt(b);
  const auto clean_tokens = model.tokenize_prompt(pair.clean_prompt);
  const auto corrupt_tokens = model.tokenize_prompt(pair.corrupt_prompt);
  if (clean_tokens.size() != corrupt_tokens.size()) {
    fail(ErrorKind::length, "prompts for '" + a + "' and '" + b + "' differ in token length (" +
                                std::to_string(clean_tokens.size()) + " vs " +
                                std::to_string(corrupt_tokens.size()) + ")");
  }
  const auto addrs = patchable_addresses(model.config(), static_cast<int>(clean_tokens.size()));
  pair.clean = run_with_capture(model, clean_tokens, addrs);
  pair.clean.prompt = pair.clean_prompt;
  pair.corrupt = run_with_capture(model, corrupt_tokens, addrs);
  pair.corrupt.prompt = pair.corrupt_prompt;
  pair.clean_answer = argmax_token(pair.clean.logits);
  pair.corrupt_answer = argmax_token(pair.corrupt.logits);
  if (pair.clean_answer == pair.corrupt_answer) {
    fail(ErrorKind::degenerate_pair, "'" + a + "' and '" + b + "' have the same answer token '" +
                                         model.tokenizer().token_text(pair.clean_answer) + "'");
  }
  return pair;
}

double logit_diff(const Vector& logits, const PatchPair& pair) {
  return static_cast<double>(logits[pair.clean_answer]) - static_cast<double>(logits[pair.corrupt_answer]);
}

double normalized_logit_diff(const Vector& patched_logits, const PatchPair& pair) {
  const double clean = logit_diff(pair.clean.logits, pair);
  const double corrupt = logit_diff(pair.corrupt.logits, pair);
  const double denom = clean - corrupt;
  if (std::abs(denom) < 1e-6) {
    fail(ErrorKind::degenerate_denominator,
         "clean and corrupt logit differences coincide for " + pair.clean_word + "/" + pair.corrupt_word);
  }
  return (logit_diff(patched_logits, pair) - corrupt) / denom;
}

std::string_view to_string(PositionMode mode) { return mode == PositionMode::final ? "final" : "all"; }

PositionMode parse_position_mode(std::string_view s) {
  if (s == "final") return PositionMode::final;
  if (s == "all") return PositionMode::all;
  fail(ErrorKind::argument, "position mode must be 'final' or 'all', got '" + std::string(s) + "'");
}

Vector patch_component(const ModelHandle& model, const PatchPair& pair, int layer, int head,
                       PositionMode mode, PatchSource source) {
  const int seq = static_cast<int>(pair.corrupt.tokens.size());
  const auto& from = source_run(pair, source);
  const Component comp = head >= 0 ? Component::head_z : Component::mlp_out;
  PatchMap patches;
  const int first = mode == PositionMode::final ? seq - 1 : 0;
  for (int p = first; p < seq; ++p) {
    const ActivationAddress a{layer, comp, head, p};
    patches.emplace(a, from.at(a));
  }
  return run_with_patch(model, pair.corrupt.tokens, patches);
}

Vector patch_residual(const ModelHandle& model, const PatchPair& pair, int layer) {
  const int seq = static_cast<int>(pair.corrupt.tokens.size());
  PatchMap patches;
  for (int p = 0; p < seq; ++p) {
    const ActivationAddress a{layer, Component::resid_post, -1, p};
    patches.emplace(a, pair.clean.at(a));
  }
  return run_with_patch(model, pair.corrupt.tokens, patches);
}

PatchGrid patch_scan(const ModelHandle& model, const std::vector<PatchPair>& pairs,
                     PositionMode mode, PatchSource source) {
  require(!pairs.empty(), ErrorKind::scan, "patch scan needs at least one pair");
  const auto& c = model.config();
  const auto& tf = model.transformer();
  PatchGrid grid;
  grid.mode = mode;
  grid.model_id = model.id();
  grid.values = MatrixD::Zero(c.n_layers, c.n_heads + 1);

  for (const auto& pair : pairs) {
    const std::string name = pair.clean_word + "/" + pair.corrupt_word;
    const double denom = logit_diff(pair.clean.logits, pair) - logit_diff(pair.corrupt.logits, pair);
    if (std::abs(denom) < 1e-6) {
      spdlog::warn("skipping degenerate pair {}", name);
      grid.skipped.push_back(name + ": degenerate denominator");
      continue;
    }
    const auto& tokens = pair.corrupt.tokens;
    const int seq = static_cast<int>(tokens.size());
    // Final-position patches cannot influence earlier positions, so the
    // corrupt prefix's key/value cache is shared by every cell.
    KVCache prefix = tf.empty_cache();
    if (mode == PositionMode::final && seq > 1) {
      tf.forward(prefix, std::span<const TokenId>(tokens.data(), tokens.size() - 1));
    }
    const auto& from = source_run(pair, source);
    auto score_cell = [&](int layer, int head) {
      if (mode == PositionMode::all) {
        return normalized_logit_diff(patch_component(model, pair, layer, head, mode, source), pair);
      }
      const Component comp = head >= 0 ? Component::head_z : Component::mlp_out;
      const ActivationAddress a{layer, comp, head, seq - 1};
      PatchMap patches{{a, from.at(a)}};
      PatchHook hook(patches);
      KVCache cache = prefix;
      const TokenId last[1] = {tokens.back()};
      return normalized_logit_diff(tf.forward(cache, last, &hook).logits, pair);
    };
    for (int l = 0; l < c.n_layers; ++l) {
      for (int h = 0; h < c.n_heads; ++h) grid.values(l, h) += score_cell(l, h);
      grid.values(l, c.n_heads) += score_cell(l, -1);
    }
    ++grid.pair_count;
  }
  if (grid.pair_count == 0) fail(ErrorKind::scan, "every pair was degenerate");
  grid.values /= static_cast<double>(grid.pair_count);
  require(grid.values.allFinite(), ErrorKind::scan, "patch grid has non-finite entries");
  return grid;
}

json PatchGrid::to_json() const {
  json rows = json::array();
  for (Eigen::Index l = 0; l < values.rows(); ++l) {
    json row = json::array();
    for (Eigen::Index h = 0; h < values.cols(); ++h) row.push_back(values(l, h));
    rows.push_back(std::move(row));
  }
  return json{{"kind", "patch_grid"},
              {"model", model_id},
              {"mode", std::string(to_string(mode))},
              {"n_layers", n_layers()},
              {"n_heads", n_heads()},
              {"columns", "heads 0..n_heads-1, then mlp"},
              {"pair_count", pair_count},
              {"skipped", skipped},
              {"mean", values.size() ? mean() : 0.0},
              {"values", rows}};
}

PatchGrid PatchGrid::from_json(const json& j) {
  PatchGrid g;
  g.model_id = j.value("model", "");
  g.mode = parse_position_mode(j.value("mode", "final"));
  g.pair_count = j.value("pair_count", std::size_t{0});
  g.skipped = j.value("skipped", std::vector<std::string>{});
  const auto& rows = j.at("values");
  const auto n_rows = static_cast<Eigen::Index>(rows.size());
  const auto n_cols = n_rows ? static_cast<Eigen::Index>(rows.at(0).size()) : 0;
  g.values = MatrixD(n_rows, n_cols);
  for (Eigen::Index l = 0; l < n_rows; ++l) {
    require(static_cast<Eigen::Index>(rows.at(static_cast<std::size_t>(l)).size()) == n_cols,
            ErrorKind::parse, "ragged patch grid");
    for (Eigen::Index h = 0; h < n_cols; ++h) {
      g.values(l, h) = rows.at(static_cast<std::size_t>(l)).at(static_cast<std::size_t>(h)).get<double>();
    }
  }
  return g;
}

std::string RankedComponent::label() const {
  return head >= 0 ? head_label({layer, head}) : "MLP" + std::to_string(layer);
}

std::vector<RankedComponent> top_components(const PatchGrid& grid, std::size_t k) {
  std::vector<RankedComponent> all;
  const int nh = grid.n_heads();
  for (int l = 0; l < grid.n_layers(); ++l) {
    for (int col = 0; col <= nh; ++col) all.push_back({l, col < nh ? col : -1, grid.values(l, col)});
  }
  auto key = [nh](const RankedComponent& r) { return std::pair{r.layer, r.head >= 0 ? r.head : nh}; };
  std::stable_sort(all.begin(), all.end(), [&](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score > b.score;
    return key(a) < key(b);
  });
  if (all.size() > k) all.resize(k);
  return all;
}

const std::vector<WordPair>& default_word_pairs() {
  static const std::vector<WordPair> pairs = {
      {"clean", "track"}, {"cat", "dog"},    {"light", "round"}, {"day", "song"},
      {"fun", "cake"},    {"hot", "fish"},   {"time", "book"},   {"rain", "door"},
      {"red", "ball"},    {"tree", "hand"},  {"moon", "best"},   {"king", "house"},
      {"blue", "stick"},  {"man", "bird"},   {"star", "fill"},   {"sleep", "road"},
      {"bell", "game"},   {"night", "cool"}, {"sky", "ring"},    {"bright", "sand"},
  };
  return pairs;
}

std::vector<WordPair> load_word_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::parse, path.string() + ": " + e.what());
  }
  require(j.is_array(), ErrorKind::parse, path.string() + ": expected a list of word pairs");
  std::vector<WordPair> out;
  for (const auto& item : j) {
    require(item.is_array() && item.size() == 2 && item[0].is_string() && item[1].is_string(),
            ErrorKind::parse, path.string() + ": each pair must be [clean, corrupt]");
    out.emplace_back(item[0].get<std::string>(), item[1].get<std::string>());
  }
  return out;
}

void save_word_pairs(const std::filesystem::path& path, const std::vector<WordPair>& pairs) {
  json j = json::array();
  for (const auto& [a, b] : pairs) j.push_back({a, b});
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

PairBuildReport build_pairs(const ModelHandle& model, const std::vector<WordPair>& words,
                            const PronunciationLexicon& lexicon) {
  PairBuildReport report;
  for (const auto& [a, b] : words) {
    try {
      report.pairs.push_back(make_pair(model, a, b, lexicon));
    } catch (const Error& e) {
      report.rejected.push_back(a + "/" + b + ": " + e.what());
    }
  }
  return report;
}

std::string heatmap_svg(const PatchGrid& grid, const std::string& title) {
  const int rows = grid.n_layers(), cols = grid.n_heads() + 1;
  const double cell = std::clamp(560.0 / std::max(cols, 1), 8.0, 40.0);
  const double left = 70, top = 60;
  const double width = left + cell * cols + 120, height = top + cell * rows + 60;
  double extent = 1e-12;
  for (Eigen::Index i = 0; i < grid.values.size(); ++i) extent = std::max(extent, std::abs(grid.values.data()[i]));

  SvgCanvas svg(width, height);
  svg.text(width / 2, 28, title, 16, "middle");
  char buf[64];
  for (int l = 0; l < rows; ++l) {
    svg.text(left - 8, top + cell * (l + 0.5) + 4, "L" + std::to_string(l), 11, "end");
    for (int h = 0; h < cols; ++h) {
      const double v = grid.values(l, h);
      const std::string name = h < cols - 1 ? head_label({l, h}) : "MLP" + std::to_string(l);
      std::snprintf(buf, sizeof buf, "%s: %.4f", name.c_str(), v);
      svg.rect(left + cell * h, top + cell * l, cell - 1, cell - 1, diverging_colour(v / extent), buf);
    }
  }
  for (int h = 0; h < cols; ++h) {
    const std::string label = h < cols - 1 ? std::to_string(h) : "MLP";
    if (cols <= 40 || h % 4 == 0 || h == cols - 1) {
      svg.text(left + cell * (h + 0.5), top + cell * rows + 16, label, 10, "middle");
    }
  }
  svg.text(left + cell * cols / 2, top + cell * rows + 40, "head", 12, "middle");
  // colour bar
  const double bx = left + cell * cols + 30;
  for (int i = 0; i < 100; ++i) {
    const double t = 1.0 - i / 50.0;
    svg.rect(bx, top + i * 2.0, 16, 2.0, diverging_colour(t));
  }
  std::snprintf(buf, sizeof buf, "%+.3g", extent);
  svg.text(bx + 20, top + 8, buf, 10);
  std::snprintf(buf, sizeof buf, "%+.3g", -extent);
  svg.text(bx + 20, top + 200, buf, 10);
  return svg.str();
}

}  // namespace phonolens
