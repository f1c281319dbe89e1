#include "phonolens/reproduce.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <random>

#include <spdlog/spdlog.h>

#include "phonolens/error.hpp"
#include "phonolens/synthetic.hpp"

namespace phonolens {

using nlohmann::json;

namespace {

std::optional<std::filesystem::path> env_path(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::filesystem::path(v);
}

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

ModelHandle load_model(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorKind::gated_resource, "model directory not found: " + dir.string());
  return ModelHandle::load(dir);
}

PronunciationLexicon load_reference_lexicon(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::gated_resource, "lexicon not found: " + path.string());
  return load_lexicon(path, english_us_inventory());
}

}  // namespace

std::optional<ReferenceInputs> ReferenceInputs::from_environment() {
  const auto model = env_path("PHONOLENS_MODEL_DIR");
  const auto lexicon = env_path("PHONOLENS_LEXICON");
  if (!model || !lexicon) return std::nullopt;
  ReferenceInputs in;
  in.model_dir = *model;
  in.lexicon = *lexicon;
  in.survey_words = env_path("PHONOLENS_SURVEY_WORDS");
  in.cache_dir = env_path("PHONOLENS_CACHE");
  return in;
}

ReferenceRun::ReferenceRun(ReferenceInputs inputs, ProbeConfig probe_config, ReferenceTargets targets)
    : artifacts(json::object()),
      inputs_(std::move(inputs)),
      probe_config_(probe_config),
      targets_(std::move(targets)),
      model_(load_model(inputs_.model_dir)),
      lexicon_(load_reference_lexicon(inputs_.lexicon)) {
  probe_config_.seed = inputs_.seed;
}

const std::vector<std::string>& ReferenceRun::single_token_words() {
  if (!words_) words_ = phonolens::single_token_words(model_, lexicon_);
  return *words_;
}

const ProbeMatrix& ReferenceRun::probe() {
  if (!probe_) {
    dataset_ = build_dataset(model_, lexicon_, inputs_.seed);
    probe_ = train_probe(*dataset_, probe_config_);
  }
  return *probe_;
}

CheckResult ReferenceRun::check_probe() {
  const auto& p = probe();
  const auto test = evaluate_probe(p, *dataset_, Split::test);
  const auto base = random_embedding_baseline(*dataset_, inputs_.seed + 1, probe_config_);
  artifacts["probe"] = {{"test", test.to_json(lexicon_.inventory())},
                        {"baseline_test", base.test.to_json(lexicon_.inventory())},
                        {"train_rows", dataset_->count(Split::train)},
                        {"test_rows", dataset_->count(Split::test)}};
  const bool ok = test.exact_match >= targets_.probe_min && test.exact_match <= targets_.probe_max &&
                  base.test.exact_match >= targets_.baseline_min && base.test.exact_match <= targets_.baseline_max;
  return {"probe exact match and random baseline in reference ranges", ok,
          fmt("probe %.3f", test.exact_match) + fmt(", baseline %.3f", base.test.exact_match)};
}

std::vector<SweepRow> ReferenceRun::run_intervention(const InterventionSpec& spec) {
  auto rows = intervene(model_, probe(), spec, lexicon_);
  json out = json::array();
  for (const auto& r : rows) out.push_back(r.to_json());
  const auto curve = transition_curve(rows);
  artifacts["intervene"] = {{"word", spec.word}, {"xi", spec.xi}, {"mu", spec.mu}, {"rows", out},
                            {"c_switch", curve.c_switch ? json(*curve.c_switch) : json(nullptr)},
                            {"third_party_cs", curve.third_party_cs}};
  return rows;
}

CheckResult ReferenceRun::check_patching() {
  const auto built = build_pairs(model_, default_word_pairs(), lexicon_);
  for (const auto& r : built.rejected) spdlog::warn("pair rejected: {}", r);
  const auto grid = patch_scan(model_, built.pairs, PositionMode::final);
  artifacts["patch"] = grid.to_json();
  const auto top = top_components(grid, 2);
  if (top.size() < 2) return {"patch scan singles out the mover head", false, "grid too small"};
  const bool ok = top[0].layer == targets_.mover.first && top[0].head == targets_.mover.second &&
                  top[0].score >= targets_.mover_min && top[0].score <= targets_.mover_max &&
                  top[1].score <= targets_.runner_up_max && grid.mean() <= targets_.grid_mean_max;
  return {"patch scan singles out the mover head", ok,
          "top " + top[0].label() + fmt(" %.3f", top[0].score) + ", second " + top[1].label() +
              fmt(" %.3f", top[1].score) + fmt(", mean %.4f", grid.mean())};
}

CheckResult ReferenceRun::check_triplet() {
  // Draw words until enough of them give a single-token rhyme unablated.
  std::vector<std::string> pool = single_token_words();
  std::mt19937_64 rng(inputs_.seed);
  for (std::size_t i = pool.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(pool[i - 1], pool[pick(rng)]);
  }
  TripletStudy kept;
  kept.heads = default_triplet();
  for (std::size_t start = 0; start < pool.size() && kept.words.size() < targets_.triplet_words; start += 25) {
    const std::vector<std::string> chunk(pool.begin() + static_cast<std::ptrdiff_t>(start),
                                         pool.begin() + static_cast<std::ptrdiff_t>(std::min(pool.size(), start + 25)));
    auto study = triplet_ablation_study(model_, chunk, kept.heads, lexicon_);
    for (auto& w : study.words) {
      if (w.baseline.single_token_rhyme && kept.words.size() < targets_.triplet_words) kept.words.push_back(std::move(w));
    }
  }
  artifacts["triplet"] = kept.to_json();
  if (kept.words.size() < targets_.triplet_words) {
    return {"triplet ablation removes and restores rhymes", false,
            "only " + std::to_string(kept.words.size()) + " words rhyme unablated"};
  }
  const double eliminated = 1.0 - kept.all_ablated_rate();
  bool ok = eliminated >= targets_.triplet_rate;
  std::string detail = fmt("eliminated %.2f", eliminated);
  for (double r : kept.leave_one_out_rates()) {
    ok = ok && r >= targets_.triplet_rate;
    detail += fmt(", restored %.2f", r);
  }
  return {"triplet ablation removes and restores rhymes", ok, detail};
}

CheckResult ReferenceRun::check_survey() {
  if (!inputs_.survey_words) {
    CheckResult r{"coherence survey table", false, "no survey word list (PHONOLENS_SURVEY_WORDS)"};
    r.skipped = true;
    return r;
  }
  const auto words = sample_survey_words(model_, load_word_list(*inputs_.survey_words), lexicon_,
                                         targets_.survey_words, inputs_.seed);
  const auto table = survey(model_, words, targets_.mover, lexicon_);
  artifacts["survey"] = table.to_json();
  if (table.sample_size == 0) return {"coherence survey table", false, "no judged words"};
  const double n = static_cast<double>(table.sample_size);
  const std::size_t largest = std::max({table.coherent_pass, table.coherent_fail, table.incoherent_pass, table.incoherent_fail});
  const bool ok = table.incoherent_pass / n <= targets_.pass_incoherent_max && table.coherent_pass == largest;
  return {"coherence survey table", ok,
          "cp " + std::to_string(table.coherent_pass) + " cf " + std::to_string(table.coherent_fail) + " ip " +
              std::to_string(table.incoherent_pass) + " if " + std::to_string(table.incoherent_fail)};
}

CheckResult ReferenceRun::check_geometry() {
  const auto& words = single_token_words();
  const auto coverage = head_dim_coverage(model_, words, targets_.mover, 8);
  const auto collected = collect_result_vectors(model_, words, targets_.mover, inputs_.cache_dir);
  const auto pca = fit_pca(collected.rows, 8);
  const auto& inv = lexicon_.inventory();
  const auto phoneme_points = project_phoneme_vectors(pca, probe(), inv);
  const auto vowels = vowel_geometry_report(phoneme_points, inv);
  const auto result_points = project(pca, collected.rows, collected.words, PointSource::result_vector);
  const auto overlay = overlay_result_vectors(result_points, single_vowel_words(collected.words, lexicon_),
                                              phoneme_points, inv);
  artifacts["geometry"] = {{"coverage", coverage.to_json()},
                           {"vowel_report", vowels.to_json()},
                           {"overlay", overlay.to_json()},
                           {"rows", collected.rows.rows()}};
  const int dh = model_.config().d_head;
  bool flagged = true;
  for (const auto& v : targets_.expected_vowel_exceptions) flagged = flagged && vowels.is_exception(v);
  const bool ok = static_cast<int>(coverage.covered.size()) == dh && flagged &&
                  overlay.match_accuracy >= targets_.overlay_min;
  return {"geometry: coverage, vowel exceptions, overlay clustering", ok,
          "covered " + std::to_string(coverage.covered.size()) + "/" + std::to_string(dh) +
              (flagged ? ", exceptions flagged" : ", exceptions missing") + fmt(", overlay %.2f", overlay.match_accuracy)};
}

}  // namespace phonolens
