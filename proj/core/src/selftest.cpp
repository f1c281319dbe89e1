#include "phonolens/selftest.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "phonolens/artifacts.hpp"
#include "phonolens/error.hpp"
#include "phonolens/geometry.hpp"
#include "phonolens/head_analysis.hpp"
#include "phonolens/hooks.hpp"
#include "phonolens/interventions.hpp"
#include "phonolens/patching.hpp"
#include "phonolens/probe.hpp"
#include "phonolens/synthetic.hpp"

namespace phonolens {

namespace {

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<std::vector<TokenId>> random_prompts(const ModelHandle& model, int n, int len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> tok(2, model.config().vocab_size - 1);
  std::vector<std::vector<TokenId>> out;
  for (int i = 0; i < n; ++i) {
    std::vector<TokenId> p{model.tokenizer().bos().value_or(0)};
    for (int j = 0; j < len; ++j) p.push_back(tok(rng));
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<PatchPair> tiny_pairs(const ModelHandle& model, const PronunciationLexicon& lexicon) {
  std::vector<WordPair> words;
  const auto& cls = tiny_rhyme_classes();
  for (std::size_t i = 0; i + 1 < cls.size(); i += 2) words.emplace_back(cls[i][0], cls[i + 1][0]);
  return build_pairs(model, words, lexicon).pairs;
}

CheckResult kv_cache_consistency() {
  const auto model = make_tiny_model(1);
  const auto& tf = model.transformer();
  double worst = 0;
  for (const auto& p : random_prompts(model, 5, 12, 3)) {
    const Vector full = tf.forward(p).logits;
    KVCache cache = tf.empty_cache();
    Vector step;
    for (TokenId t : p) {
      const TokenId one[1] = {t};
      step = tf.forward(cache, one).logits;
    }
    worst = std::max(worst, static_cast<double>((full - step).cwiseAbs().maxCoeff()));
  }
  return {"incremental decoding matches full forward", worst <= 1e-4, fmt("max |diff| %.3g", worst)};
}

CheckResult head_decomposition() {
  const auto model = make_tiny_model(2);
  const auto& c = model.config();
  const auto prompt = model.tokenize_prompt(rhyme_prompt("clean"));
  const int seq = static_cast<int>(prompt.size());
  std::set<ActivationAddress> addrs;
  for (int l = 0; l < c.n_layers; ++l) {
    for (int p = 0; p < seq; ++p) {
      addrs.insert({l, Component::attn_out, -1, p});
      for (int h = 0; h < c.n_heads; ++h) addrs.insert({l, Component::head_z, h, p});
    }
  }
  const auto run = run_with_capture(model, prompt, addrs);
  double worst = 0;
  for (int l = 0; l < c.n_layers; ++l) {
    for (int p = 0; p < seq; ++p) {
      Vector sum = model.transformer().weights().layers[static_cast<std::size_t>(l)].bo;
      for (int h = 0; h < c.n_heads; ++h) sum += head_result_vector(model, run.at({l, Component::head_z, h, p}), l, h).value;
      worst = std::max(worst, static_cast<double>((sum - run.at({l, Component::attn_out, -1, p})).cwiseAbs().maxCoeff()));
    }
  }
  return {"head results plus bias sum to attention output", worst <= 1e-4, fmt("max |diff| %.3g", worst)};
}

CheckResult lens_agrees() {
  const auto model = make_tiny_model(4);
  int agree = 0;
  const auto prompts = random_prompts(model, 20, 8, 9);
  for (const auto& p : prompts) {
    const auto r = model.transformer().forward(p);
    agree += logit_lens(model, r.final_residual, 1).front().id == argmax_token(r.logits);
  }
  return {"logit lens of final residual gives model argmax", agree == static_cast<int>(prompts.size()),
          std::to_string(agree) + "/" + std::to_string(prompts.size())};
}

CheckResult inventory_round_trip() {
  const auto& inv = PhonemeInventory::english_us();
  const auto back = PhonemeInventory::from_json(inv.to_json());
  return {"inventory JSON round trip", back == inv && back.hash() == inv.hash() && inv.size() == kInventorySize,
          inv.hash().substr(0, 12)};
}

CheckResult rhyme_predicates() {
  const auto lex = tiny_lexicon();
  const bool ok = rhymes("clean", "keen", lex) && !rhymes("clean", "track", lex) &&
                  sufficiently_different("clean", "track", lex) && !rhymes("clean", "clean", lex);
  return {"rhyme predicates on fixture lexicon", ok, ""};
}

CheckResult probe_planted() {
  const auto planted = planted_probe_dataset(2000, 64, 0.0, 7);
  const ProbeConfig cfg;
  const auto probe = train_probe(planted.dataset, cfg);
  const double exact = evaluate_probe(probe, planted.dataset, Split::train).exact_match;
  const double base = random_embedding_baseline(planted.dataset, 11, cfg).train.exact_match;
  return {"probe recovers planted phonemes; random baseline does not", exact >= 0.99 && base <= 0.60,
          fmt("exact %.4f", exact) + fmt(", baseline %.4f", base)};
}

CheckResult intervention_identity() {
  const auto vr = make_vowel_readout_model();
  const auto lex = tiny_lexicon();
  ProbeMatrix axes;
  axes.weights = vr.phoneme_axes;
  axes.bias = Vector::Zero(static_cast<Eigen::Index>(kInventorySize));
  InterventionSpec spec{"leet", "i", "ɛ", {0.0, 0.5, 1.0}, 4};
  const auto rows = intervene(vr.model, axes, spec, lex);
  const auto clean = greedy_continue(vr.model, vr.model.tokenize_prompt(rhyme_prompt("leet")), 4, nullptr, nullptr);
  return {"c = 0 sweep row equals the unedited continuation", rows.front().continuation == clean, ""};
}

CheckResult intervention_flip() {
  const auto vr = make_vowel_readout_model();
  const auto lex = tiny_lexicon();
  ProbeMatrix axes;
  axes.weights = vr.phoneme_axes;
  axes.bias = Vector::Zero(static_cast<Eigen::Index>(kInventorySize));
  const double step = 0.05;
  InterventionSpec spec{"leet", "i", "ɛ", parse_c_grid("0:1.5:0.05"), 1};
  const auto rows = intervene(vr.model, axes, spec, lex);
  const TokenId mu_token = vr.vowel_token.at("ɛ");
  std::optional<double> flip;
  for (const auto& r : rows) {
    if (r.first_token == mu_token) {
      flip = r.c;
      break;
    }
  }
  // unit rows: delta moves the xi bit to 1 - c and the mu bit to c
  const double predicted = 0.5;
  const bool ok = flip && std::abs(*flip - predicted) <= step + 1e-9;
  return {"intervention flips argmax at the analytic c", ok,
          flip ? fmt("flip at c = %.2f", *flip) : std::string("no flip")};
}

CheckResult patch_identities() {
  const auto lex = tiny_lexicon();
  const auto copy = make_copy_head_model(3);
  const auto pairs = tiny_pairs(copy.model, lex);
  if (pairs.empty()) return {"patching identities", false, "no valid pairs"};
  const auto self = patch_scan(copy.model, pairs, PositionMode::final, PatchSource::corrupt);
  const double self_max = self.values.cwiseAbs().maxCoeff();
  const auto grid = patch_scan(copy.model, pairs, PositionMode::final);
  const auto top = top_components(grid, 1).front();
  double resid = 0;
  for (const auto& p : pairs) {
    resid = std::max(resid, std::abs(normalized_logit_diff(patch_residual(copy.model, p, copy.model.config().n_layers - 1), p) - 1.0));
  }
  const bool ok = self_max <= 1e-4 && resid <= 1e-4 && top.layer == copy.copy_head.first &&
                  top.head == copy.copy_head.second;
  return {"self patch ~0, clean residual patch ~1, copy head wins", ok,
          fmt("self %.2g", self_max) + fmt(", residual %.2g", resid) + ", top " + top.label()};
}

CheckResult logit_diff_shift_invariance() {
  const auto lex = tiny_lexicon();
  const auto copy = make_copy_head_model(3);
  const auto pairs = tiny_pairs(copy.model, lex);
  if (pairs.empty()) return {"normalized logit difference ignores constant shifts", false, "no pairs"};
  const auto& p = pairs.front();
  const Vector patched = patch_component(copy.model, p, 1, 2, PositionMode::final);
  const Vector shifted = patched.array() + 3.25f;
  const double d = std::abs(normalized_logit_diff(patched, p) - normalized_logit_diff(shifted, p));
  return {"normalized logit difference ignores constant shifts", d <= 1e-5, fmt("diff %.2g", d)};
}

CheckResult sparsity_invariants() {
  const auto model = make_tiny_model(5);
  const int dh = model.config().d_head;
  bool ok = true;
  std::string detail;
  for (const auto* w : {"clean", "plush", "store", "cat"}) {
    const Vector z = capture_final_z(model, w, {1, 0});
    double prev = -2;
    for (int n = 0; n <= dh / 2; ++n) {
      const double cs = z_sparsity(model, z, {1, 0}, n).cosine;
      if (cs < prev - 1e-9) ok = false, detail = std::string(w) + " decreases at n=" + std::to_string(n);
      prev = cs;
    }
    if (std::abs(prev - 1.0) > 1e-9) ok = false, detail = std::string(w) + fmt(" full cosine %.9f", prev);
  }
  return {"z sparsity cosine is monotone and 1 at full width", ok, detail};
}

CheckResult pca_invariants() {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  Matrix data(200, 12);
  for (Eigen::Index i = 0; i < data.size(); ++i) data.data()[i] = static_cast<float>(nd(rng) * (1 + i % 12));
  const auto pca = fit_pca(data, 12);
  const double ortho = (pca.components * pca.components.transpose() - MatrixD::Identity(12, 12)).cwiseAbs().maxCoeff();
  bool nonincreasing = true;
  for (int i = 1; i < pca.k(); ++i) nonincreasing &= pca.explained_variance[i] <= pca.explained_variance[i - 1] + 1e-15;
  const double at_mean = pca.transform(pca.mean).cwiseAbs().maxCoeff();
  double recon = 0;
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    const VectorD v = data.row(r).transpose().cast<double>();
    recon = std::max(recon, (pca.reconstruct(pca.transform(v)) - v).cwiseAbs().maxCoeff());
  }
  const bool ok = ortho <= 1e-6 && nonincreasing && at_mean <= 1e-9 && recon <= 1e-5;
  return {"PCA orthonormal, ordered, complete", ok, fmt("ortho %.2g", ortho) + fmt(", recon %.2g", recon)};
}

CheckResult coherence_boundary() {
  const auto lex = tiny_lexicon();
  const CoherenceJudge judge(lex);
  const RhymeTail tail = rhyme_tails("clean", lex).front();
  auto tokens = [](std::vector<std::string> texts) {
    std::vector<ScoredToken> out;
    float s = 10;
    for (auto& t : texts) out.push_back({0, t, s -= 1});
    return out;
  };
  const bool five = judge.coherent(tokens({" keen", " een", " beet", " leet", " see", " back", " hat", " ship", " top", " sun"}), "clean", tail);
  const bool four = judge.coherent(tokens({" keen", " een", " beet", " leet", " back", " hat", " ship", " top", " sun", " crab"}), "clean", tail);
  return {"coherence threshold at five of ten", five && !four, ""};
}

CheckResult cache_key_behaviour() {
  const nlohmann::json params{{"k", 8}, {"seed", 1}};
  const auto a = cache_key("tiny", kRhymeTemplate, params);
  const auto b = cache_key("tiny", kRhymeTemplate, params);
  const auto c = cache_key("tiny", std::string(kRhymeTemplate) + " ", params);
  return {"cache keys are stable and template sensitive", a == b && a != c, a.substr(0, 12)};
}

}  // namespace

std::vector<CheckResult> run_selftest(const std::function<void(const CheckResult&)>& on_result) {
  const std::vector<std::pair<std::string, std::function<CheckResult()>>> checks = {
      {"kv", kv_cache_consistency},
      {"decomposition", head_decomposition},
      {"lens", lens_agrees},
      {"inventory", inventory_round_trip},
      {"rhyme", rhyme_predicates},
      {"probe", probe_planted},
      {"intervention-identity", intervention_identity},
      {"intervention-flip", intervention_flip},
      {"patching", patch_identities},
      {"logit-diff", logit_diff_shift_invariance},
      {"sparsity", sparsity_invariants},
      {"pca", pca_invariants},
      {"coherence", coherence_boundary},
      {"cache-key", cache_key_behaviour},
  };
  std::vector<CheckResult> results;
  for (const auto& [name, check] : checks) {
    CheckResult r;
    try {
      r = check();
    } catch (const std::exception& e) {
      r = {name, false, std::string("raised: ") + e.what()};
    }
    if (on_result) on_result(r);
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace phonolens
