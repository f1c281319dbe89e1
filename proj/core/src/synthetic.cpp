#include "phonolens/synthetic.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "phonolens/error.hpp"

namespace phonolens {

std::shared_ptr<const PhonemeInventory> english_us_inventory() {
  static const std::shared_ptr<const PhonemeInventory> ptr(
      std::shared_ptr<const PhonemeInventory>{}, &PhonemeInventory::english_us());
  return ptr;
}

namespace {

const std::vector<std::string>& template_pieces() {
  static const std::vector<std::string> pieces = {"Here",  " are",    " a",    " few",  " examples",
                                                  " of",   " words", "that",  " rhyme", " with"};
  return pieces;
}

}  // namespace

const std::vector<std::vector<std::string>>& tiny_rhyme_classes() {
  static const std::vector<std::vector<std::string>> classes = {
      {"clean", "keen", "bean", "green", "queen", "seen"},
      {"track", "back", "pack", "black", "stack", "crack"},
      {"leet", "beet", "feet", "meet", "sheet", "street"},
      {"bet", "set", "net", "wet", "pet", "get"},
      {"store", "more", "door", "four", "floor", "core"},
      {"plush", "brush", "crush", "rush", "blush"},
      {"grab", "crab", "cab", "lab", "tab"},
      {"cat", "hat", "bat", "mat", "rat"},
      {"lip", "ship", "tip", "dip", "sip"},
      {"hop", "top", "stop", "shop", "pop"},
      {"fun", "sun", "run", "bun"},
      {"moon", "soon", "spoon", "noon"},
      {"light", "night", "bright", "kite"},
      {"pin", "win", "tin", "fin"},
  };
  return classes;
}

std::shared_ptr<const PieceTokenizer> tiny_tokenizer() {
  static const std::shared_ptr<const PieceTokenizer> tok = [] {
    std::vector<std::string> pieces = {"<bos>", "<unk>"};
    for (const char* s : {"\n", " ", ":", ".", ",", "!", "?", "'", "-"}) pieces.emplace_back(s);
    for (char c = '0'; c <= '9'; ++c) pieces.emplace_back(1, c);
    for (char c = 'a'; c <= 'z'; ++c) pieces.emplace_back(1, c);
    for (const auto& p : template_pieces()) pieces.push_back(p);
    for (const auto& cls : tiny_rhyme_classes()) {
      for (const auto& w : cls) pieces.push_back(" " + w);
    }
    if (pieces.size() != 128) fail(ErrorKind::spec, "tiny vocabulary must have 128 pieces");
    return std::make_shared<const PieceTokenizer>(std::move(pieces), 0, 1);
  }();
  return tok;
}

const std::string& tiny_lexicon_tsv() {
  static const std::string tsv =
      "clean\tk l iː n\n"
      "keen\tk iː n\n"
      "bean\tb iː n\n"
      "green\tɡ ɹ iː n\n"
      "queen\tk w iː n\n"
      "seen\ts iː n\n"
      "track\tt ɹ æ k\n"
      "back\tb æ k\n"
      "pack\tp æ k\n"
      "black\tb l æ k\n"
      "stack\ts t æ k\n"
      "crack\tk ɹ æ k\n"
      "leet\tl iː t\n"
      "beet\tb iː t\n"
      "feet\tf iː t\n"
      "meet\tm iː t\n"
      "sheet\tʃ iː t\n"
      "street\ts t ɹ iː t\n"
      "bet\tb ɛ t\n"
      "set\ts ɛ t\n"
      "net\tn ɛ t\n"
      "wet\tw ɛ t\n"
      "pet\tp ɛ t\n"
      "get\tɡ ɛ t\n"
      "store\ts t ɔ ɹ\n"
      "store\ts t o ɹ\n"
      "more\tm ɔ ɹ\n"
      "door\td ɔ ɹ\n"
      "four\tf ɔ ɹ\n"
      "floor\tf l ɔ ɹ\n"
      "core\tk ɔ ɹ\n"
      "plush\tp l ʌ ʃ\n"
      "brush\tb ɹ ʌ ʃ\n"
      "crush\tk ɹ ʌ ʃ\n"
      "rush\tɹ ʌ ʃ\n"
      "blush\tb l ʌ ʃ\n"
      "grab\tɡ ɹ æ b\n"
      "crab\tk ɹ æ b\n"
      "cab\tk æ b\n"
      "lab\tl æ b\n"
      "tab\tt æ b\n"
      "cat\tk æ t\n"
      "hat\th æ t\n"
      "bat\tb æ t\n"
      "mat\tm æ t\n"
      "rat\tɹ æ t\n"
      "lip\tl ɪ p\n"
      "ship\tʃ ɪ p\n"
      "tip\tt ɪ p\n"
      "dip\td ɪ p\n"
      "sip\ts ɪ p\n"
      "hop\th ɑ p\n"
      "top\tt ɑ p\n"
      "stop\ts t ɑ p\n"
      "shop\tʃ ɑ p\n"
      "pop\tp ɑ p\n"
      "fun\tf ʌ n\n"
      "sun\ts ʌ n\n"
      "run\tɹ ʌ n\n"
      "bun\tb ʌ n\n"
      "moon\tm uː n\n"
      "soon\ts uː n\n"
      "spoon\ts p uː n\n"
      "noon\tn uː n\n"
      "light\tl a͡ɪ t\n"
      "night\tn a͡ɪ t\n"
      "bright\tb ɹ a͡ɪ t\n"
      "kite\tk a͡ɪ t\n"
      "pin\tp ɪ n\n"
      "win\tw ɪ n\n"
      "tin\tt ɪ n\n"
      "fin\tf ɪ n\n"
      "keep\tk iː p\n"
      "bee\tb iː\n"
      "see\ts iː\n"
      "sea\ts iː\n"
      "rhyme\tɹ a͡ɪ m\n"
      "banana\tb ə ˈn æ n ə\n"
      "computer\tk ə m ˈp j u ɾ ɚ\n"
      "elephant\tˈɛ l ə f ə n t\n"
      "button\tˈb ʌ ʔ n̩\n";
  return tsv;
}

PronunciationLexicon tiny_lexicon() {
  std::istringstream in(tiny_lexicon_tsv());
  return parse_lexicon(in, english_us_inventory());
}

namespace {

ModelConfig tiny_config(const TinyModelOptions& o) {
  ModelConfig c;
  c.d_model = o.d_model;
  c.n_layers = o.n_layers;
  c.n_heads = o.n_heads;
  c.n_kv_heads = o.n_heads;
  c.d_head = o.d_head;
  c.d_mlp = o.d_mlp;
  c.vocab_size = 128;
  c.max_context = 256;
  c.use_rope = true;
  c.rope_theta = 10000.0f;
  c.attn_out_bias = true;
  return c;
}

class Gaussian {
 public:
  explicit Gaussian(std::uint64_t seed) : rng_(seed) {}
  void fill(Matrix& m, float scale) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * dist_(rng_);
  }
  void fill(Vector& v, float scale) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = scale * dist_(rng_);
  }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<float> dist_{0.0f, 1.0f};
};

ModelWeights random_weights(const ModelConfig& c, std::uint64_t seed, float scale) {
  Gaussian g(seed);
  ModelWeights w = ModelWeights::zeros(c);
  g.fill(w.embed, 1.0f);
  auto fan = [](int n) { return 1.0f / std::sqrt(static_cast<float>(n)); };
  for (auto& lw : w.layers) {
    Vector noise(c.d_model);
    g.fill(noise, 0.1f);
    lw.ln_attn.array() += noise.array();
    g.fill(lw.wq, scale * 3.0f * fan(c.d_model));
    g.fill(lw.wk, scale * 3.0f * fan(c.d_model));
    g.fill(lw.wv, scale * 3.0f * fan(c.d_model));
    g.fill(lw.wo, scale * 3.0f * fan(c.n_heads * c.d_head));
    g.fill(lw.bo, 0.1f);
    g.fill(noise, 0.1f);
    lw.ln_mlp.array() += noise.array();
    g.fill(lw.w_gate, scale * 3.0f * fan(c.d_model));
    g.fill(lw.w_up, scale * 3.0f * fan(c.d_model));
    g.fill(lw.w_down, scale * 3.0f * fan(c.d_mlp));
  }
  Vector noise(c.d_model);
  g.fill(noise, 0.1f);
  w.ln_final.array() += noise.array();
  w.lm_head = Matrix(c.vocab_size, c.d_model);
  g.fill(w.lm_head, 1.0f);
  return w;
}

// Rows of the 8x8 Sylvester-Hadamard matrix and their negatives: 16
// codes in R^8 whose pairwise cosines are 0 or -1.
Vector class_code(std::size_t k) {
  Vector v(8);
  const std::size_t row = k % 8;
  const float sign = k < 8 ? 1.0f : -1.0f;
  for (std::size_t j = 0; j < 8; ++j) {
    const int parity = __builtin_popcount(static_cast<unsigned>(row & j)) & 1;
    v[static_cast<Eigen::Index>(j)] = sign * (parity ? -1.0f : 1.0f) / std::sqrt(8.0f);
  }
  return v;
}

}  // namespace

ModelHandle make_tiny_model(std::uint64_t seed, const TinyModelOptions& options) {
  const auto c = tiny_config(options);
  auto tf = std::make_shared<const Transformer>(c, random_weights(c, seed, options.weight_scale));
  return ModelHandle("tiny-seed" + std::to_string(seed), std::move(tf), tiny_tokenizer());
}

CopyHeadModel make_copy_head_model(std::uint64_t seed, HeadId copy_head, float noise) {
  TinyModelOptions o;
  const auto c = tiny_config(o);
  require(copy_head.first >= 0 && copy_head.first < c.n_layers && copy_head.second >= 0 &&
              copy_head.second < c.n_heads,
          ErrorKind::argument, "copy head out of range");
  const auto tok = tiny_tokenizer();
  const auto& classes = tiny_rhyme_classes();
  require(classes.size() <= 16, ErrorKind::spec, "too many rhyme classes for 8-dim codes");

  Gaussian g(seed);
  ModelWeights w = ModelWeights::zeros(c);
  // small noise everywhere keeps every component live in the patch scan
  g.fill(w.embed, noise);
  for (auto& lw : w.layers) {
    g.fill(lw.wq, noise);
    g.fill(lw.wk, noise);
    g.fill(lw.wv, noise);
    g.fill(lw.wo, noise);
    g.fill(lw.bo, noise);
    g.fill(lw.w_gate, noise);
    g.fill(lw.w_up, noise);
    g.fill(lw.w_down, noise);
  }
  w.lm_head = Matrix(c.vocab_size, c.d_model);
  g.fill(w.lm_head, noise);

  // residual layout: 0 constant, 1 word marker, 2..9 class code, 10..17 moved code
  constexpr int kConst = 0, kMarker = 1, kCode = 2, kMoved = 10;
  for (Eigen::Index t = 0; t < c.vocab_size; ++t) w.embed(t, kConst) += 1.0f;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    const Vector code = class_code(k);
    for (const auto& word : classes[k]) {
      const TokenId t = *tok->find(" " + word);
      w.embed(t, kMarker) += 1.0f;
      w.embed.row(t).segment(kCode, 8) += 2.0f * code.transpose();
    }
    const TokenId answer = *tok->find(" " + classes[k][1]);
    w.lm_head.row(answer).segment(kMoved, 8) += 6.0f * code.transpose();
  }

  auto& lw = w.layers[static_cast<std::size_t>(copy_head.first)];
  const int dh = c.d_head;
  const int base = copy_head.second * dh;
  // lowest-frequency rotary pair, so relative rotation over a prompt is ~0
  const int slot = dh / 2 - 1;
  lw.wq.row(base + slot).setZero();
  lw.wk.row(base + slot).setZero();
  lw.wq(base + slot, kConst) = 3.0f;
  lw.wk(base + slot, kMarker) = 3.0f;
  for (int j = 0; j < dh; ++j) {
    lw.wv.row(base + j).setZero();
    lw.wv(base + j, kCode + j) = 1.0f;
    lw.wo.col(base + j).setZero();
    lw.wo(kMoved + j, base + j) = 1.0f;
  }

  auto tf = std::make_shared<const Transformer>(c, std::move(w));
  return {ModelHandle("planted-copy-head-seed" + std::to_string(seed), std::move(tf), tok), copy_head};
}

VowelReadoutModel make_vowel_readout_model() {
  const auto& inv = PhonemeInventory::english_us();
  const auto tok = tiny_tokenizer();
  const auto lexicon = tiny_lexicon();

  ModelConfig c;
  c.d_model = 48;
  c.n_layers = 1;
  c.n_heads = 1;
  c.n_kv_heads = 1;
  c.d_head = 48;
  c.d_mlp = 8;
  c.vocab_size = 128;
  c.max_context = 256;
  c.use_rope = false;
  constexpr int kConst = 44, kMarker = 45;

  ModelWeights w = ModelWeights::zeros(c);
  for (Eigen::Index t = 0; t < c.vocab_size; ++t) w.embed(t, kConst) = 1.0f;
  for (const auto& cls : tiny_rhyme_classes()) {
    for (const auto& word : cls) {
      const TokenId t = *tok->find(" " + word);
      const Multihot bits = multihot(word, lexicon);
      for (std::size_t p = 0; p < kInventorySize; ++p) {
        if (bits.test(p)) w.embed(t, static_cast<Eigen::Index>(p)) = 1.0f;
      }
      w.embed(t, kMarker) = 1.0f;
    }
  }
  auto& lw = w.layers[0];
  lw.wq(0, kConst) = 4.0f;
  lw.wk(0, kMarker) = 4.0f;
  for (int p = 0; p < static_cast<int>(kInventorySize); ++p) {
    lw.wv(p + 1, p) = 1.0f;  // head slot 0 is the attention channel
    lw.wo(p, p + 1) = 1.0f;
  }

  std::map<std::string, TokenId> vowel_token;
  // one designated single-vowel token per vowel present in the vocabulary
  w.lm_head = Matrix::Zero(c.vocab_size, c.d_model);
  for (const auto& cls : tiny_rhyme_classes()) {
    const auto& answer = cls[1];
    const auto vowels = distinct_vowels(lexicon.first(answer), inv);
    if (vowels.size() != 1 || vowel_token.count(vowels[0])) continue;
    const TokenId t = *tok->find(" " + answer);
    vowel_token[vowels[0]] = t;
    w.lm_head(t, static_cast<Eigen::Index>(*inv.index_of(vowels[0]))) = 8.0f;
  }
  Matrix axes = Matrix::Zero(static_cast<Eigen::Index>(kInventorySize), c.d_model);
  for (Eigen::Index p = 0; p < static_cast<Eigen::Index>(kInventorySize); ++p) axes(p, p) = 1.0f;

  auto tf = std::make_shared<const Transformer>(c, std::move(w));
  return {ModelHandle("planted-vowel-readout", std::move(tf), tok), std::move(vowel_token),
          std::move(axes)};
}

ModelHandle make_fixed_logits_model(const std::map<TokenId, float>& logits) {
  ModelConfig c;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.n_kv_heads = 2;
  c.d_head = 4;
  c.d_mlp = 4;
  c.vocab_size = 128;
  c.norm_eps = 0.0f;
  ModelWeights w = ModelWeights::zeros(c);
  w.embed.col(0).setOnes();
  w.lm_head = Matrix::Zero(c.vocab_size, c.d_model);
  const float inv_scale = 1.0f / std::sqrt(static_cast<float>(c.d_model));
  for (const auto& [t, v] : logits) {
    require(t >= 0 && t < c.vocab_size, ErrorKind::index, "fixed logit token out of range");
    w.lm_head(t, 0) = v * inv_scale;
  }
  auto tf = std::make_shared<const Transformer>(c, std::move(w));
  return ModelHandle("fixed-logits", std::move(tf), tiny_tokenizer());
}

}  // namespace phonolens
