#include "phonolens/model.hpp"

#include <algorithm>
#include <numeric>

#include "phonolens/error.hpp"
#include "phonolens/hooks.hpp"

namespace phonolens {

std::string head_label(HeadId head) {
  return "H" + std::to_string(head.second) + "L" + std::to_string(head.first);
}

ModelHandle::ModelHandle(std::string id, std::shared_ptr<const Transformer> transformer,
                         std::shared_ptr<const Tokenizer> tokenizer)
    : id_(std::move(id)), transformer_(std::move(transformer)), tokenizer_(std::move(tokenizer)) {
  require(transformer_ && tokenizer_, ErrorKind::argument, "model handle needs weights and tokenizer");
}

ModelHandle ModelHandle::load(const std::filesystem::path& model_dir) {
  if (!std::filesystem::exists(model_dir / "config.json")) {
    fail(ErrorKind::gated_resource, "no model weights at " + model_dir.string());
  }
  auto transformer = std::make_shared<const Transformer>(Transformer::load_hf(model_dir));
  auto tokenizer = std::make_shared<const BpeTokenizer>(BpeTokenizer::load(model_dir / "tokenizer.json"));
  return ModelHandle(model_dir.filename().string(), std::move(transformer), std::move(tokenizer));
}

std::vector<TokenId> ModelHandle::tokenize_prompt(std::string_view prompt) const {
  auto ids = tokenizer_->encode_prompt(prompt);
  require(static_cast<int>(ids.size()) <= config().max_context, ErrorKind::length,
          "prompt tokenizes to " + std::to_string(ids.size()) + " tokens, context is " +
              std::to_string(config().max_context));
  return ids;
}

const Vector& CapturedRun::at(const ActivationAddress& a) const {
  auto it = activations.find(a);
  if (it == activations.end()) fail(ErrorKind::address, "address " + to_string(a) + " not captured");
  return it->second;
}

int activation_width(const ModelConfig& config, const ActivationAddress& address) {
  switch (address.component) {
    case Component::head_z: return config.d_head;
    case Component::attn_pattern: return address.position + 1;
    default: return config.d_model;
  }
}

void validate_address(const ModelConfig& config, const ActivationAddress& a, int seq_len) {
  const auto tag = to_string(a);
  require(a.layer >= 0 && a.layer < std::max(config.n_layers, 1), ErrorKind::address,
          tag + ": layer out of range");
  require(a.component != Component::embedding || a.layer == 0, ErrorKind::address,
          tag + ": embedding lives at layer 0");
  require(a.position >= 0 && a.position < seq_len, ErrorKind::address, tag + ": position out of range");
  if (is_head_scoped(a.component)) {
    require(a.head >= 0 && a.head < config.n_heads, ErrorKind::address, tag + ": head out of range");
  } else {
    require(a.head == -1, ErrorKind::address, tag + ": head given for a non-head component");
  }
}

CapturedRun run_with_capture(const ModelHandle& model, std::string_view prompt,
                             const std::set<ActivationAddress>& addresses) {
  auto tokens = model.tokenize_prompt(prompt);
  auto run = run_with_capture(model, tokens, addresses);
  run.prompt = std::string(prompt);
  return run;
}

CapturedRun run_with_capture(const ModelHandle& model, std::span<const TokenId> tokens,
                             const std::set<ActivationAddress>& addresses) {
  const int seq = static_cast<int>(tokens.size());
  for (const auto& a : addresses) validate_address(model.config(), a, seq);
  CaptureHook hook(addresses);
  auto result = model.transformer().forward(tokens, addresses.empty() ? nullptr : &hook);
  CapturedRun run;
  run.tokens.assign(tokens.begin(), tokens.end());
  run.logits = std::move(result.logits);
  run.activations = std::move(hook.captured());
  return run;
}

Vector run_with_patch(const ModelHandle& model, std::string_view prompt, const PatchMap& patches) {
  return run_with_patch(model, model.tokenize_prompt(prompt), patches);
}

Vector run_with_patch(const ModelHandle& model, std::span<const TokenId> tokens,
                      const PatchMap& patches) {
  const int seq = static_cast<int>(tokens.size());
  for (const auto& [a, v] : patches) {
    validate_address(model.config(), a, seq);
    require(v.size() == activation_width(model.config(), a), ErrorKind::shape,
            "patch for " + to_string(a) + " has width " + std::to_string(v.size()) + ", expected " +
                std::to_string(activation_width(model.config(), a)));
  }
  PatchHook hook(patches);
  return model.transformer().forward(tokens, patches.empty() ? nullptr : &hook).logits;
}

TokenId argmax_token(const Vector& logits) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

std::vector<TokenId> greedy_continue(const ModelHandle& model, std::span<const TokenId> prompt,
                                     int n_tokens, ActivationHook* hook, Vector* first_logits) {
  const auto& tf = model.transformer();
  KVCache cache = tf.empty_cache();
  auto result = tf.forward(cache, prompt, hook);
  if (first_logits) *first_logits = result.logits;
  std::vector<TokenId> out;
  for (int i = 0; i < n_tokens; ++i) {
    const TokenId next = argmax_token(result.logits);
    out.push_back(next);
    if (i + 1 == n_tokens || cache.length + 1 > model.config().max_context) break;
    const TokenId step[1] = {next};
    result = tf.forward(cache, step, hook);
  }
  return out;
}

EditedRun run_with_embedding_edit(const ModelHandle& model, std::string_view prompt, int position,
                                  const Vector& delta, int n_continuation_tokens) {
  auto tokens = model.tokenize_prompt(prompt);
  require(position >= 0 && position < static_cast<int>(tokens.size()), ErrorKind::index,
          "edit position " + std::to_string(position) + " outside prompt of " +
              std::to_string(tokens.size()) + " tokens");
  require(delta.size() == model.config().d_model, ErrorKind::shape, "delta must have d_model entries");
  EmbeddingEditHook hook(position, delta);
  EditedRun run;
  run.continuation = greedy_continue(model, tokens, n_continuation_tokens, &hook, &run.logits);
  run.continuation_text = model.tokenizer().decode(run.continuation);
  return run;
}

ResultVector head_result_vector(const ModelHandle& model, const Vector& z, int layer, int head) {
  const auto& c = model.config();
  require(layer >= 0 && layer < c.n_layers && head >= 0 && head < c.n_heads, ErrorKind::index,
          "head " + head_label({layer, head}) + " out of range");
  require(z.size() == c.d_head, ErrorKind::shape, "z must have d_head entries");
  ResultVector r;
  r.value = model.transformer().wo_head(layer, head) * z;
  r.head = {layer, head};
  return r;
}

std::vector<ScoredToken> top_k_logits(const ModelHandle& model, const Vector& logits, int k) {
  require(k >= 1, ErrorKind::argument, "k must be at least 1");
  std::vector<TokenId> ids(static_cast<std::size_t>(logits.size()));
  std::iota(ids.begin(), ids.end(), 0);
  const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k), ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(kk), ids.end(),
                    [&](TokenId a, TokenId b) {
                      if (logits[a] != logits[b]) return logits[a] > logits[b];
                      return a < b;
                    });
  std::vector<ScoredToken> out;
  for (std::size_t i = 0; i < kk; ++i) {
    out.push_back({ids[i], model.tokenizer().token_text(ids[i]), logits[ids[i]]});
  }
  return out;
}

std::vector<ScoredToken> logit_lens(const ModelHandle& model, const Vector& residual, int k) {
  return top_k_logits(model, model.transformer().unembed(residual), k);
}

AblatedRun ablate_heads(const ModelHandle& model, std::string_view prompt,
                        const std::set<HeadId>& heads, int n_continuation_tokens) {
  const auto& c = model.config();
  for (const auto& h : heads) {
    require(h.first >= 0 && h.first < c.n_layers && h.second >= 0 && h.second < c.n_heads,
            ErrorKind::index, "head " + head_label(h) + " out of range");
  }
  auto tokens = model.tokenize_prompt(prompt);
  ZeroHeadsHook hook(heads);
  AblatedRun run;
  run.continuation = greedy_continue(model, tokens, std::max(n_continuation_tokens, 0),
                                     heads.empty() ? nullptr : &hook, &run.logits);
  for (TokenId t : run.continuation) run.continuation_tokens.push_back(model.tokenizer().token_text(t));
  return run;
}

Matrix attention_pattern(const ModelHandle& model, std::string_view prompt, int layer, int head) {
  const auto tokens = model.tokenize_prompt(prompt);
  const int seq = static_cast<int>(tokens.size());
  std::set<ActivationAddress> addrs;
  for (int p = 0; p < seq; ++p) addrs.insert({layer, Component::attn_pattern, head, p});
  auto run = run_with_capture(model, tokens, addrs);
  Matrix pattern = Matrix::Zero(seq, seq);
  for (int p = 0; p < seq; ++p) {
    const auto& row = run.at({layer, Component::attn_pattern, head, p});
    pattern.row(p).head(p + 1) = row.transpose();
  }
  return pattern;
}

CompositionMode parse_composition_mode(std::string_view s) {
  if (s == "q" || s == "Q") return CompositionMode::q;
  if (s == "k" || s == "K") return CompositionMode::k;
  if (s == "v" || s == "V") return CompositionMode::v;
  fail(ErrorKind::argument, "composition mode must be Q, K or V");
}

namespace {

// ||L^T M R||_F^2 = tr(M^T (L L^T) M (R R^T)) for thin L, R (d_head x d_model).
double frob_sq_sandwich(const MatrixD& gram_left, const MatrixD& middle, const MatrixD& gram_right) {
  return (middle.transpose() * gram_left * middle * gram_right).trace();
}

}  // namespace

double composition_score(const ModelHandle& model, HeadId upstream, HeadId downstream,
                         CompositionMode mode) {
  const auto& c = model.config();
  for (const auto& h : {upstream, downstream}) {
    require(h.first >= 0 && h.first < c.n_layers && h.second >= 0 && h.second < c.n_heads,
            ErrorKind::index, "head " + head_label(h) + " out of range");
  }
  require(upstream.first < downstream.first, ErrorKind::argument,
          "upstream layer must precede downstream layer");
  const auto& tf = model.transformer();
  // W_OV(up) = O_u V_u with O_u: d_model x d_head, V_u: d_head x d_model
  const MatrixD o_up = tf.wo_head(upstream.first, upstream.second).cast<double>();
  const MatrixD v_up = tf.wv_head(upstream.first, upstream.second).cast<double>();
  const MatrixD q_dn = tf.wq_head(downstream.first, downstream.second).cast<double>();
  const MatrixD k_dn = tf.wk_head(downstream.first, downstream.second).cast<double>();
  const MatrixD v_dn = tf.wv_head(downstream.first, downstream.second).cast<double>();
  const MatrixD o_dn = tf.wo_head(downstream.first, downstream.second).cast<double>();

  // A = L^T R' in every mode; A W_OV(up) = L^T (R' O_u) V_u.
  MatrixD left;   // d_head x d_model
  MatrixD right;  // d_head x d_model, the factor that meets O_u
  switch (mode) {
    case CompositionMode::q:  // A = W_QK^T = K^T Q
      left = k_dn;
      right = q_dn;
      break;
    case CompositionMode::k:  // A = W_QK = Q^T K
      left = q_dn;
      right = k_dn;
      break;
    case CompositionMode::v:  // A = W_OV(down) = O_d V_d
      left = o_dn.transpose();
      right = v_dn;
      break;
  }
  const MatrixD gram_left = left * left.transpose();
  const MatrixD middle = right * o_up;
  const MatrixD gram_v_up = v_up * v_up.transpose();
  const double num_sq = frob_sq_sandwich(gram_left, middle, gram_v_up);
  const double a_sq = (gram_left * (right * right.transpose())).trace();
  const double ov_sq = ((o_up.transpose() * o_up) * gram_v_up).trace();
  if (a_sq <= 0.0 || ov_sq <= 0.0) return 0.0;
  const double score = std::sqrt(std::max(num_sq, 0.0)) / (std::sqrt(a_sq) * std::sqrt(ov_sq));
  return std::clamp(score, 0.0, 1.0);
}

std::string surface_form(std::string_view word) { return " " + std::string(word); }

std::optional<TokenId> single_token_id(const ModelHandle& model, std::string_view word) {
  auto ids = model.tokenizer().encode(surface_form(word));
  if (ids.size() != 1) return std::nullopt;
  return ids.front();
}

std::vector<std::string> single_token_words(const ModelHandle& model,
                                            const PronunciationLexicon& lexicon) {
  std::vector<std::string> out;
  for (const auto& w : lexicon.words()) {
    if (single_token_id(model, w)) out.push_back(w);
  }
  return out;
}

}  // namespace phonolens
