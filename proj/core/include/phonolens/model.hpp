#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "phonolens/phonetics.hpp"
#include "phonolens/tensor.hpp"
#include "phonolens/tokenizer.hpp"
#include "phonolens/transformer.hpp"

namespace phonolens {

using HeadId = std::pair<int, int>;  // (layer, head)

std::string head_label(HeadId head);  // "H13L12"

// A transformer plus its tokenizer. Not thread-safe for concurrent use of a
// single handle; copies share immutable weights.
class ModelHandle {
 public:
  ModelHandle(std::string id, std::shared_ptr<const Transformer> transformer,
              std::shared_ptr<const Tokenizer> tokenizer);

  // Hugging Face style directory: config.json, *.safetensors, tokenizer.json.
  static ModelHandle load(const std::filesystem::path& model_dir);

  const std::string& id() const { return id_; }
  const Transformer& transformer() const { return *transformer_; }
  const Tokenizer& tokenizer() const { return *tokenizer_; }
  const ModelConfig& config() const { return transformer_->config(); }
  std::shared_ptr<const Transformer> transformer_ptr() const { return transformer_; }
  std::shared_ptr<const Tokenizer> tokenizer_ptr() const { return tokenizer_; }

  std::vector<TokenId> tokenize_prompt(std::string_view prompt) const;

 private:
  std::string id_;
  std::shared_ptr<const Transformer> transformer_;
  std::shared_ptr<const Tokenizer> tokenizer_;
};

struct CapturedRun {
  std::string prompt;
  std::vector<TokenId> tokens;
  Vector logits;  // final position
  std::map<ActivationAddress, Vector> activations;

  const Vector& at(const ActivationAddress& a) const;
};

// Expected width of the activation stored at `address`.
int activation_width(const ModelConfig& config, const ActivationAddress& address);
void validate_address(const ModelConfig& config, const ActivationAddress& address, int seq_len);

CapturedRun run_with_capture(const ModelHandle& model, std::string_view prompt,
                             const std::set<ActivationAddress>& addresses);
CapturedRun run_with_capture(const ModelHandle& model, std::span<const TokenId> tokens,
                             const std::set<ActivationAddress>& addresses);

using PatchMap = std::map<ActivationAddress, Vector>;

Vector run_with_patch(const ModelHandle& model, std::string_view prompt, const PatchMap& patches);
Vector run_with_patch(const ModelHandle& model, std::span<const TokenId> tokens,
                      const PatchMap& patches);

struct EditedRun {
  Vector logits;
  std::vector<TokenId> continuation;
  std::string continuation_text;
};

EditedRun run_with_embedding_edit(const ModelHandle& model, std::string_view prompt, int position,
                                  const Vector& delta, int n_continuation_tokens = 0);

struct ResultVector {
  Vector value;  // d_model
  HeadId head;
  int position = 0;
  std::string source;
};

ResultVector head_result_vector(const ModelHandle& model, const Vector& z, int layer, int head);

struct ScoredToken {
  TokenId id = 0;
  std::string text;
  float score = 0.0f;
};

// Final norm + unembedding, top-k with ties broken by ascending token id.
std::vector<ScoredToken> logit_lens(const ModelHandle& model, const Vector& residual, int k);
std::vector<ScoredToken> top_k_logits(const ModelHandle& model, const Vector& logits, int k);

struct AblatedRun {
  Vector logits;
  std::vector<TokenId> continuation;
  std::vector<std::string> continuation_tokens;
};

AblatedRun ablate_heads(const ModelHandle& model, std::string_view prompt,
                        const std::set<HeadId>& heads, int n_continuation_tokens = 0);

// Greedy (argmax, lowest id on ties) continuation; hooks apply to every
// processed position including generated ones.
std::vector<TokenId> greedy_continue(const ModelHandle& model, std::span<const TokenId> prompt,
                                     int n_tokens, ActivationHook* hook, Vector* first_logits);
TokenId argmax_token(const Vector& logits);

// seq x seq post-softmax weights, zero above the diagonal.
Matrix attention_pattern(const ModelHandle& model, std::string_view prompt, int layer, int head);

enum class CompositionMode { q, k, v };
CompositionMode parse_composition_mode(std::string_view s);

// ||A W_OV(up)||_F / (||A||_F ||W_OV(up)||_F) with A the downstream head's
// W_QK (Q and K modes) or W_OV (V mode). Weights only, rotary ignored.
double composition_score(const ModelHandle& model, HeadId upstream, HeadId downstream,
                         CompositionMode mode);

// Surface form used for tokenization checks: the word with a leading space.
std::string surface_form(std::string_view word);
std::optional<TokenId> single_token_id(const ModelHandle& model, std::string_view word);
std::vector<std::string> single_token_words(const ModelHandle& model,
                                            const PronunciationLexicon& lexicon);

}  // namespace phonolens
