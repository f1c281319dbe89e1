#pragma once

#include <compare>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "phonolens/tensor.hpp"
#include "phonolens/tokenizer.hpp"

namespace phonolens {

enum class Component {
  embedding,
  head_z,
  head_result,
  attn_out,
  mlp_out,
  resid_post,
  attn_pattern,  // one query row of post-softmax weights, length position + 1
};

std::string_view to_string(Component c);
Component parse_component(std::string_view s);
bool is_head_scoped(Component c);

struct ActivationAddress {
  int layer = 0;
  Component component = Component::resid_post;
  int head = -1;  // -1 unless head-scoped
  int position = 0;

  friend auto operator<=>(const ActivationAddress&, const ActivationAddress&) = default;
};

std::string to_string(const ActivationAddress& a);

struct RopeScaling {
  float factor = 32.0f;
  float low_freq_factor = 1.0f;
  float high_freq_factor = 4.0f;
  int original_max_position = 8192;
};

struct ModelConfig {
  int d_model = 32;
  int n_layers = 2;
  int n_heads = 4;
  int n_kv_heads = 4;
  int d_head = 8;
  int d_mlp = 64;
  int vocab_size = 128;
  int max_context = 256;
  float norm_eps = 1e-5f;
  bool use_rope = true;
  float rope_theta = 10000.0f;
  std::optional<RopeScaling> rope_scaling;
  bool attn_out_bias = false;

  static ModelConfig from_hf_config(const std::filesystem::path& config_json);
};

// Weight layout follows the Hugging Face Llama convention: projection
// matrices are (out_features x in_features) and act as y = W x.
struct LayerWeights {
  Vector ln_attn;
  Matrix wq;  // (n_heads * d_head) x d_model
  Matrix wk;  // (n_kv_heads * d_head) x d_model
  Matrix wv;  // (n_kv_heads * d_head) x d_model
  Matrix wo;  // d_model x (n_heads * d_head)
  Vector bo;  // d_model, zero unless attn_out_bias
  Vector ln_mlp;
  Matrix w_gate;  // d_mlp x d_model
  Matrix w_up;    // d_mlp x d_model
  Matrix w_down;  // d_model x d_mlp
};

struct ModelWeights {
  Matrix embed;  // vocab x d_model
  std::vector<LayerWeights> layers;
  Vector ln_final;
  Matrix lm_head;  // vocab x d_model; empty when tied to `embed`

  static ModelWeights zeros(const ModelConfig& config);
};

// Receives every activation the forward pass produces for the components it
// asks for. `value` is mutable: writing to it edits the forward pass.
class ActivationHook {
 public:
  virtual ~ActivationHook() = default;
  virtual bool wants(Component component, int layer) const = 0;
  virtual void visit(const ActivationAddress& address, std::span<float> value) = 0;
};

// Per-layer key/value rows for already processed positions.
struct KVCache {
  std::vector<Matrix> keys;
  std::vector<Matrix> values;
  int length = 0;
};

struct ForwardResult {
  Vector logits;          // final position
  Vector final_residual;  // final position, before the final norm
};

class Transformer {
 public:
  Transformer(ModelConfig config, ModelWeights weights);

  static Transformer load_hf(const std::filesystem::path& model_dir);

  const ModelConfig& config() const { return config_; }
  const ModelWeights& weights() const { return weights_; }
  ModelWeights& mutable_weights() { return weights_; }

  KVCache empty_cache() const;
  // Runs `tokens` after whatever `cache` already holds.
  ForwardResult forward(KVCache& cache, std::span<const TokenId> tokens,
                        ActivationHook* hook = nullptr) const;
  ForwardResult forward(std::span<const TokenId> tokens, ActivationHook* hook = nullptr) const;

  // Final norm followed by unembedding.
  Vector unembed(const Vector& residual) const;
  Vector final_norm(const Vector& residual) const;
  const Matrix& lm_head() const { return weights_.lm_head.size() ? weights_.lm_head : weights_.embed; }

  // Slice of the attention output projection for one head: d_model x d_head.
  Eigen::Block<const Matrix> wo_head(int layer, int head) const;
  Eigen::Block<const Matrix> wq_head(int layer, int head) const;
  Eigen::Block<const Matrix> wk_head(int layer, int head) const;
  Eigen::Block<const Matrix> wv_head(int layer, int head) const;
  int kv_head_for(int head) const { return head / (config_.n_heads / config_.n_kv_heads); }

 private:
  void apply_rope(Matrix& x, int n_heads, int start_position) const;

  ModelConfig config_;
  ModelWeights weights_;
  std::vector<float> inv_freq_;
};

}  // namespace phonolens
