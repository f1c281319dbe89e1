#include "phonolens/transformer.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "phonolens/error.hpp"

namespace phonolens {

using nlohmann::json;

std::string_view to_string(Component c) {
  switch (c) {
    case Component::embedding: return "embedding";
    case Component::head_z: return "head_z";
    case Component::head_result: return "head_result";
    case Component::attn_out: return "attn_out";
    case Component::mlp_out: return "mlp_out";
    case Component::resid_post: return "resid_post";
    case Component::attn_pattern: return "attn_pattern";
  }
  return "?";
}

Component parse_component(std::string_view s) {
  for (auto c : {Component::embedding, Component::head_z, Component::head_result,
                 Component::attn_out, Component::mlp_out, Component::resid_post,
                 Component::attn_pattern}) {
    if (to_string(c) == s) return c;
  }
  fail(ErrorKind::address, "unknown component '" + std::string(s) + "'");
}

bool is_head_scoped(Component c) {
  return c == Component::head_z || c == Component::head_result || c == Component::attn_pattern;
}

std::string to_string(const ActivationAddress& a) {
  std::string s = "L" + std::to_string(a.layer) + "." + std::string(to_string(a.component));
  if (a.head >= 0) s += ".H" + std::to_string(a.head);
  s += "@" + std::to_string(a.position);
  return s;
}

ModelConfig ModelConfig::from_hf_config(const std::filesystem::path& config_json) {
  std::ifstream in(config_json);
  if (!in) fail(ErrorKind::io, "cannot read " + config_json.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::parse, config_json.string() + ": " + e.what());
  }
  ModelConfig c;
  c.d_model = j.at("hidden_size").get<int>();
  c.n_layers = j.at("num_hidden_layers").get<int>();
  c.n_heads = j.at("num_attention_heads").get<int>();
  c.n_kv_heads = j.value("num_key_value_heads", c.n_heads);
  c.d_head = j.value("head_dim", c.d_model / c.n_heads);
  c.d_mlp = j.at("intermediate_size").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_context = j.value("max_position_embeddings", 2048);
  c.norm_eps = j.value("rms_norm_eps", 1e-5f);
  c.rope_theta = j.value("rope_theta", 10000.0f);
  c.use_rope = j.value("phonolens_use_rope", true);
  c.attn_out_bias = j.value("phonolens_attn_out_bias", false);
  if (j.contains("rope_scaling") && j.at("rope_scaling").is_object()) {
    const auto& rs = j.at("rope_scaling");
    const auto type = rs.value("rope_type", rs.value("type", std::string()));
    if (type == "llama3") {
      RopeScaling s;
      s.factor = rs.value("factor", s.factor);
      s.low_freq_factor = rs.value("low_freq_factor", s.low_freq_factor);
      s.high_freq_factor = rs.value("high_freq_factor", s.high_freq_factor);
      s.original_max_position =
          rs.value("original_max_position_embeddings", s.original_max_position);
      c.rope_scaling = s;
    }
  }
  return c;
}

ModelWeights ModelWeights::zeros(const ModelConfig& c) {
  ModelWeights w;
  w.embed = Matrix::Zero(c.vocab_size, c.d_model);
  w.ln_final = Vector::Ones(c.d_model);
  for (int l = 0; l < c.n_layers; ++l) {
    LayerWeights lw;
    lw.ln_attn = Vector::Ones(c.d_model);
    lw.wq = Matrix::Zero(c.n_heads * c.d_head, c.d_model);
    lw.wk = Matrix::Zero(c.n_kv_heads * c.d_head, c.d_model);
    lw.wv = Matrix::Zero(c.n_kv_heads * c.d_head, c.d_model);
    lw.wo = Matrix::Zero(c.d_model, c.n_heads * c.d_head);
    lw.bo = Vector::Zero(c.d_model);
    lw.ln_mlp = Vector::Ones(c.d_model);
    lw.w_gate = Matrix::Zero(c.d_mlp, c.d_model);
    lw.w_up = Matrix::Zero(c.d_mlp, c.d_model);
    lw.w_down = Matrix::Zero(c.d_model, c.d_mlp);
    w.layers.push_back(std::move(lw));
  }
  return w;
}

namespace {

void check_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    fail(ErrorKind::shape, what + " is " + std::to_string(m.rows()) + "x" +
                               std::to_string(m.cols()) + ", expected " + std::to_string(rows) +
                               "x" + std::to_string(cols));
  }
}

void check_size(const Vector& v, Eigen::Index n, const std::string& what) {
  if (v.size() != n) {
    fail(ErrorKind::shape, what + " has " + std::to_string(v.size()) + " entries, expected " +
                               std::to_string(n));
  }
}

// Row-wise RMS norm with gain.
Matrix rms_norm(const Matrix& x, const Vector& gain, float eps) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const float ms = x.row(r).squaredNorm() / static_cast<float>(x.cols());
    const float scale = 1.0f / std::sqrt(ms + eps);
    out.row(r) = (x.row(r) * scale).cwiseProduct(gain.transpose());
  }
  return out;
}

}  // namespace

Transformer::Transformer(ModelConfig config, ModelWeights weights)
    : config_(std::move(config)), weights_(std::move(weights)) {
  const auto& c = config_;
  require(c.n_heads > 0 && c.n_kv_heads > 0 && c.n_heads % c.n_kv_heads == 0, ErrorKind::argument,
          "n_heads must be a multiple of n_kv_heads");
  require(!c.use_rope || c.d_head % 2 == 0, ErrorKind::argument, "rotary d_head must be even");
  check_shape(weights_.embed, c.vocab_size, c.d_model, "embed");
  check_size(weights_.ln_final, c.d_model, "ln_final");
  if (weights_.lm_head.size()) check_shape(weights_.lm_head, c.vocab_size, c.d_model, "lm_head");
  require(static_cast<int>(weights_.layers.size()) == c.n_layers, ErrorKind::shape,
          "layer count disagrees with config");
  for (int l = 0; l < c.n_layers; ++l) {
    const auto& lw = weights_.layers[static_cast<std::size_t>(l)];
    const auto tag = "layer " + std::to_string(l) + " ";
    check_size(lw.ln_attn, c.d_model, tag + "ln_attn");
    check_shape(lw.wq, c.n_heads * c.d_head, c.d_model, tag + "wq");
    check_shape(lw.wk, c.n_kv_heads * c.d_head, c.d_model, tag + "wk");
    check_shape(lw.wv, c.n_kv_heads * c.d_head, c.d_model, tag + "wv");
    check_shape(lw.wo, c.d_model, c.n_heads * c.d_head, tag + "wo");
    check_size(lw.bo, c.d_model, tag + "bo");
    check_size(lw.ln_mlp, c.d_model, tag + "ln_mlp");
    check_shape(lw.w_gate, c.d_mlp, c.d_model, tag + "w_gate");
    check_shape(lw.w_up, c.d_mlp, c.d_model, tag + "w_up");
    check_shape(lw.w_down, c.d_model, c.d_mlp, tag + "w_down");
  }

  if (c.use_rope) {
    const int half = c.d_head / 2;
    inv_freq_.resize(static_cast<std::size_t>(half));
    for (int i = 0; i < half; ++i) {
      double f = std::pow(static_cast<double>(c.rope_theta), -2.0 * i / c.d_head);
      if (c.rope_scaling) {
        const auto& s = *c.rope_scaling;
        const double low_wavelen = s.original_max_position / s.low_freq_factor;
        const double high_wavelen = s.original_max_position / s.high_freq_factor;
        const double wavelen = 2.0 * std::numbers::pi / f;
        if (wavelen > low_wavelen) {
          f /= s.factor;
        } else if (wavelen >= high_wavelen) {
          const double smooth = (s.original_max_position / wavelen - s.low_freq_factor) /
                                (s.high_freq_factor - s.low_freq_factor);
          f = (1.0 - smooth) * f / s.factor + smooth * f;
        }
      }
      inv_freq_[static_cast<std::size_t>(i)] = static_cast<float>(f);
    }
  }
}

Transformer Transformer::load_hf(const std::filesystem::path& model_dir) {
  auto config = ModelConfig::from_hf_config(model_dir / "config.json");
  auto tensors = read_safetensors_dir(model_dir);
  auto take = [&](const std::string& name) -> Tensor {
    auto it = tensors.find(name);
    if (it == tensors.end()) fail(ErrorKind::parse, "missing tensor " + name);
    Tensor t = std::move(it->second);
    tensors.erase(it);
    return t;
  };
  auto vec = [](const Tensor& t) -> Vector {
    return Eigen::Map<const Vector>(t.values.data(), static_cast<Eigen::Index>(t.values.size()));
  };

  ModelWeights w;
  w.embed = take("model.embed_tokens.weight").as_matrix();
  for (int l = 0; l < config.n_layers; ++l) {
    const auto p = "model.layers." + std::to_string(l) + ".";
    LayerWeights lw;
    lw.ln_attn = vec(take(p + "input_layernorm.weight"));
    lw.wq = take(p + "self_attn.q_proj.weight").as_matrix();
    lw.wk = take(p + "self_attn.k_proj.weight").as_matrix();
    lw.wv = take(p + "self_attn.v_proj.weight").as_matrix();
    lw.wo = take(p + "self_attn.o_proj.weight").as_matrix();
    if (tensors.count(p + "self_attn.o_proj.bias")) {
      lw.bo = vec(take(p + "self_attn.o_proj.bias"));
      config.attn_out_bias = true;
    } else {
      lw.bo = Vector::Zero(config.d_model);
    }
    lw.ln_mlp = vec(take(p + "post_attention_layernorm.weight"));
    lw.w_gate = take(p + "mlp.gate_proj.weight").as_matrix();
    lw.w_up = take(p + "mlp.up_proj.weight").as_matrix();
    lw.w_down = take(p + "mlp.down_proj.weight").as_matrix();
    w.layers.push_back(std::move(lw));
  }
  w.ln_final = vec(take("model.norm.weight"));
  if (tensors.count("lm_head.weight")) w.lm_head = take("lm_head.weight").as_matrix();
  return Transformer(std::move(config), std::move(w));
}

KVCache Transformer::empty_cache() const {
  KVCache cache;
  const auto kv_width = config_.n_kv_heads * config_.d_head;
  cache.keys.assign(static_cast<std::size_t>(config_.n_layers), Matrix(0, kv_width));
  cache.values.assign(static_cast<std::size_t>(config_.n_layers), Matrix(0, kv_width));
  return cache;
}

void Transformer::apply_rope(Matrix& x, int n_heads, int start_position) const {
  const int dh = config_.d_head;
  const int half = dh / 2;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const float pos = static_cast<float>(start_position + r);
    for (int i = 0; i < half; ++i) {
      const float angle = pos * inv_freq_[static_cast<std::size_t>(i)];
      const float cs = std::cos(angle);
      const float sn = std::sin(angle);
      for (int h = 0; h < n_heads; ++h) {
        float& a = x(r, h * dh + i);
        float& b = x(r, h * dh + i + half);
        const float x1 = a;
        const float x2 = b;
        a = x1 * cs - x2 * sn;
        b = x2 * cs + x1 * sn;
      }
    }
  }
}

Vector Transformer::final_norm(const Vector& residual) const {
  const float ms = residual.squaredNorm() / static_cast<float>(residual.size());
  return residual.cwiseProduct(weights_.ln_final) / std::sqrt(ms + config_.norm_eps);
}

Vector Transformer::unembed(const Vector& residual) const {
  require(residual.size() == config_.d_model, ErrorKind::shape, "residual has wrong width");
  return lm_head() * final_norm(residual);
}

Eigen::Block<const Matrix> Transformer::wo_head(int layer, int head) const {
  const auto& wo = weights_.layers.at(static_cast<std::size_t>(layer)).wo;
  return wo.block(0, head * config_.d_head, config_.d_model, config_.d_head);
}

Eigen::Block<const Matrix> Transformer::wq_head(int layer, int head) const {
  const auto& wq = weights_.layers.at(static_cast<std::size_t>(layer)).wq;
  return wq.block(head * config_.d_head, 0, config_.d_head, config_.d_model);
}

Eigen::Block<const Matrix> Transformer::wk_head(int layer, int head) const {
  const auto& wk = weights_.layers.at(static_cast<std::size_t>(layer)).wk;
  return wk.block(kv_head_for(head) * config_.d_head, 0, config_.d_head, config_.d_model);
}

Eigen::Block<const Matrix> Transformer::wv_head(int layer, int head) const {
  const auto& wv = weights_.layers.at(static_cast<std::size_t>(layer)).wv;
  return wv.block(kv_head_for(head) * config_.d_head, 0, config_.d_head, config_.d_model);
}

ForwardResult Transformer::forward(std::span<const TokenId> tokens, ActivationHook* hook) const {
  KVCache cache = empty_cache();
  return forward(cache, tokens, hook);
}

ForwardResult Transformer::forward(KVCache& cache, std::span<const TokenId> tokens,
                                   ActivationHook* hook) const {
  const auto& c = config_;
  const int n = static_cast<int>(tokens.size());
  const int start = cache.length;
  require(n > 0, ErrorKind::length, "forward needs at least one token");
  require(start + n <= c.max_context, ErrorKind::length,
          "sequence of " + std::to_string(start + n) + " tokens exceeds context " +
              std::to_string(c.max_context));
  require(static_cast<int>(cache.keys.size()) == c.n_layers, ErrorKind::argument,
          "cache does not belong to this model");

  auto wants = [&](Component comp, int layer) { return hook && hook->wants(comp, layer); };
  auto visit_rows = [&](Matrix& m, Component comp, int layer) {
    if (!wants(comp, layer)) return;
    for (int i = 0; i < n; ++i) {
      hook->visit({layer, comp, -1, start + i},
                  std::span<float>(m.row(i).data(), static_cast<std::size_t>(m.cols())));
    }
  };

  Matrix x(n, c.d_model);
  for (int i = 0; i < n; ++i) {
    const TokenId t = tokens[static_cast<std::size_t>(i)];
    require(t >= 0 && t < c.vocab_size, ErrorKind::index, "token id out of range");
    x.row(i) = weights_.embed.row(t);
  }
  visit_rows(x, Component::embedding, 0);

  const int dh = c.d_head;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  const int group = c.n_heads / c.n_kv_heads;

  for (int l = 0; l < c.n_layers; ++l) {
    const auto& lw = weights_.layers[static_cast<std::size_t>(l)];
    const Matrix h = rms_norm(x, lw.ln_attn, c.norm_eps);
    Matrix q = h * lw.wq.transpose();
    Matrix k = h * lw.wk.transpose();
    Matrix v = h * lw.wv.transpose();
    if (c.use_rope) {
      apply_rope(q, c.n_heads, start);
      apply_rope(k, c.n_kv_heads, start);
    }
    auto& keys = cache.keys[static_cast<std::size_t>(l)];
    auto& values = cache.values[static_cast<std::size_t>(l)];
    keys.conservativeResize(start + n, Eigen::NoChange);
    values.conservativeResize(start + n, Eigen::NoChange);
    keys.bottomRows(n) = k;
    values.bottomRows(n) = v;
    const int total = start + n;

    Matrix z(n, c.n_heads * dh);
    const bool want_pattern = wants(Component::attn_pattern, l);
    for (int hd = 0; hd < c.n_heads; ++hd) {
      const int kv = hd / group;
      Matrix scores = q.middleCols(hd * dh, dh) * keys.middleCols(kv * dh, dh).transpose();
      scores *= scale;
      for (int i = 0; i < n; ++i) {
        const int pos = start + i;
        auto row = scores.row(i);
        const float mx = row.head(pos + 1).maxCoeff();
        float sum = 0.0f;
        for (int j = 0; j <= pos; ++j) {
          row(j) = std::exp(row(j) - mx);
          sum += row(j);
        }
        for (int j = 0; j <= pos; ++j) row(j) /= sum;
        for (int j = pos + 1; j < total; ++j) row(j) = 0.0f;
        if (want_pattern) {
          hook->visit({l, Component::attn_pattern, hd, pos},
                      std::span<float>(row.data(), static_cast<std::size_t>(pos + 1)));
        }
      }
      z.middleCols(hd * dh, dh) = scores * values.middleCols(kv * dh, dh);
    }

    if (wants(Component::head_z, l)) {
      for (int i = 0; i < n; ++i) {
        for (int hd = 0; hd < c.n_heads; ++hd) {
          hook->visit({l, Component::head_z, hd, start + i},
                      std::span<float>(z.row(i).data() + hd * dh, static_cast<std::size_t>(dh)));
        }
      }
    }

    Matrix attn_out(n, c.d_model);
    if (wants(Component::head_result, l)) {
      Vector result(c.d_model);
      for (int i = 0; i < n; ++i) {
        Vector acc = lw.bo;
        for (int hd = 0; hd < c.n_heads; ++hd) {
          result = lw.wo.middleCols(hd * dh, dh) * z.row(i).segment(hd * dh, dh).transpose();
          hook->visit({l, Component::head_result, hd, start + i},
                      std::span<float>(result.data(), static_cast<std::size_t>(result.size())));
          acc += result;
        }
        attn_out.row(i) = acc.transpose();
      }
    } else {
      attn_out = z * lw.wo.transpose();
      attn_out.rowwise() += lw.bo.transpose();
    }
    visit_rows(attn_out, Component::attn_out, l);
    x += attn_out;

    const Matrix h2 = rms_norm(x, lw.ln_mlp, c.norm_eps);
    Matrix gate = h2 * lw.w_gate.transpose();
    const Matrix up = h2 * lw.w_up.transpose();
    gate = gate.unaryExpr([](float g) { return g / (1.0f + std::exp(-g)); });
    Matrix mlp_out = gate.cwiseProduct(up) * lw.w_down.transpose();
    visit_rows(mlp_out, Component::mlp_out, l);
    x += mlp_out;
    visit_rows(x, Component::resid_post, l);
  }
  cache.length = start + n;

  ForwardResult out;
  out.final_residual = x.row(n - 1).transpose();
  out.logits = unembed(out.final_residual);
  return out;
}

}  // namespace phonolens
