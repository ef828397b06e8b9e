// Copyright 2026 The ConVQG Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

// The trainable multimodal branch.
//
//   patches --[image encoder]--> E_i
//   t' tokens + E_i --[text encoder, self + cross attention]--> E_it
//   E_it + question prefix --[causal decoder]--> hidden states
//   hidden --[lm head]--> next-token logits
//   hidden --[mean pool, projection, L2 normalise]--> Q_it
//
// All blocks are pre-norm transformer blocks with GELU feed-forward layers.

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "convqg/errors.hpp"
#include "convqg/grad.hpp"
#include "convqg/toyworld.hpp"

namespace convqg {

struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int max_len = 32;
  int d_sent = 64;
  double dropout = 0.0;
  int n_patches = toyworld::kDefaultGridSize * toyworld::kDefaultGridSize;
  int d_in = static_cast<int>(toyworld::kPatchDim);

  // Transformer sizes used at full scale (12 layers, 12 heads); kept for
  // reference, far beyond what the synthetic corpus needs.
  static ModelConfig full_scale() {
    ModelConfig c;
    c.d_model = 768;
    c.n_layers = 12;
    c.n_heads = 12;
    c.d_ff = 3072;
    c.max_len = 40;
    c.d_sent = 768;
    return c;
  }

  void validate() const {
    for (int v : {d_model, n_layers, n_heads, d_ff, max_len, d_sent, n_patches, d_in}) {
      if (v <= 0) throw ValueError("model config values must be positive");
    }
    if (d_model % n_heads != 0) throw ValueError("d_model must be divisible by n_heads");
    if (dropout != 0.0) throw ValueError("dropout is not supported; use 0");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <std::floating_point T>
using ParamStore = std::map<std::string, grad::Parameter<T>>;

// Number of trainable scalars for a config and vocabulary size.
inline std::size_t parameter_count(const ModelConfig& c, std::size_t vocab) {
  const std::size_t d = c.d_model, f = c.d_ff, L = c.n_layers;
  const std::size_t attn = 4 * (d * d + d);
  const std::size_t ln = 2 * d;
  const std::size_t ff = d * f + f + f * d + d;
  const std::size_t image = c.d_in * d + d + c.n_patches * d + L * (2 * ln + attn + ff) + ln;
  const std::size_t text = c.max_len * d + L * (3 * ln + 2 * attn + ff) + ln;
  const std::size_t decoder = c.max_len * d + L * (3 * ln + 2 * attn + ff) + ln + d * vocab + vocab;
  const std::size_t head = d * c.d_sent + c.d_sent;
  return vocab * d + image + text + decoder + head;
}

template <std::floating_point T>
class QuestionModel {
 public:
  using Var = grad::Var<T>;
  using Graph = grad::Graph<T>;
  using Tensor = grad::Tensor<T>;

  QuestionModel(ModelConfig config, std::size_t vocab_size, std::uint64_t seed)
      : config_(config), vocab_size_(vocab_size) {
    config_.validate();
    if (vocab_size_ < 1) throw ValueError("vocabulary must be non-empty");
    declare();
    initialize(seed);
  }

  // Adopts externally supplied parameters (e.g. a checkpoint); every expected
  // tensor must be present with the right shape.
  QuestionModel(ModelConfig config, std::size_t vocab_size, ParamStore<T> params)
      : config_(config), vocab_size_(vocab_size) {
    config_.validate();
    declare();
    for (auto& [name, p] : params_) {
      auto it = params.find(name);
      if (it == params.end()) throw ValueError("missing parameter '" + name + "'");
      if (it->second.value.shape() != p.value.shape()) {
        throw DimensionError("parameter '" + name + "' has shape " +
                             grad::to_string(it->second.value.shape()) + ", expected " +
                             grad::to_string(p.value.shape()));
      }
      p = grad::Parameter<T>(std::move(it->second.value));
    }
    if (params.size() != params_.size()) throw ValueError("unexpected extra parameters");
  }

  template <std::floating_point U>
  QuestionModel<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, p] : params_) out.emplace(name, grad::Parameter<U>(p.value.template cast<U>()));
    return QuestionModel<U>(config_, vocab_size_, std::move(out));
  }

  const ModelConfig& config() const { return config_; }
  std::size_t vocab_size() const { return vocab_size_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  grad::Parameter<T>& param(const std::string& name) { return params_.at(name); }

  std::vector<grad::Parameter<T>*> trainable() {
    std::vector<grad::Parameter<T>*> out;
    for (auto& [_, p] : params_) out.push_back(&p);
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, p] : params_) p.zero_grad();
  }

  // E_i, [patches x d_model].
  Var encode_image(Graph& g, const Tensor& patches) {
    if (patches.rank() != 2 || patches.shape()[1] != static_cast<std::size_t>(config_.d_in) ||
        patches.shape()[0] != static_cast<std::size_t>(config_.n_patches)) {
      throw DimensionError("encode_image: expected patches [" + std::to_string(config_.n_patches) +
                           "x" + std::to_string(config_.d_in) + "], got " +
                           grad::to_string(patches.shape()));
    }
    Var x = grad::add_bias(grad::matmul(g.constant(patches), p(g, "img.patch_w")), p(g, "img.patch_b"));
    x = grad::add(x, p(g, "img.pos"));
    for (int l = 0; l < config_.n_layers; ++l) {
      const std::string pre = "img.l" + std::to_string(l) + ".";
      x = grad::add(x, attention(g, pre + "self.", norm(g, x, pre + "ln1"), {}, false));
      x = grad::add(x, feed_forward(g, pre + "ff.", norm(g, x, pre + "ln2")));
    }
    return norm(g, x, "img.ln_f");
  }

  // E_it, [tokens x d_model]; bidirectional self attention, then cross
  // attention over E_i, then feed-forward, per block.
  Var encode_text(Graph& g, std::span<const int> tokens, Var e_i) {
    check_tokens(tokens, "encode_text");
    Var x = grad::add(grad::embedding(p(g, "tok_emb"), tokens),
                      grad::take_rows(p(g, "txt.pos"), tokens.size()));
    for (int l = 0; l < config_.n_layers; ++l) {
      const std::string pre = "txt.l" + std::to_string(l) + ".";
      x = grad::add(x, attention(g, pre + "self.", norm(g, x, pre + "ln1"), {}, false));
      x = grad::add(x, attention(g, pre + "cross.", norm(g, x, pre + "ln2"), e_i, false));
      x = grad::add(x, feed_forward(g, pre + "ff.", norm(g, x, pre + "ln3")));
    }
    return norm(g, x, "txt.ln_f");
  }

  // Final decoder states for a teacher-forced prefix (starting with [BOS]).
  Var decode_hidden(Graph& g, Var e_it, std::span<const int> inputs) {
    check_tokens(inputs, "decode_question");
    Var x = grad::add(grad::embedding(p(g, "tok_emb"), inputs),
                      grad::take_rows(p(g, "dec.pos"), inputs.size()));
    for (int l = 0; l < config_.n_layers; ++l) {
      const std::string pre = "dec.l" + std::to_string(l) + ".";
      x = grad::add(x, attention(g, pre + "self.", norm(g, x, pre + "ln1"), {}, true));
      x = grad::add(x, attention(g, pre + "cross.", norm(g, x, pre + "ln2"), e_it, false));
      x = grad::add(x, feed_forward(g, pre + "ff.", norm(g, x, pre + "ln3")));
    }
    return norm(g, x, "dec.ln_f");
  }

  Var logits_from_hidden(Graph& g, Var hidden) {
    return grad::add_bias(grad::matmul(hidden, p(g, "dec.lm_w")), p(g, "dec.lm_b"));
  }

  // [T x V] next-token logits.
  Var decode_question(Graph& g, Var e_it, std::span<const int> inputs) {
    return logits_from_hidden(g, decode_hidden(g, e_it, inputs));
  }

  // Q_it: mean of hidden states over non-pad input positions, projected to
  // the sentence space and unit-normalised. Returns [1 x d_sent].
  Var embedding_from_hidden(Graph& g, Var hidden, std::span<const int> inputs) {
    std::unique_ptr<bool[]> keep(new bool[inputs.size()]);
    bool any = false;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      keep[t] = inputs[t] != 0;  // [PAD]
      any = any || keep[t];
    }
    if (!any) keep[0] = true;
    Var pooled = grad::mean_rows(hidden, std::span<const bool>(keep.get(), inputs.size()));
    Var proj = grad::add_bias(grad::matmul(pooled, p(g, "head.q_w")), p(g, "head.q_b"));
    return grad::l2_normalize(proj);
  }

  Var question_embedding(Graph& g, Var e_it, std::span<const int> inputs) {
    return embedding_from_hidden(g, decode_hidden(g, e_it, inputs), inputs);
  }

 private:
  Var p(Graph& g, const std::string& name) { return g.param(params_.at(name)); }

  void check_tokens(std::span<const int> tokens, const char* where) const {
    if (tokens.empty()) throw ValueError(std::string(where) + ": empty token sequence");
    if (tokens.size() > static_cast<std::size_t>(config_.max_len)) {
      throw ValueError(std::string(where) + ": " + std::to_string(tokens.size()) +
                       " tokens exceed max_len " + std::to_string(config_.max_len));
    }
  }

  Var norm(Graph& g, Var x, const std::string& name) {
    return grad::layer_norm(x, p(g, name + ".g"), p(g, name + ".b"), T(1e-5));
  }

  Var feed_forward(Graph& g, const std::string& pre, Var x) {
    Var h = grad::gelu(grad::add_bias(grad::matmul(x, p(g, pre + "w1")), p(g, pre + "b1")));
    return grad::add_bias(grad::matmul(h, p(g, pre + "w2")), p(g, pre + "b2"));
  }

  // Multi-head attention. Self attention when `kv` is invalid.
  Var attention(Graph& g, const std::string& pre, Var x, Var kv, bool causal) {
    const Var src = kv.valid() ? kv : x;
    Var q = grad::add_bias(grad::matmul(x, p(g, pre + "wq")), p(g, pre + "bq"));
    Var k = grad::add_bias(grad::matmul(src, p(g, pre + "wk")), p(g, pre + "bk"));
    Var v = grad::add_bias(grad::matmul(src, p(g, pre + "wv")), p(g, pre + "bv"));
    const std::size_t dh = static_cast<std::size_t>(config_.d_model / config_.n_heads);
    const T inv_sqrt = T(1) / std::sqrt(T(dh));
    std::vector<Var> heads;
    for (int h = 0; h < config_.n_heads; ++h) {
      const std::size_t b = h * dh, e = b + dh;
      Var scores = grad::scale(grad::matmul_nt(grad::slice_cols(q, b, e), grad::slice_cols(k, b, e)), inv_sqrt);
      Var probs = causal ? grad::causal_softmax(scores) : grad::softmax(scores, 1);
      heads.push_back(grad::matmul(probs, grad::slice_cols(v, b, e)));
    }
    Var merged = config_.n_heads == 1 ? heads[0] : grad::concat_cols<T>(heads);
    return grad::add_bias(grad::matmul(merged, p(g, pre + "wo")), p(g, pre + "bo"));
  }

  enum class Init { kNormal, kZero, kOne };

  void add(const std::string& name, grad::Shape shape, Init init) {
    params_.emplace(name, grad::Parameter<T>(Tensor(std::move(shape))));
    inits_.emplace(name, init);
  }

  void add_norm(const std::string& name) {
    const std::size_t d = config_.d_model;
    add(name + ".g", {d}, Init::kOne);
    add(name + ".b", {d}, Init::kZero);
  }

  void add_attention(const std::string& pre) {
    const std::size_t d = config_.d_model;
    for (const char* w : {"wq", "wk", "wv", "wo"}) add(pre + w, {d, d}, Init::kNormal);
    for (const char* b : {"bq", "bk", "bv", "bo"}) add(pre + b, {d}, Init::kZero);
  }

  void add_ff(const std::string& pre) {
    const std::size_t d = config_.d_model, f = config_.d_ff;
    add(pre + "w1", {d, f}, Init::kNormal);
    add(pre + "b1", {f}, Init::kZero);
    add(pre + "w2", {f, d}, Init::kNormal);
    add(pre + "b2", {d}, Init::kZero);
  }

  void declare() {
    const std::size_t d = config_.d_model, len = config_.max_len;
    add("tok_emb", {vocab_size_, d}, Init::kNormal);
    add("img.patch_w", {static_cast<std::size_t>(config_.d_in), d}, Init::kNormal);
    add("img.patch_b", {d}, Init::kZero);
    add("img.pos", {static_cast<std::size_t>(config_.n_patches), d}, Init::kNormal);
    add("txt.pos", {len, d}, Init::kNormal);
    add("dec.pos", {len, d}, Init::kNormal);
    for (int l = 0; l < config_.n_layers; ++l) {
      const std::string img = "img.l" + std::to_string(l) + ".";
      add_norm(img + "ln1");
      add_attention(img + "self.");
      add_norm(img + "ln2");
      add_ff(img + "ff.");
      for (const std::string& pre : {"txt.l" + std::to_string(l) + ".", "dec.l" + std::to_string(l) + "."}) {
        add_norm(pre + "ln1");
        add_attention(pre + "self.");
        add_norm(pre + "ln2");
        add_attention(pre + "cross.");
        add_norm(pre + "ln3");
        add_ff(pre + "ff.");
      }
    }
    add_norm("img.ln_f");
    add_norm("txt.ln_f");
    add_norm("dec.ln_f");
    add("dec.lm_w", {d, vocab_size_}, Init::kNormal);
    add("dec.lm_b", {vocab_size_}, Init::kZero);
    add("head.q_w", {d, static_cast<std::size_t>(config_.d_sent)}, Init::kNormal);
    add("head.q_b", {static_cast<std::size_t>(config_.d_sent)}, Init::kZero);
  }

  // Weights ~ N(0, 1/fan_in) for matrices, N(0, 0.02) for embeddings; one
  // generator walked in parameter-name order.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& [name, prm] : params_) {
      const Init init = inits_.at(name);
      auto data = prm.value.data();
      if (init == Init::kOne) {
        std::fill(data.begin(), data.end(), T(1));
      } else if (init == Init::kNormal) {
        const bool table = name == "tok_emb" || name.ends_with(".pos");
        const double sd = table ? 0.02 : 1.0 / std::sqrt(static_cast<double>(prm.value.shape()[0]));
        std::normal_distribution<double> nd(0.0, sd);
        for (auto& v : data) v = T(nd(rng));
      }
    }
  }

  ModelConfig config_;
  std::size_t vocab_size_;
  ParamStore<T> params_;
  std::map<std::string, Init> inits_;
};

}  // namespace convqg
