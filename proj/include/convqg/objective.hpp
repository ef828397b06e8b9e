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

// Dual margin contrastive objective.
//
//   CL_img = max(|Q_it - Q_gt| - |Q_it - Q_i| + m, 0)
//   CL_txt = max(|Q_it - Q_gt| - |Q_it - Q_t| + m, 0)
//   CL     = alpha * CL_txt + (1 - alpha) * CL_img
//   Loss   = (beta * CL + CEL) / 2
//
// Only Q_it carries gradient; Q_gt, Q_i and Q_t come from frozen modules and
// enter the graph as constants.

#pragma once

#include <cmath>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "convqg/auxiliary.hpp"
#include "convqg/errors.hpp"
#include "convqg/grad.hpp"
#include "convqg/model.hpp"
#include "convqg/tokenizer.hpp"
#include "convqg/toyworld.hpp"

namespace convqg {

// B: cross-entropy only. I: image negative only. T: text negative only.
// IT: both.
enum class Variant { kB, kI, kT, kIT };

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kB: return "B";
    case Variant::kI: return "I";
    case Variant::kT: return "T";
    case Variant::kIT: return "IT";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "B") return Variant::kB;
  if (s == "I") return Variant::kI;
  if (s == "T") return Variant::kT;
  if (s == "IT") return Variant::kIT;
  throw ValueError("unknown variant '" + std::string(s) + "' (expected B, I, T or IT)");
}

struct BetaSchedule {
  enum class Kind { kFixed, kGeometric10 };
  Kind kind = Kind::kGeometric10;
  double value = 10.0;  // fixed value, or the epoch-0 value of the geometric schedule

  static BetaSchedule fixed(double v) { return {Kind::kFixed, v}; }
  static BetaSchedule geometric10(double start = 10.0) { return {Kind::kGeometric10, start}; }

  void validate() const {
    if (kind == Kind::kFixed && !(value >= 0.0)) throw ValueError("fixed beta must be >= 0");
    if (kind == Kind::kGeometric10 && !(value > 0.0)) throw ValueError("geometric beta start must be > 0");
  }

  // "geometric10", "geometric10:5", "fixed:100" or a bare number.
  static BetaSchedule parse(std::string_view s) {
    auto number = [&](std::string_view t) {
      try {
        std::size_t used = 0;
        const double v = std::stod(std::string(t), &used);
        if (used != t.size()) throw std::invalid_argument("trailing");
        return v;
      } catch (const std::exception&) {
        throw ValueError("invalid beta schedule '" + std::string(s) + "'");
      }
    };
    BetaSchedule b;
    if (s == "geometric10") {
      b = geometric10();
    } else if (s.starts_with("geometric10:")) {
      b = geometric10(number(s.substr(12)));
    } else if (s.starts_with("fixed:")) {
      b = fixed(number(s.substr(6)));
    } else {
      b = fixed(number(s));
    }
    b.validate();
    return b;
  }

  std::string to_string() const {
    std::ostringstream os;
    os << (kind == Kind::kFixed ? "fixed:" : "geometric10:") << value;
    return os.str();
  }

  friend bool operator==(const BetaSchedule&, const BetaSchedule&) = default;
};

// Fixed(v) -> v; Geometric10 -> start * 10^epoch.
inline double beta_at(const BetaSchedule& s, int epoch) {
  if (epoch < 0) throw ValueError("epoch must be >= 0");
  if (s.kind == BetaSchedule::Kind::kFixed) return s.value;
  double b = s.value;
  for (int e = 0; e < epoch; ++e) b *= 10.0;
  return b;
}

struct LossConfig {
  double alpha = 0.2;
  double margin = 0.5;
  BetaSchedule beta = BetaSchedule::geometric10();
  Variant variant = Variant::kIT;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValueError("alpha must be in [0, 1]");
    if (!(margin > 0.0)) throw ValueError("margin must be > 0");
    beta.validate();
  }

  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

struct LossBreakdown {
  double cl_img = 0;
  double cl_txt = 0;
  double cl = 0;
  double cel = 0;
  double total = 0;
  double beta_used = 0;
};

// max(|q_it - positive| - |q_it - negative| + m, 0).
template <std::floating_point T>
grad::Var<T> margin_loss(grad::Var<T> q_it, const grad::Tensor<T>& positive,
                         const grad::Tensor<T>& negative, double m) {
  if (positive.size() != q_it.value().size() || negative.size() != q_it.value().size()) {
    throw DimensionError("margin loss: embedding dimensions differ (" +
                         grad::to_string(q_it.shape()) + ", " + grad::to_string(positive.shape()) +
                         ", " + grad::to_string(negative.shape()) + ")");
  }
  if (!(m > 0.0)) throw ValueError("margin must be > 0");
  auto& g = q_it.graph();
  const auto d_pos = grad::l2_distance(q_it, g.constant(positive));
  const auto d_neg = grad::l2_distance(q_it, g.constant(negative));
  const auto shifted = grad::add(grad::sub(d_pos, d_neg), g.constant(grad::Tensor<T>::scalar(T(m))));
  return grad::relu_hinge(shifted);
}

template <std::floating_point T>
grad::Var<T> cl_img(grad::Var<T> q_it, const grad::Tensor<T>& q_gt, const grad::Tensor<T>& q_i,
                    double m) {
  return margin_loss(q_it, q_gt, q_i, m);
}

template <std::floating_point T>
grad::Var<T> cl_txt(grad::Var<T> q_it, const grad::Tensor<T>& q_gt, const grad::Tensor<T>& q_t,
                    double m) {
  return margin_loss(q_it, q_gt, q_t, m);
}

template <std::floating_point T>
grad::Var<T> combine_cl(grad::Var<T> cl_txt_v, grad::Var<T> cl_img_v, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValueError("alpha must be in [0, 1]");
  if (alpha == 0.0) return cl_img_v;
  if (alpha == 1.0) return cl_txt_v;
  return grad::add(grad::scale(cl_txt_v, T(alpha)), grad::scale(cl_img_v, T(1.0 - alpha)));
}

template <std::floating_point T>
grad::Var<T> total_loss(grad::Var<T> cl, grad::Var<T> cel, double beta) {
  if (!(beta >= 0.0)) throw ValueError("beta must be >= 0");
  return grad::scale(grad::add(grad::scale(cl, T(beta)), cel), T(0.5));
}

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

// Everything batch_loss needs for one example, precomputed once.
struct TrainingExample {
  std::string id;
  grad::Tensor<double> patches;
  std::vector<int> text_ids;    // t'
  std::vector<int> input_ids;   // [BOS] question
  std::vector<int> target_ids;  // question [EOS]
  QuestionEmbedding q_gt;
  QuestionEmbedding q_i;
  QuestionEmbedding q_t;
};

inline grad::Tensor<double> visual_tensor(const toyworld::Example& ex, const ModelConfig& config) {
  if (const auto* scene = ex.scene()) {
    const auto p = toyworld::scene_to_patches<double>(*scene);
    if (p.shape() != grad::Shape{static_cast<std::size_t>(config.n_patches),
                                 static_cast<std::size_t>(config.d_in)}) {
      throw DimensionError("example '" + ex.id + "': scene gives patches " + grad::to_string(p.shape()));
    }
    return p;
  }
  const auto& rows = std::get<toyworld::RawFeatures>(ex.visual).rows;
  if (rows.size() != static_cast<std::size_t>(config.n_patches)) {
    throw DimensionError("example '" + ex.id + "': expected " + std::to_string(config.n_patches) +
                         " feature rows, got " + std::to_string(rows.size()));
  }
  grad::Tensor<double> t({rows.size(), static_cast<std::size_t>(config.d_in)});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != static_cast<std::size_t>(config.d_in)) {
      throw DimensionError("example '" + ex.id + "': feature row " + std::to_string(i) +
                           " has width " + std::to_string(rows[i].size()));
    }
    for (std::size_t j = 0; j < rows[i].size(); ++j) t.at(i, j) = rows[i][j];
  }
  return t;
}

// Constraint tokens, truncated to max_len.
inline std::vector<int> constraint_ids(const Constraint& c, const Vocab& vocab, const ModelConfig& config) {
  auto ids = vocab.encode(render(c));
  if (ids.empty()) ids.push_back(Vocab::kUnk);
  if (ids.size() > static_cast<std::size_t>(config.max_len)) ids.resize(config.max_len);
  return ids;
}

inline TrainingExample prepare_example(const toyworld::Example& ex, const Vocab& vocab,
                                       const ModelConfig& config, const SentenceEmbedder& embedder) {
  if (embedder.dim() != static_cast<std::size_t>(config.d_sent)) {
    throw DimensionError("sentence embedder dimension " + std::to_string(embedder.dim()) +
                         " differs from d_sent " + std::to_string(config.d_sent));
  }
  TrainingExample out;
  out.id = ex.id;
  out.patches = visual_tensor(ex, config);
  out.text_ids = constraint_ids(ex.constraint, vocab, config);
  auto q = vocab.encode(ex.question);
  if (q.size() > static_cast<std::size_t>(config.max_len - 1)) q.resize(config.max_len - 1);
  out.input_ids.push_back(Vocab::kBos);
  out.input_ids.insert(out.input_ids.end(), q.begin(), q.end());
  out.target_ids = q;
  out.target_ids.push_back(Vocab::kEos);
  auto frozen = frozen_targets(ex, embedder);
  out.q_gt = std::move(frozen.ground_truth);
  out.q_i = std::move(frozen.image.embedding);
  out.q_t = std::move(frozen.text.embedding);
  return out;
}

// Per-example CEL and margin terms, averaged over the batch, then gated by
// variant: B drops the CL term, I uses CL_img only, T uses CL_txt only.
template <std::floating_point T>
std::pair<grad::Var<T>, LossBreakdown> batch_loss(grad::Graph<T>& g, QuestionModel<T>& model,
                                                 std::span<const TrainingExample> batch,
                                                 const LossConfig& config, int epoch) {
  if (batch.empty()) throw ValueError("batch_loss: empty batch");
  config.validate();
  grad::Var<T> cel_sum, img_sum, txt_sum;
  for (const auto& ex : batch) {
    auto e_i = model.encode_image(g, ex.patches.template cast<T>());
    auto e_it = model.encode_text(g, ex.text_ids, e_i);
    auto hidden = model.decode_hidden(g, e_it, ex.input_ids);
    auto logits = model.logits_from_hidden(g, hidden);
    std::unique_ptr<bool[]> pad(new bool[ex.target_ids.size()]());
    auto cel = grad::cross_entropy_tokens(logits, ex.target_ids,
                                          std::span<const bool>(pad.get(), ex.target_ids.size()));
    auto q_it = model.embedding_from_hidden(g, hidden, ex.input_ids);
    const auto gt = ex.q_gt.template tensor<T>();
    auto ci = cl_img(q_it, gt, ex.q_i.template tensor<T>(), config.margin);
    auto ct = cl_txt(q_it, gt, ex.q_t.template tensor<T>(), config.margin);
    cel_sum = cel_sum.valid() ? grad::add(cel_sum, cel) : cel;
    img_sum = img_sum.valid() ? grad::add(img_sum, ci) : ci;
    txt_sum = txt_sum.valid() ? grad::add(txt_sum, ct) : ct;
  }
  const T inv = T(1) / T(batch.size());
  auto cel = grad::scale(cel_sum, inv);
  auto ci = grad::scale(img_sum, inv);
  auto ct = grad::scale(txt_sum, inv);

  LossBreakdown b;
  b.cl_img = static_cast<double>(ci.value().item());
  b.cl_txt = static_cast<double>(ct.value().item());
  b.cel = static_cast<double>(cel.value().item());
  b.beta_used = config.variant == Variant::kB ? 0.0 : beta_at(config.beta, epoch);

  grad::Var<T> total;
  switch (config.variant) {
    case Variant::kB:
      // reported for diagnostics only; not part of the graph
      b.cl = config.alpha * b.cl_txt + (1.0 - config.alpha) * b.cl_img;
      total = grad::scale(cel, T(0.5));
      break;
    case Variant::kI:
    case Variant::kT:
    case Variant::kIT: {
      const double alpha = config.variant == Variant::kI   ? 0.0
                           : config.variant == Variant::kT ? 1.0
                                                           : config.alpha;
      auto cl = combine_cl(ct, ci, alpha);
      b.cl = static_cast<double>(cl.value().item());
      total = total_loss(cl, cel, b.beta_used);
      break;
    }
  }
  b.total = static_cast<double>(total.value().item());
  return {total, b};
}

}  // namespace convqg
