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

// Frozen single-modality question generators and the sentence embedder.
//
//   scene --caption--> "a scene with red cup, ..." --QG--> question --embed--> Q_i
//   t'    ----------------------------------------QG--> question --embed--> Q_t
//   ground-truth question ----------------------------------------embed--> Q_gt
//
// Captioning and question generation are rule based; the embedder hashes
// unigrams and bigrams into fixed random vectors. None of this is trainable.

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "convqg/constraints.hpp"
#include "convqg/errors.hpp"
#include "convqg/grad.hpp"
#include "convqg/tokenizer.hpp"
#include "convqg/toyworld.hpp"

namespace convqg {

enum class EmbeddingSource { kJoint, kImageOnly, kTextOnly, kGroundTruth };

struct QuestionEmbedding {
  std::vector<double> values;
  EmbeddingSource source = EmbeddingSource::kGroundTruth;

  std::size_t dim() const { return values.size(); }

  template <std::floating_point T>
  grad::Tensor<T> tensor() const {
    std::vector<T> v(values.begin(), values.end());
    return grad::Tensor<T>({1, values.size()}, std::move(v));
  }

  friend bool operator==(const QuestionEmbedding&, const QuestionEmbedding&) = default;
};

inline double cosine(const QuestionEmbedding& a, const QuestionEmbedding& b) {
  if (a.dim() != b.dim()) throw DimensionError("cosine: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  return dot / std::sqrt(na * nb);
}

// Pluggable frozen encoder.
class SentenceEmbedder {
 public:
  virtual ~SentenceEmbedder() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<double> embed_raw(std::string_view sentence) const = 0;

  QuestionEmbedding embed(std::string_view sentence,
                          EmbeddingSource source = EmbeddingSource::kGroundTruth) const {
    return {embed_raw(sentence), source};
  }
};

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Mean of per-feature Gaussian vectors over unigrams and bigrams, then unit
// normalised. Feature vectors are regenerated from (feature hash, seed), so
// the "table" is implicit and identical across runs and threads.
class HashedSentenceEmbedder final : public SentenceEmbedder {
 public:
  explicit HashedSentenceEmbedder(std::size_t dim = 64, std::uint64_t seed = 0x5eed)
      : dim_(dim), seed_(seed) {
    if (dim_ == 0) throw ValueError("embedding dimension must be positive");
  }

  std::size_t dim() const override { return dim_; }
  std::uint64_t seed() const { return seed_; }

  std::vector<double> embed_raw(std::string_view sentence) const override {
    const auto tokens = normalize_tokens(sentence);
    if (tokens.empty()) throw ValueError("cannot embed an empty sentence");
    std::vector<double> acc(dim_, 0.0);
    std::size_t features = 0;
    auto add = [&](const std::string& f) {
      std::mt19937_64 rng(fnv1a(f) ^ (seed_ * 0x9e3779b97f4a7c15ULL));
      std::normal_distribution<double> nd(0.0, 1.0);
      for (auto& v : acc) v += nd(rng);
      ++features;
    };
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      add(tokens[i]);
      if (i + 1 < tokens.size()) add(tokens[i] + " " + tokens[i + 1]);
    }
    double norm = 0;
    for (auto& v : acc) {
      v /= static_cast<double>(features);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : acc) v /= norm;
    return acc;
  }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Rule-based captioning and question generation
// ---------------------------------------------------------------------------

inline constexpr std::string_view kCaptionPrefix = "a scene with ";

// Objects in row-major order: "a scene with red cup, blue ball".
inline std::string rule_caption(const toyworld::Scene& scene) {
  const auto objs = scene.objects();
  if (objs.empty()) return "an empty scene";
  std::string out(kCaptionPrefix);
  for (std::size_t i = 0; i < objs.size(); ++i) {
    if (i > 0) out += ", ";
    out += objs[i].referring_expression();
  }
  return out;
}

namespace detail {

struct RelationMatch {
  Relation relation;
  std::string subject;
  std::string object;
};

// Longest relation phrase bounded by spaces, earliest on ties.
inline std::optional<RelationMatch> find_relation(const std::string& s) {
  std::optional<RelationMatch> best;
  std::size_t best_len = 0, best_pos = 0;
  for (const auto& info : kRelations) {
    const std::string needle = " " + std::string(info.phrase) + " ";
    const auto pos = s.find(needle);
    if (pos == std::string::npos) continue;
    if (needle.size() > best_len || (needle.size() == best_len && pos < best_pos)) {
      best_len = needle.size();
      best_pos = pos;
      best = RelationMatch{info.relation, s.substr(0, pos), s.substr(pos + needle.size())};
    }
  }
  return best;
}

}  // namespace detail

// Templated wh-question for any constraint or caption sentence.
inline std::string rule_question(std::string_view sentence) {
  const std::string s = normalize_text(sentence);
  if (s.empty()) throw ValueError("cannot generate a question from an empty sentence");
  const std::string caption = normalize_text(kCaptionPrefix) + " ";
  if (s.starts_with(caption)) {
    // about the first captioned object
    const std::string first = normalize_text(sentence.substr(0, sentence.find(',')));
    if (first.size() > caption.size()) return "what is the " + first.substr(caption.size());
  }
  if (s.starts_with(caption) || s == "an empty scene") return "what is in the scene";
  const std::string answer = normalize_text(kAnswerPrefix) + " ";
  if (s.starts_with(answer)) return "what is " + s.substr(answer.size());
  if (auto m = detail::find_relation(s)) {
    if (m->subject == kMaskToken) return "what " + std::string(relation_template(m->relation)) + " " + m->object;
    return toyworld::fill_frame(m->relation, m->subject);
  }
  return "what is " + s;
}

struct AuxQuestion {
  std::string question;
  QuestionEmbedding embedding;
};

// Image-only branch.
inline AuxQuestion iqgm(const toyworld::Scene& scene, const SentenceEmbedder& embedder) {
  auto q = rule_question(rule_caption(scene));
  auto e = embedder.embed(q, EmbeddingSource::kImageOnly);
  return {std::move(q), std::move(e)};
}

// Image-only branch when a caption is supplied and the captioning step is
// skipped.
inline AuxQuestion iqgm_from_caption(std::string_view caption, const SentenceEmbedder& embedder) {
  auto q = rule_question(caption);
  auto e = embedder.embed(q, EmbeddingSource::kImageOnly);
  return {std::move(q), std::move(e)};
}

// Text-only branch over the rendered constraint t'.
inline AuxQuestion tqgm(std::string_view t_prime, const SentenceEmbedder& embedder) {
  if (is_blank(t_prime)) throw ValueError("tqgm: empty constraint sentence");
  auto q = rule_question(t_prime);
  auto e = embedder.embed(q, EmbeddingSource::kTextOnly);
  return {std::move(q), std::move(e)};
}

// Q_i, Q_t and Q_gt for one example. Examples without a scene (raw features)
// fall back to a caption constraint if present, else the generic image
// question.
struct FrozenTargets {
  AuxQuestion image;
  AuxQuestion text;
  QuestionEmbedding ground_truth;
};

inline FrozenTargets frozen_targets(const toyworld::Example& ex, const SentenceEmbedder& embedder) {
  const std::string t_prime = render(ex.constraint);
  FrozenTargets out;
  if (ex.constraint.kind == ConstraintKind::kCaption) {
    out.image = iqgm_from_caption(t_prime, embedder);
  } else if (const auto* scene = ex.scene()) {
    out.image = iqgm(*scene, embedder);
  } else {
    out.image = iqgm_from_caption("an empty scene", embedder);
  }
  out.text = tqgm(t_prime, embedder);
  out.ground_truth = embedder.embed(ex.question, EmbeddingSource::kGroundTruth);
  return out;
}

}  // namespace convqg
