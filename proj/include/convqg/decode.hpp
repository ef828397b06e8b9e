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

// Beam search over any next-token scorer.
//
// A scorer maps a prefix (starting with bos) to log-probabilities over the
// vocabulary. Scores are summed log-probabilities without length
// normalisation. Candidates are ranked by score, then parent beam order, then
// token id, so results are fully deterministic.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "convqg/constraints.hpp"
#include "convqg/errors.hpp"
#include "convqg/grad.hpp"
#include "convqg/model.hpp"
#include "convqg/objective.hpp"
#include "convqg/tokenizer.hpp"

namespace convqg {

using Scorer = std::function<std::vector<double>(std::span<const int> prefix)>;

struct BeamOptions {
  int beams = 3;
  int max_len = 32;
  int bos = Vocab::kBos;
  int eos = Vocab::kEos;
  std::set<int> banned;

  void validate() const {
    if (beams < 1) throw ValueError("beams must be >= 1");
    if (max_len < 1) throw ValueError("max_len must be >= 1");
  }
};

// `tokens` excludes bos; a finished hypothesis ends with eos unless it hit
// max_len.
struct Hypothesis {
  std::vector<int> tokens;
  double score = 0.0;
  bool finished = false;

  friend bool operator==(const Hypothesis&, const Hypothesis&) = default;
};

namespace detail {

inline std::vector<int> with_bos(int bos, const std::vector<int>& tokens) {
  std::vector<int> p;
  p.reserve(tokens.size() + 1);
  p.push_back(bos);
  p.insert(p.end(), tokens.begin(), tokens.end());
  return p;
}

inline bool usable(const BeamOptions& o, int v) { return !o.banned.contains(v); }

}  // namespace detail

inline std::vector<Hypothesis> beam_search(const Scorer& scorer, const BeamOptions& opt) {
  opt.validate();
  struct Candidate {
    Hypothesis hyp;
    int rank;  // finished hypotheses first, then parent beam order
    int token;
  };
  std::vector<Hypothesis> live = {Hypothesis{}};
  std::vector<Hypothesis> finished;
  for (int step = 0; step < opt.max_len && !live.empty(); ++step) {
    std::vector<Candidate> pool;
    for (std::size_t k = 0; k < finished.size(); ++k) pool.push_back({finished[k], -1, -1});
    for (std::size_t b = 0; b < live.size(); ++b) {
      const auto prefix = detail::with_bos(opt.bos, live[b].tokens);
      const auto lp = scorer(prefix);
      for (int v = 0; v < static_cast<int>(lp.size()); ++v) {
        if (!detail::usable(opt, v)) continue;
        Hypothesis h = live[b];
        h.tokens.push_back(v);
        h.score += lp[v];
        h.finished = v == opt.eos || step + 1 == opt.max_len;
        pool.push_back({std::move(h), static_cast<int>(b), v});
      }
    }
    std::stable_sort(pool.begin(), pool.end(), [](const Candidate& a, const Candidate& b) {
      if (a.hyp.score != b.hyp.score) return a.hyp.score > b.hyp.score;
      if (a.rank != b.rank) return a.rank < b.rank;
      return a.token < b.token;
    });
    if (pool.size() > static_cast<std::size_t>(opt.beams)) pool.resize(opt.beams);
    live.clear();
    finished.clear();
    for (auto& c : pool) (c.hyp.finished ? finished : live).push_back(std::move(c.hyp));
  }
  for (auto& h : live) h.finished = true;  // unreachable unless max_len == 0
  finished.insert(finished.end(), live.begin(), live.end());
  std::stable_sort(finished.begin(), finished.end(),
                   [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
  return finished;
}

// Argmax at every step, lowest id on ties.
inline Hypothesis greedy_decode(const Scorer& scorer, const BeamOptions& opt) {
  opt.validate();
  Hypothesis h;
  for (int step = 0; step < opt.max_len; ++step) {
    const auto lp = scorer(detail::with_bos(opt.bos, h.tokens));
    int best = -1;
    for (int v = 0; v < static_cast<int>(lp.size()); ++v) {
      if (!detail::usable(opt, v)) continue;
      if (best < 0 || lp[v] > lp[best]) best = v;
    }
    if (best < 0) throw ValueError("greedy_decode: every token is banned");
    h.tokens.push_back(best);
    h.score += lp[best];
    if (best == opt.eos) break;
  }
  h.finished = true;
  return h;
}

// log-softmax in double.
template <std::floating_point T>
std::vector<double> log_softmax_row(std::span<const T> row) {
  double mx = -INFINITY;
  for (T v : row) mx = std::max(mx, static_cast<double>(v));
  double s = 0;
  for (T v : row) s += std::exp(static_cast<double>(v) - mx);
  const double lse = mx + std::log(s);
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = static_cast<double>(row[i]) - lse;
  return out;
}

// Scorer reading the decoder's last-position distribution given E_it.
template <std::floating_point T>
Scorer model_scorer(QuestionModel<T>& model, grad::Tensor<T> e_it) {
  return [&model, e_it = std::move(e_it)](std::span<const int> prefix) {
    grad::Graph<T> g(false);
    const auto logits = model.decode_question(g, g.constant(e_it), prefix).value();
    const std::size_t v = logits.shape()[1];
    return log_softmax_row<T>(logits.data().subspan((logits.shape()[0] - 1) * v, v));
  };
}

inline BeamOptions generation_options(const ModelConfig& config, int beams) {
  BeamOptions o;
  o.beams = beams;
  o.max_len = config.max_len - 1;  // leaves room for bos in the decoder input
  o.banned = {Vocab::kPad, Vocab::kBos, Vocab::kUnk, Vocab::kMask};
  return o;
}

struct Generated {
  std::string question;
  double score = 0.0;
  std::vector<int> tokens;
};

template <std::floating_point T>
grad::Tensor<T> joint_embedding(QuestionModel<T>& model, const grad::Tensor<double>& patches,
                                std::span<const int> text_ids) {
  grad::Graph<T> g(false);
  auto e_i = model.encode_image(g, patches.template cast<T>());
  return model.encode_text(g, text_ids, e_i).value();
}

// encode image, render constraint, encode text, beam search, detokenise.
template <std::floating_point T>
Generated generate(QuestionModel<T>& model, const Vocab& vocab, const toyworld::Example& ex,
                   int beams = 3) {
  const auto patches = visual_tensor(ex, model.config());
  const auto text = constraint_ids(ex.constraint, vocab, model.config());
  const auto hyps = beam_search(model_scorer(model, joint_embedding(model, patches, text)),
                                generation_options(model.config(), beams));
  Generated out;
  out.tokens = hyps.front().tokens;
  out.score = hyps.front().score;
  out.question = vocab.decode(out.tokens);
  return out;
}

}  // namespace convqg
