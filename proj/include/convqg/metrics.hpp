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

// Corpus-level question metrics and the preference histogram.
//
// All metrics tokenise with normalize_tokens. BLEU is corpus level without
// smoothing; ROUGE-L, METEOR-lite and CIDEr are per instance (max or mean over
// references) and averaged over the corpus. METEOR-lite and CIDEr share a
// suffix stemmer (ing, ed, es, s).

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "convqg/errors.hpp"
#include "convqg/tokenizer.hpp"

namespace convqg::metrics {

using Tokens = std::vector<std::string>;

struct EvalInstance {
  std::string id;
  std::string candidate;
  std::vector<std::string> references;
};

using EvalCorpus = std::vector<EvalInstance>;

inline std::string stem(std::string_view w) {
  for (std::string_view suffix : {"ing", "ed", "es", "s"}) {
    if (w.size() >= suffix.size() + 2 && w.ends_with(suffix)) {
      return std::string(w.substr(0, w.size() - suffix.size()));
    }
  }
  return std::string(w);
}

namespace detail {

using NGram = std::vector<std::string>;
using Counts = std::map<NGram, int>;

inline Counts ngram_counts(const Tokens& t, std::size_t n) {
  Counts c;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++c[NGram(t.begin() + i, t.begin() + i + n)];
  return c;
}

inline Tokens stemmed(const Tokens& t) {
  Tokens out;
  out.reserve(t.size());
  for (const auto& w : t) out.push_back(stem(w));
  return out;
}

struct Tokenized {
  Tokens candidate;
  std::vector<Tokens> references;
};

inline std::vector<Tokenized> tokenize(const EvalCorpus& corpus) {
  if (corpus.empty()) throw ValueError("evaluation corpus is empty");
  std::vector<Tokenized> out;
  for (const auto& inst : corpus) {
    if (inst.references.empty()) throw ValueError("instance '" + inst.id + "' has no references");
    Tokenized t{normalize_tokens(inst.candidate), {}};
    for (const auto& r : inst.references) t.references.push_back(normalize_tokens(r));
    out.push_back(std::move(t));
  }
  return out;
}

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace detail

// Corpus BLEU-n: clipped k-gram precisions for k = 1..n, geometric mean,
// brevity penalty against the closest reference length (shorter on ties).
inline double bleu(const EvalCorpus& corpus, int n) {
  if (n < 1 || n > 4) throw ValueError("bleu order must be in 1..4");
  const auto data = detail::tokenize(corpus);
  std::array<double, 4> matched{}, total{};
  double c_len = 0, r_len = 0;
  for (const auto& inst : data) {
    const auto& c = inst.candidate;
    c_len += static_cast<double>(c.size());
    std::size_t closest = inst.references.front().size();
    for (const auto& r : inst.references) {
      const auto d = [&](std::size_t len) { return len > c.size() ? len - c.size() : c.size() - len; };
      if (d(r.size()) < d(closest) || (d(r.size()) == d(closest) && r.size() < closest)) closest = r.size();
    }
    r_len += static_cast<double>(closest);
    for (int k = 1; k <= n; ++k) {
      const auto cc = detail::ngram_counts(c, k);
      std::map<detail::NGram, int> max_ref;
      for (const auto& r : inst.references) {
        for (const auto& [g, v] : detail::ngram_counts(r, k)) max_ref[g] = std::max(max_ref[g], v);
      }
      for (const auto& [g, v] : cc) {
        auto it = max_ref.find(g);
        if (it != max_ref.end()) matched[k - 1] += std::min(v, it->second);
        total[k - 1] += v;
      }
    }
  }
  if (c_len == 0) return 0.0;
  double log_sum = 0;
  for (int k = 0; k < n; ++k) {
    if (matched[k] == 0) return 0.0;
    log_sum += std::log(matched[k] / total[k]);
  }
  const double bp = std::exp(std::min(0.0, 1.0 - r_len / c_len));
  return bp * std::exp(log_sum / n);
}

inline double rouge_l_instance(const Tokens& c, const std::vector<Tokens>& refs, double beta = 1.2) {
  double best = 0;
  for (const auto& r : refs) {
    const auto l = static_cast<double>(detail::lcs_length(c, r));
    if (l == 0) continue;
    const double p = l / static_cast<double>(c.size()), rec = l / static_cast<double>(r.size());
    best = std::max(best, (1 + beta * beta) * p * rec / (rec + beta * beta * p));
  }
  return best;
}

inline double rouge_l(const EvalCorpus& corpus) {
  const auto data = detail::tokenize(corpus);
  double sum = 0;
  for (const auto& inst : data) sum += rouge_l_instance(inst.candidate, inst.references);
  return sum / static_cast<double>(data.size());
}

// Candidate and reference tokens sharing a stem are paired in order of
// occurrence; chunks are maximal runs contiguous on both sides.
inline double meteor_lite_pair(const Tokens& cand, const Tokens& ref) {
  const auto cs = detail::stemmed(cand), rs = detail::stemmed(ref);
  std::map<std::string, std::vector<std::size_t>> ref_pos;
  for (std::size_t j = 0; j < rs.size(); ++j) ref_pos[rs[j]].push_back(j);
  std::map<std::string, std::size_t> used;
  std::vector<std::pair<std::size_t, std::size_t>> align;
  for (std::size_t i = 0; i < cs.size(); ++i) {
    auto it = ref_pos.find(cs[i]);
    if (it == ref_pos.end()) continue;
    auto& u = used[cs[i]];
    if (u < it->second.size()) align.emplace_back(i, it->second[u++]);
  }
  if (align.empty()) return 0.0;
  const double m = static_cast<double>(align.size());
  double chunks = 1;
  for (std::size_t k = 1; k < align.size(); ++k) {
    if (align[k].first != align[k - 1].first + 1 || align[k].second != align[k - 1].second + 1) ++chunks;
  }
  const double p = m / static_cast<double>(cand.size()), r = m / static_cast<double>(ref.size());
  const double fmean = 10 * p * r / (r + 9 * p);
  const double frag = chunks / m;
  return fmean * (1 - 0.5 * frag * frag * frag);
}

inline double meteor_lite(const EvalCorpus& corpus) {
  const auto data = detail::tokenize(corpus);
  double sum = 0;
  for (const auto& inst : data) {
    double best = 0;
    for (const auto& r : inst.references) best = std::max(best, meteor_lite_pair(inst.candidate, r));
    sum += best;
  }
  return sum / static_cast<double>(data.size());
}

// CIDEr: per n, raw-count TF times IDF log(N) - log(max(1, df)), df counted
// over reference sets; cosine per reference averaged, then over n = 1..4,
// times 10; mean over instances.
inline std::vector<double> cider_instances(const EvalCorpus& corpus) {
  const auto data = detail::tokenize(corpus);
  if (data.size() < 2) throw ValueError("cider needs at least two instances");
  const double log_n = std::log(static_cast<double>(data.size()));
  std::vector<Tokens> cands;
  std::vector<std::vector<Tokens>> refs;
  for (const auto& inst : data) {
    cands.push_back(detail::stemmed(inst.candidate));
    refs.emplace_back();
    for (const auto& r : inst.references) refs.back().push_back(detail::stemmed(r));
  }
  std::vector<double> scores(data.size(), 0.0);
  for (std::size_t n = 1; n <= 4; ++n) {
    std::map<detail::NGram, int> df;
    for (const auto& rs : refs) {
      std::map<detail::NGram, bool> seen;
      for (const auto& r : rs)
        for (const auto& [g, _] : detail::ngram_counts(r, n)) seen[g] = true;
      for (const auto& [g, _] : seen) ++df[g];
    }
    auto weigh = [&](const Tokens& t) {
      std::map<detail::NGram, double> v;
      for (const auto& [g, c] : detail::ngram_counts(t, n)) {
        auto it = df.find(g);
        const double d = it == df.end() ? 1.0 : static_cast<double>(it->second);
        v[g] = c * (log_n - std::log(d));
      }
      return v;
    };
    auto norm = [](const std::map<detail::NGram, double>& v) {
      double s = 0;
      for (const auto& [_, x] : v) s += x * x;
      return std::sqrt(s);
    };
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto vc = weigh(cands[i]);
      const double nc = norm(vc);
      double sim_sum = 0;
      for (const auto& r : refs[i]) {
        const auto vr = weigh(r);
        const double nr = norm(vr);
        if (nc == 0 || nr == 0) continue;
        double dot = 0;
        for (const auto& [g, x] : vc) {
          auto it = vr.find(g);
          if (it != vr.end()) dot += x * it->second;
        }
        sim_sum += dot / (nc * nr);
      }
      scores[i] += sim_sum / static_cast<double>(refs[i].size());
    }
  }
  for (auto& s : scores) s = 10.0 * s / 4.0;
  return scores;
}

inline double cider(const EvalCorpus& corpus) {
  const auto s = cider_instances(corpus);
  double sum = 0;
  for (double v : s) sum += v;
  return sum / static_cast<double>(s.size());
}

struct Report {
  std::array<double, 4> bleu{};
  double rouge_l = 0;
  double meteor_lite = 0;
  double cider = 0;
};

inline Report evaluate(const EvalCorpus& corpus) {
  Report r;
  for (int n = 1; n <= 4; ++n) r.bleu[n - 1] = bleu(corpus, n);
  r.rouge_l = metrics::rouge_l(corpus);
  r.meteor_lite = metrics::meteor_lite(corpus);
  r.cider = metrics::cider(corpus);
  return r;
}

// ---------------------------------------------------------------------------
// Preference analysis
// ---------------------------------------------------------------------------

enum class Choice { kA, kB, kSimilar };

inline Choice parse_choice(std::string_view s) {
  if (s == "A") return Choice::kA;
  if (s == "B") return Choice::kB;
  if (s == "Similar") return Choice::kSimilar;
  throw ValueError("unknown preference choice '" + std::string(s) + "' (expected A, B or Similar)");
}

struct PreferenceRecord {
  std::string question_a;
  std::string question_b;
  Choice choice = Choice::kSimilar;
};

struct HistogramBin {
  double low = 0;
  double high = 0;
  int n_a = 0;
  int n_b = 0;
  int n_similar = 0;

  int total() const { return n_a + n_b + n_similar; }
  double proportion(Choice c) const {
    if (total() == 0) return 0.0;
    const int n = c == Choice::kA ? n_a : c == Choice::kB ? n_b : n_similar;
    return static_cast<double>(n) / total();
  }
};

struct PreferenceHistogram {
  std::vector<HistogramBin> bins;
  HistogramBin totals;
};

// BLEU-1 of question_a against question_b as the single reference.
inline double pair_similarity(const PreferenceRecord& r) {
  return bleu({{"", r.question_a, {r.question_b}}}, 1);
}

inline PreferenceHistogram preference_histogram(const std::vector<PreferenceRecord>& records, int bins) {
  if (records.empty()) throw ValueError("no preference records");
  if (bins < 1) throw ValueError("bins must be >= 1");
  PreferenceHistogram h;
  for (int b = 0; b < bins; ++b) {
    h.bins.push_back({static_cast<double>(b) / bins, static_cast<double>(b + 1) / bins, 0, 0, 0});
  }
  h.totals = {0.0, 1.0, 0, 0, 0};
  for (const auto& r : records) {
    if (is_blank(r.question_a) || is_blank(r.question_b)) throw ValueError("preference record has an empty question");
    const double s = pair_similarity(r);
    const int b = std::min(bins - 1, static_cast<int>(std::floor(s * bins)));
    for (HistogramBin* bin : {&h.bins[b], &h.totals}) {
      switch (r.choice) {
        case Choice::kA: ++bin->n_a; break;
        case Choice::kB: ++bin->n_b; break;
        case Choice::kSimilar: ++bin->n_similar; break;
      }
    }
  }
  return h;
}

}  // namespace convqg::metrics
